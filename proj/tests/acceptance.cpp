// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attention_oracle.hpp"
#include "oracles.hpp"
#include "problems.hpp"
#include "qsparse/attention.hpp"
#include "qsparse/bench.hpp"
#include "qsparse/emulation.hpp"
#include "qsparse/kernels.hpp"
#include "qsparse/qint.hpp"
#include "qsparse/sparse_format.hpp"
#include "qsparse/tile_engine.hpp"

using namespace qsparse;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void fail(const std::string& why) {
        if (pass) detail = why;
        pass = false;
    }
};

struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0: no time limit
    std::function<Outcome()> run;
};

const std::vector<int> kVectorLengths = {2, 4, 8};
const std::vector<int> kBsN = {64, 128};

// Desk shapes for the oracle sweep.
const bench::Shape kSpmmShape = {256, 256, 512};
const bench::Shape kSddmmShape = {256, 256, 256};

std::vector<std::string> precision_names(OpKind op) {
    std::vector<std::string> out;
    for (auto [l, r] : supported_precisions(op)) out.push_back(precision_name(l, r));
    return out;
}

Outcome decomposition_exactness() {
    Outcome o;
    for (int v = -128; v <= 127; ++v) {
        const ChunkDecomposition d = split_signed(v, 4, 2);
        if (recombine(d) != v) o.fail("recombine mismatch at " + std::to_string(v));
        if (d.chunks[0] < 0 || d.chunks[0] > 15 || d.chunks[1] < -8 || d.chunks[1] > 7) {
            o.fail("chunk out of range at " + std::to_string(v));
        }
    }
    for (int v = 0; v <= 255; ++v) {
        if (recombine(split_unsigned(v, 4, 2)) != v) o.fail("unsigned mismatch at " + std::to_string(v));
    }
    if (split_unsigned(237, 4, 2).chunks != std::vector<std::int32_t>{13, 14}) o.fail("237 does not split to (13, 14)");
    if (split_signed(-19, 4, 2).chunks != std::vector<std::int32_t>{13, -2}) o.fail("-19 does not split to (13, -2)");
    return o;
}

Outcome emulated_matmul_oracle() {
    Outcome o;
    std::mt19937_64 rng(2024);
    int problems_run = 0;
    for (OpKind op : {OpKind::Spmm, OpKind::Sddmm}) {
        for (auto [lb, rb] : supported_precisions(op)) {
            const EmulationScheme s = plan(lb, rb, op);
            for (int rep = 0; rep < 200; ++rep) {
                const std::size_t m = 1 + rng() % 64;
                const std::size_t k = 1 + rng() % 128;
                const std::size_t n = 1 + rng() % 64;
                const IntMatrix a = oracle::random_signed(m, k, lb, rng);
                const IntMatrix b = problems::rhs_values(k, n, lb, rb, rng);
                const WideMatrix want = oracle::dense_matmul(a, b);
                const IntMatrix got = emulated_matmul(problems::row_major(a, lb), problems::row_major(b, rb), s);
                for (std::size_t i = 0; i < want.data.size(); ++i) {
                    if (want.data[i] != got.data[i]) {
                        o.fail(s.name() + " mismatch at element " + std::to_string(i));
                        break;
                    }
                }
                ++problems_run;
            }
        }
    }
    o.detail = o.pass ? std::to_string(problems_run) + " problems" : o.detail;
    return o;
}

std::array<std::uint32_t, 8> direct_nibble_transpose(const std::array<std::uint32_t, 8>& rows) {
    std::array<std::uint32_t, 8> out{};
    for (int c = 0; c < 8; ++c) {
        for (int r = 0; r < 8; ++r) out[c] |= ((rows[r] >> (4 * c)) & 0xFU) << (4 * r);
    }
    return out;
}

Outcome shuffle_transpose() {
    Outcome o;
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::uint32_t> word;
    for (int rep = 0; rep < 1000; ++rep) {
        std::array<std::uint32_t, 8> original{};
        for (auto& w : original) w = word(rng);
        std::array<std::uint32_t, 8> staged{};
        for (std::size_t p = 0; p < 8; ++p) staged[p] = original[static_cast<std::size_t>(kShufflePermutation[p])];
        BitOpCounter counter;
        if (transpose_nibbles_via_shuffle(staged, true, &counter) != direct_nibble_transpose(original)) {
            o.fail("transpose mismatch on fragment " + std::to_string(rep));
        }
        // 64 nibbles per fragment, 8 word ops per 16 nibbles
        if (counter.word_ops != 32) o.fail("counted " + std::to_string(counter.word_ops) + " ops, want 32");
    }
    if (derive_shuffle_permutation() != kShufflePermutation) o.fail("derived permutation differs");
    return o;
}

Outcome bank_conflict_claim() {
    Outcome o;
    for (int bits : {8, 4}) {
        for (int bs_n : kBsN) {
            for (int warps : {1, 2}) {
                for (const auto& p : transpose_load_patterns(StagingLayout::padded(bs_n, bits), bits, warps)) {
                    if (bank_conflicts(p) != 1) o.fail("padded layout conflicts at " + std::to_string(bits) + " bits");
                }
                int worst = 0;
                for (const auto& p : transpose_load_patterns(StagingLayout::unpadded(bs_n, bits), bits, warps)) {
                    worst = std::max(worst, bank_conflicts(p));
                }
                if (worst <= 1) o.fail("unpadded layout is conflict-free at " + std::to_string(bits) + " bits");
            }
        }
        const StagingLayout l = StagingLayout::padded(64, bits);
        if (l.pad_words * 64 != 8 * l.rows_per_group * l.row_words) o.fail("pad is not 8 words per 64");
    }
    return o;
}

Outcome oracle_sweep() {
    Outcome o;
    std::size_t ok = 0, skipped = 0;
    for (bench::BenchOp op : {bench::BenchOp::Spmm, bench::BenchOp::Sddmm}) {
        bench::SweepSpec spec;
        spec.op = op;
        spec.shapes = {op == bench::BenchOp::Spmm ? kSpmmShape : kSddmmShape};
        spec.vector_lengths = kVectorLengths;
        spec.precisions = precision_names(op == bench::BenchOp::Spmm ? OpKind::Spmm : OpKind::Sddmm);
        spec.bs_n = kBsN;
        spec.pipeline = {false, true};
        spec.repetitions = 1;
        for (const auto& r : bench::run_sweep(spec)) {
            if (r.status == "skipped") ++skipped;
            else if (r.status == "ok" && r.verified) ++ok;
            else o.fail(r.op + " " + r.precision + " V=" + std::to_string(r.vector_length) + " sparsity " +
                        std::to_string(r.sparsity) + ": " + r.reason);
        }
    }
    if (skipped != 0) o.fail(std::to_string(skipped) + " cells skipped");
    if (o.pass) o.detail = std::to_string(ok) + " cells bit-exact";
    return o;
}

std::vector<StageEvent> spmm_trace(int steps) {
    using S = Stage;
    std::vector<StageEvent> t = {{S::LoadLhs, 0}, {S::Sync, -1}, {S::PrefetchRhs, 0}};
    for (int i = 1; i < steps; ++i) {
        t.insert(t.end(), {{S::StoreRhs, i - 1}, {S::LoadLhs, i}, {S::Sync, -1}, {S::PrefetchRhs, i},
                           {S::Compute, i - 1}, {S::Sync, -1}});
    }
    t.insert(t.end(), {{S::StoreRhs, steps - 1}, {S::Sync, -1}, {S::Compute, steps - 1}});
    return t;
}

std::vector<StageEvent> sddmm_trace(int steps) {
    using S = Stage;
    std::vector<StageEvent> t = {{S::PrefetchLhs, 0}, {S::StoreLhs, 0}, {S::Sync, -1}};
    for (int i = 1; i < steps; ++i) {
        t.insert(t.end(), {{S::PrefetchLhs, i}, {S::Compute, i - 1}, {S::Sync, -1}, {S::StoreLhs, i}, {S::Sync, -1}});
    }
    t.push_back({S::Compute, steps - 1});
    return t;
}

Outcome pipeline_equivalence() {
    Outcome o;
    std::mt19937_64 rng(6);
    std::size_t cells = 0;
    TilingConfig on, off;
    on.pipeline = true;
    for (auto [lb, rb] : supported_precisions(OpKind::Spmm)) {
        for (int v : kVectorLengths) {
            for (double sp : bench::kDefaultSparsities) {
                const IntMatrix a =
                    bcrs_to_dense(generate_synthetic(kSpmmShape.m, kSpmmShape.k, v, sp, rng(), lb));
                const IntMatrix b = problems::rhs_values(kSpmmShape.k, kSpmmShape.n, lb, rb, rng);
                const SrBcrsMatrix lhs = problems::to_lhs(a, v, lb, rb);
                const PackedMatrix rhs = problems::row_major(b, rb);
                for (int bs_n : kBsN) {
                    on.bs_n = off.bs_n = bs_n;
                    if (spmm_run(lhs, rhs, on).output != spmm_run(lhs, rhs, off).output) {
                        o.fail("spmm " + precision_name(lb, rb) + " V=" + std::to_string(v) + " differs");
                    }
                    ++cells;
                }
            }
        }
    }
    for (auto [lb, rb] : supported_precisions(OpKind::Sddmm)) {
        for (int v : kVectorLengths) {
            for (double sp : bench::kDefaultSparsities) {
                const PackedMatrix a =
                    problems::row_major(oracle::random_signed(kSddmmShape.m, kSddmmShape.k, lb, rng), lb);
                const PackedMatrix b =
                    problems::col_major(problems::rhs_values(kSddmmShape.k, kSddmmShape.n, lb, rb, rng), rb);
                const BcrsMatrix pattern = generate_synthetic(kSddmmShape.m, kSddmmShape.n, v, sp, rng(), 8);
                for (int bs_n : kBsN) {
                    on.bs_n = off.bs_n = bs_n;
                    if (sddmm_run(a, b, pattern, on).values != sddmm_run(a, b, pattern, off).values) {
                        o.fail("sddmm " + precision_name(lb, rb) + " V=" + std::to_string(v) + " differs");
                    }
                    ++cells;
                }
            }
        }
    }
    TilingConfig traced;
    traced.pipeline = true;
    traced.record_trace = true;
    for (int steps : {1, 2, 5}) {
        if (spmm_pipeline_schedule(steps) != spmm_trace(steps)) o.fail("spmm schedule order, steps " + std::to_string(steps));
        if (sddmm_pipeline_schedule(steps) != sddmm_trace(steps)) o.fail("sddmm schedule order, steps " + std::to_string(steps));
        const auto k = static_cast<std::size_t>(16 * steps);
        const IntMatrix a = oracle::random_vector_sparse(8, k, 8, 0.0, 8, rng);
        const IntMatrix b = oracle::random_signed(k, 64, 8, rng);
        const SpmmResult s = spmm_run(problems::to_lhs(a, 8, 8, 8), problems::row_major(b, 8), traced);
        if (s.traces.empty() || s.traces[0].events != spmm_trace(steps)) o.fail("spmm kernel trace, steps " + std::to_string(steps));
        const SddmmResult d = sddmm_run(problems::row_major(a, 8), problems::col_major(b, 8),
                                        generate_synthetic(8, 64, 8, 0.5, 1, 8), traced);
        if (d.traces.empty() || d.traces[0].events != sddmm_trace(steps)) o.fail("sddmm kernel trace, steps " + std::to_string(steps));
    }
    if (o.pass) o.detail = std::to_string(cells) + " cell pairs identical, traces for steps 1, 2, 5";
    return o;
}

Outcome stacking_equivalence() {
    Outcome o;
    std::mt19937_64 rng(7);
    const TileShape s = TileShape::native(8);
    for (int v : {4, 2}) {
        const int parts = 8 / v;
        std::vector<std::int64_t> weights;
        for (int j = 0; j < parts; ++j) weights.push_back(std::int64_t{1} << j);
        for (int rep = 0; rep < 100; ++rep) {
            std::vector<IntMatrix> small;
            IntMatrix stacked(8, 16);
            for (int j = 0; j < parts; ++j) {
                small.push_back(oracle::random_signed(static_cast<std::size_t>(v), 16, 8, rng));
                for (std::size_t r = 0; r < static_cast<std::size_t>(v); ++r) {
                    for (std::size_t c = 0; c < 16; ++c) stacked(static_cast<std::size_t>(j * v) + r, c) = small.back()(r, c);
                }
            }
            const IntMatrix b = oracle::random_signed(16, 8, 8, rng);
            const StackedResult res = mma_stacked(load_fragment(stacked, s, Operand::Lhs),
                                                  load_fragment(b, s, Operand::Rhs), zero_accumulator(s), v, weights);
            WideMatrix expected(static_cast<std::size_t>(v), 8);
            for (int j = 0; j < parts; ++j) {
                const WideMatrix part = oracle::dense_matmul(small[static_cast<std::size_t>(j)], b);
                if (oracle::narrow(part) != res.partials[static_cast<std::size_t>(j)]) o.fail("partial mismatch, V=" + std::to_string(v));
                for (std::size_t i = 0; i < part.data.size(); ++i) expected.data[i] += weights[static_cast<std::size_t>(j)] * part.data[i];
            }
            const IntMatrix combined = store_fragment(res.combined);
            for (std::size_t r = 0; r < static_cast<std::size_t>(v); ++r) {
                for (std::size_t c = 0; c < 8; ++c) {
                    if (combined(r, c) != expected(r, c)) o.fail("combined mismatch, V=" + std::to_string(v));
                }
            }
        }
    }
    return o;
}

void drop_vector_row(BcrsMatrix& m, std::size_t row) {
    const std::size_t b0 = m.row_offsets[row], b1 = m.row_offsets[row + 1];
    const auto v = static_cast<std::size_t>(m.vector_length);
    m.col_indices.erase(m.col_indices.begin() + static_cast<long>(b0), m.col_indices.begin() + static_cast<long>(b1));
    m.values.erase(m.values.begin() + static_cast<long>(b0 * v), m.values.begin() + static_cast<long>(b1 * v));
    for (std::size_t r = row + 1; r < m.row_offsets.size(); ++r) m.row_offsets[r] -= static_cast<std::uint32_t>(b1 - b0);
}

Outcome attention_pipeline() {
    Outcome o;
    std::mt19937_64 rng(8);
    for (auto [sm, qkv] : std::vector<std::pair<int, int>>{{16, 8}, {8, 8}, {8, 4}}) {
        for (double sparsity : {0.9, 0.95}) {
            for (std::size_t len : {64U, 128U, 256U}) {
                const std::string where = precision_name(sm, qkv) + " L=" + std::to_string(len);
                AttentionConfig cfg = attention_oracle::make_config(len, sparsity, sm, qkv, rng());
                drop_vector_row(cfg.mask, 1);
                const RealMatrix q = attention_oracle::gaussian(len, 64, rng);
                const RealMatrix k = attention_oracle::gaussian(len, 64, rng);
                const RealMatrix v = attention_oracle::gaussian(len, 64, rng);
                const AttentionStages st = sparse_attention_stages(q, k, v, cfg);
                const auto want = attention_oracle::dense_oracle(st, cfg);
                if (!std::equal(st.scores_int.begin(), st.scores_int.end(), want.scores_int.begin(), want.scores_int.end())) {
                    o.fail(where + ": scores differ");
                }
                if (st.probabilities_int != want.probabilities_int) o.fail(where + ": probabilities differ");
                if (st.context_int != oracle::narrow(want.context_int)) o.fail(where + ": context differs");
                for (std::size_t r = 0; r < cfg.mask.vector_rows(); ++r) {
                    if (cfg.mask.row_offsets[r] == cfg.mask.row_offsets[r + 1]) continue;
                    for (std::size_t i = 0; i < 8; ++i) {
                        double sum = 0;
                        for (std::size_t b = cfg.mask.row_offsets[r]; b < cfg.mask.row_offsets[r + 1]; ++b) {
                            sum += st.probabilities[b * 8 + i];
                        }
                        if (std::fabs(sum - 1.0) > std::ldexp(1.0, -10)) o.fail(where + ": softmax row sum " + std::to_string(sum));
                    }
                }
                const RealMatrix out = sparse_attention(q, k, v, cfg);
                if (out != st.output) o.fail(where + ": fused output differs from staged");
                for (std::size_t i = 8; i < 16; ++i) {
                    for (std::size_t j = 0; j < 64; ++j) {
                        if (out(i, j) != 0.0) o.fail(where + ": masked row not zero");
                    }
                }
            }
        }
    }
    return o;
}

Outcome footprint() {
    Outcome o;
    std::mt19937_64 rng(9);
    for (auto [k, n] : std::vector<std::pair<std::size_t, std::size_t>>{{512, 512}, {2304, 256}, {96, 72}, {33, 7}}) {
        const IntMatrix b = oracle::random_signed(k, n, 4, rng);
        const std::size_t w4 = problems::row_major(b, 4).words().size();
        const std::size_t w8 = problems::row_major(b, 8).words().size();
        if (std::llabs(static_cast<long long>(2 * w4) - static_cast<long long>(w8)) > 2) {
            o.fail(std::to_string(k) + "x" + std::to_string(n) + ": " + std::to_string(w4) + " vs " + std::to_string(w8) + " words");
        }
    }
    bench::Cell c;
    c.shape = {256, 512, 512};
    c.lhs_bits = 8;
    c.rhs_bits = 4;
    const auto r4 = bench::run_cell(c, 1, false);
    c.rhs_bits = 8;
    const auto r8 = bench::run_cell(c, 1, false);
    if (2 * r4.bytes_rhs != r8.bytes_rhs) o.fail("bench record bytes " + std::to_string(r4.bytes_rhs) + " vs " + std::to_string(r8.bytes_rhs));
    if (o.pass) o.detail = "512x512 RHS: " + std::to_string(r4.bytes_rhs) + " vs " + std::to_string(r8.bytes_rhs) + " bytes";
    return o;
}

Outcome sparsity_speed() {
    Outcome o;
    bench::Cell c;
    c.shape = {256, 512, 512};
    c.vector_length = 8;
    c.sparsity = 0.5;
    const auto dense_ish = bench::run_cell(c, 9, false);
    c.sparsity = 0.98;
    const auto sparse = bench::run_cell(c, 9, false);
    std::ostringstream d;
    d << "median " << sparse.median_ms << " ms at 0.98 vs " << dense_ish.median_ms << " ms at 0.5";
    o.detail = d.str();
    if (!(sparse.median_ms < dense_ish.median_ms)) o.fail(o.detail);
    return o;
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "decomposition exactness", 1, decomposition_exactness},
        {2, "emulated matmul equals oracle", 60, emulated_matmul_oracle},
        {3, "shuffle transpose and op count", 10, shuffle_transpose},
        {4, "bank conflicts", 1, bank_conflict_claim},
        {5, "spmm/sddmm oracle sweep", 600, oracle_sweep},
        {6, "pipeline equivalence and trace", 0, pipeline_equivalence},
        {7, "stacking equivalence", 0, stacking_equivalence},
        {8, "attention pipeline", 120, attention_pipeline},
        {9, "footprint", 0, footprint},
        {10, "sparsity speed property", 0, sparsity_speed},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.fail(std::string("exception: ") + e.what());
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.limit_s > 0 && s >= c.limit_s) o.fail("took " + std::to_string(s) + " s");
        failed += o.pass ? 0 : 1;
        char limit[32] = "none";
        if (c.limit_s > 0) std::snprintf(limit, sizeof limit, "%g s", c.limit_s);
        std::printf("%s %2d %-32s %8.2f s (limit %s)  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, s, limit,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failed;
}
