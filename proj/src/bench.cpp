#include "qsparse/bench.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "qsparse/attention.hpp"
#include "qsparse/emulation.hpp"
#include "qsparse/errors.hpp"
#include "qsparse/kernels.hpp"

namespace qsparse::bench {

namespace {

using Clock = std::chrono::steady_clock;

std::mt19937_64 cell_rng(const Cell& c) {
    std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                      static_cast<std::uint32_t>(c.op),   static_cast<std::uint32_t>(c.shape.m),
                      static_cast<std::uint32_t>(c.shape.n), static_cast<std::uint32_t>(c.shape.k),
                      static_cast<std::uint32_t>(c.vector_length),
                      static_cast<std::uint32_t>(std::lround(c.sparsity * 10000)),
                      static_cast<std::uint32_t>(c.lhs_bits), static_cast<std::uint32_t>(c.rhs_bits)};
    return std::mt19937_64(seq);
}

IntMatrix random_values(std::size_t rows, std::size_t cols, std::int32_t lim, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::int32_t> dist(-lim - 1, lim);
    IntMatrix m(rows, cols);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

// Dense operand of `bits`; 16 x 16 products get a smaller range so that
// k * 2^15 * max|b| stays below 2^31.
IntMatrix operand(std::size_t rows, std::size_t cols, int bits, int other_bits, std::size_t k,
                  std::mt19937_64& rng) {
    std::int32_t lim = (1 << (bits - 1)) - 1;
    if (bits == 16 && other_bits == 16) {
        lim = static_cast<std::int32_t>(
            std::min<std::int64_t>(lim, (std::int64_t{1} << 31) / (32768 * static_cast<std::int64_t>(std::max<std::size_t>(k, 1))) - 1));
    }
    return random_values(rows, cols, lim, rng);
}

PackedMatrix pack(const IntMatrix& m, int bits, Layout layout) {
    return PackedMatrix::from_row_major(m.data, bits, layout, m.rows, m.cols);
}

std::string precision_label(const Cell& c) { return precision_name(c.lhs_bits, c.rhs_bits); }

void check_attention_pair(int sm, int qkv) {
    if (!((sm == 16 && qkv == 8) || (sm == 8 && qkv == 8) || (sm == 8 && qkv == 4))) {
        throw UnsupportedPrecisionError("attention does not support " + precision_name(sm, qkv));
    }
}

VerifyResult mismatch(std::size_t index, std::int64_t expected, std::int64_t actual, const std::string& where) {
    VerifyResult r;
    r.pass = false;
    r.index = index;
    r.expected = expected;
    r.actual = actual;
    r.detail = "first mismatch at " + where + ": expected " + std::to_string(expected) + ", got " +
               std::to_string(actual);
    return r;
}

// ---------------------------------------------------------------------------
// Problem instances

struct SpmmInstance {
    SrBcrsMatrix lhs;
    PackedMatrix rhs;
    IntMatrix lhs_dense;
    IntMatrix rhs_dense;
};

SpmmInstance make_spmm(const Cell& c, const std::optional<CsrPattern>& dlmc) {
    auto rng = cell_rng(c);
    const BcrsMatrix b = dlmc ? dilate(*dlmc, c.vector_length, rng(), c.lhs_bits)
                              : generate_synthetic(c.shape.m, c.shape.k, c.vector_length, c.sparsity, rng(), c.lhs_bits);
    const EmulationScheme s = plan(c.lhs_bits, c.rhs_bits, OpKind::Spmm);
    SpmmInstance in;
    in.lhs = bcrs_to_srbcrs(b, s.tile_shape().k);
    if (s.native_width == 4) in.lhs = shuffle_indices(in.lhs);
    in.lhs_dense = bcrs_to_dense(b);
    in.rhs_dense = operand(b.scalar_cols, c.shape.n, c.rhs_bits, c.lhs_bits, b.scalar_cols, rng);
    in.rhs = pack(in.rhs_dense, c.rhs_bits, Layout::RowMajor);
    return in;
}

struct SddmmInstance {
    PackedMatrix a;
    PackedMatrix b;
    BcrsMatrix pattern;
    IntMatrix a_dense;
    IntMatrix b_dense;
};

SddmmInstance make_sddmm(const Cell& c, const std::optional<CsrPattern>& dlmc) {
    plan(c.lhs_bits, c.rhs_bits, OpKind::Sddmm);
    auto rng = cell_rng(c);
    SddmmInstance in;
    in.pattern = dlmc ? dilate(*dlmc, c.vector_length, rng(), 8)
                      : generate_synthetic(c.shape.m, c.shape.n, c.vector_length, c.sparsity, rng(), 8);
    in.a_dense = operand(in.pattern.scalar_rows, c.shape.k, c.lhs_bits, c.rhs_bits, c.shape.k, rng);
    in.b_dense = operand(c.shape.k, in.pattern.scalar_cols, c.rhs_bits, c.lhs_bits, c.shape.k, rng);
    in.a = pack(in.a_dense, c.lhs_bits, Layout::RowMajor);
    in.b = pack(in.b_dense, c.rhs_bits, Layout::ColMajor);
    return in;
}

struct AttentionInstance {
    AttentionConfig cfg;
    std::vector<RealMatrix> q;
    std::vector<RealMatrix> k;
    std::vector<RealMatrix> v;
};

AttentionInstance make_attention(const Cell& c, const std::optional<CsrPattern>& dlmc) {
    check_attention_pair(c.lhs_bits, c.rhs_bits);
    if (c.vector_length != 8) {
        throw ConfigError("attention masks use 8 x 1 blocks, vector length " + std::to_string(c.vector_length) +
                          " does not apply");
    }
    auto rng = cell_rng(c);
    AttentionInstance in;
    in.cfg.mask = dlmc ? dilate(*dlmc, 8, rng(), 8) : generate_synthetic(c.shape.m, c.shape.m, 8, c.sparsity, rng(), 8);
    in.cfg.seq_len = in.cfg.mask.scalar_rows;
    if (in.cfg.mask.scalar_cols != in.cfg.seq_len) throw ShapeError("attention mask must be square");
    in.cfg.head_dim = c.shape.n;
    in.cfg.num_heads = static_cast<int>(std::max<std::size_t>(c.shape.k, 1));
    in.cfg.softmax_bits = c.lhs_bits;
    in.cfg.qkv_bits = c.rhs_bits;
    in.cfg.tiling.bs_n = c.bs_n;
    in.cfg.tiling.pipeline = c.pipeline;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int h = 0; h < in.cfg.num_heads; ++h) {
        for (auto* dst : {&in.q, &in.k, &in.v}) {
            RealMatrix m(in.cfg.seq_len, in.cfg.head_dim);
            for (auto& x : m.data) x = gauss(rng);
            dst->push_back(std::move(m));
        }
    }
    return in;
}

// ---------------------------------------------------------------------------
// Dense oracles

VerifyResult check_dense(const IntMatrix& lhs, const IntMatrix& rhs, const IntMatrix& got) {
    for (std::size_t i = 0; i < lhs.rows; ++i) {
        std::vector<std::int64_t> row(rhs.cols, 0);
        for (std::size_t k = 0; k < lhs.cols; ++k) {
            const std::int64_t a = lhs(i, k);
            if (a == 0) continue;
            for (std::size_t j = 0; j < rhs.cols; ++j) row[j] += a * rhs(k, j);
        }
        for (std::size_t j = 0; j < rhs.cols; ++j) {
            if (row[j] != got(i, j)) {
                return mismatch(i * rhs.cols + j, row[j], got(i, j),
                                "row " + std::to_string(i) + ", col " + std::to_string(j));
            }
        }
    }
    return {};
}

std::int64_t masked_dot(const IntMatrix& a, std::size_t row, const IntMatrix& b, std::size_t col) {
    std::int64_t acc = 0;
    for (std::size_t k = 0; k < a.cols; ++k) acc += std::int64_t{a(row, k)} * b(k, col);
    return acc;
}

VerifyResult check_masked(const IntMatrix& a, const IntMatrix& b, const BcrsMatrix& pattern,
                          const std::vector<std::int32_t>& got, const char* stage) {
    const auto v = static_cast<std::size_t>(pattern.vector_length);
    for (std::size_t r = 0; r < pattern.vector_rows(); ++r) {
        for (std::size_t blk = pattern.row_offsets[r]; blk < pattern.row_offsets[r + 1]; ++blk) {
            const std::size_t col = pattern.col_indices[blk];
            for (std::size_t i = 0; i < v; ++i) {
                const std::size_t idx = blk * v + i;
                const std::int64_t want = masked_dot(a, r * v + i, b, col);
                if (want != got[idx]) {
                    return mismatch(idx, want, got[idx],
                                    std::string(stage) + " value " + std::to_string(idx) + " (row " +
                                        std::to_string(r * v + i) + ", col " + std::to_string(col) + ")");
                }
            }
        }
    }
    return {};
}

// Dense quantized attention pipeline compared stage by stage.
VerifyResult check_attention(const AttentionStages& st, const AttentionConfig& cfg) {
    const std::size_t len = cfg.seq_len;
    const std::size_t d = cfg.head_dim;
    const IntMatrix q(len, d, st.q.values.to_row_major());
    const IntMatrix k(len, d, st.k.values.to_row_major());
    const IntMatrix v(len, d, st.v.values.to_row_major());
    IntMatrix k_t(d, len);
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < d; ++j) k_t(j, i) = k(i, j);
    }
    if (auto r = check_masked(q, k_t, cfg.mask, st.scores_int, "score"); !r.pass) return r;

    const double scale = st.q.params.scale * st.k.params.scale / std::sqrt(static_cast<double>(d));
    const QuantizationParams sm = softmax_quantization(cfg.softmax_bits);
    IntMatrix p(len, len);
    for (std::size_t r = 0; r < cfg.mask.vector_rows(); ++r) {
        const std::size_t b0 = cfg.mask.row_offsets[r];
        const std::size_t b1 = cfg.mask.row_offsets[r + 1];
        for (std::size_t i = 0; i < 8; ++i) {
            std::vector<double> s;
            for (std::size_t b = b0; b < b1; ++b) {
                s.push_back(round_to_half(static_cast<double>(masked_dot(q, r * 8 + i, k_t, cfg.mask.col_indices[b])) * scale));
            }
            if (s.empty()) continue;
            const double top = *std::max_element(s.begin(), s.end());
            double sum = 0;
            for (double x : s) sum += std::exp(x - top);
            for (std::size_t b = b0; b < b1; ++b) {
                const double prob = round_to_half(std::exp(s[b - b0] - top) / sum);
                const auto code = static_cast<std::int32_t>(
                    std::min(std::nearbyint(prob / sm.scale), static_cast<double>(sm.max_code())));
                p(r * 8 + i, cfg.mask.col_indices[b]) = code;
                const std::size_t idx = b * 8 + i;
                if (code != st.probabilities_int[idx]) {
                    return mismatch(idx, code, st.probabilities_int[idx],
                                    "softmax value " + std::to_string(idx));
                }
            }
        }
    }
    return check_dense(p, v, st.context_int);
}

double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::min(v.size() - 1, rank == 0 ? 0 : rank - 1)];
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class F>
double time_ms(F&& f) {
    const auto t0 = Clock::now();
    f();
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

BenchRecord base_record(const Cell& c) {
    BenchRecord r;
    r.op = to_string(c.op);
    r.m = c.shape.m;
    r.n = c.shape.n;
    r.k = c.shape.k;
    r.vector_length = c.vector_length;
    r.sparsity = c.sparsity;
    r.precision = precision_label(c);
    r.bs_n = c.bs_n;
    r.pipeline = c.pipeline;
    return r;
}

TilingConfig tiling(const Cell& c) {
    TilingConfig t;
    t.bs_n = c.bs_n;
    t.pipeline = c.pipeline;
    return t;
}

}  // namespace

const char* to_string(BenchOp op) noexcept {
    switch (op) {
        case BenchOp::Spmm: return "spmm";
        case BenchOp::Sddmm: return "sddmm";
        case BenchOp::Attention: return "attention";
    }
    return "?";
}

BenchOp parse_op(const std::string& name) {
    if (name == "spmm") return BenchOp::Spmm;
    if (name == "sddmm") return BenchOp::Sddmm;
    if (name == "attention") return BenchOp::Attention;
    throw ConfigError("unknown operation '" + name + "'");
}

std::vector<Cell> expand(const SweepSpec& spec) {
    std::vector<std::pair<int, int>> precisions;
    for (const auto& p : spec.precisions) precisions.push_back(parse_precision(p));
    std::vector<Cell> cells;
    for (const Shape& shape : spec.shapes) {
        for (auto [lb, rb] : precisions) {
            for (int v : spec.vector_lengths) {
                for (double s : spec.sparsities) {
                    for (int bs : spec.bs_n) {
                        for (bool pipe : spec.pipeline) {
                            cells.push_back({spec.op, shape, v, s, lb, rb, bs, pipe, spec.seed});
                        }
                    }
                }
            }
        }
    }
    return cells;
}

VerifyResult verify(const Cell& cell, const std::optional<CsrPattern>& dlmc) {
    switch (cell.op) {
        case BenchOp::Spmm: {
            const SpmmInstance in = make_spmm(cell, dlmc);
            return check_dense(in.lhs_dense, in.rhs_dense, spmm_run(in.lhs, in.rhs, tiling(cell)).output);
        }
        case BenchOp::Sddmm: {
            const SddmmInstance in = make_sddmm(cell, dlmc);
            return check_masked(in.a_dense, in.b_dense, in.pattern,
                                sddmm_run(in.a, in.b, in.pattern, tiling(cell)).values, "output");
        }
        case BenchOp::Attention: {
            const AttentionInstance in = make_attention(cell, dlmc);
            for (std::size_t h = 0; h < in.q.size(); ++h) {
                VerifyResult r = check_attention(sparse_attention_stages(in.q[h], in.k[h], in.v[h], in.cfg), in.cfg);
                if (!r.pass) {
                    r.detail = "head " + std::to_string(h) + ": " + r.detail;
                    return r;
                }
            }
            return {};
        }
    }
    return {};
}

BenchRecord run_cell(const Cell& cell, int repetitions, bool check, const std::optional<CsrPattern>& dlmc) {
    BenchRecord rec = base_record(cell);
    rec.repetitions = std::max(repetitions, 1);
    std::vector<double> times;
    VerifyResult vr;
    try {
        switch (cell.op) {
            case BenchOp::Spmm: {
                const SpmmInstance in = make_spmm(cell, dlmc);
                rec.bytes_lhs = in.lhs.storage_bytes();
                rec.bytes_rhs = in.rhs.byte_size();
                IntMatrix out;
                for (int i = 0; i < rec.repetitions; ++i) {
                    times.push_back(time_ms([&] { out = spmm_run(in.lhs, in.rhs, tiling(cell)).output; }));
                }
                if (check) vr = check_dense(in.lhs_dense, in.rhs_dense, out);
                break;
            }
            case BenchOp::Sddmm: {
                const SddmmInstance in = make_sddmm(cell, dlmc);
                rec.bytes_lhs = in.a.byte_size();
                rec.bytes_rhs = in.b.byte_size();
                std::vector<std::int32_t> out;
                for (int i = 0; i < rec.repetitions; ++i) {
                    times.push_back(time_ms([&] { out = sddmm_run(in.a, in.b, in.pattern, tiling(cell)).values; }));
                }
                if (check) vr = check_masked(in.a_dense, in.b_dense, in.pattern, out, "output");
                break;
            }
            case BenchOp::Attention: {
                const AttentionInstance in = make_attention(cell, dlmc);
                std::vector<AttentionStages> stages(in.q.size());
                for (int i = 0; i < rec.repetitions; ++i) {
                    times.push_back(time_ms([&] {
                        for (std::size_t h = 0; h < in.q.size(); ++h) {
                            stages[h] = sparse_attention_stages(in.q[h], in.k[h], in.v[h], in.cfg);
                        }
                    }));
                }
                for (const auto& st : stages) {
                    rec.bytes_lhs += st.q.values.byte_size() + st.k.values.byte_size();
                    rec.bytes_rhs += st.v.values.byte_size();
                }
                if (check) {
                    for (std::size_t h = 0; h < stages.size() && vr.pass; ++h) vr = check_attention(stages[h], in.cfg);
                }
                break;
            }
        }
    } catch (const UnsupportedPrecisionError& e) {
        rec.status = "skipped";
        rec.reason = e.what();
        return rec;
    } catch (const ConfigError& e) {
        rec.status = "skipped";
        rec.reason = e.what();
        return rec;
    } catch (const ShapeError& e) {
        rec.status = "skipped";
        rec.reason = e.what();
        return rec;
    } catch (const StructureError& e) {
        rec.status = "skipped";
        rec.reason = e.what();
        return rec;
    } catch (const Error& e) {
        rec.status = "failed";
        rec.reason = e.what();
        return rec;
    }
    rec.median_ms = median(times);
    rec.p95_ms = percentile(times, 0.95);
    rec.verified = check && vr.pass;
    rec.status = (!check || vr.pass) ? "ok" : "failed";
    rec.reason = vr.detail;
    return rec;
}

std::vector<BenchRecord> run_sweep(const SweepSpec& spec) {
    std::vector<BenchRecord> out;
    for (const Cell& c : expand(spec)) out.push_back(run_cell(c, spec.repetitions, spec.verify, spec.dlmc));
    return out;
}

bool all_verified(const std::vector<BenchRecord>& records) {
    return std::all_of(records.begin(), records.end(),
                       [](const BenchRecord& r) { return r.status == "skipped" || r.verified; });
}

// ---------------------------------------------------------------------------
// Reports

const std::vector<std::string>& csv_header() {
    static const std::vector<std::string> h = {"op",          "m",         "n",       "k",        "vlen",
                                               "sparsity",    "precision", "bsn",     "pipeline", "status",
                                               "reason",      "reps",      "median_ms", "p95_ms", "verified",
                                               "bytes_lhs",   "bytes_rhs"};
    return h;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// Shortest text that reads back to the same double.
std::string fmt(double x) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return {buf.data(), res.ptr};
}

}  // namespace

std::string to_csv(const std::vector<BenchRecord>& records) {
    std::ostringstream os;
    const auto& h = csv_header();
    for (std::size_t i = 0; i < h.size(); ++i) os << (i ? "," : "") << h[i];
    os << '\n';
    for (const BenchRecord& r : records) {
        os << r.op << ',' << r.m << ',' << r.n << ',' << r.k << ',' << r.vector_length << ',' << fmt(r.sparsity) << ','
           << r.precision << ',' << r.bs_n << ',' << (r.pipeline ? "on" : "off") << ',' << r.status << ','
           << csv_field(r.reason) << ',' << r.repetitions << ',' << fmt(r.median_ms) << ',' << fmt(r.p95_ms) << ','
           << (r.verified ? "true" : "false") << ',' << r.bytes_lhs << ',' << r.bytes_rhs << '\n';
    }
    return os.str();
}

std::string to_json(const std::vector<BenchRecord>& records) {
    nlohmann::ordered_json doc;
    doc["schema"] = "qsparse-bench";
    doc["version"] = kJsonSchemaVersion;
    doc["records"] = nlohmann::ordered_json::array();
    for (const BenchRecord& r : records) {
        doc["records"].push_back({{"op", r.op},
                                  {"m", r.m},
                                  {"n", r.n},
                                  {"k", r.k},
                                  {"vlen", r.vector_length},
                                  {"sparsity", r.sparsity},
                                  {"precision", r.precision},
                                  {"bsn", r.bs_n},
                                  {"pipeline", r.pipeline},
                                  {"status", r.status},
                                  {"reason", r.reason},
                                  {"reps", r.repetitions},
                                  {"median_ms", r.median_ms},
                                  {"p95_ms", r.p95_ms},
                                  {"verified", r.verified},
                                  {"bytes_lhs", r.bytes_lhs},
                                  {"bytes_rhs", r.bytes_rhs}});
    }
    return doc.dump(2) + "\n";
}

std::vector<BenchRecord> from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(1, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object() || doc.value("schema", "") != "qsparse-bench") throw ParseError(1, "not a bench report");
    if (doc.value("version", 0) != kJsonSchemaVersion) {
        throw ParseError(1, "unsupported report version " + doc.value("version", nlohmann::json()).dump());
    }
    std::vector<BenchRecord> out;
    try {
        for (const auto& j : doc.at("records")) {
            BenchRecord r;
            j.at("op").get_to(r.op);
            j.at("m").get_to(r.m);
            j.at("n").get_to(r.n);
            j.at("k").get_to(r.k);
            j.at("vlen").get_to(r.vector_length);
            j.at("sparsity").get_to(r.sparsity);
            j.at("precision").get_to(r.precision);
            j.at("bsn").get_to(r.bs_n);
            j.at("pipeline").get_to(r.pipeline);
            j.at("status").get_to(r.status);
            j.at("reason").get_to(r.reason);
            j.at("reps").get_to(r.repetitions);
            j.at("median_ms").get_to(r.median_ms);
            j.at("p95_ms").get_to(r.p95_ms);
            j.at("verified").get_to(r.verified);
            j.at("bytes_lhs").get_to(r.bytes_lhs);
            j.at("bytes_rhs").get_to(r.bytes_rhs);
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(1, std::string("malformed record: ") + e.what());
    }
    return out;
}

void report(const std::vector<BenchRecord>& records, const std::string& format, const std::string& path) {
    std::string body;
    if (format == "csv") {
        body = to_csv(records);
    } else if (format == "json") {
        body = to_json(records);
    } else {
        throw ConfigError("unknown report format '" + format + "'");
    }
    if (path.empty() || path == "-") {
        std::cout << body;
        return;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << body;
    out.flush();
    if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace qsparse::bench
