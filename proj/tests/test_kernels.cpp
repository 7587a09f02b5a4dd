#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "problems.hpp"
#include "qsparse/errors.hpp"
#include "qsparse/tile_engine.hpp"

using namespace qsparse;
using problems::col_major;
using problems::row_major;
using problems::to_lhs;

namespace {

std::vector<StageEvent> expected_trace(int steps) {
    // Cold start, steady state, drain, written out line by line.
    using S = Stage;
    std::vector<StageEvent> t = {{S::LoadLhs, 0}, {S::Sync, -1}, {S::PrefetchRhs, 0}};
    for (int i = 1; i < steps; ++i) {
        t.insert(t.end(), {{S::StoreRhs, i - 1}, {S::LoadLhs, i}, {S::Sync, -1}, {S::PrefetchRhs, i},
                           {S::Compute, i - 1}, {S::Sync, -1}});
    }
    t.insert(t.end(), {{S::StoreRhs, steps - 1}, {S::Sync, -1}, {S::Compute, steps - 1}});
    return t;
}

std::size_t position(const std::vector<StageEvent>& t, Stage s, int step) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i].stage == s && t[i].step == step) return i;
    }
    return t.size();
}

}  // namespace

TEST(Spmm, ZeroLhsGivesZeroOutput) {
    std::mt19937_64 rng(1);
    const IntMatrix rhs = oracle::random_signed(32, 16, 8, rng);
    const IntMatrix out = spmm({to_lhs(IntMatrix(16, 32), 8, 8, 8), row_major(rhs, 8), {}});
    EXPECT_EQ(out, IntMatrix(16, 16));
}

TEST(Spmm, HandWorkedVectorOfTwo) {
    IntMatrix lhs(2, 4);
    lhs(0, 2) = 3;
    lhs(1, 2) = 5;
    IntMatrix rhs(4, 8);
    rhs(2, 0) = 1;
    rhs(2, 1) = 2;
    const IntMatrix out = spmm({to_lhs(lhs, 2, 8, 8), row_major(rhs, 8), {}});
    IntMatrix expected(2, 8);
    expected(0, 0) = 3;
    expected(0, 1) = 6;
    expected(1, 0) = 5;
    expected(1, 1) = 10;
    EXPECT_EQ(out, expected);
}

TEST(Spmm, AllPrecisionsAndTilingsMatchOracle) {
    std::mt19937_64 rng(2);
    for (auto [lb, rb] : supported_precisions(OpKind::Spmm)) {
        for (int v : {2, 4, 8}) {
            const IntMatrix a = oracle::random_vector_sparse(32, 96, v, 0.6, lb, rng);
            const IntMatrix b = problems::rhs_values(96, 136, lb, rb, rng);
            const IntMatrix expected = oracle::narrow(oracle::dense_matmul(a, b));
            const SrBcrsMatrix lhs = to_lhs(a, v, lb, rb);
            for (int bs_n : {64, 128}) {
                for (bool pipe : {false, true}) {
                    TilingConfig cfg;
                    cfg.bs_n = bs_n;
                    cfg.pipeline = pipe;
                    EXPECT_EQ(spmm({lhs, row_major(b, rb), cfg}), expected)
                        << precision_name(lb, rb) << " V=" << v << " bs_n=" << bs_n << " pipe=" << pipe;
                }
            }
        }
    }
}

TEST(Spmm, ContractsAreEnforced) {
    std::mt19937_64 rng(3);
    const IntMatrix a = oracle::random_vector_sparse(16, 64, 8, 0.5, 8, rng);
    const IntMatrix b = oracle::random_signed(64, 16, 4, rng);
    const SrBcrsMatrix unshuffled = bcrs_to_srbcrs(dense_to_bcrs(a, 8, 8), 32);
    EXPECT_THROW(spmm({unshuffled, row_major(b, 4), {}}), ContractError);
    EXPECT_THROW(spmm({shuffle_indices(unshuffled), row_major(b, 8), {}}), ContractError);
    const SrBcrsMatrix four = bcrs_to_srbcrs(dense_to_bcrs(oracle::random_vector_sparse(16, 64, 8, 0.5, 4, rng), 8, 4), 16);
    EXPECT_THROW(spmm({four, row_major(b, 8), {}}), UnsupportedPrecisionError);
    EXPECT_THROW(spmm({unshuffled, row_major(IntMatrix(32, 16), 8), {}}), ShapeError);
    TilingConfig bad;
    bad.bs_n = 96;
    EXPECT_THROW(spmm({to_lhs(a, 8, 8, 8), row_major(oracle::random_signed(64, 16, 8, rng), 8), bad}), ConfigError);
}

TEST(Spmm, EightMmasPerStepAndConflictFreeStaging) {
    std::mt19937_64 rng(4);
    const IntMatrix a = oracle::random_vector_sparse(8, 64, 8, 0.0, 8, rng);
    const IntMatrix b = oracle::random_signed(64, 64, 8, rng);
    const SpmmResult r = spmm_run(to_lhs(a, 8, 8, 8), row_major(b, 8), {});
    EXPECT_EQ(r.stats.blocks, 1U);
    EXPECT_EQ(r.stats.steps, 4U);
    EXPECT_EQ(r.stats.tile_mmas, 4U * 8U);
    EXPECT_EQ(r.stats.max_bank_conflicts, 1);
}

TEST(Spmm, SentinelPaddingContributesNothing) {
    IntMatrix a(8, 40);
    for (std::size_t r = 0; r < 8; ++r) a(r, 39) = static_cast<std::int32_t>(r) - 9;
    std::mt19937_64 rng(5);
    const IntMatrix b = oracle::random_signed(40, 8, 8, rng);
    const SrBcrsMatrix lhs = to_lhs(a, 8, 8, 8);
    EXPECT_EQ(lhs.stored_vectors(), 16U);
    EXPECT_EQ(spmm({lhs, row_major(b, 8), {}}), oracle::narrow(oracle::dense_matmul(a, b)));
}

TEST(Pipeline, TraceFollowsPipelineOrder) {
    for (int steps : {1, 2, 5}) {
        EXPECT_EQ(spmm_pipeline_schedule(steps), expected_trace(steps)) << steps;
        const auto t = spmm_pipeline_schedule(steps);
        for (int i = 1; i < steps; ++i) {
            EXPECT_LT(position(t, Stage::PrefetchRhs, i), position(t, Stage::Compute, i - 1));
        }
    }
    EXPECT_TRUE(spmm_pipeline_schedule(0).empty());
}

TEST(Pipeline, KernelRecordsTheScheduleItRan) {
    std::mt19937_64 rng(6);
    const IntMatrix a = oracle::random_vector_sparse(8, 80, 8, 0.0, 8, rng);  // 5 steps
    const IntMatrix b = oracle::random_signed(80, 64, 8, rng);
    TilingConfig cfg;
    cfg.record_trace = true;
    const SpmmResult r = spmm_pipelined({to_lhs(a, 8, 8, 8), row_major(b, 8), cfg});
    ASSERT_EQ(r.traces.size(), 1U);
    EXPECT_EQ(r.traces[0].events, expected_trace(5));
    cfg.pipeline = false;
    const SpmmResult s = spmm_run(to_lhs(a, 8, 8, 8), row_major(b, 8), cfg);
    EXPECT_EQ(s.traces[0].events, spmm_serial_schedule(5));
    EXPECT_EQ(r.output, s.output);
}

TEST(Pipeline, AblationShapeMatchesOracle) {
    const BcrsMatrix pattern = generate_synthetic(256, 2304, 8, 0.7, 17, 8);
    const IntMatrix a = bcrs_to_dense(pattern);
    std::mt19937_64 rng(7);
    const IntMatrix b = oracle::random_signed(2304, 512, 8, rng);
    const SpmmProblem p{bcrs_to_srbcrs(pattern, 16), row_major(b, 8), {}};
    const IntMatrix expected = oracle::narrow(oracle::dense_matmul(a, b));
    EXPECT_EQ(spmm(p), expected);
    EXPECT_EQ(spmm_pipelined(p).output, expected);
}

TEST(Spmm, FusedEpilogueSeesEveryAccumulator) {
    std::mt19937_64 rng(8);
    const IntMatrix a = oracle::random_vector_sparse(16, 32, 4, 0.5, 8, rng);
    const IntMatrix b = oracle::random_signed(32, 16, 8, rng);
    const SpmmProblem p{to_lhs(a, 4, 8, 8), row_major(b, 8), {}};
    const IntMatrix plain = spmm(p);
    const RealMatrix fused = spmm_fused(p, [](std::int32_t x) { return 0.5 * x; });
    for (std::size_t i = 0; i < plain.data.size(); ++i) EXPECT_DOUBLE_EQ(fused.data[i], 0.5 * plain.data[i]);
}

TEST(Sddmm, OnesGiveK) {
    const IntMatrix a(2, 4, 1);
    const IntMatrix b(4, 2, 1);
    IntMatrix mask(2, 2);
    mask(0, 1) = 1;
    mask(1, 1) = 1;
    SddmmProblem p{row_major(a, 8), col_major(b, 8), dense_to_bcrs(mask, 2, 8)};
    const SddmmOutput out = sddmm(p);
    EXPECT_EQ(out.bcrs.values, (std::vector<std::int32_t>{4, 4}));
    EXPECT_EQ(out.bcrs.col_indices, (std::vector<std::uint32_t>{1}));
}

TEST(Sddmm, EmptyPatternGivesEmptyOutput) {
    std::mt19937_64 rng(9);
    SddmmProblem p{row_major(oracle::random_signed(16, 32, 8, rng), 8),
                   col_major(oracle::random_signed(32, 16, 8, rng), 8), dense_to_bcrs(IntMatrix(16, 16), 8, 8)};
    const SddmmOutput out = sddmm(p);
    EXPECT_TRUE(out.bcrs.values.empty());
    EXPECT_EQ(out.bcrs.row_offsets, (std::vector<std::uint32_t>{0, 0, 0}));
}

TEST(Sddmm, AllPrecisionsAndTilingsMatchMaskedOracle) {
    std::mt19937_64 rng(10);
    for (auto [lb, rb] : supported_precisions(OpKind::Sddmm)) {
        for (int v : {2, 4, 8}) {
            const IntMatrix a = oracle::random_signed(64, 72, lb, rng);
            const IntMatrix b = problems::rhs_values(72, 64, lb, rb, rng);
            const BcrsMatrix pattern = generate_synthetic(64, 64, v, 0.5, rng(), 8);
            const auto expected = problems::masked_oracle(a, b, pattern);
            for (int bs_n : {64, 128}) {
                for (bool pipe : {false, true}) {
                    TilingConfig cfg;
                    cfg.bs_n = bs_n;
                    cfg.pipeline = pipe;
                    const SddmmResult r = sddmm_run(row_major(a, lb), col_major(b, rb), pattern, cfg);
                    ASSERT_EQ(r.values.size(), expected.size());
                    for (std::size_t i = 0; i < expected.size(); ++i) {
                        ASSERT_EQ(r.values[i], expected[i]) << precision_name(lb, rb) << " V=" << v << " i=" << i;
                    }
                }
            }
        }
    }
}

TEST(Sddmm, RandomSquareAtNinetyPercent) {
    std::mt19937_64 rng(11);
    const IntMatrix a = oracle::random_signed(64, 64, 8, rng);
    const IntMatrix b = oracle::random_signed(64, 64, 8, rng);
    const BcrsMatrix pattern = generate_synthetic(64, 64, 8, 0.9, 12, 8);
    SddmmProblem p{row_major(a, 8), col_major(b, 8), pattern};
    const SddmmOutput out = sddmm(p);
    const auto expected = problems::masked_oracle(a, b, pattern);
    ASSERT_EQ(out.bcrs.values.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(out.bcrs.values[i], expected[i]);

    p.out_format = SparseOutput::SrBcrs;
    p.out_stride = 16;
    const SddmmOutput sr = sddmm(p);
    EXPECT_EQ(sr.srbcrs.stride, 16);
    EXPECT_EQ(srbcrs_to_bcrs(sr.srbcrs), out.bcrs);
}

TEST(Sddmm, PipelineScheduleAndTrace) {
    using S = Stage;
    const std::vector<StageEvent> two = {{S::PrefetchLhs, 0}, {S::StoreLhs, 0}, {S::Sync, -1}, {S::PrefetchLhs, 1},
                                         {S::Compute, 0},     {S::Sync, -1},    {S::StoreLhs, 1}, {S::Sync, -1},
                                         {S::Compute, 1}};
    EXPECT_EQ(sddmm_pipeline_schedule(2), two);
    std::mt19937_64 rng(12);
    TilingConfig cfg;
    cfg.pipeline = true;
    cfg.record_trace = true;
    const BcrsMatrix pattern = generate_synthetic(8, 16, 8, 0.5, 1, 8);
    const SddmmResult r = sddmm_run(row_major(oracle::random_signed(8, 32, 8, rng), 8),
                                    col_major(oracle::random_signed(32, 16, 8, rng), 8), pattern, cfg);
    ASSERT_EQ(r.traces.size(), 1U);
    EXPECT_EQ(r.traces[0].events, two);
}

TEST(Sddmm, RejectsUnsupportedPrecisionAndLayouts) {
    std::mt19937_64 rng(13);
    const IntMatrix a = oracle::random_signed(8, 16, 4, rng);
    const BcrsMatrix pattern = generate_synthetic(8, 8, 8, 0.5, 1, 8);
    EXPECT_THROW(sddmm_run(row_major(a, 8), col_major(IntMatrix(16, 8), 4), pattern, {}), UnsupportedPrecisionError);
    EXPECT_THROW(sddmm_run(row_major(a, 8), row_major(IntMatrix(16, 8), 8), pattern, {}), ContractError);
}

TEST(Kernels, Deterministic) {
    std::mt19937_64 rng(14);
    const IntMatrix a = oracle::random_vector_sparse(32, 64, 4, 0.7, 16, rng);
    const IntMatrix b = oracle::random_signed(64, 32, 8, rng);
    const SpmmProblem p{to_lhs(a, 4, 16, 8), row_major(b, 8), {}};
    EXPECT_EQ(spmm(p), spmm(p));
}
