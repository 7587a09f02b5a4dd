#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "qsparse/emulation.hpp"
#include "qsparse/errors.hpp"

using namespace qsparse;

namespace {

PackedMatrix pack_rm(const IntMatrix& m, int bits) {
    return PackedMatrix::from_row_major(m.data, bits, Layout::RowMajor, m.rows, m.cols);
}

}  // namespace

TEST(Plan, SupportedTable) {
    EXPECT_EQ(supported_precisions(OpKind::Spmm).size(), 7U);
    EXPECT_EQ(supported_precisions(OpKind::Sddmm).size(), 3U);
    EXPECT_THROW(plan(16, 4, OpKind::Sddmm), UnsupportedPrecisionError);
    EXPECT_THROW(plan(4, 8, OpKind::Spmm), UnsupportedPrecisionError);
    const EmulationScheme s = plan(16, 16, OpKind::Sddmm);
    ASSERT_EQ(s.pairs.size(), 4U);
    std::vector<std::int64_t> w;
    for (const auto& p : s.pairs) w.push_back(p.weight);
    EXPECT_EQ(w, (std::vector<std::int64_t>{1, 256, 256, 65536}));
    EXPECT_EQ(plan(12, 4, OpKind::Spmm).lhs_chunks, 3);
    EXPECT_EQ(plan(16, 4, OpKind::Spmm).product_count(), 4);
    EXPECT_FALSE(plan(8, 8, OpKind::Spmm).emulated());
    EXPECT_EQ(parse_precision("L16-R8"), (std::pair<int, int>{16, 8}));
    EXPECT_THROW(parse_precision("L16R8"), ConfigError);
    EXPECT_THROW(parse_precision("L8-R8x"), ConfigError);
}

TEST(Emulated, WorkedScalarProducts) {
    // 1 x 1 products padded into one tile.
    IntMatrix a(1, 1, -19);
    IntMatrix b(1, 1, 7);
    EXPECT_EQ(emulated_matmul(pack_rm(a, 8), pack_rm(b, 4), plan(8, 4, OpKind::Spmm))(0, 0), -133);
    a(0, 0) = 300;
    b(0, 0) = 500;
    EXPECT_EQ(emulated_matmul(pack_rm(a, 16), pack_rm(b, 16), plan(16, 16, OpKind::Spmm))(0, 0), 150000);
}

TEST(Emulated, EverySchemeMatchesOracle) {
    std::mt19937_64 rng(21);
    for (OpKind op : {OpKind::Spmm, OpKind::Sddmm}) {
        for (auto [lb, rb] : supported_precisions(op)) {
            const EmulationScheme s = plan(lb, rb, op);
            for (int rep = 0; rep < 10; ++rep) {
                const std::size_t m = 1 + rng() % 24;
                const std::size_t k = 1 + rng() % 70;
                const std::size_t n = 1 + rng() % 24;
                const IntMatrix a = oracle::random_signed(m, k, lb, rng);
                IntMatrix b = oracle::random_signed(k, n, rb, rng);
                // Keep 16 x 16 results inside 32 bits.
                if (lb == 16 && rb == 16) b = oracle::random_matrix(k, n, -400, 400, rng);
                EmulationStats stats;
                const IntMatrix got = emulated_matmul(pack_rm(a, lb), pack_rm(b, rb), s, &stats);
                EXPECT_EQ(got, oracle::narrow(oracle::dense_matmul(a, b))) << s.name();
                EXPECT_EQ(stats.chunk_products, static_cast<std::uint64_t>(s.product_count()));
            }
        }
    }
}

TEST(Emulated, GuardsAgainstOverflow) {
    EXPECT_NO_THROW(check_accumulation_bound(64, 128, 128));
    EXPECT_THROW(check_accumulation_bound(1u << 20, 128, 128), OverflowRiskError);
    IntMatrix a(1, 4, 32767);
    IntMatrix b(4, 1, 32767);
    EXPECT_THROW(emulated_matmul(pack_rm(a, 16), pack_rm(b, 16), plan(16, 16, OpKind::Spmm)), OverflowRiskError);
    EXPECT_THROW(emulated_matmul(pack_rm(a, 16), pack_rm(IntMatrix(3, 1), 16), plan(16, 16, OpKind::Spmm)),
                 ConfigError);
}

TEST(Chunks, ValuesFollowSignedness) {
    EXPECT_EQ(chunk_value(-19, 4, 0, false), 13);
    EXPECT_EQ(chunk_value(-19, 4, 1, true), -2);
    EXPECT_EQ(chunk_value(-19, 4, 1, false), 14);
    EXPECT_EQ(chunk_value(-300, 8, 1, true), -2);
}
