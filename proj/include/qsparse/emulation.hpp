#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qsparse/matrix.hpp"
#include "qsparse/qint.hpp"
#include "qsparse/tile_engine.hpp"

namespace qsparse {

enum class OpKind { Spmm, Sddmm };

const char* to_string(OpKind op) noexcept;

/// One chunk-matrix product A_i * B_j and its recombination weight
/// 2^(native_width * (i + j)).
struct ChunkPair {
    int lhs_chunk = 0;
    int rhs_chunk = 0;
    std::int64_t weight = 1;
    friend bool operator==(const ChunkPair&, const ChunkPair&) = default;
};

/// How an Lx-Ry product is carried out with native 4- or 8-bit tiles.
struct EmulationScheme {
    int lhs_bits = 8;
    int rhs_bits = 8;
    OpKind op = OpKind::Spmm;
    int native_width = 8;
    int lhs_chunks = 1;
    int rhs_chunks = 1;
    /// Per-chunk interpretation; only the top chunk of a signed operand is signed.
    std::vector<bool> lhs_signed;
    std::vector<bool> rhs_signed;
    /// Every (i, j) product in ascending weight order.
    std::vector<ChunkPair> pairs;

    bool emulated() const noexcept { return lhs_chunks * rhs_chunks > 1; }
    int product_count() const noexcept { return lhs_chunks * rhs_chunks; }
    TileShape tile_shape() const { return TileShape::native(native_width); }
    std::string name() const;
};

bool is_supported(int lhs_bits, int rhs_bits, OpKind op) noexcept;
std::vector<std::pair<int, int>> supported_precisions(OpKind op);

/// "L16-R8" -> {16, 8}. Throws ConfigError on malformed names.
std::pair<int, int> parse_precision(const std::string& name);
std::string precision_name(int lhs_bits, int rhs_bits);

/// Throws UnsupportedPrecisionError for pairs outside the supported table.
EmulationScheme plan(int lhs_bits, int rhs_bits, OpKind op);

/// Bits [width*index, width*(index+1)) of v, read as two's complement when
/// `as_signed` and as unsigned otherwise.
std::int32_t chunk_value(std::int32_t v, int width, int index, bool as_signed) noexcept;

/// One plane per chunk, each interpreted with flags[i].
std::vector<IntMatrix> split_planes(const IntMatrix& m, int width, const std::vector<bool>& flags);

/// Throws OverflowRiskError unless k * max|a| * max|b| < 2^31.
void check_accumulation_bound(std::size_t k, std::int64_t max_abs_a, std::int64_t max_abs_b);

std::int64_t max_abs(const IntMatrix& m) noexcept;

struct EmulationStats {
    std::uint64_t chunk_products = 0;
    std::uint64_t tile_mmas = 0;
};

/// Final 64-bit recombined sum narrowed to 32 bits (OverflowRiskError if it
/// does not fit). Every recombination in the library goes through here.
std::int32_t narrow_recombined(std::int64_t v, std::size_t index);

/// Dense a (M x K, Lx) times b (K x N, Ry) computed as
/// sum over chunk pairs of weight * (A_i * B_j), each chunk product run
/// through 8 x 8 x k tile MMAs.
IntMatrix emulated_matmul(const PackedMatrix& a, const PackedMatrix& b, const EmulationScheme& scheme,
                          EmulationStats* stats = nullptr);

}  // namespace qsparse
