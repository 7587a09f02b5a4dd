#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qsparse/matrix.hpp"
#include "qsparse/qint.hpp"

// Software model of a warp-level integer MMA (m8n8k16 for 8-bit operands,
// m8n8k32 for 4-bit operands) together with the register-level transposes
// and the shared-memory staging model used to feed it.
namespace qsparse {

inline constexpr int kWarpSize = 32;
inline constexpr int kTileM = 8;
inline constexpr int kTileN = 8;
inline constexpr int kBankCount = 32;

enum class Operand { Lhs, Rhs, Out };

struct TileShape {
    int m = kTileM;
    int n = kTileN;
    int k = 16;
    int lhs_bits = 8;
    int rhs_bits = 8;

    /// Native shape for an operand width of 8 (k = 16) or 4 (k = 32).
    static TileShape native(int width);

    int element_bits(Operand op) const noexcept { return op == Operand::Rhs ? rhs_bits : lhs_bits; }
    bool is_native() const noexcept;
    friend bool operator==(const TileShape&, const TileShape&) = default;
};

/// Elements (operands) or accumulators (Out) owned by one lane.
int slots_per_lane(const TileShape& shape, Operand op);

struct TileCoord {
    int row = 0;
    int col = 0;
    friend bool operator==(const TileCoord&, const TileCoord&) = default;
};

/// (lane, slot) -> cell of the logical tile. LHS is 8 x k, RHS is k x 8,
/// Out is 8 x 8. Lanes form groups of four per tile row (LHS/Out) or per tile
/// column (RHS); each operand lane owns k/4 consecutive k positions.
TileCoord lane_map(const TileShape& shape, Operand op, int lane, int slot);

/// One MMA operand or accumulator spread over the 32 lanes of a warp.
/// Operand lanes hold one packed 32-bit word in regs[lane][0] (slot 0 in the
/// low bits); Out lanes hold two int32 accumulators.
struct Fragment {
    TileShape shape;
    Operand operand = Operand::Lhs;
    Signedness signedness = Signedness::Signed;
    std::array<std::array<std::uint32_t, 2>, kWarpSize> regs{};

    std::int32_t accumulator(int lane, int slot) const noexcept {
        return static_cast<std::int32_t>(regs[static_cast<std::size_t>(lane)][static_cast<std::size_t>(slot)]);
    }
    std::int32_t element(int lane, int slot) const noexcept;
};

/// Distributes a logical tile (row-major IntMatrix of the operand's shape)
/// over the lanes. Throws RangeError if a value does not fit the operand width.
Fragment load_fragment(const IntMatrix& tile, const TileShape& shape, Operand op,
                       Signedness s = Signedness::Signed);

/// LHS fragment from a row-major packed 8 x k tile: lane l simply takes word l.
/// Rows beyond words.size()/4 are zero.
Fragment load_lhs_sequential(std::span<const std::uint32_t> words, const TileShape& shape,
                             Signedness s = Signedness::Signed);

/// Gathers a fragment back into its logical tile.
IntMatrix store_fragment(const Fragment& f);

Fragment zero_accumulator(const TileShape& shape);

/// c + a*b with exact 32-bit accumulation.
Fragment mma(const Fragment& a, const Fragment& b, const Fragment& c);

/// Number of mma() calls made by this thread since start (instrumentation).
std::uint64_t mma_call_count() noexcept;

/// Lane l receives the accumulators of lane l ^ xor_mask.
Fragment exchange_lanes(const Fragment& out, int xor_mask);

/// Raw accumulators of a stacked MMA: rows [j*V, (j+1)*V) hold partial j.
/// Each partial is moved onto rows [0, V) with a lane exchange and the
/// results are summed as sum_j weights[j] * partial_j in 64-bit arithmetic.
WideMatrix combine_stacked(const Fragment& raw, int vector_length, std::span<const std::int64_t> weights);

struct StackedResult {
    /// Rows [0, V): c + combined partials. Rows [V, 8): c unchanged.
    Fragment combined;
    /// Each partial product (V x 8) as it came out of the tile.
    std::vector<IntMatrix> partials;
};

/// Executes 8/V partial problems packed into one LHS tile (stacking) and
/// redistributes the results. Requires V in {2, 4}; V == 8 throws ConfigError.
StackedResult mma_stacked(const Fragment& stacked_a, const Fragment& b, const Fragment& c,
                          int vector_length, std::span<const std::int64_t> weights);

// ---------------------------------------------------------------------------
// Register transposes

using ByteBlock = std::array<std::uint32_t, 4>;

/// 4x4 byte transpose: byte j of word i moves to byte i of word j.
ByteBlock transpose_bytes(const ByteBlock& block) noexcept;

struct BitOpCounter {
    std::uint64_t word_ops = 0;
};

/// Original in-group index held at each stored position of a shuffled group
/// of eight column indices.
inline constexpr std::array<int, 8> kShufflePermutation = {0, 2, 4, 6, 1, 3, 5, 7};

/// rows[p] holds eight 4-bit values (columns 0..7 of staged RHS row p) with
/// the rows arriving in kShufflePermutation order. Returns one word per
/// column holding that column's eight k values in original index order.
/// The nibble split costs 8 word-wide mask/shift/OR operations per output
/// pair, recorded in `counter` when given. Throws ContractError when
/// `shuffled_order` is false.
std::array<std::uint32_t, 8> transpose_nibbles_via_shuffle(const std::array<std::uint32_t, 8>& rows,
                                                           bool shuffled_order,
                                                           BitOpCounter* counter = nullptr);

/// Brute-force search over all 8! orders for the one that makes
/// transpose_nibbles_via_shuffle return original index order.
std::array<int, 8> derive_shuffle_permutation();

// ---------------------------------------------------------------------------
// Shared-memory staging model

struct BankAccessPattern {
    std::array<std::uint32_t, kWarpSize> lane_addresses{};
};

/// Largest number of distinct words any single bank must serve (1 means
/// conflict-free; identical addresses are broadcast).
int bank_conflicts(const BankAccessPattern& p);

/// Flat word buffer holding staged RHS rows. `pad_words` are inserted after
/// every `rows_per_group` rows.
struct StagingLayout {
    int row_words = 16;
    int rows_per_group = 4;
    int pad_words = 8;

    /// 8 pad words after each lane's k-span of rows: 8 per 64 words for
    /// BS_n = 64 at either operand width.
    static StagingLayout padded(int bs_n, int rhs_bits);
    static StagingLayout unpadded(int bs_n, int rhs_bits);

    std::uint32_t address(int row, int word) const noexcept {
        return static_cast<std::uint32_t>((row / rows_per_group) * (rows_per_group * row_words + pad_words) +
                                          (row % rows_per_group) * row_words + word);
    }
    std::size_t total_words(int rows) const noexcept;
};

/// Word loads issued by one warp while reading a staged k x BS_n RHS block
/// into registers ahead of the register transpose. Warp `warp` owns every
/// warps-th group of 8 word columns; each lane loads k/4 rows of one word
/// column.
std::vector<BankAccessPattern> transpose_load_patterns(const StagingLayout& layout, int rhs_bits,
                                                       int warps);

}  // namespace qsparse
