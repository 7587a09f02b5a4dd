#include "qsparse/tile_engine.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "qsparse/errors.hpp"

namespace qsparse {

namespace {

thread_local std::uint64_t g_mma_calls = 0;

int operand_rows(const TileShape& s, Operand op) {
    return op == Operand::Rhs ? s.k : s.m;
}

int operand_cols(const TileShape& s, Operand op) {
    switch (op) {
        case Operand::Lhs: return s.k;
        case Operand::Rhs: return s.n;
        case Operand::Out: return s.n;
    }
    return 0;
}

std::uint32_t element_mask(int bits) {
    return bits >= 32 ? ~0U : (1U << bits) - 1U;
}

std::int32_t extend_bits(std::uint32_t raw, int bits, Signedness s) {
    if (s == Signedness::Signed && ((raw >> (bits - 1)) & 1U)) {
        return static_cast<std::int32_t>(static_cast<std::int64_t>(raw) - (std::int64_t{1} << bits));
    }
    return static_cast<std::int32_t>(raw);
}

void check_lane_slot(const TileShape& shape, Operand op, int lane, int slot) {
    if (lane < 0 || lane >= kWarpSize || slot < 0 || slot >= slots_per_lane(shape, op)) {
        throw RangeError("lane_map: lane " + std::to_string(lane) + " slot " + std::to_string(slot) +
                         " out of range");
    }
}

std::int32_t checked_narrow(std::int64_t v, const char* what) {
    if (v < std::numeric_limits<std::int32_t>::min() || v > std::numeric_limits<std::int32_t>::max()) {
        throw OverflowRiskError(std::string(what) + ": accumulator " + std::to_string(v) +
                                " does not fit in 32 bits");
    }
    return static_cast<std::int32_t>(v);
}

// 32-bit word whose shifts and bitwise operators bump a shared counter.
struct CountedWord {
    std::uint32_t value;
    std::uint64_t* ops;

    CountedWord op(std::uint32_t v) const noexcept {
        ++*ops;
        return {v, ops};
    }
    CountedWord operator&(std::uint32_t mask) const noexcept { return op(value & mask); }
    CountedWord operator|(const CountedWord& o) const noexcept { return op(value | o.value); }
    CountedWord operator<<(int n) const noexcept { return op(value << n); }
    CountedWord operator>>(int n) const noexcept { return op(value >> n); }
};

}  // namespace

TileShape TileShape::native(int width) {
    if (width == 8) return TileShape{kTileM, kTileN, 16, 8, 8};
    if (width == 4) return TileShape{kTileM, kTileN, 32, 4, 4};
    throw ConfigError("no native tile shape for " + std::to_string(width) + "-bit operands");
}

bool TileShape::is_native() const noexcept {
    if (m != kTileM || n != kTileN || lhs_bits != rhs_bits) return false;
    return (k == 16 && lhs_bits == 8) || (k == 32 && lhs_bits == 4);
}

int slots_per_lane(const TileShape& shape, Operand op) {
    if (op == Operand::Out) return shape.m * shape.n / kWarpSize;
    return operand_rows(shape, op) * operand_cols(shape, op) / kWarpSize;
}

TileCoord lane_map(const TileShape& shape, Operand op, int lane, int slot) {
    check_lane_slot(shape, op, lane, slot);
    const int group = lane / 4;
    const int thread_in_group = lane % 4;
    switch (op) {
        case Operand::Lhs: return {group, thread_in_group * (shape.k / 4) + slot};
        case Operand::Rhs: return {thread_in_group * (shape.k / 4) + slot, group};
        case Operand::Out: return {group, thread_in_group * 2 + slot};
    }
    return {};
}

std::int32_t Fragment::element(int lane, int slot) const noexcept {
    const int bits = shape.element_bits(operand);
    const std::uint32_t word = regs[static_cast<std::size_t>(lane)][0];
    return extend_bits((word >> (slot * bits)) & element_mask(bits), bits, signedness);
}

Fragment load_fragment(const IntMatrix& tile, const TileShape& shape, Operand op, Signedness s) {
    const auto rows = static_cast<std::size_t>(operand_rows(shape, op));
    const auto cols = static_cast<std::size_t>(operand_cols(shape, op));
    if (tile.rows != rows || tile.cols != cols) {
        throw ConfigError("load_fragment: tile is " + std::to_string(tile.rows) + "x" +
                          std::to_string(tile.cols) + ", operand needs " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    }
    Fragment f;
    f.shape = shape;
    f.operand = op;
    f.signedness = s;
    const int slots = slots_per_lane(shape, op);
    if (op == Operand::Out) {
        for (int lane = 0; lane < kWarpSize; ++lane) {
            for (int slot = 0; slot < slots; ++slot) {
                const TileCoord rc = lane_map(shape, op, lane, slot);
                f.regs[static_cast<std::size_t>(lane)][static_cast<std::size_t>(slot)] =
                    static_cast<std::uint32_t>(tile(static_cast<std::size_t>(rc.row), static_cast<std::size_t>(rc.col)));
            }
        }
        return f;
    }
    const int bits = shape.element_bits(op);
    const std::int64_t lo = min_value(bits, s);
    const std::int64_t hi = max_value(bits, s);
    for (int lane = 0; lane < kWarpSize; ++lane) {
        std::uint32_t word = 0;
        for (int slot = 0; slot < slots; ++slot) {
            const TileCoord rc = lane_map(shape, op, lane, slot);
            const std::int32_t v = tile(static_cast<std::size_t>(rc.row), static_cast<std::size_t>(rc.col));
            if (v < lo || v > hi) {
                throw RangeError("load_fragment: value " + std::to_string(v) + " at (" + std::to_string(rc.row) +
                                 "," + std::to_string(rc.col) + ") does not fit in " + std::to_string(bits) +
                                 " bits");
            }
            word |= (static_cast<std::uint32_t>(v) & element_mask(bits)) << (slot * bits);
        }
        f.regs[static_cast<std::size_t>(lane)][0] = word;
    }
    return f;
}

Fragment load_lhs_sequential(std::span<const std::uint32_t> words, const TileShape& shape, Signedness s) {
    if (words.size() > static_cast<std::size_t>(kWarpSize)) {
        throw ConfigError("load_lhs_sequential: more than one word per lane");
    }
    Fragment f;
    f.shape = shape;
    f.operand = Operand::Lhs;
    f.signedness = s;
    for (std::size_t lane = 0; lane < words.size(); ++lane) f.regs[lane][0] = words[lane];
    return f;
}

IntMatrix store_fragment(const Fragment& f) {
    IntMatrix tile(static_cast<std::size_t>(operand_rows(f.shape, f.operand)),
                   static_cast<std::size_t>(operand_cols(f.shape, f.operand)));
    const int slots = slots_per_lane(f.shape, f.operand);
    for (int lane = 0; lane < kWarpSize; ++lane) {
        for (int slot = 0; slot < slots; ++slot) {
            const TileCoord rc = lane_map(f.shape, f.operand, lane, slot);
            tile(static_cast<std::size_t>(rc.row), static_cast<std::size_t>(rc.col)) =
                f.operand == Operand::Out ? f.accumulator(lane, slot) : f.element(lane, slot);
        }
    }
    return tile;
}

Fragment zero_accumulator(const TileShape& shape) {
    Fragment f;
    f.shape = shape;
    f.operand = Operand::Out;
    return f;
}

Fragment mma(const Fragment& a, const Fragment& b, const Fragment& c) {
    if (a.operand != Operand::Lhs || b.operand != Operand::Rhs || c.operand != Operand::Out) {
        throw ConfigError("mma: operands must be (LHS, RHS, OUT)");
    }
    if (!(a.shape == b.shape) || !(a.shape == c.shape)) {
        throw ConfigError("mma: fragment shapes differ");
    }
    ++g_mma_calls;
    const TileShape& s = a.shape;
    const int per_lane = s.k / 4;
    // Unpacked operands, indexed [row][k] and [col][k].
    std::array<std::array<std::int32_t, 32>, kTileM> lhs{};
    std::array<std::array<std::int32_t, 32>, kTileN> rhs{};
    for (int lane = 0; lane < kWarpSize; ++lane) {
        for (int slot = 0; slot < per_lane; ++slot) {
            const auto g = static_cast<std::size_t>(lane / 4);
            const auto kk = static_cast<std::size_t>((lane % 4) * per_lane + slot);
            lhs[g][kk] = a.element(lane, slot);
            rhs[g][kk] = b.element(lane, slot);
        }
    }

    Fragment out = c;
    for (int lane = 0; lane < kWarpSize; ++lane) {
        for (int slot = 0; slot < 2; ++slot) {
            const auto row = static_cast<std::size_t>(lane / 4);
            const auto col = static_cast<std::size_t>((lane % 4) * 2 + slot);
            std::int64_t acc = c.accumulator(lane, slot);
            for (std::size_t kk = 0; kk < static_cast<std::size_t>(s.k); ++kk) {
                acc += std::int64_t{lhs[row][kk]} * rhs[col][kk];
            }
            out.regs[static_cast<std::size_t>(lane)][static_cast<std::size_t>(slot)] =
                static_cast<std::uint32_t>(checked_narrow(acc, "mma"));
        }
    }
    return out;
}

std::uint64_t mma_call_count() noexcept { return g_mma_calls; }

Fragment exchange_lanes(const Fragment& out, int xor_mask) {
    if (xor_mask < 0 || xor_mask >= kWarpSize) {
        throw RangeError("exchange_lanes: mask " + std::to_string(xor_mask) + " out of range");
    }
    Fragment r = out;
    for (int lane = 0; lane < kWarpSize; ++lane) {
        r.regs[static_cast<std::size_t>(lane)] = out.regs[static_cast<std::size_t>(lane ^ xor_mask)];
    }
    return r;
}

WideMatrix combine_stacked(const Fragment& raw, int vector_length, std::span<const std::int64_t> weights) {
    if (vector_length != 2 && vector_length != 4) {
        throw ConfigError("stacking needs vector length 2 or 4, got " + std::to_string(vector_length));
    }
    const int parts = kTileM / vector_length;
    if (weights.size() > static_cast<std::size_t>(parts)) {
        throw ConfigError("combine_stacked: " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(parts) + " partial tiles");
    }
    WideMatrix result(static_cast<std::size_t>(vector_length), kTileN);
    const int slots = slots_per_lane(raw.shape, Operand::Out);
    for (std::size_t j = 0; j < weights.size(); ++j) {
        // Rows [j*V, (j+1)*V) live in lanes [j*V*4, (j+1)*V*4); an xor with
        // j*V*4 lands them on the lanes that own rows [0, V).
        const Fragment moved = j == 0 ? raw : exchange_lanes(raw, static_cast<int>(j) * vector_length * 4);
        for (int lane = 0; lane < vector_length * 4; ++lane) {
            for (int slot = 0; slot < slots; ++slot) {
                const TileCoord rc = lane_map(raw.shape, Operand::Out, lane, slot);
                result(static_cast<std::size_t>(rc.row), static_cast<std::size_t>(rc.col)) +=
                    weights[j] * moved.accumulator(lane, slot);
            }
        }
    }
    return result;
}

StackedResult mma_stacked(const Fragment& stacked_a, const Fragment& b, const Fragment& c,
                          int vector_length, std::span<const std::int64_t> weights) {
    if (vector_length == kTileM) {
        throw ConfigError("stacking is not applicable for vector length 8");
    }
    const Fragment raw = mma(stacked_a, b, zero_accumulator(stacked_a.shape));
    const WideMatrix sum = combine_stacked(raw, vector_length, weights);

    StackedResult result;
    const IntMatrix raw_tile = store_fragment(raw);
    for (int j = 0; j < kTileM / vector_length; ++j) {
        IntMatrix part(static_cast<std::size_t>(vector_length), kTileN);
        for (int r = 0; r < vector_length; ++r) {
            for (int col = 0; col < kTileN; ++col) {
                part(static_cast<std::size_t>(r), static_cast<std::size_t>(col)) =
                    raw_tile(static_cast<std::size_t>(j * vector_length + r), static_cast<std::size_t>(col));
            }
        }
        result.partials.push_back(std::move(part));
    }

    result.combined = c;
    const int slots = slots_per_lane(c.shape, Operand::Out);
    for (int lane = 0; lane < vector_length * 4; ++lane) {
        for (int slot = 0; slot < slots; ++slot) {
            const TileCoord rc = lane_map(c.shape, Operand::Out, lane, slot);
            const std::int64_t v = std::int64_t{c.accumulator(lane, slot)} +
                                   sum(static_cast<std::size_t>(rc.row), static_cast<std::size_t>(rc.col));
            result.combined.regs[static_cast<std::size_t>(lane)][static_cast<std::size_t>(slot)] =
                static_cast<std::uint32_t>(checked_narrow(v, "mma_stacked"));
        }
    }
    return result;
}

ByteBlock transpose_bytes(const ByteBlock& block) noexcept {
    ByteBlock out{};
    for (unsigned j = 0; j < 4; ++j) {
        out[j] = ((block[0] >> (8 * j)) & 0xFFU) | (((block[1] >> (8 * j)) & 0xFFU) << 8) |
                 (((block[2] >> (8 * j)) & 0xFFU) << 16) | (((block[3] >> (8 * j)) & 0xFFU) << 24);
    }
    return out;
}

std::array<std::uint32_t, 8> transpose_nibbles_via_shuffle(const std::array<std::uint32_t, 8>& rows,
                                                           bool shuffled_order, BitOpCounter* counter) {
    if (!shuffled_order) {
        throw ContractError("nibble transpose requires rows staged in shuffled index order");
    }
    const ByteBlock upper = transpose_bytes({rows[0], rows[1], rows[2], rows[3]});
    const ByteBlock lower = transpose_bytes({rows[4], rows[5], rows[6], rows[7]});

    std::array<std::uint32_t, 8> out{};
    std::uint64_t ops = 0;
    for (std::size_t j = 0; j < 4; ++j) {
        const CountedWord x{upper[j], &ops};
        const CountedWord y{lower[j], &ops};
        // low nibbles: x's in even positions, y's shifted into odd positions
        const CountedWord lo = (x & 0x0F0F0F0FU) | ((y & 0x0F0F0F0FU) << 4);
        // high nibbles: x's shifted down into even positions, y's stay odd
        const CountedWord hi = ((x >> 4) & 0x0F0F0F0FU) | (y & 0xF0F0F0F0U);
        out[2 * j] = lo.value;
        out[2 * j + 1] = hi.value;
    }
    if (counter != nullptr) counter->word_ops += ops;
    return out;
}

std::array<int, 8> derive_shuffle_permutation() {
    std::array<int, 8> candidate{};
    std::iota(candidate.begin(), candidate.end(), 0);
    std::vector<std::array<int, 8>> found;
    do {
        std::array<std::uint32_t, 8> rows{};
        for (std::size_t p = 0; p < 8; ++p) {
            rows[p] = static_cast<std::uint32_t>(candidate[p]) * 0x11111111U;
        }
        const auto cols = transpose_nibbles_via_shuffle(rows, true);
        if (std::all_of(cols.begin(), cols.end(), [](std::uint32_t w) { return w == 0x76543210U; })) {
            found.push_back(candidate);
        }
    } while (std::next_permutation(candidate.begin(), candidate.end()));
    if (found.size() != 1) {
        throw StateError("shuffle permutation search found " + std::to_string(found.size()) + " candidates");
    }
    return found.front();
}

int bank_conflicts(const BankAccessPattern& p) {
    std::array<std::set<std::uint32_t>, kBankCount> per_bank;
    for (std::uint32_t addr : p.lane_addresses) per_bank[addr % kBankCount].insert(addr);
    std::size_t worst = 0;
    for (const auto& bank : per_bank) worst = std::max(worst, bank.size());
    return static_cast<int>(worst);
}

StagingLayout StagingLayout::padded(int bs_n, int rhs_bits) {
    const TileShape shape = TileShape::native(rhs_bits);
    return StagingLayout{bs_n * rhs_bits / 32, shape.k / 4, 8};
}

StagingLayout StagingLayout::unpadded(int bs_n, int rhs_bits) {
    const TileShape shape = TileShape::native(rhs_bits);
    return StagingLayout{bs_n * rhs_bits / 32, shape.k / 4, 0};
}

std::size_t StagingLayout::total_words(int rows) const noexcept {
    const int groups = (rows + rows_per_group - 1) / rows_per_group;
    return static_cast<std::size_t>(groups) * static_cast<std::size_t>(rows_per_group * row_words + pad_words);
}

std::vector<BankAccessPattern> transpose_load_patterns(const StagingLayout& layout, int rhs_bits,
                                                       int warps) {
    const TileShape shape = TileShape::native(rhs_bits);
    const int rows_per_lane = shape.k / 4;
    const int word_groups = std::max(1, layout.row_words / 8);
    if (warps < 1) throw ConfigError("transpose_load_patterns: need at least one warp");

    std::vector<BankAccessPattern> patterns;
    for (int warp = 0; warp < warps; ++warp) {
        for (int group = warp; group < word_groups; group += warps) {
            for (int i = 0; i < rows_per_lane; ++i) {
                BankAccessPattern p;
                for (int lane = 0; lane < kWarpSize; ++lane) {
                    const int row = (lane % 4) * rows_per_lane + i;
                    const int word = group * 8 + lane / 4;
                    p.lane_addresses[static_cast<std::size_t>(lane)] = layout.address(row, word);
                }
                patterns.push_back(p);
            }
        }
    }
    return patterns;
}

}  // namespace qsparse
