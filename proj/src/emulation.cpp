#include "qsparse/emulation.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

#include "qsparse/errors.hpp"

namespace qsparse {

namespace {

struct SupportedEntry {
    OpKind op;
    int lhs;
    int rhs;
    int width;
};

// Emulated and native pairs, with the tile width each one runs at.
constexpr SupportedEntry kSupported[] = {
    {OpKind::Spmm, 16, 16, 8}, {OpKind::Spmm, 16, 8, 8}, {OpKind::Spmm, 16, 4, 4}, {OpKind::Spmm, 12, 4, 4},
    {OpKind::Spmm, 8, 4, 4},   {OpKind::Spmm, 8, 8, 8},  {OpKind::Spmm, 4, 4, 4},
    {OpKind::Sddmm, 16, 16, 8}, {OpKind::Sddmm, 8, 8, 8}, {OpKind::Sddmm, 4, 4, 4},
};

const SupportedEntry* find_entry(int lhs, int rhs, OpKind op) noexcept {
    for (const auto& e : kSupported) {
        if (e.op == op && e.lhs == lhs && e.rhs == rhs) return &e;
    }
    return nullptr;
}

IntMatrix sub_tile(const IntMatrix& m, std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) {
    IntMatrix t(rows, cols);
    for (std::size_t r = 0; r < rows && r0 + r < m.rows; ++r) {
        for (std::size_t c = 0; c < cols && c0 + c < m.cols; ++c) t(r, c) = m(r0 + r, c0 + c);
    }
    return t;
}

}  // namespace

const char* to_string(OpKind op) noexcept {
    return op == OpKind::Spmm ? "spmm" : "sddmm";
}

std::string precision_name(int lhs_bits, int rhs_bits) {
    return "L" + std::to_string(lhs_bits) + "-R" + std::to_string(rhs_bits);
}

std::string EmulationScheme::name() const { return precision_name(lhs_bits, rhs_bits); }

bool is_supported(int lhs_bits, int rhs_bits, OpKind op) noexcept {
    return find_entry(lhs_bits, rhs_bits, op) != nullptr;
}

std::vector<std::pair<int, int>> supported_precisions(OpKind op) {
    std::vector<std::pair<int, int>> out;
    for (const auto& e : kSupported) {
        if (e.op == op) out.emplace_back(e.lhs, e.rhs);
    }
    return out;
}

std::pair<int, int> parse_precision(const std::string& name) {
    int lhs = 0;
    int rhs = 0;
    char tail = 0;
    if (std::sscanf(name.c_str(), "L%d-R%d%c", &lhs, &rhs, &tail) != 2) {
        throw ConfigError("malformed precision name '" + name + "', expected e.g. L8-R4");
    }
    return {lhs, rhs};
}

EmulationScheme plan(int lhs_bits, int rhs_bits, OpKind op) {
    const SupportedEntry* e = find_entry(lhs_bits, rhs_bits, op);
    if (e == nullptr) {
        throw UnsupportedPrecisionError(std::string(to_string(op)) + " does not support " +
                                        precision_name(lhs_bits, rhs_bits));
    }
    EmulationScheme s;
    s.lhs_bits = lhs_bits;
    s.rhs_bits = rhs_bits;
    s.op = op;
    s.native_width = e->width;
    s.lhs_chunks = lhs_bits / e->width;
    s.rhs_chunks = rhs_bits / e->width;
    s.lhs_signed.assign(static_cast<std::size_t>(s.lhs_chunks), false);
    s.rhs_signed.assign(static_cast<std::size_t>(s.rhs_chunks), false);
    s.lhs_signed.back() = true;
    s.rhs_signed.back() = true;
    for (int i = 0; i < s.lhs_chunks; ++i) {
        for (int j = 0; j < s.rhs_chunks; ++j) {
            s.pairs.push_back({i, j, std::int64_t{1} << (e->width * (i + j))});
        }
    }
    std::stable_sort(s.pairs.begin(), s.pairs.end(),
                     [](const ChunkPair& x, const ChunkPair& y) { return x.weight < y.weight; });
    return s;
}

std::int32_t chunk_value(std::int32_t v, int width, int index, bool as_signed) noexcept {
    const std::uint32_t raw = (static_cast<std::uint32_t>(v) >> (width * index)) & ((1U << width) - 1U);
    if (as_signed && ((raw >> (width - 1)) & 1U)) {
        return static_cast<std::int32_t>(raw) - (1 << width);
    }
    return static_cast<std::int32_t>(raw);
}

std::vector<IntMatrix> split_planes(const IntMatrix& m, int width, const std::vector<bool>& flags) {
    std::vector<IntMatrix> planes;
    planes.reserve(flags.size());
    for (std::size_t i = 0; i < flags.size(); ++i) {
        IntMatrix p(m.rows, m.cols);
        for (std::size_t e = 0; e < m.data.size(); ++e) {
            p.data[e] = chunk_value(m.data[e], width, static_cast<int>(i), flags[i]);
        }
        planes.push_back(std::move(p));
    }
    return planes;
}

void check_accumulation_bound(std::size_t k, std::int64_t max_abs_a, std::int64_t max_abs_b) {
    const long double bound = static_cast<long double>(k) * static_cast<long double>(max_abs_a) *
                              static_cast<long double>(max_abs_b);
    if (bound >= 2147483648.0L) {
        throw OverflowRiskError("accumulation bound exceeded: K=" + std::to_string(k) + ", max|a|=" +
                                std::to_string(max_abs_a) + ", max|b|=" + std::to_string(max_abs_b));
    }
}

std::int64_t max_abs(const IntMatrix& m) noexcept {
    std::int64_t best = 0;
    for (std::int32_t v : m.data) best = std::max(best, v < 0 ? -std::int64_t{v} : std::int64_t{v});
    return best;
}

std::int32_t narrow_recombined(std::int64_t v, std::size_t index) {
#ifdef QSPARSE_FAULT_INJECTION
    // Negative control for the verification harness.
    if (index == 0) v ^= 1;
#else
    (void)index;
#endif
    if (v < std::numeric_limits<std::int32_t>::min() || v > std::numeric_limits<std::int32_t>::max()) {
        throw OverflowRiskError("recombined value " + std::to_string(v) + " does not fit in 32 bits");
    }
    return static_cast<std::int32_t>(v);
}

IntMatrix emulated_matmul(const PackedMatrix& a, const PackedMatrix& b, const EmulationScheme& scheme,
                          EmulationStats* stats) {
    if (a.cols() != b.rows()) {
        throw ConfigError("emulated_matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()) + ")");
    }
    if (a.bit_width() != scheme.lhs_bits || b.bit_width() != scheme.rhs_bits) {
        throw ConfigError("emulated_matmul: operand widths do not match scheme " + scheme.name());
    }
    const IntMatrix lhs(a.rows(), a.cols(), a.to_row_major());
    const IntMatrix rhs(b.rows(), b.cols(), b.to_row_major());
    const auto lhs_planes = split_planes(lhs, scheme.native_width, scheme.lhs_signed);
    const auto rhs_planes = split_planes(rhs, scheme.native_width, scheme.rhs_signed);

    const std::size_t k_total = a.cols();
    for (const ChunkPair& p : scheme.pairs) {
        check_accumulation_bound(k_total, max_abs(lhs_planes[static_cast<std::size_t>(p.lhs_chunk)]),
                                 max_abs(rhs_planes[static_cast<std::size_t>(p.rhs_chunk)]));
    }

    const TileShape shape = scheme.tile_shape();
    const auto tk = static_cast<std::size_t>(shape.k);
    WideMatrix wide(a.rows(), b.cols());
    for (const ChunkPair& p : scheme.pairs) {
        const IntMatrix& ai = lhs_planes[static_cast<std::size_t>(p.lhs_chunk)];
        const IntMatrix& bj = rhs_planes[static_cast<std::size_t>(p.rhs_chunk)];
        const Signedness sa = scheme.lhs_signed[static_cast<std::size_t>(p.lhs_chunk)] ? Signedness::Signed
                                                                                      : Signedness::Unsigned;
        const Signedness sb = scheme.rhs_signed[static_cast<std::size_t>(p.rhs_chunk)] ? Signedness::Signed
                                                                                      : Signedness::Unsigned;
        if (stats != nullptr) ++stats->chunk_products;
        for (std::size_t m0 = 0; m0 < a.rows(); m0 += kTileM) {
            for (std::size_t n0 = 0; n0 < b.cols(); n0 += kTileN) {
                Fragment acc = zero_accumulator(shape);
                for (std::size_t k0 = 0; k0 < k_total; k0 += tk) {
                    const Fragment fa = load_fragment(sub_tile(ai, m0, k0, kTileM, tk), shape, Operand::Lhs, sa);
                    const Fragment fb = load_fragment(sub_tile(bj, k0, n0, tk, kTileN), shape, Operand::Rhs, sb);
                    acc = mma(fa, fb, acc);
                    if (stats != nullptr) ++stats->tile_mmas;
                }
                const IntMatrix tile = store_fragment(acc);
                for (std::size_t r = 0; r < kTileM && m0 + r < a.rows(); ++r) {
                    for (std::size_t c = 0; c < kTileN && n0 + c < b.cols(); ++c) {
                        wide(m0 + r, n0 + c) += p.weight * tile(r, c);
                    }
                }
            }
        }
    }

    IntMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < wide.data.size(); ++i) out.data[i] = narrow_recombined(wide.data[i], i);
    return out;
}

}  // namespace qsparse
