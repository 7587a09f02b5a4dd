#include "qsparse/sparse_format.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "qsparse/errors.hpp"
#include "qsparse/tile_engine.hpp"

namespace qsparse {

namespace {

constexpr std::array<int, 8> inverse_permutation(const std::array<int, 8>& p) {
    std::array<int, 8> inv{};
    for (int q = 0; q < 8; ++q) inv[static_cast<std::size_t>(p[static_cast<std::size_t>(q)])] = q;
    return inv;
}

constexpr std::array<int, 8> kUnshuffle = inverse_permutation(kShufflePermutation);

std::size_t packed_bytes(std::size_t elements, int bits) {
    return (elements * static_cast<std::size_t>(bits) + 31) / 32 * 4;
}

void check_vector_length(int v) {
    if (v != 2 && v != 4 && v != 8) {
        throw ConfigError("vector length must be 2, 4 or 8, got " + std::to_string(v));
    }
}

void check_value_bits(int bits) {
    if (!is_packable_width(bits) && bits != 32) {
        throw ConfigError("unsupported value precision " + std::to_string(bits));
    }
}

void check_value_range(std::int64_t v, int bits, std::size_t where) {
    if (bits == 32) return;
    if (v < min_value(bits, Signedness::Signed) || v > max_value(bits, Signedness::Signed)) {
        throw RangeError("value " + std::to_string(v) + " at " + std::to_string(where) + " does not fit in " +
                         std::to_string(bits) + " bits");
    }
}

std::int32_t draw_nonzero(std::mt19937_64& rng, int bits) {
    const int effective = bits == 32 ? 16 : bits;
    std::uniform_int_distribution<std::int32_t> dist(
        static_cast<std::int32_t>(min_value(effective, Signedness::Signed)),
        static_cast<std::int32_t>(max_value(effective, Signedness::Signed)));
    std::int32_t v = 0;
    while (v == 0) v = dist(rng);
    return v;
}

std::vector<std::uint64_t> parse_numbers(const std::string& line, std::size_t line_no) {
    std::vector<std::uint64_t> out;
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(token, &used);
        } catch (const std::exception&) {
            throw ParseError(line_no, "not a number: '" + token + "'");
        }
        if (used != token.size() || token.front() == '-') {
            throw ParseError(line_no, "not a number: '" + token + "'");
        }
        out.push_back(v);
        token.clear();
    };
    for (char ch : line) {
        if (ch == ',' || ch == ' ' || ch == '\t' || ch == '\r') {
            flush();
        } else {
            token.push_back(ch);
        }
    }
    flush();
    return out;
}

void validate_csr(const CsrPattern& csr) {
    if (csr.row_offsets.size() != csr.rows + 1 || csr.row_offsets.front() != 0 ||
        csr.row_offsets.back() != csr.nnz || csr.col_indices.size() != csr.nnz) {
        throw FormatError("inconsistent CSR pattern");
    }
    for (std::size_t r = 0; r < csr.rows; ++r) {
        if (csr.row_offsets[r + 1] < csr.row_offsets[r]) throw FormatError("CSR offsets decrease");
    }
    for (std::uint32_t c : csr.col_indices) {
        if (c >= csr.cols) throw FormatError("CSR column index out of range");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// BCRS

void BcrsMatrix::validate() const {
    check_vector_length(vector_length);
    check_value_bits(value_bits);
    if (scalar_rows % static_cast<std::size_t>(vector_length) != 0) {
        throw StructureError("scalar rows " + std::to_string(scalar_rows) + " not divisible by vector length " +
                             std::to_string(vector_length));
    }
    if (row_offsets.size() != vector_rows() + 1 || row_offsets.front() != 0 ||
        row_offsets.back() != col_indices.size()) {
        throw FormatError("BCRS row offsets do not match the index array");
    }
    if (values.size() != col_indices.size() * static_cast<std::size_t>(vector_length)) {
        throw FormatError("BCRS value array has wrong length");
    }
    for (std::size_t r = 0; r < vector_rows(); ++r) {
        if (row_offsets[r + 1] < row_offsets[r]) throw FormatError("BCRS row offsets decrease at row " + std::to_string(r));
        for (std::uint32_t i = row_offsets[r]; i < row_offsets[r + 1]; ++i) {
            if (col_indices[i] >= scalar_cols) {
                throw FormatError("BCRS column index " + std::to_string(col_indices[i]) + " out of range");
            }
            if (i > row_offsets[r] && col_indices[i] <= col_indices[i - 1]) {
                throw FormatError("BCRS column indices not strictly increasing in row " + std::to_string(r));
            }
        }
    }
}

std::size_t BcrsMatrix::storage_bytes() const {
    return (row_offsets.size() + col_indices.size()) * sizeof(std::uint32_t) + packed_bytes(values.size(), value_bits);
}

BcrsMatrix dense_to_bcrs(const IntMatrix& dense, int vector_length, int value_bits) {
    check_vector_length(vector_length);
    check_value_bits(value_bits);
    const auto v_len = static_cast<std::size_t>(vector_length);
    if (dense.rows % v_len != 0) {
        throw StructureError("dense rows " + std::to_string(dense.rows) + " not divisible by vector length " +
                             std::to_string(vector_length));
    }
    BcrsMatrix b;
    b.scalar_rows = dense.rows;
    b.scalar_cols = dense.cols;
    b.vector_length = vector_length;
    b.value_bits = value_bits;
    b.row_offsets.assign(1, 0);
    for (std::size_t g = 0; g < dense.rows / v_len; ++g) {
        for (std::size_t c = 0; c < dense.cols; ++c) {
            std::size_t nonzero = 0;
            for (std::size_t v = 0; v < v_len; ++v) nonzero += dense(g * v_len + v, c) != 0 ? 1 : 0;
            if (nonzero == 0) continue;
            if (nonzero != v_len) {
                throw StructureError("row group " + std::to_string(g) + ", column " + std::to_string(c) +
                                     " is neither fully dense nor fully zero");
            }
            b.col_indices.push_back(static_cast<std::uint32_t>(c));
            for (std::size_t v = 0; v < v_len; ++v) {
                const std::int32_t x = dense(g * v_len + v, c);
                check_value_range(x, value_bits, (g * v_len + v) * dense.cols + c);
                b.values.push_back(x);
            }
        }
        b.row_offsets.push_back(static_cast<std::uint32_t>(b.col_indices.size()));
    }
    return b;
}

IntMatrix bcrs_to_dense(const BcrsMatrix& b) {
    b.validate();
    IntMatrix dense(b.scalar_rows, b.scalar_cols);
    const auto v_len = static_cast<std::size_t>(b.vector_length);
    for (std::size_t r = 0; r < b.vector_rows(); ++r) {
        for (std::uint32_t i = b.row_offsets[r]; i < b.row_offsets[r + 1]; ++i) {
            for (std::size_t v = 0; v < v_len; ++v) dense(r * v_len + v, b.col_indices[i]) = b.values[i * v_len + v];
        }
    }
    return dense;
}

CsrPattern vector_pattern(const BcrsMatrix& b) {
    CsrPattern csr;
    csr.rows = b.vector_rows();
    csr.cols = b.scalar_cols;
    csr.nnz = b.nnz_vectors();
    csr.row_offsets = b.row_offsets;
    csr.col_indices = b.col_indices;
    return csr;
}

// ---------------------------------------------------------------------------
// SR-BCRS

std::size_t SrBcrsMatrix::true_vectors() const noexcept {
    std::size_t n = 0;
    for (std::size_t r = 0; r < row_begin.size() && r < row_end.size(); ++r) n += row_end[r] - row_begin[r];
    return n;
}

std::size_t SrBcrsMatrix::stored_in_row(std::size_t r) const {
    const std::size_t next = r + 1 < row_begin.size() ? row_begin[r + 1] : stored_vectors();
    return next - row_begin[r];
}

std::span<const std::int32_t> SrBcrsMatrix::stride_values(std::size_t first) const {
    const auto v_len = static_cast<std::size_t>(vector_length);
    return std::span<const std::int32_t>(values).subspan(first * v_len, v_len * static_cast<std::size_t>(stride));
}

std::uint32_t SrBcrsMatrix::logical_col(std::size_t p) const {
    if (!shuffled) return col_indices[p];
    const std::size_t group = p - p % 8;
    return col_indices[group + static_cast<std::size_t>(kUnshuffle[p % 8])];
}

double SrBcrsMatrix::padded_fraction() const noexcept {
    if (stored_vectors() == 0) return 0.0;
    return static_cast<double>(stored_vectors() - true_vectors()) / static_cast<double>(stored_vectors());
}

void SrBcrsMatrix::validate() const {
    check_vector_length(vector_length);
    check_value_bits(value_bits);
    if (stride <= 0) throw FormatError("stride must be positive");
    if (scalar_rows % static_cast<std::size_t>(vector_length) != 0) {
        throw StructureError("scalar rows not divisible by vector length");
    }
    const std::size_t n = vector_rows();
    if (row_begin.size() != n || row_end.size() != n) {
        throw FormatError("SR-BCRS needs two offsets per vector row");
    }
    if (values.size() != stored_vectors() * static_cast<std::size_t>(vector_length)) {
        throw FormatError("SR-BCRS value array has wrong length");
    }
    if (shuffled && stride % 8 != 0) throw FormatError("shuffled SR-BCRS needs a stride divisible by 8");
    const auto s = static_cast<std::size_t>(stride);
    std::size_t expected_begin = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (row_begin[r] != expected_begin || row_end[r] < row_begin[r]) {
            throw FormatError("corrupt SR-BCRS offsets at vector row " + std::to_string(r));
        }
        const std::size_t count = row_end[r] - row_begin[r];
        const std::size_t stored = (count + s - 1) / s * s;
        if (row_begin[r] + stored > stored_vectors()) {
            throw FormatError("SR-BCRS offsets of vector row " + std::to_string(r) + " exceed storage");
        }
        for (std::size_t p = row_begin[r]; p < row_begin[r] + stored; ++p) {
            const std::uint32_t c = logical_col(p);
            const bool padding = p >= row_end[r];
            if (padding != (c == kSentinelIndex) || (!padding && c >= scalar_cols)) {
                throw FormatError("bad column index at stored vector " + std::to_string(p));
            }
        }
        expected_begin = row_begin[r] + stored;
    }
    if (expected_begin != stored_vectors()) throw FormatError("SR-BCRS index array has trailing entries");
}

std::size_t SrBcrsMatrix::storage_bytes() const {
    return (row_begin.size() + row_end.size() + col_indices.size()) * sizeof(std::uint32_t) +
           packed_bytes(values.size(), value_bits);
}

SrBcrsMatrix bcrs_to_srbcrs(const BcrsMatrix& b, int stride) {
    b.validate();
    if (stride <= 0) throw ConfigError("stride must be positive");
    const auto v_len = static_cast<std::size_t>(b.vector_length);
    const auto s = static_cast<std::size_t>(stride);

    SrBcrsMatrix m;
    m.scalar_rows = b.scalar_rows;
    m.scalar_cols = b.scalar_cols;
    m.vector_length = b.vector_length;
    m.stride = stride;
    m.value_bits = b.value_bits;
    for (std::size_t r = 0; r < b.vector_rows(); ++r) {
        const std::size_t first = b.row_offsets[r];
        const std::size_t count = b.row_offsets[r + 1] - first;
        const std::size_t stored = (count + s - 1) / s * s;
        const std::size_t pos = m.col_indices.size();
        m.row_begin.push_back(static_cast<std::uint32_t>(pos));
        m.row_end.push_back(static_cast<std::uint32_t>(pos + count));
        m.col_indices.resize(pos + stored, kSentinelIndex);
        m.values.resize((pos + stored) * v_len, 0);
        for (std::size_t j = 0; j < count; ++j) {
            m.col_indices[pos + j] = b.col_indices[first + j];
            const std::size_t base = pos + j / s * s;
            for (std::size_t v = 0; v < v_len; ++v) {
                m.values[base * v_len + v * s + j % s] = b.values[(first + j) * v_len + v];
            }
        }
    }
    return m;
}

BcrsMatrix srbcrs_to_bcrs(const SrBcrsMatrix& m) {
    m.validate();
    const auto v_len = static_cast<std::size_t>(m.vector_length);
    const auto s = static_cast<std::size_t>(m.stride);
    BcrsMatrix b;
    b.scalar_rows = m.scalar_rows;
    b.scalar_cols = m.scalar_cols;
    b.vector_length = m.vector_length;
    b.value_bits = m.value_bits;
    b.row_offsets.assign(1, 0);
    for (std::size_t r = 0; r < m.vector_rows(); ++r) {
        for (std::size_t p = m.row_begin[r]; p < m.row_end[r]; ++p) {
            const std::size_t rel = p - m.row_begin[r];
            const std::size_t base = m.row_begin[r] + rel / s * s;
            b.col_indices.push_back(m.logical_col(p));
            for (std::size_t v = 0; v < v_len; ++v) b.values.push_back(m.values[base * v_len + v * s + rel % s]);
        }
        b.row_offsets.push_back(static_cast<std::uint32_t>(b.col_indices.size()));
    }
    return b;
}

IntMatrix srbcrs_to_dense(const SrBcrsMatrix& m) {
    return bcrs_to_dense(srbcrs_to_bcrs(m));
}

SrBcrsMatrix shuffle_indices(const SrBcrsMatrix& m) {
    if (m.shuffled) throw StateError("column indices are already shuffled");
    if (m.stride % 8 != 0) {
        throw ConfigError("index shuffling needs a stride divisible by 8, got " + std::to_string(m.stride));
    }
    m.validate();
    SrBcrsMatrix out = m;
    for (std::size_t g = 0; g < m.col_indices.size(); g += 8) {
        for (std::size_t q = 0; q < 8; ++q) {
            out.col_indices[g + q] = m.col_indices[g + static_cast<std::size_t>(kShufflePermutation[q])];
        }
    }
    out.shuffled = true;
    return out;
}

// ---------------------------------------------------------------------------
// DLMC text format and generators

CsrPattern read_dlmc(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing header line");
    const auto header = parse_numbers(line, 1);
    if (header.size() != 3) throw ParseError(1, "header must be 'rows, cols, nnz'");

    CsrPattern csr;
    csr.rows = header[0];
    csr.cols = header[1];
    csr.nnz = header[2];

    if (!std::getline(in, line)) throw ParseError(2, "missing row offset line");
    const auto offsets = parse_numbers(line, 2);
    if (offsets.size() != csr.rows + 1) {
        throw ParseError(2, "expected " + std::to_string(csr.rows + 1) + " row offsets, got " +
                                std::to_string(offsets.size()));
    }
    if (offsets.front() != 0) throw ParseError(2, "first row offset must be 0");
    for (std::size_t i = 1; i < offsets.size(); ++i) {
        if (offsets[i] < offsets[i - 1]) throw ParseError(2, "row offsets decrease at position " + std::to_string(i));
    }
    if (offsets.back() != csr.nnz) throw ParseError(2, "last row offset does not equal nnz");

    std::vector<std::uint64_t> indices;
    if (std::getline(in, line)) {
        indices = parse_numbers(line, 3);
    } else if (csr.nnz != 0) {
        throw ParseError(3, "missing column index line");
    }
    if (indices.size() != csr.nnz) {
        throw ParseError(3, "expected " + std::to_string(csr.nnz) + " column indices, got " +
                                std::to_string(indices.size()));
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= csr.cols) throw ParseError(3, "column index " + std::to_string(indices[i]) + " out of range");
    }
    csr.row_offsets.assign(offsets.begin(), offsets.end());
    csr.col_indices.assign(indices.begin(), indices.end());
    return csr;
}

void write_dlmc(const CsrPattern& csr, std::ostream& out) {
    out << csr.rows << ", " << csr.cols << ", " << csr.nnz << '\n';
    for (std::size_t i = 0; i < csr.row_offsets.size(); ++i) out << (i ? " " : "") << csr.row_offsets[i];
    out << '\n';
    for (std::size_t i = 0; i < csr.col_indices.size(); ++i) out << (i ? " " : "") << csr.col_indices[i];
    out << '\n';
    if (!out) throw IoError("failed writing DLMC stream");
}

BcrsMatrix dilate(const CsrPattern& csr, int vector_length, std::uint64_t seed, int value_bits) {
    validate_csr(csr);
    check_vector_length(vector_length);
    check_value_bits(value_bits);
    BcrsMatrix b;
    b.scalar_rows = csr.rows * static_cast<std::size_t>(vector_length);
    b.scalar_cols = csr.cols;
    b.vector_length = vector_length;
    b.value_bits = value_bits;
    b.row_offsets = csr.row_offsets;
    b.col_indices = csr.col_indices;
    std::mt19937_64 rng(seed);
    b.values.resize(csr.nnz * static_cast<std::size_t>(vector_length));
    for (auto& v : b.values) v = draw_nonzero(rng, value_bits);
    return b;
}

BcrsMatrix generate_synthetic(std::size_t scalar_rows, std::size_t scalar_cols, int vector_length,
                              double sparsity, std::uint64_t seed, int value_bits) {
    check_vector_length(vector_length);
    check_value_bits(value_bits);
    if (!(sparsity >= 0.0 && sparsity < 1.0)) {
        throw ConfigError("sparsity must lie in [0, 1), got " + std::to_string(sparsity));
    }
    if (scalar_rows % static_cast<std::size_t>(vector_length) != 0) {
        throw StructureError("scalar rows not divisible by vector length");
    }
    // The epsilon keeps e.g. (1 - 0.98) * 100 from rounding down to 1.
    const auto per_row = static_cast<std::size_t>(std::floor((1.0 - sparsity) * static_cast<double>(scalar_cols) + 1e-9));

    BcrsMatrix b;
    b.scalar_rows = scalar_rows;
    b.scalar_cols = scalar_cols;
    b.vector_length = vector_length;
    b.value_bits = value_bits;
    b.row_offsets.assign(1, 0);

    std::mt19937_64 rng(seed);
    std::vector<std::uint32_t> all(scalar_cols);
    std::iota(all.begin(), all.end(), 0U);
    for (std::size_t r = 0; r < b.vector_rows(); ++r) {
        std::vector<std::uint32_t> picked;
        picked.reserve(per_row);
        std::sample(all.begin(), all.end(), std::back_inserter(picked), per_row, rng);
        for (std::uint32_t c : picked) {
            b.col_indices.push_back(c);
            for (int v = 0; v < vector_length; ++v) b.values.push_back(draw_nonzero(rng, value_bits));
        }
        b.row_offsets.push_back(static_cast<std::uint32_t>(b.col_indices.size()));
    }
    return b;
}

}  // namespace qsparse
