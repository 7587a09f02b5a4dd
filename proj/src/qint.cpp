#include "qsparse/qint.hpp"

#include <string>

#include "qsparse/errors.hpp"

namespace qsparse {

namespace {

std::size_t word_count(std::size_t elements, int bit_width) {
    return (elements * static_cast<std::size_t>(bit_width) + 31) / 32;
}

void check_width(int bit_width) {
    if (!is_packable_width(bit_width)) {
        throw ConfigError("unsupported packed bit width " + std::to_string(bit_width));
    }
}

void check_chunking(int chunk_width, int chunk_count) {
    if ((chunk_width != 4 && chunk_width != 8) || chunk_count < 1 || chunk_width * chunk_count > 32) {
        throw ConfigError("invalid chunking " + std::to_string(chunk_count) + "x" +
                          std::to_string(chunk_width) + " bits");
    }
}

std::int32_t extend(std::uint64_t raw, int bit_width, Signedness s) {
    if (s == Signedness::Signed && (raw >> (bit_width - 1)) & 1U) {
        return static_cast<std::int32_t>(static_cast<std::int64_t>(raw) - (std::int64_t{1} << bit_width));
    }
    return static_cast<std::int32_t>(raw);
}

}  // namespace

bool is_packable_width(int bit_width) noexcept {
    return bit_width == 4 || bit_width == 8 || bit_width == 12 || bit_width == 16;
}

std::int64_t min_value(int bit_width, Signedness s) noexcept {
    return s == Signedness::Signed ? -(std::int64_t{1} << (bit_width - 1)) : 0;
}

std::int64_t max_value(int bit_width, Signedness s) noexcept {
    return s == Signedness::Signed ? (std::int64_t{1} << (bit_width - 1)) - 1
                                   : (std::int64_t{1} << bit_width) - 1;
}

PackedMatrix PackedMatrix::pack(std::span<const std::int32_t> values, int bit_width, Layout layout,
                                std::size_t rows, std::size_t cols, Signedness signedness) {
    check_width(bit_width);
    if (values.size() != rows * cols) {
        throw ConfigError("pack: expected " + std::to_string(rows * cols) + " values, got " +
                          std::to_string(values.size()));
    }
    const std::int64_t lo = min_value(bit_width, signedness);
    const std::int64_t hi = max_value(bit_width, signedness);
    const std::uint64_t mask = (std::uint64_t{1} << bit_width) - 1;

    PackedMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.bit_width_ = bit_width;
    m.layout_ = layout;
    m.signedness_ = signedness;
    m.words_.assign(word_count(values.size(), bit_width), 0U);

    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::int64_t v = values[i];
        if (v < lo || v > hi) {
            throw RangeError("pack: value " + std::to_string(v) + " at index " + std::to_string(i) +
                             " does not fit in " + std::to_string(bit_width) + " bits");
        }
        const std::uint64_t raw = static_cast<std::uint64_t>(v) & mask;
        const std::size_t bit = i * static_cast<std::size_t>(bit_width);
        const std::size_t w = bit / 32;
        const unsigned shift = bit % 32;
        m.words_[w] |= static_cast<std::uint32_t>(raw << shift);
        if (shift + static_cast<unsigned>(bit_width) > 32) {
            m.words_[w + 1] |= static_cast<std::uint32_t>(raw >> (32 - shift));
        }
    }
    return m;
}

PackedMatrix PackedMatrix::from_words(std::vector<std::uint32_t> words, int bit_width, Layout layout,
                                      std::size_t rows, std::size_t cols, Signedness signedness) {
    check_width(bit_width);
    const std::size_t elements = rows * cols;
    if (words.size() != word_count(elements, bit_width)) {
        throw FormatError("from_words: expected " + std::to_string(word_count(elements, bit_width)) +
                          " words, got " + std::to_string(words.size()));
    }
    const std::size_t used_bits = elements * static_cast<std::size_t>(bit_width);
    if (used_bits % 32 != 0) {
        const std::uint32_t pad_mask = ~((std::uint32_t{1} << (used_bits % 32)) - 1);
        if (words.back() & pad_mask) {
            throw FormatError("from_words: nonzero padding bits in final word");
        }
    }
    PackedMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.bit_width_ = bit_width;
    m.layout_ = layout;
    m.signedness_ = signedness;
    m.words_ = std::move(words);
    return m;
}

PackedMatrix PackedMatrix::from_row_major(std::span<const std::int32_t> row_major, int bit_width,
                                          Layout layout, std::size_t rows, std::size_t cols,
                                          Signedness signedness) {
    if (layout == Layout::RowMajor || row_major.size() != rows * cols) {
        return pack(row_major, bit_width, layout, rows, cols, signedness);
    }
    std::vector<std::int32_t> ordered(row_major.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            ordered[c * rows + r] = row_major[r * cols + c];
        }
    }
    return pack(ordered, bit_width, layout, rows, cols, signedness);
}

std::int32_t PackedMatrix::element(std::size_t i) const noexcept {
    const std::size_t bit = i * static_cast<std::size_t>(bit_width_);
    const std::size_t w = bit / 32;
    const unsigned shift = bit % 32;
    std::uint64_t window = words_[w];
    if (shift + static_cast<unsigned>(bit_width_) > 32) {
        window |= std::uint64_t{words_[w + 1]} << 32;
    }
    const std::uint64_t raw = (window >> shift) & ((std::uint64_t{1} << bit_width_) - 1);
    return extend(raw, bit_width_, signedness_);
}

std::vector<std::int32_t> PackedMatrix::unpack() const {
    std::vector<std::int32_t> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = element(i);
    return out;
}

std::vector<std::int32_t> PackedMatrix::to_row_major() const {
    std::vector<std::int32_t> out(size());
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) out[r * cols_ + c] = get(r, c);
    }
    return out;
}

ChunkDecomposition split_unsigned(std::int64_t v, int chunk_width, int chunk_count) {
    check_chunking(chunk_width, chunk_count);
    const int total = chunk_width * chunk_count;
    if (v < 0 || v > max_value(total, Signedness::Unsigned)) {
        throw RangeError("split_unsigned: " + std::to_string(v) + " does not fit in " +
                         std::to_string(total) + " unsigned bits");
    }
    ChunkDecomposition d{chunk_width, {}, false};
    const std::uint64_t mask = (std::uint64_t{1} << chunk_width) - 1;
    for (int i = 0; i < chunk_count; ++i) {
        d.chunks.push_back(static_cast<std::int32_t>((static_cast<std::uint64_t>(v) >> (chunk_width * i)) & mask));
    }
    return d;
}

ChunkDecomposition split_signed(std::int64_t v, int chunk_width, int chunk_count) {
    check_chunking(chunk_width, chunk_count);
    const int total = chunk_width * chunk_count;
    if (v < min_value(total, Signedness::Signed) || v > max_value(total, Signedness::Signed)) {
        throw RangeError("split_signed: " + std::to_string(v) + " does not fit in " +
                         std::to_string(total) + " signed bits");
    }
    ChunkDecomposition d{chunk_width, {}, true};
    const std::uint64_t mask = (std::uint64_t{1} << chunk_width) - 1;
    const auto bits = static_cast<std::uint64_t>(v);
    for (int i = 0; i < chunk_count; ++i) {
        const std::uint64_t raw = (bits >> (chunk_width * i)) & mask;
        const bool top = i == chunk_count - 1;
        d.chunks.push_back(top ? extend(raw, chunk_width, Signedness::Signed) : static_cast<std::int32_t>(raw));
    }
    return d;
}

std::int64_t recombine(const ChunkDecomposition& d) noexcept {
    std::int64_t sum = 0;
    for (std::size_t i = 0; i < d.chunks.size(); ++i) {
        sum += std::int64_t{d.chunks[i]} * (std::int64_t{1} << (d.chunk_width * static_cast<int>(i)));
    }
    return sum;
}

std::vector<PackedMatrix> decompose_matrix(const PackedMatrix& m, int chunk_width) {
    if ((chunk_width != 4 && chunk_width != 8) || m.bit_width() % chunk_width != 0) {
        throw ConfigError("decompose_matrix: " + std::to_string(m.bit_width()) +
                          "-bit matrix is not divisible into " + std::to_string(chunk_width) + "-bit chunks");
    }
    const int count = m.bit_width() / chunk_width;
    const bool is_signed = m.signedness() == Signedness::Signed;
    std::vector<std::vector<std::int32_t>> planes(static_cast<std::size_t>(count),
                                                  std::vector<std::int32_t>(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i) {
        const std::int64_t v = m.element(i);
        const ChunkDecomposition d =
            is_signed ? split_signed(v, chunk_width, count) : split_unsigned(v, chunk_width, count);
        for (int c = 0; c < count; ++c) planes[static_cast<std::size_t>(c)][i] = d.chunks[static_cast<std::size_t>(c)];
    }
    std::vector<PackedMatrix> out;
    out.reserve(planes.size());
    for (int c = 0; c < count; ++c) {
        const bool top = c == count - 1;
        const Signedness s = top && is_signed ? Signedness::Signed : Signedness::Unsigned;
        out.push_back(PackedMatrix::pack(planes[static_cast<std::size_t>(c)], chunk_width, m.layout(),
                                         m.rows(), m.cols(), s));
    }
    return out;
}

}  // namespace qsparse
