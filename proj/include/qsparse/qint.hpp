#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qsparse {

enum class Layout { RowMajor, ColMajor };
enum class Signedness { Signed, Unsigned };

// Widths a PackedMatrix may carry. 12 bits only exists as storage; the
// arithmetic paths decompose it into 4-bit chunks.
bool is_packable_width(int bit_width) noexcept;

std::int64_t min_value(int bit_width, Signedness s) noexcept;
std::int64_t max_value(int bit_width, Signedness s) noexcept;

/// Dense matrix of b-bit integers packed into 32-bit words.
///
/// Elements are laid out in storage order of `layout` (row-major: r*cols+c,
/// column-major: c*rows+r), least-significant bits first within a word.
/// Values can straddle a word boundary when the width is 12. Trailing bits of
/// the last word are always zero.
class PackedMatrix {
public:
    PackedMatrix() = default;

    /// `values` are given in storage order for `layout`. Throws RangeError
    /// naming the first value that does not fit.
    static PackedMatrix pack(std::span<const std::int32_t> values, int bit_width, Layout layout,
                             std::size_t rows, std::size_t cols,
                             Signedness signedness = Signedness::Signed);

    /// Adopts pre-packed words after validating the word count and that the
    /// padding bits are zero.
    static PackedMatrix from_words(std::vector<std::uint32_t> words, int bit_width, Layout layout,
                                   std::size_t rows, std::size_t cols,
                                   Signedness signedness = Signedness::Signed);

    /// Builds a matrix of the given layout from row-major logical values.
    static PackedMatrix from_row_major(std::span<const std::int32_t> row_major, int bit_width,
                                       Layout layout, std::size_t rows, std::size_t cols,
                                       Signedness signedness = Signedness::Signed);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return rows_ * cols_; }
    int bit_width() const noexcept { return bit_width_; }
    Layout layout() const noexcept { return layout_; }
    Signedness signedness() const noexcept { return signedness_; }
    std::span<const std::uint32_t> words() const noexcept { return words_; }
    std::size_t byte_size() const noexcept { return words_.size() * sizeof(std::uint32_t); }

    std::size_t storage_index(std::size_t r, std::size_t c) const noexcept {
        return layout_ == Layout::RowMajor ? r * cols_ + c : c * rows_ + r;
    }

    /// Element `i` in storage order, sign- or zero-extended.
    std::int32_t element(std::size_t i) const noexcept;
    std::int32_t get(std::size_t r, std::size_t c) const noexcept {
        return element(storage_index(r, c));
    }

    /// All elements in storage order.
    std::vector<std::int32_t> unpack() const;
    /// All elements in row-major logical order regardless of layout.
    std::vector<std::int32_t> to_row_major() const;

    friend bool operator==(const PackedMatrix&, const PackedMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    int bit_width_ = 8;
    Layout layout_ = Layout::RowMajor;
    Signedness signedness_ = Signedness::Signed;
    std::vector<std::uint32_t> words_;
};

inline std::vector<std::int32_t> unpack(const PackedMatrix& m) { return m.unpack(); }

/// v = sum(chunks[i] * 2^(chunk_width*i)); the top chunk is two's-complement
/// signed when `top_signed`, every lower chunk is unsigned.
struct ChunkDecomposition {
    int chunk_width = 4;
    std::vector<std::int32_t> chunks;
    bool top_signed = false;

    std::size_t chunk_count() const noexcept { return chunks.size(); }
    friend bool operator==(const ChunkDecomposition&, const ChunkDecomposition&) = default;
};

ChunkDecomposition split_unsigned(std::int64_t v, int chunk_width, int chunk_count);
ChunkDecomposition split_signed(std::int64_t v, int chunk_width, int chunk_count);
std::int64_t recombine(const ChunkDecomposition& d) noexcept;

/// Splits every element of `m` into bit_width/chunk_width chunk matrices of
/// the same shape and layout, least significant first. Lower chunk matrices
/// are unsigned; the top one inherits the signedness of `m`.
std::vector<PackedMatrix> decompose_matrix(const PackedMatrix& m, int chunk_width);

}  // namespace qsparse
