#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "qsparse/matrix.hpp"
#include "qsparse/qint.hpp"

namespace qsparse {

/// Column index stored in padding slots of SR-BCRS.
inline constexpr std::uint32_t kSentinelIndex = std::numeric_limits<std::uint32_t>::max();

/// Block CSR whose blocks are V x 1 column vectors spanning V consecutive
/// rows. Block b's values live at values[b*V .. b*V+V-1], top to bottom.
struct BcrsMatrix {
    std::size_t scalar_rows = 0;
    std::size_t scalar_cols = 0;
    int vector_length = 8;
    /// Precision of the stored values: 4, 8, 12, 16 or 32 (accumulators).
    int value_bits = 8;
    std::vector<std::uint32_t> row_offsets{0};
    std::vector<std::uint32_t> col_indices;
    std::vector<std::int32_t> values;

    std::size_t vector_rows() const noexcept { return scalar_rows / static_cast<std::size_t>(vector_length); }
    std::size_t nnz_vectors() const noexcept { return col_indices.size(); }

    /// Throws StructureError/FormatError if any invariant is broken.
    void validate() const;
    /// Bytes needed for offsets, indices and bit-packed values.
    std::size_t storage_bytes() const;

    friend bool operator==(const BcrsMatrix&, const BcrsMatrix&) = default;
};

/// Strided row-major BCRS. Each vector row stores its vectors in strides of
/// `stride` vectors; a stride is laid out as V rows of `stride` values, so
/// value (v, j) of the stride starting at stored vector p lives at
/// p*V + v*stride + j. The last stride of a row is padded with zero values
/// and kSentinelIndex indices. row_begin/row_end count stored vectors;
/// row_end is one past the last real vector of the row.
struct SrBcrsMatrix {
    std::size_t scalar_rows = 0;
    std::size_t scalar_cols = 0;
    int vector_length = 8;
    int stride = 16;
    int value_bits = 8;
    std::vector<std::uint32_t> row_begin;
    std::vector<std::uint32_t> row_end;
    std::vector<std::uint32_t> col_indices;
    std::vector<std::int32_t> values;
    bool shuffled = false;

    std::size_t vector_rows() const noexcept { return scalar_rows / static_cast<std::size_t>(vector_length); }
    std::size_t stored_vectors() const noexcept { return col_indices.size(); }
    std::size_t true_vectors() const noexcept;
    /// Stored vectors of row r, always a multiple of the stride.
    std::size_t stored_in_row(std::size_t r) const;
    std::size_t steps_in_row(std::size_t r) const { return stored_in_row(r) / static_cast<std::size_t>(stride); }

    /// V*stride values of the stride starting at stored vector `first`.
    std::span<const std::int32_t> stride_values(std::size_t first) const;
    /// Column of the value slot at stored vector p, with any shuffle undone;
    /// kSentinelIndex for padding.
    std::uint32_t logical_col(std::size_t p) const;

    double padded_fraction() const noexcept;
    void validate() const;
    std::size_t storage_bytes() const;

    friend bool operator==(const SrBcrsMatrix&, const SrBcrsMatrix&) = default;
};

/// Scalar CSR sparsity pattern as stored by the DLMC text format.
struct CsrPattern {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t nnz = 0;
    std::vector<std::uint32_t> row_offsets;
    std::vector<std::uint32_t> col_indices;

    friend bool operator==(const CsrPattern&, const CsrPattern&) = default;
};

BcrsMatrix dense_to_bcrs(const IntMatrix& dense, int vector_length, int value_bits = 32);
IntMatrix bcrs_to_dense(const BcrsMatrix& b);

SrBcrsMatrix bcrs_to_srbcrs(const BcrsMatrix& b, int stride);
IntMatrix srbcrs_to_dense(const SrBcrsMatrix& m);
/// Inverse of bcrs_to_srbcrs; drops padding and undoes any shuffle.
BcrsMatrix srbcrs_to_bcrs(const SrBcrsMatrix& m);

/// Permutes each group of 8 stored column indices by kShufflePermutation.
/// Values stay in place: the register transpose restores index order on the
/// RHS side, so values must remain in original order.
SrBcrsMatrix shuffle_indices(const SrBcrsMatrix& m);

CsrPattern read_dlmc(std::istream& in);
void write_dlmc(const CsrPattern& csr, std::ostream& out);
/// Pattern of the vector rows of a BCRS matrix (one scalar per block).
CsrPattern vector_pattern(const BcrsMatrix& b);

/// Replaces every scalar nonzero with a V x 1 block of nonzero values drawn
/// from the signed range of `value_bits`, deterministically from `seed`.
BcrsMatrix dilate(const CsrPattern& csr, int vector_length, std::uint64_t seed, int value_bits = 8);

/// Each vector row gets floor((1 - sparsity) * scalar_cols) blocks at
/// uniformly sampled distinct columns.
BcrsMatrix generate_synthetic(std::size_t scalar_rows, std::size_t scalar_cols, int vector_length,
                              double sparsity, std::uint64_t seed, int value_bits = 8);

}  // namespace qsparse
