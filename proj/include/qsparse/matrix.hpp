#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace qsparse {

// Plain row-major dense matrix used for unpacked operands, oracles and
// kernel outputs.
template <class T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<T> d) : rows(r), cols(c), data(std::move(d)) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

using IntMatrix = Matrix<std::int32_t>;
using WideMatrix = Matrix<std::int64_t>;
using RealMatrix = Matrix<double>;

}  // namespace qsparse
