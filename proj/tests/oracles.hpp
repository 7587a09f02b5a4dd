#pragma once

// Independent reference implementations shared by the tests. Nothing here
// calls into the kernels or the tile engine.

#include <cstdint>
#include <random>
#include <vector>

#include "qsparse/matrix.hpp"

namespace oracle {

using qsparse::IntMatrix;
using qsparse::WideMatrix;

inline WideMatrix dense_matmul(const IntMatrix& a, const IntMatrix& b) {
    WideMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const std::int64_t x = a(i, k);
            if (x == 0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += x * b(k, j);
        }
    }
    return c;
}

inline IntMatrix narrow(const WideMatrix& w) {
    IntMatrix out(w.rows, w.cols);
    for (std::size_t i = 0; i < w.data.size(); ++i) out.data[i] = static_cast<std::int32_t>(w.data[i]);
    return out;
}

inline IntMatrix random_matrix(std::size_t rows, std::size_t cols, std::int32_t lo, std::int32_t hi,
                               std::mt19937_64& rng) {
    std::uniform_int_distribution<std::int32_t> dist(lo, hi);
    IntMatrix m(rows, cols);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

inline IntMatrix random_signed(std::size_t rows, std::size_t cols, int bits, std::mt19937_64& rng) {
    const std::int32_t hi = (1 << (bits - 1)) - 1;
    return random_matrix(rows, cols, -hi - 1, hi, rng);
}

/// Dense matrix with each vector block (V x 1) kept with probability
/// 1 - sparsity. Kept blocks hold nonzero values only.
inline IntMatrix random_vector_sparse(std::size_t rows, std::size_t cols, int v, double sparsity, int bits,
                                      std::mt19937_64& rng) {
    IntMatrix m = random_signed(rows, cols, bits, rng);
    for (auto& x : m.data) x = x == 0 ? 1 : x;
    std::bernoulli_distribution keep(1.0 - sparsity);
    for (std::size_t r = 0; r < rows; r += static_cast<std::size_t>(v)) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (keep(rng)) continue;
            for (std::size_t i = 0; i < static_cast<std::size_t>(v); ++i) m(r + i, c) = 0;
        }
    }
    return m;
}

}  // namespace oracle
