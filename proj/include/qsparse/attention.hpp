#pragma once

#include <cstdint>
#include <vector>

#include "qsparse/kernels.hpp"
#include "qsparse/matrix.hpp"
#include "qsparse/qint.hpp"
#include "qsparse/sparse_format.hpp"

namespace qsparse {

/// Nearest IEEE binary16 value (ties to even), returned as a double.
/// Magnitudes at or above 65520 round to infinity.
double round_to_half(double x) noexcept;

/// Symmetric per-tensor quantization: q = clamp(round_half_even(x / scale)).
struct QuantizationParams {
    double scale = 1.0;
    int bit_width = 8;
    bool is_signed = true;

    std::int32_t max_code() const noexcept { return (1 << (bit_width - 1)) - 1; }
    double dequantize(std::int32_t q) const noexcept { return scale * q; }
};

struct QuantizedMatrix {
    PackedMatrix values;
    QuantizationParams params;
};

/// Integer codes of x for a given scale, clamped to [-max_code, max_code].
IntMatrix quantize_codes(const RealMatrix& x, const QuantizationParams& params);

/// Absmax calibration: scale = max|x| / (2^(bits-1) - 1), or 1 for an
/// all-zero input. Throws RangeError for non-finite input.
QuantizedMatrix quantize(const RealMatrix& x, int bits, Layout layout = Layout::RowMajor);
RealMatrix dequantize(const QuantizedMatrix& q);

struct AttentionConfig {
    std::size_t seq_len = 64;
    std::size_t head_dim = 64;
    int num_heads = 1;
    int softmax_bits = 8;
    int qkv_bits = 8;
    /// L x L pattern of 8 x 1 blocks; stored values are ignored.
    BcrsMatrix mask;
    TilingConfig tiling;
};

/// Every intermediate of one head. Sparse stages are in mask order: block b,
/// row v at index b*8 + v.
struct AttentionStages {
    QuantizedMatrix q;
    QuantizedMatrix k;
    QuantizedMatrix v;
    std::vector<std::int32_t> scores_int;
    std::vector<double> scores;
    std::vector<double> probabilities;
    QuantizationParams softmax_params;
    std::vector<std::int32_t> probabilities_int;
    IntMatrix context_int;
    RealMatrix output;
};

/// Softmax scale for `bits`: 1 / (2^(bits-1) - 1).
QuantizationParams softmax_quantization(int bits);

/// Throws ShapeError / UnsupportedPrecisionError / ConfigError when the
/// configuration or the operands do not fit.
void validate_attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v, const AttentionConfig& cfg);

AttentionStages sparse_attention_stages(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                                        const AttentionConfig& cfg);
RealMatrix sparse_attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                            const AttentionConfig& cfg);

/// One independent pipeline per head; cfg.num_heads must equal the number of heads given.
std::vector<RealMatrix> multi_head_attention(const std::vector<RealMatrix>& q, const std::vector<RealMatrix>& k,
                                             const std::vector<RealMatrix>& v, const AttentionConfig& cfg);

}  // namespace qsparse
