#include "qsparse/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qsparse/emulation.hpp"
#include "qsparse/errors.hpp"

namespace qsparse {

namespace {

constexpr int kMaskVector = 8;

double round_half_even(double x) noexcept { return std::nearbyint(x); }

void check_pair(int softmax_bits, int qkv_bits) {
    const bool ok = (softmax_bits == 16 && qkv_bits == 8) || (softmax_bits == 8 && qkv_bits == 8) ||
                    (softmax_bits == 8 && qkv_bits == 4);
    if (!ok) {
        throw UnsupportedPrecisionError("attention supports 16b-8b, 8b-8b and 8b-4b, got " +
                                        std::to_string(softmax_bits) + "b-" + std::to_string(qkv_bits) + "b");
    }
}

void check_shape(const RealMatrix& m, const AttentionConfig& cfg, const char* name) {
    if (m.rows != cfg.seq_len || m.cols != cfg.head_dim) {
        throw ShapeError(std::string(name) + " is " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                         ", expected " + std::to_string(cfg.seq_len) + "x" + std::to_string(cfg.head_dim));
    }
}

// Row-wise softmax over the pattern entries of each scalar row.
std::vector<double> masked_softmax(const std::vector<double>& scores, const BcrsMatrix& mask) {
    std::vector<double> out(scores.size(), 0.0);
    for (std::size_t r = 0; r < mask.vector_rows(); ++r) {
        const std::size_t begin = mask.row_offsets[r];
        const std::size_t end = mask.row_offsets[r + 1];
        if (begin == end) continue;  // fully masked rows stay zero
        for (std::size_t v = 0; v < kMaskVector; ++v) {
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t b = begin; b < end; ++b) top = std::max(top, scores[b * kMaskVector + v]);
            double sum = 0.0;
            for (std::size_t b = begin; b < end; ++b) sum += std::exp(scores[b * kMaskVector + v] - top);
            for (std::size_t b = begin; b < end; ++b) {
                const std::size_t i = b * kMaskVector + v;
                out[i] = round_to_half(std::exp(scores[i] - top) / sum);
            }
        }
    }
    return out;
}

}  // namespace

double round_to_half(double x) noexcept {
    if (x == 0.0 || !std::isfinite(x)) return x;
    const double a = std::fabs(x);
    if (a >= 65520.0) return std::copysign(std::numeric_limits<double>::infinity(), x);
    int exp2 = 0;
    std::frexp(a, &exp2);  // a = m * 2^exp2, m in [0.5, 1)
    // 10 fraction bits for normals, fixed 2^-24 spacing below 2^-14.
    const int e = std::max(exp2 - 1, -14);
    const double quantum = std::ldexp(1.0, e - 10);
    return std::copysign(std::nearbyint(a / quantum) * quantum, x);
}

QuantizationParams softmax_quantization(int bits) {
    QuantizationParams p;
    p.bit_width = bits;
    p.scale = 1.0 / static_cast<double>(p.max_code());
    return p;
}

IntMatrix quantize_codes(const RealMatrix& x, const QuantizationParams& params) {
    IntMatrix q(x.rows, x.cols);
    const double hi = params.max_code();
    const double lo = params.is_signed ? -hi : 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        q.data[i] = static_cast<std::int32_t>(std::clamp(round_half_even(x.data[i] / params.scale), lo, hi));
    }
    return q;
}

QuantizedMatrix quantize(const RealMatrix& x, int bits, Layout layout) {
    if (bits != 4 && bits != 8 && bits != 16) {
        throw ConfigError("quantize: bit width must be 4, 8 or 16, got " + std::to_string(bits));
    }
    double absmax = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (!std::isfinite(x.data[i])) throw RangeError("quantize: non-finite value at index " + std::to_string(i));
        absmax = std::max(absmax, std::fabs(x.data[i]));
    }
    QuantizedMatrix q;
    q.params.bit_width = bits;
    q.params.scale = absmax == 0.0 ? 1.0 : absmax / q.params.max_code();
    const IntMatrix codes = quantize_codes(x, q.params);
    q.values = PackedMatrix::from_row_major(codes.data, bits, layout, x.rows, x.cols);
    return q;
}

RealMatrix dequantize(const QuantizedMatrix& q) {
    RealMatrix out(q.values.rows(), q.values.cols());
    const auto codes = q.values.to_row_major();
    for (std::size_t i = 0; i < codes.size(); ++i) out.data[i] = q.params.dequantize(codes[i]);
    return out;
}

void validate_attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v, const AttentionConfig& cfg) {
    check_pair(cfg.softmax_bits, cfg.qkv_bits);
    if (cfg.seq_len % kMaskVector != 0) {
        throw ShapeError("sequence length " + std::to_string(cfg.seq_len) + " is not divisible by 8");
    }
    if (cfg.head_dim == 0 || cfg.head_dim % 8 != 0) {
        throw ShapeError("head dimension " + std::to_string(cfg.head_dim) + " is not a positive multiple of 8");
    }
    check_shape(q, cfg, "Q");
    check_shape(k, cfg, "K");
    check_shape(v, cfg, "V");
    if (cfg.mask.vector_length != kMaskVector) {
        throw ConfigError("attention mask must use 8 x 1 blocks, got vector length " +
                          std::to_string(cfg.mask.vector_length));
    }
    if (cfg.mask.scalar_rows != cfg.seq_len || cfg.mask.scalar_cols != cfg.seq_len) {
        throw ShapeError("attention mask is " + std::to_string(cfg.mask.scalar_rows) + "x" +
                         std::to_string(cfg.mask.scalar_cols) + ", expected " + std::to_string(cfg.seq_len) +
                         " square");
    }
    cfg.mask.validate();
}

AttentionStages sparse_attention_stages(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                                        const AttentionConfig& cfg) {
    validate_attention(q, k, v, cfg);
    AttentionStages st;
    const int qkv = cfg.qkv_bits;
    st.q = quantize(q, qkv);
    st.k = quantize(k, qkv);
    st.v = quantize(v, qkv);

    // K row-major (L x d) is K^T column-major (d x L): same words.
    const PackedMatrix k_t = PackedMatrix::from_words({st.k.values.words().begin(), st.k.values.words().end()}, qkv,
                                                      Layout::ColMajor, cfg.head_dim, cfg.seq_len);
    BcrsMatrix pattern = cfg.mask;
    pattern.value_bits = 32;
    std::fill(pattern.values.begin(), pattern.values.end(), 0);
    const SddmmResult scores = sddmm_run(st.q.values, k_t, pattern, cfg.tiling);
    st.scores_int = scores.values;
    const double score_scale = st.q.params.scale * st.k.params.scale / std::sqrt(static_cast<double>(cfg.head_dim));
    st.scores.resize(st.scores_int.size());
    for (std::size_t i = 0; i < st.scores.size(); ++i) st.scores[i] = round_to_half(st.scores_int[i] * score_scale);

    st.probabilities = masked_softmax(st.scores, pattern);
    st.softmax_params = softmax_quantization(cfg.softmax_bits);
    st.probabilities_int.resize(st.probabilities.size());
    const double top = st.softmax_params.max_code();
    for (std::size_t i = 0; i < st.probabilities.size(); ++i) {
        st.probabilities_int[i] = static_cast<std::int32_t>(
            std::clamp(std::nearbyint(st.probabilities[i] / st.softmax_params.scale), 0.0, top));
    }

    BcrsMatrix probs = pattern;
    probs.value_bits = cfg.softmax_bits;
    probs.values = st.probabilities_int;
    const EmulationScheme scheme = plan(cfg.softmax_bits, qkv, OpKind::Spmm);
    SrBcrsMatrix lhs = bcrs_to_srbcrs(probs, scheme.tile_shape().k);
    if (scheme.native_width == 4) lhs = shuffle_indices(lhs);

    const double out_scale = st.softmax_params.scale * st.v.params.scale;
    st.context_int = IntMatrix(cfg.seq_len, cfg.head_dim);
    st.output = RealMatrix(cfg.seq_len, cfg.head_dim);
    const SpmmResult ctx = spmm_run(lhs, st.v.values, cfg.tiling);
    st.context_int = ctx.output;
    for (std::size_t i = 0; i < st.output.data.size(); ++i) {
        st.output.data[i] = round_to_half(st.context_int.data[i] * out_scale);
    }
    return st;
}

RealMatrix sparse_attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v,
                            const AttentionConfig& cfg) {
    validate_attention(q, k, v, cfg);
    const QuantizedMatrix qq = quantize(q, cfg.qkv_bits);
    const QuantizedMatrix kq = quantize(k, cfg.qkv_bits);
    const QuantizedMatrix vq = quantize(v, cfg.qkv_bits);
    const PackedMatrix k_t = PackedMatrix::from_words({kq.values.words().begin(), kq.values.words().end()},
                                                      cfg.qkv_bits, Layout::ColMajor, cfg.head_dim, cfg.seq_len);
    BcrsMatrix pattern = cfg.mask;
    pattern.value_bits = 32;
    std::fill(pattern.values.begin(), pattern.values.end(), 0);

    // Dequantization fused into the SDDMM write.
    const double score_scale = qq.params.scale * kq.params.scale / std::sqrt(static_cast<double>(cfg.head_dim));
    SddmmProblem sp{qq.values, k_t, pattern, SparseOutput::Bcrs, 16, cfg.tiling};
    const std::vector<double> scores =
        sddmm_fused(sp, [score_scale](std::int32_t x) { return round_to_half(x * score_scale); });

    // Quantization fused into the softmax.
    const QuantizationParams sm = softmax_quantization(cfg.softmax_bits);
    const std::vector<double> probs = masked_softmax(scores, pattern);
    BcrsMatrix lhs_b = pattern;
    lhs_b.value_bits = cfg.softmax_bits;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        lhs_b.values[i] =
            static_cast<std::int32_t>(std::clamp(std::nearbyint(probs[i] / sm.scale), 0.0, double(sm.max_code())));
    }
    const EmulationScheme scheme = plan(cfg.softmax_bits, cfg.qkv_bits, OpKind::Spmm);
    SrBcrsMatrix lhs = bcrs_to_srbcrs(lhs_b, scheme.tile_shape().k);
    if (scheme.native_width == 4) lhs = shuffle_indices(lhs);

    // Dequantization fused into the SpMM write.
    const double out_scale = sm.scale * vq.params.scale;
    return spmm_fused({lhs, vq.values, cfg.tiling},
                      [out_scale](std::int32_t x) { return round_to_half(x * out_scale); });
}

std::vector<RealMatrix> multi_head_attention(const std::vector<RealMatrix>& q, const std::vector<RealMatrix>& k,
                                             const std::vector<RealMatrix>& v, const AttentionConfig& cfg) {
    const auto heads = static_cast<std::size_t>(cfg.num_heads);
    if (q.size() != heads || k.size() != heads || v.size() != heads) {
        throw ShapeError("expected " + std::to_string(heads) + " heads of Q, K and V");
    }
    std::vector<RealMatrix> out;
    out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) out.push_back(sparse_attention(q[h], k[h], v[h], cfg));
    return out;
}

}  // namespace qsparse
