#include "qsparse/kernels.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "qsparse/errors.hpp"
#include "qsparse/tile_engine.hpp"

namespace qsparse {

namespace {

// LHS chunks that share one stacked tile. Stacking needs a common
// signedness because a tile MMA takes one type per operand.
struct LhsGroup {
    std::vector<int> chunks;
    Signedness signedness = Signedness::Signed;
};

Signedness sign_of(bool flag) { return flag ? Signedness::Signed : Signedness::Unsigned; }

std::vector<LhsGroup> build_lhs_groups(const EmulationScheme& scheme, int vector_length) {
    const int factor = kTileM / vector_length;
    std::vector<LhsGroup> groups{};
    for (int c = 0; c < scheme.lhs_chunks; ++c) {
        const Signedness s = sign_of(scheme.lhs_signed[static_cast<std::size_t>(c)]);
        if (groups.empty() || groups.back().signedness != s ||
            static_cast<int>(groups.back().chunks.size()) == factor) {
            groups.push_back({{}, s});
        }
        groups.back().chunks.push_back(c);
    }
    return groups;
}

// 8 x k LHS tile for one group: rows [slot*V, slot*V+V) hold chunk
// group.chunks[slot] of the V x k block `rows` (row-major), packed row-major.
std::vector<std::uint32_t> pack_group_tile(const std::vector<std::int32_t>& block, int vector_length, int k,
                                           const LhsGroup& group, const EmulationScheme& scheme) {
    std::vector<std::int32_t> tile(static_cast<std::size_t>(kTileM * k), 0);
    for (std::size_t slot = 0; slot < group.chunks.size(); ++slot) {
        const int chunk = group.chunks[slot];
        const bool is_signed = scheme.lhs_signed[static_cast<std::size_t>(chunk)];
        for (int v = 0; v < vector_length; ++v) {
            for (int kk = 0; kk < k; ++kk) {
                const auto src = static_cast<std::size_t>(v * k + kk);
                const auto dst = static_cast<std::size_t>((static_cast<int>(slot) * vector_length + v) * k + kk);
                tile[dst] = chunk_value(block[src], scheme.native_width, chunk, is_signed);
            }
        }
    }
    const PackedMatrix packed =
        PackedMatrix::pack(tile, scheme.native_width, Layout::RowMajor, kTileM, static_cast<std::size_t>(k),
                           group.signedness);
    return {packed.words().begin(), packed.words().end()};
}

// Raw accumulators of one (LHS group, RHS chunk, tile) triple folded into
// the V x 8 wide result with the chunk weights.
void fold_accumulator(const Fragment& acc, const LhsGroup& group, int rhs_chunk, int vector_length, int width,
                      WideMatrix& wide, std::size_t col0, const std::array<int, kTileN>& col_map) {
    std::vector<std::int64_t> weights;
    for (int chunk : group.chunks) weights.push_back(std::int64_t{1} << (width * (chunk + rhs_chunk)));
    if (vector_length < kTileM && group.chunks.size() > 1) {
        const WideMatrix part = combine_stacked(acc, vector_length, weights);
        for (std::size_t v = 0; v < part.rows; ++v) {
            for (std::size_t n = 0; n < kTileN; ++n) wide(v, col0 + static_cast<std::size_t>(col_map[n])) += part(v, n);
        }
        return;
    }
    const IntMatrix tile = store_fragment(acc);
    for (std::size_t v = 0; v < static_cast<std::size_t>(vector_length); ++v) {
        for (std::size_t n = 0; n < kTileN; ++n) {
            wide(v, col0 + static_cast<std::size_t>(col_map[n])) += weights[0] * tile(v, n);
        }
    }
}

void check_config(const TilingConfig& c) {
    if (c.bs_n != 64 && c.bs_n != 128) {
        throw ConfigError("BS_n must be 64 or 128, got " + std::to_string(c.bs_n));
    }
    if (c.warps_per_block < 1) {
        throw ConfigError("warps_per_block must be positive, got " + std::to_string(c.warps_per_block));
    }
}

int max_conflicts(const StagingLayout& layout, int width, int warps) {
    int worst = 1;
    for (const auto& p : transpose_load_patterns(layout, width, warps)) worst = std::max(worst, bank_conflicts(p));
    return worst;
}

[[noreturn]] void stage_order_error(const char* what, int step) {
    throw StateError(std::string("stage order violated: ") + what + " for step " + std::to_string(step));
}

// ---------------------------------------------------------------------------
// SpMM

struct SpmmContext {
    const SrBcrsMatrix& lhs;
    EmulationScheme scheme;
    TileShape shape;
    int v = 8;
    int k = 16;
    int width = 8;
    std::vector<LhsGroup> groups{};
    std::vector<Signedness> rhs_sign{};
    std::vector<PackedMatrix> rhs_planes{};  // row-major K x N at the native width
    std::size_t n = 0;
    std::size_t plane_row_words = 0;
    int bs_n = 64;
    int block_row_words = 16;
    int word_groups = 2;
    int tiles = 8;
    StagingLayout layout{};
};

struct SpmmBlockState {
    struct LhsBuffer {
        int step = -1;
        std::vector<std::vector<std::uint32_t>> group_words;
        std::vector<std::uint32_t> indices;
    };
    std::array<LhsBuffer, 2> lhs;
    int regs_step = -1;
    std::vector<std::vector<std::uint32_t>> regs;
    int staged_step = -1;
    std::vector<std::vector<std::uint32_t>> staging;
    // acc[(group * rhs_chunks + j) * tiles + tile]
    std::vector<Fragment> acc;
};

void spmm_load_lhs(const SpmmContext& c, std::size_t row, int step, SpmmBlockState& st) {
    auto& buf = st.lhs[static_cast<std::size_t>(step % 2)];
    const std::size_t first = c.lhs.row_begin[row] + static_cast<std::size_t>(step * c.k);
    const auto span = c.lhs.stride_values(first);
    const std::vector<std::int32_t> block(span.begin(), span.end());
    buf.group_words.clear();
    for (const LhsGroup& g : c.groups) buf.group_words.push_back(pack_group_tile(block, c.v, c.k, g, c.scheme));
    buf.indices.assign(c.lhs.col_indices.begin() + static_cast<std::ptrdiff_t>(first),
                       c.lhs.col_indices.begin() + static_cast<std::ptrdiff_t>(first) + c.k);
    buf.step = step;
}

void spmm_prefetch_rhs(const SpmmContext& c, std::size_t block, int step, SpmmBlockState& st) {
    const auto& buf = st.lhs[static_cast<std::size_t>(step % 2)];
    if (buf.step != step) stage_order_error("RHS prefetch before LHS indices", step);
    const std::size_t word0 = block * static_cast<std::size_t>(c.block_row_words);
    const auto words = static_cast<std::size_t>(c.block_row_words);
    for (std::size_t j = 0; j < c.rhs_planes.size(); ++j) {
        auto& r = st.regs[j];
        std::fill(r.begin(), r.end(), 0U);
        const auto src = c.rhs_planes[j].words();
        for (std::size_t kk = 0; kk < static_cast<std::size_t>(c.k); ++kk) {
            const std::uint32_t col = buf.indices[kk];
            if (col == kSentinelIndex) continue;  // padding contributes a zero row
            const std::size_t base = col * c.plane_row_words;
            for (std::size_t w = 0; w < words && word0 + w < c.plane_row_words; ++w) {
                r[kk * words + w] = src[base + word0 + w];
            }
        }
    }
    st.regs_step = step;
}

void spmm_store_rhs(const SpmmContext& c, int step, SpmmBlockState& st) {
    if (st.regs_step != step) stage_order_error("RHS store before prefetch", step);
    for (std::size_t j = 0; j < st.regs.size(); ++j) {
        for (int kk = 0; kk < c.k; ++kk) {
            for (int w = 0; w < c.block_row_words; ++w) {
                st.staging[j][c.layout.address(kk, w)] =
                    st.regs[j][static_cast<std::size_t>(kk * c.block_row_words + w)];
            }
        }
    }
    st.staged_step = step;
}

// RHS fragments for plane j: lane l of word group gi reads k/4 staged rows of
// word column gi*8 + l/4 and transposes them into the tiles (gi, t).
std::vector<Fragment> spmm_rhs_fragments(const SpmmContext& c, const SpmmBlockState& st, std::size_t j) {
    std::vector<Fragment> frags(static_cast<std::size_t>(c.tiles));
    for (auto& f : frags) {
        f.shape = c.shape;
        f.operand = Operand::Rhs;
        f.signedness = c.rhs_sign[j];
    }
    const auto& staging = st.staging[j];
    const int rows_per_lane = c.k / 4;
    const bool shuffled = c.lhs.shuffled;
    for (int gi = 0; gi < c.word_groups; ++gi) {
        for (int lane = 0; lane < kWarpSize; ++lane) {
            const int word = gi * 8 + lane / 4;
            const int row0 = (lane % 4) * rows_per_lane;
            if (c.width == 8) {
                ByteBlock rows{};
                for (int i = 0; i < 4; ++i) rows[static_cast<std::size_t>(i)] = staging[c.layout.address(row0 + i, word)];
                const ByteBlock cols = transpose_bytes(rows);
                for (int t = 0; t < 4; ++t) {
                    frags[static_cast<std::size_t>(gi * 4 + t)].regs[static_cast<std::size_t>(lane)][0] =
                        cols[static_cast<std::size_t>(t)];
                }
            } else {
                std::array<std::uint32_t, 8> rows{};
                for (int i = 0; i < 8; ++i) rows[static_cast<std::size_t>(i)] = staging[c.layout.address(row0 + i, word)];
                const auto cols = transpose_nibbles_via_shuffle(rows, shuffled);
                for (int t = 0; t < 8; ++t) {
                    frags[static_cast<std::size_t>(gi * 8 + t)].regs[static_cast<std::size_t>(lane)][0] =
                        cols[static_cast<std::size_t>(t)];
                }
            }
        }
    }
    return frags;
}

void spmm_compute(const SpmmContext& c, int step, SpmmBlockState& st, KernelStats& stats) {
    const auto& buf = st.lhs[static_cast<std::size_t>(step % 2)];
    if (buf.step != step) stage_order_error("compute without its LHS block", step);
    if (st.staged_step != step) stage_order_error("compute without its staged RHS", step);
    std::vector<Fragment> lhs_frags;
    for (std::size_t g = 0; g < c.groups.size(); ++g) {
        lhs_frags.push_back(load_lhs_sequential(buf.group_words[g], c.shape, c.groups[g].signedness));
    }
    const std::size_t planes = c.rhs_planes.size();
    for (std::size_t j = 0; j < planes; ++j) {
        const auto rhs_frags = spmm_rhs_fragments(c, st, j);
        for (std::size_t g = 0; g < c.groups.size(); ++g) {
            for (std::size_t t = 0; t < rhs_frags.size(); ++t) {
                Fragment& acc = st.acc[(g * planes + j) * rhs_frags.size() + t];
                acc = mma(lhs_frags[g], rhs_frags[t], acc);
                ++stats.tile_mmas;
            }
        }
    }
}

// Block column of tile column n for tile t of word group gi.
std::array<int, kTileN> spmm_col_map(const SpmmContext& c, int tile) {
    std::array<int, kTileN> map{};
    if (c.width == 8) {
        const int gi = tile / 4;
        const int t = tile % 4;
        for (int n = 0; n < kTileN; ++n) map[static_cast<std::size_t>(n)] = 32 * gi + 4 * n + t;
    } else {
        const int gi = tile / 8;
        const int t = tile % 8;
        for (int n = 0; n < kTileN; ++n) map[static_cast<std::size_t>(n)] = 64 * gi + 8 * n + t;
    }
    return map;
}

template <class Write>
void spmm_execute(const SrBcrsMatrix& lhs, const PackedMatrix& rhs, const TilingConfig& config,
                  KernelStats& stats, std::vector<BlockTrace>* traces, Write&& write) {
    check_config(config);
    lhs.validate();
    const EmulationScheme scheme = plan(lhs.value_bits, rhs.bit_width(), OpKind::Spmm);
    if (lhs.scalar_cols != rhs.rows()) {
        throw ShapeError("spmm: LHS has " + std::to_string(lhs.scalar_cols) + " columns but RHS has " +
                         std::to_string(rhs.rows()) + " rows");
    }
    if (rhs.layout() != Layout::RowMajor) throw ContractError("spmm: RHS must be row-major");
    if (rhs.signedness() != Signedness::Signed) throw ContractError("spmm: RHS must be signed");
    if (rhs.cols() % kTileN != 0) {
        throw ShapeError("spmm: RHS column count " + std::to_string(rhs.cols()) + " is not a multiple of 8");
    }
    const TileShape shape = scheme.tile_shape();
    if (lhs.stride != shape.k) {
        throw ContractError("spmm: SR-BCRS stride " + std::to_string(lhs.stride) + " must equal tile k " +
                            std::to_string(shape.k) + " for " + scheme.name());
    }
    if (scheme.native_width == 4 && !lhs.shuffled) {
        throw ContractError("spmm: a 4-bit RHS needs shuffled LHS column indices");
    }
    if (scheme.native_width != 4 && lhs.shuffled) {
        throw ContractError("spmm: shuffled LHS column indices are only valid with a 4-bit RHS");
    }

    SpmmContext c{lhs, scheme, shape};
    c.v = lhs.vector_length;
    c.k = shape.k;
    c.width = scheme.native_width;
    c.groups = build_lhs_groups(scheme, c.v);
    c.n = rhs.cols();
    c.bs_n = config.bs_n;
    c.block_row_words = c.bs_n * c.width / 32;
    c.word_groups = c.block_row_words / 8;
    c.tiles = c.bs_n / kTileN;
    c.layout = StagingLayout::padded(c.bs_n, c.width);
    c.plane_row_words = c.n * static_cast<std::size_t>(c.width) / 32;
    for (bool f : scheme.rhs_signed) c.rhs_sign.push_back(sign_of(f));

    const IntMatrix rhs_values(rhs.rows(), rhs.cols(), rhs.to_row_major());
    const auto planes = split_planes(rhs_values, c.width, scheme.rhs_signed);
    std::size_t max_k = 0;
    for (std::size_t r = 0; r < lhs.vector_rows(); ++r) max_k = std::max(max_k, lhs.stored_in_row(r));
    std::int64_t max_lhs_chunk = 0;
    for (std::int32_t x : lhs.values) {
        for (int ch = 0; ch < scheme.lhs_chunks; ++ch) {
            const std::int64_t cv = chunk_value(x, c.width, ch, scheme.lhs_signed[static_cast<std::size_t>(ch)]);
            max_lhs_chunk = std::max(max_lhs_chunk, cv < 0 ? -cv : cv);
        }
    }
    for (std::size_t j = 0; j < planes.size(); ++j) {
        check_accumulation_bound(max_k, max_lhs_chunk, max_abs(planes[j]));
        c.rhs_planes.push_back(PackedMatrix::pack(planes[j].data, c.width, Layout::RowMajor, planes[j].rows,
                                                  planes[j].cols, c.rhs_sign[j]));
    }

    stats.max_bank_conflicts = std::max(stats.max_bank_conflicts,
                                        max_conflicts(c.layout, c.width, config.warps_per_block));
    const std::size_t blocks_per_row = (c.n + static_cast<std::size_t>(c.bs_n) - 1) / static_cast<std::size_t>(c.bs_n);
    const std::size_t accs = c.groups.size() * planes.size() * static_cast<std::size_t>(c.tiles);

    for (std::size_t row = 0; row < lhs.vector_rows(); ++row) {
        const int steps = static_cast<int>(lhs.steps_in_row(row));
        const auto schedule = config.pipeline ? spmm_pipeline_schedule(steps) : spmm_serial_schedule(steps);
        for (std::size_t block = 0; block < blocks_per_row; ++block) {
            SpmmBlockState st;
            st.regs.assign(planes.size(),
                           std::vector<std::uint32_t>(static_cast<std::size_t>(c.k * c.block_row_words), 0U));
            st.staging.assign(planes.size(), std::vector<std::uint32_t>(c.layout.total_words(c.k), 0U));
            st.acc.assign(accs, zero_accumulator(shape));
            for (const StageEvent& ev : schedule) {
                switch (ev.stage) {
                    case Stage::LoadLhs: spmm_load_lhs(c, row, ev.step, st); break;
                    case Stage::PrefetchRhs: spmm_prefetch_rhs(c, block, ev.step, st); break;
                    case Stage::StoreRhs: spmm_store_rhs(c, ev.step, st); break;
                    case Stage::Compute: spmm_compute(c, ev.step, st, stats); break;
                    case Stage::Sync: break;
                    default: stage_order_error("unexpected SpMM stage", ev.step);
                }
            }

            WideMatrix wide(static_cast<std::size_t>(c.v), static_cast<std::size_t>(c.bs_n));
            for (std::size_t g = 0; g < c.groups.size(); ++g) {
                for (std::size_t j = 0; j < planes.size(); ++j) {
                    for (int t = 0; t < c.tiles; ++t) {
                        const Fragment& acc = st.acc[(g * planes.size() + j) * static_cast<std::size_t>(c.tiles) +
                                                     static_cast<std::size_t>(t)];
                        fold_accumulator(acc, c.groups[g], static_cast<int>(j), c.v, c.width, wide, 0,
                                         spmm_col_map(c, t));
                    }
                }
            }
            const std::size_t col0 = block * static_cast<std::size_t>(c.bs_n);
            for (std::size_t vv = 0; vv < static_cast<std::size_t>(c.v); ++vv) {
                const std::size_t out_row = row * static_cast<std::size_t>(c.v) + vv;
                for (std::size_t cc = 0; cc < static_cast<std::size_t>(c.bs_n) && col0 + cc < c.n; ++cc) {
                    const std::size_t index = out_row * c.n + col0 + cc;
                    write(out_row, col0 + cc, narrow_recombined(wide(vv, cc), index));
                }
            }
            ++stats.blocks;
            stats.steps += static_cast<std::uint64_t>(steps);
            if (traces != nullptr) traces->push_back({row, block, schedule});
        }
    }
}

// ---------------------------------------------------------------------------
// SDDMM

struct SddmmContext {
    EmulationScheme scheme;
    TileShape shape;
    int v = 8;
    int k = 16;
    int width = 8;
    std::size_t k_padded = 0;
    std::vector<LhsGroup> groups{};
    std::vector<IntMatrix> a_planes{};        // M x K_padded
    std::vector<PackedMatrix> b_planes{};     // column-major K_padded x N
    std::vector<Signedness> b_sign{};
};

struct SddmmBlockState {
    int regs_step = -1;
    std::vector<std::vector<std::uint32_t>> regs;
    int shared_step = -1;
    std::vector<std::vector<std::uint32_t>> shared;
    std::vector<Fragment> acc;
};

std::vector<std::vector<std::uint32_t>> sddmm_lhs_words(const SddmmContext& c, std::size_t row, int step) {
    std::vector<std::vector<std::uint32_t>> out;
    const std::size_t k0 = static_cast<std::size_t>(step * c.k);
    for (const LhsGroup& g : c.groups) {
        std::vector<std::int32_t> tile(static_cast<std::size_t>(kTileM * c.k), 0);
        for (std::size_t slot = 0; slot < g.chunks.size(); ++slot) {
            const IntMatrix& plane = c.a_planes[static_cast<std::size_t>(g.chunks[slot])];
            for (int v = 0; v < c.v; ++v) {
                for (int kk = 0; kk < c.k; ++kk) {
                    tile[(slot * static_cast<std::size_t>(c.v) + static_cast<std::size_t>(v)) *
                             static_cast<std::size_t>(c.k) +
                         static_cast<std::size_t>(kk)] =
                        plane(row * static_cast<std::size_t>(c.v) + static_cast<std::size_t>(v),
                              k0 + static_cast<std::size_t>(kk));
                }
            }
        }
        const PackedMatrix packed = PackedMatrix::pack(tile, c.width, Layout::RowMajor, kTileM,
                                                       static_cast<std::size_t>(c.k), g.signedness);
        out.emplace_back(packed.words().begin(), packed.words().end());
    }
    return out;
}

template <class Write>
void sddmm_execute(const PackedMatrix& a, const PackedMatrix& b, const BcrsMatrix& pattern,
                   const TilingConfig& config, KernelStats& stats, std::vector<BlockTrace>* traces, Write&& write) {
    check_config(config);
    pattern.validate();
    const EmulationScheme scheme = plan(a.bit_width(), b.bit_width(), OpKind::Sddmm);
    if (a.layout() != Layout::RowMajor) throw ContractError("sddmm: A must be row-major");
    if (b.layout() != Layout::ColMajor) throw ContractError("sddmm: B must be column-major");
    if (a.signedness() != Signedness::Signed || b.signedness() != Signedness::Signed) {
        throw ContractError("sddmm: operands must be signed");
    }
    if (a.cols() != b.rows() || a.rows() != pattern.scalar_rows || b.cols() != pattern.scalar_cols) {
        throw ShapeError("sddmm: A is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + ", B is " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ", pattern is " +
                         std::to_string(pattern.scalar_rows) + "x" + std::to_string(pattern.scalar_cols));
    }

    SddmmContext c{scheme, scheme.tile_shape()};
    c.v = pattern.vector_length;
    c.k = c.shape.k;
    c.width = scheme.native_width;
    c.groups = build_lhs_groups(scheme, c.v);
    const std::size_t kk_total = a.cols();
    c.k_padded = (kk_total + static_cast<std::size_t>(c.k) - 1) / static_cast<std::size_t>(c.k) *
                 static_cast<std::size_t>(c.k);
    for (bool f : scheme.rhs_signed) c.b_sign.push_back(sign_of(f));

    // Zero-pad K to a whole number of steps.
    IntMatrix a_pad(a.rows(), c.k_padded);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t kk = 0; kk < kk_total; ++kk) a_pad(r, kk) = a.get(r, kk);
    }
    IntMatrix b_pad(c.k_padded, b.cols());
    for (std::size_t kk = 0; kk < kk_total; ++kk) {
        for (std::size_t col = 0; col < b.cols(); ++col) b_pad(kk, col) = b.get(kk, col);
    }
    c.a_planes = split_planes(a_pad, c.width, scheme.lhs_signed);
    const auto b_planes = split_planes(b_pad, c.width, scheme.rhs_signed);
    for (std::size_t i = 0; i < c.a_planes.size(); ++i) {
        for (std::size_t j = 0; j < b_planes.size(); ++j) {
            check_accumulation_bound(c.k_padded, max_abs(c.a_planes[i]), max_abs(b_planes[j]));
        }
    }
    for (std::size_t j = 0; j < b_planes.size(); ++j) {
        c.b_planes.push_back(PackedMatrix::from_row_major(b_planes[j].data, c.width, Layout::ColMajor, c.k_padded,
                                                          b.cols(), c.b_sign[j]));
    }

    const int steps = static_cast<int>(c.k_padded / static_cast<std::size_t>(c.k));
    const auto schedule = config.pipeline ? sddmm_pipeline_schedule(steps) : sddmm_serial_schedule(steps);
    const auto bs_n = static_cast<std::size_t>(config.bs_n);
    const std::size_t words_per_lane_k = static_cast<std::size_t>(c.k / 4);  // k values per lane word

    for (std::size_t row = 0; row < pattern.vector_rows(); ++row) {
        const std::size_t begin = pattern.row_offsets[row];
        const std::size_t end = pattern.row_offsets[row + 1];
        for (std::size_t block = 0; begin + block * bs_n < end; ++block) {
            const std::size_t v0 = begin + block * bs_n;
            const std::size_t count = std::min(bs_n, end - v0);
            const std::size_t tiles = (count + kTileN - 1) / kTileN;
            SddmmBlockState st;
            st.acc.assign(c.groups.size() * c.b_planes.size() * tiles, zero_accumulator(c.shape));

            auto compute = [&](int step) {
                if (st.shared_step != step) stage_order_error("compute without its LHS block", step);
                std::vector<Fragment> lhs_frags;
                for (std::size_t g = 0; g < c.groups.size(); ++g) {
                    lhs_frags.push_back(load_lhs_sequential(st.shared[g], c.shape, c.groups[g].signedness));
                }
                const std::size_t k0 = static_cast<std::size_t>(step * c.k);
                for (std::size_t j = 0; j < c.b_planes.size(); ++j) {
                    const auto words = c.b_planes[j].words();
                    // Warps take tiles round-robin; each lane loads its word straight from B.
                    for (std::size_t t = 0; t < tiles; ++t) {
                        Fragment rf;
                        rf.shape = c.shape;
                        rf.operand = Operand::Rhs;
                        rf.signedness = c.b_sign[j];
                        for (int lane = 0; lane < kWarpSize; ++lane) {
                            const std::size_t vec = t * kTileN + static_cast<std::size_t>(lane / 4);
                            if (vec >= count) continue;
                            const std::size_t col = pattern.col_indices[v0 + vec];
                            const std::size_t elem =
                                col * c.k_padded + k0 + static_cast<std::size_t>(lane % 4) * words_per_lane_k;
                            rf.regs[static_cast<std::size_t>(lane)][0] =
                                words[elem * static_cast<std::size_t>(c.width) / 32];
                        }
                        for (std::size_t g = 0; g < c.groups.size(); ++g) {
                            Fragment& acc = st.acc[(g * c.b_planes.size() + j) * tiles + t];
                            acc = mma(lhs_frags[g], rf, acc);
                            ++stats.tile_mmas;
                        }
                    }
                }
            };

            for (const StageEvent& ev : schedule) {
                switch (ev.stage) {
                    case Stage::LoadLhs:
                        st.shared = sddmm_lhs_words(c, row, ev.step);
                        st.shared_step = ev.step;
                        break;
                    case Stage::PrefetchLhs:
                        st.regs = sddmm_lhs_words(c, row, ev.step);
                        st.regs_step = ev.step;
                        break;
                    case Stage::StoreLhs:
                        if (st.regs_step != ev.step) stage_order_error("LHS store before prefetch", ev.step);
                        st.shared = st.regs;
                        st.shared_step = ev.step;
                        break;
                    case Stage::Compute: compute(ev.step); break;
                    case Stage::Sync: break;
                    default: stage_order_error("unexpected SDDMM stage", ev.step);
                }
            }

            WideMatrix wide(static_cast<std::size_t>(c.v), tiles * kTileN);
            std::array<int, kTileN> identity{};
            for (int n = 0; n < kTileN; ++n) identity[static_cast<std::size_t>(n)] = n;
            for (std::size_t g = 0; g < c.groups.size(); ++g) {
                for (std::size_t j = 0; j < c.b_planes.size(); ++j) {
                    for (std::size_t t = 0; t < tiles; ++t) {
                        fold_accumulator(st.acc[(g * c.b_planes.size() + j) * tiles + t], c.groups[g],
                                         static_cast<int>(j), c.v, c.width, wide, t * kTileN, identity);
                    }
                }
            }
            for (std::size_t vec = 0; vec < count; ++vec) {
                for (std::size_t vv = 0; vv < static_cast<std::size_t>(c.v); ++vv) {
                    const std::size_t index = (v0 + vec) * static_cast<std::size_t>(c.v) + vv;
                    write(index, narrow_recombined(wide(vv, vec), index));
                }
            }
            ++stats.blocks;
            stats.steps += static_cast<std::uint64_t>(steps);
            if (traces != nullptr) traces->push_back({row, block, schedule});
        }
    }
}

}  // namespace

const char* to_string(Stage s) noexcept {
    switch (s) {
        case Stage::LoadLhs: return "load_lhs";
        case Stage::Sync: return "sync";
        case Stage::PrefetchRhs: return "prefetch_rhs";
        case Stage::StoreRhs: return "store_rhs";
        case Stage::PrefetchLhs: return "prefetch_lhs";
        case Stage::StoreLhs: return "store_lhs";
        case Stage::Compute: return "compute";
    }
    return "?";
}

std::vector<StageEvent> spmm_pipeline_schedule(int steps) {
    std::vector<StageEvent> s;
    if (steps <= 0) return s;
    s.push_back({Stage::LoadLhs, 0});
    s.push_back({Stage::Sync});
    s.push_back({Stage::PrefetchRhs, 0});
    for (int i = 1; i < steps; ++i) {
        s.push_back({Stage::StoreRhs, i - 1});
        s.push_back({Stage::LoadLhs, i});
        s.push_back({Stage::Sync});
        s.push_back({Stage::PrefetchRhs, i});
        s.push_back({Stage::Compute, i - 1});
        s.push_back({Stage::Sync});
    }
    s.push_back({Stage::StoreRhs, steps - 1});
    s.push_back({Stage::Sync});
    s.push_back({Stage::Compute, steps - 1});
    return s;
}

std::vector<StageEvent> spmm_serial_schedule(int steps) {
    std::vector<StageEvent> s;
    for (int i = 0; i < steps; ++i) {
        s.push_back({Stage::LoadLhs, i});
        s.push_back({Stage::Sync});
        s.push_back({Stage::PrefetchRhs, i});
        s.push_back({Stage::StoreRhs, i});
        s.push_back({Stage::Sync});
        s.push_back({Stage::Compute, i});
        s.push_back({Stage::Sync});
    }
    return s;
}

std::vector<StageEvent> sddmm_pipeline_schedule(int steps) {
    std::vector<StageEvent> s;
    if (steps <= 0) return s;
    s.push_back({Stage::PrefetchLhs, 0});
    s.push_back({Stage::StoreLhs, 0});
    s.push_back({Stage::Sync});
    for (int i = 1; i < steps; ++i) {
        s.push_back({Stage::PrefetchLhs, i});
        s.push_back({Stage::Compute, i - 1});
        s.push_back({Stage::Sync});
        s.push_back({Stage::StoreLhs, i});
        s.push_back({Stage::Sync});
    }
    s.push_back({Stage::Compute, steps - 1});
    return s;
}

std::vector<StageEvent> sddmm_serial_schedule(int steps) {
    std::vector<StageEvent> s;
    for (int i = 0; i < steps; ++i) {
        s.push_back({Stage::LoadLhs, i});
        s.push_back({Stage::Sync});
        s.push_back({Stage::Compute, i});
        s.push_back({Stage::Sync});
    }
    return s;
}

SpmmResult spmm_run(const SrBcrsMatrix& lhs, const PackedMatrix& rhs, const TilingConfig& config) {
    SpmmResult r;
    r.output = IntMatrix(lhs.scalar_rows, rhs.cols());
    spmm_execute(lhs, rhs, config, r.stats, config.record_trace ? &r.traces : nullptr,
                 [&](std::size_t row, std::size_t col, std::int32_t v) { r.output(row, col) = v; });
    return r;
}

IntMatrix spmm(const SpmmProblem& p) { return spmm_run(p.lhs, p.rhs, p.config).output; }

SpmmResult spmm_pipelined(const SpmmProblem& p) {
    TilingConfig c = p.config;
    c.pipeline = true;
    return spmm_run(p.lhs, p.rhs, c);
}

RealMatrix spmm_fused(const SpmmProblem& p, const Epilogue& epilogue) {
    RealMatrix out(p.lhs.scalar_rows, p.rhs.cols());
    KernelStats stats;
    spmm_execute(p.lhs, p.rhs, p.config, stats, nullptr,
                 [&](std::size_t row, std::size_t col, std::int32_t v) { out(row, col) = epilogue(v); });
    return out;
}

SddmmResult sddmm_run(const PackedMatrix& a, const PackedMatrix& b, const BcrsMatrix& pattern,
                      const TilingConfig& config) {
    SddmmResult r;
    r.values.assign(pattern.nnz_vectors() * static_cast<std::size_t>(pattern.vector_length), 0);
    sddmm_execute(a, b, pattern, config, r.stats, config.record_trace ? &r.traces : nullptr,
                  [&](std::size_t index, std::int32_t v) { r.values[index] = v; });
    return r;
}

SddmmOutput sddmm(const SddmmProblem& p) {
    SddmmResult r = sddmm_run(p.a, p.b, p.out_pattern, p.config);
    SddmmOutput out;
    out.format = p.out_format;
    out.bcrs = p.out_pattern;
    out.bcrs.value_bits = 32;
    out.bcrs.values = std::move(r.values);
    if (p.out_format == SparseOutput::SrBcrs) {
        out.srbcrs = bcrs_to_srbcrs(out.bcrs, p.out_stride);
        out.bcrs = BcrsMatrix{};
    }
    return out;
}

std::vector<double> sddmm_fused(const SddmmProblem& p, const Epilogue& epilogue) {
    std::vector<double> out(p.out_pattern.nnz_vectors() * static_cast<std::size_t>(p.out_pattern.vector_length), 0.0);
    KernelStats stats;
    sddmm_execute(p.a, p.b, p.out_pattern, p.config, stats, nullptr,
                  [&](std::size_t index, std::int32_t v) { out[index] = epilogue(v); });
    return out;
}

}  // namespace qsparse
