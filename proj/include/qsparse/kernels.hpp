#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "qsparse/emulation.hpp"
#include "qsparse/matrix.hpp"
#include "qsparse/qint.hpp"
#include "qsparse/sparse_format.hpp"

namespace qsparse {

/// Thread-block tiling. BS_m is the vector length and BS_k the SR-BCRS
/// stride (== tile k); both come from the operands, not from here.
struct TilingConfig {
    int bs_n = 64;
    int warps_per_block = 2;
    bool pipeline = false;
    /// Keep the per-block stage trace (costly for big problems).
    bool record_trace = false;
};

/// Pipeline stages of a thread block. SpMM prefetches RHS rows through
/// registers; SDDMM prefetches the shared LHS block instead.
enum class Stage { LoadLhs, Sync, PrefetchRhs, StoreRhs, PrefetchLhs, StoreLhs, Compute };

const char* to_string(Stage s) noexcept;

struct StageEvent {
    Stage stage = Stage::Sync;
    int step = -1;
    friend bool operator==(const StageEvent&, const StageEvent&) = default;
};

struct BlockTrace {
    std::size_t vector_row = 0;
    std::size_t block = 0;
    std::vector<StageEvent> events;
};

struct KernelStats {
    std::uint64_t blocks = 0;
    std::uint64_t steps = 0;
    std::uint64_t tile_mmas = 0;
    /// Worst bank conflict degree over the transpose-phase staging loads.
    int max_bank_conflicts = 0;
};

/// Applied to every 32-bit accumulator before it is written out.
using Epilogue = std::function<double(std::int32_t)>;

struct SpmmProblem {
    SrBcrsMatrix lhs;
    PackedMatrix rhs;
    TilingConfig config;
};

enum class SparseOutput { Bcrs, SrBcrs };

struct SddmmProblem {
    PackedMatrix a;
    PackedMatrix b;
    BcrsMatrix out_pattern;
    SparseOutput out_format = SparseOutput::Bcrs;
    /// Stride of an SR-BCRS output, normally the k of the consuming SpMM.
    int out_stride = 16;
    TilingConfig config;
};

struct SpmmResult {
    IntMatrix output;
    KernelStats stats;
    std::vector<BlockTrace> traces;
};

struct SddmmResult {
    /// Accumulators in pattern order: value of block b, row v at b*V + v.
    std::vector<std::int32_t> values;
    KernelStats stats;
    std::vector<BlockTrace> traces;
};

/// Sparse (SR-BCRS, Lx) times dense row-major (Ry) into a dense M x N
/// matrix of 32-bit integers. Unsupported pairs throw
/// UnsupportedPrecisionError; a 4-bit RHS needs shuffled LHS indices and any
/// other RHS needs unshuffled ones (ContractError).
SpmmResult spmm_run(const SrBcrsMatrix& lhs, const PackedMatrix& rhs, const TilingConfig& config);

IntMatrix spmm(const SpmmProblem& p);
/// Same as spmm() with config.pipeline forced on.
SpmmResult spmm_pipelined(const SpmmProblem& p);
/// spmm() with the epilogue applied on output write.
RealMatrix spmm_fused(const SpmmProblem& p, const Epilogue& epilogue);

/// Dense row-major A (M x K) times column-major B (K x N), evaluated only at
/// the blocks of the output pattern.
SddmmResult sddmm_run(const PackedMatrix& a, const PackedMatrix& b, const BcrsMatrix& pattern,
                      const TilingConfig& config);

/// Output in the format requested by the problem, holding 32-bit values.
struct SddmmOutput {
    SparseOutput format = SparseOutput::Bcrs;
    BcrsMatrix bcrs;
    SrBcrsMatrix srbcrs;
};

SddmmOutput sddmm(const SddmmProblem& p);
/// Pattern-ordered values with the epilogue applied.
std::vector<double> sddmm_fused(const SddmmProblem& p, const Epilogue& epilogue);

/// SpMM block schedules. The pipelined one issues the RHS prefetch of step i
/// before computing step i-1; the serial one finishes each step in turn.
/// Blocks execute by walking these event lists.
std::vector<StageEvent> spmm_pipeline_schedule(int steps);
std::vector<StageEvent> spmm_serial_schedule(int steps);

/// SDDMM counterparts, prefetching the LHS block.
std::vector<StageEvent> sddmm_pipeline_schedule(int steps);
std::vector<StageEvent> sddmm_serial_schedule(int steps);

}  // namespace qsparse
