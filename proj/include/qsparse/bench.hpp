#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qsparse/sparse_format.hpp"

namespace qsparse::bench {

enum class BenchOp { Spmm, Sddmm, Attention };

const char* to_string(BenchOp op) noexcept;
BenchOp parse_op(const std::string& name);

/// (M, N, K) for the kernels; (L, d_k, heads) for attention.
struct Shape {
    std::size_t m = 256;
    std::size_t n = 512;
    std::size_t k = 512;
    friend bool operator==(const Shape&, const Shape&) = default;
};

inline const std::vector<double> kDefaultSparsities = {0.5, 0.7, 0.8, 0.9, 0.95, 0.98};

struct SweepSpec {
    BenchOp op = BenchOp::Spmm;
    std::vector<Shape> shapes;
    std::vector<double> sparsities = kDefaultSparsities;
    std::vector<int> vector_lengths = {8};
    /// "Lx-Ry" names; for attention L is the softmax width and R the Q/K/V width.
    std::vector<std::string> precisions = {"L8-R8"};
    std::vector<int> bs_n = {64};
    std::vector<bool> pipeline = {false};
    int repetitions = 32;
    std::uint64_t seed = 1;
    bool verify = true;
    /// Sparse operand pattern loaded from a DLMC file; replaces the synthetic
    /// generator and fixes M and K (SpMM) or M and N (SDDMM, attention).
    std::optional<CsrPattern> dlmc;
};

/// One point of the sweep grid.
struct Cell {
    BenchOp op = BenchOp::Spmm;
    Shape shape;
    int vector_length = 8;
    double sparsity = 0.9;
    int lhs_bits = 8;
    int rhs_bits = 8;
    int bs_n = 64;
    bool pipeline = false;
    std::uint64_t seed = 1;
};

struct VerifyResult {
    bool pass = true;
    std::size_t index = 0;
    std::int64_t expected = 0;
    std::int64_t actual = 0;
    /// Location and values of the first mismatch, empty on pass.
    std::string detail;
};

struct BenchRecord {
    std::string op;
    std::size_t m = 0;
    std::size_t n = 0;
    std::size_t k = 0;
    int vector_length = 0;
    double sparsity = 0.0;
    std::string precision;
    int bs_n = 0;
    bool pipeline = false;
    /// "ok", "failed" or "skipped".
    std::string status;
    std::string reason;
    int repetitions = 0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    bool verified = false;
    std::size_t bytes_lhs = 0;
    std::size_t bytes_rhs = 0;

    friend bool operator==(const BenchRecord&, const BenchRecord&) = default;
};

/// Sweep cells in report order: shape, precision, V, sparsity, BS_n, pipeline.
std::vector<Cell> expand(const SweepSpec& spec);

/// Runs the cell's kernel once on deterministic inputs and compares against
/// the wide-integer dense oracle.
VerifyResult verify(const Cell& cell, const std::optional<CsrPattern>& dlmc = std::nullopt);

BenchRecord run_cell(const Cell& cell, int repetitions, bool check,
                     const std::optional<CsrPattern>& dlmc = std::nullopt);

std::vector<BenchRecord> run_sweep(const SweepSpec& spec);

/// True when every executed cell verified (skipped cells do not count).
bool all_verified(const std::vector<BenchRecord>& records);

inline constexpr int kJsonSchemaVersion = 1;

/// Column order of the CSV report.
const std::vector<std::string>& csv_header();
std::string to_csv(const std::vector<BenchRecord>& records);
std::string to_json(const std::vector<BenchRecord>& records);
/// Throws ParseError for malformed input or an unknown schema version.
std::vector<BenchRecord> from_json(const std::string& text);

/// Writes `csv` or `json` to `path` ("-" or empty for stdout). Throws IoError
/// when the file cannot be written.
void report(const std::vector<BenchRecord>& records, const std::string& format, const std::string& path);

}  // namespace qsparse::bench
