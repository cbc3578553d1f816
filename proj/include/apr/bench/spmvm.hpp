#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "apr/bench/csr.hpp"
#include "apr/bench/harness.hpp"

namespace apr::bench {

/// Overlap strategies for the distributed multiply: vector mode posts the
/// exchanges non-blocking and computes the local phase with every worker
/// thread (optionally through the shim for real asynchronous progress); task
/// mode dedicates one thread to blocking communication.
enum class SpmvmMode { Vector, VectorShim, Task };
const char* to_string(SpmvmMode mode);
SpmvmMode spmvm_mode_from_string(const std::string& name);

struct SpmvmFlags {
  SpmvmMode mode = SpmvmMode::Vector;
  int threads = 2;
  int iters = 5;
};

struct SpmvmOutcome {
  double seconds_per_multiply = 0; // median over iterations, slowest-rank time
  std::vector<double> result;      // full y = A*x, gathered on rank 0
};

/// Distributed y = A*x with rows (and the vector) partitioned by nonzeros.
/// The matrix is replicated; each rank slices its block. The result vector is
/// identical across modes and rank counts up to rounding.
SpmvmOutcome run_spmvm(RankContext& ctx, const CsrMatrix& matrix,
                       const SpmvmFlags& flags);

/// The x vector every rank derives from the seed (deterministic).
std::vector<double> spmvm_input_vector(std::int64_t n, std::uint64_t seed);

} // namespace apr::bench
