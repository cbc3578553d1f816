#pragma once

#include <cstdint>
#include <vector>

#include "apr/bench/harness.hpp"
#include "apr/bench/overlap.hpp"

namespace apr::bench {

struct GhostCellFlags {
  std::uint64_t halo_bytes = 1ull << 20;
  double base_work = 0.2;          // seconds, strong-scaled: per-rank work is base/np
  std::size_t triad_array_bytes = 32 * 1024;
  int iters = 8;
  bool run_shim_off = true;
  bool run_shim_on = true;
};

/// Median per-iteration breakdown for one rank.
struct GhostCellBreakdown {
  int rank = 0;
  OverlapMode mode = OverlapMode::ShimOff;
  double t_w = 0;            // measured triad wall time
  double t_visible_comm = 0; // t_total − t_w: communication not hidden
  double t_total = 0;
  bool triad_ok = false;
};

/// 1-D ring halo exchange under strong scaling: per iteration each rank posts
/// non-blocking halo sends/receives to both neighbors, runs the triad
/// workload for base_work/np seconds, then waits on all four. Returns every
/// rank's breakdown on rank 0 (gathered), empty elsewhere. Warns via return
/// flag when the halo is under the eager threshold since overlap then has
/// nothing to hide.
std::vector<GhostCellBreakdown> run_ghostcell(RankContext& ctx,
                                              const GhostCellFlags& flags);

} // namespace apr::bench
