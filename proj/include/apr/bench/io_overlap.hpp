#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "apr/bench/harness.hpp"
#include "apr/bench/overlap.hpp"

namespace apr::bench {

struct IoOverlapFlags {
  std::string path;
  std::uint64_t volume_per_rank = 64ull << 20;
  std::uint64_t throttle_bps = 64ull << 20; // 0 warns: results meaningless on fast SSDs
  std::vector<double> t_w_sweep;            // empty: {0, 0.5, 1.5} x volume/throttle
  int reps = 3;
  bool run_shim_off = true;
  bool run_shim_on = true;
};

struct IoOverlapSample {
  OverlapMode mode = OverlapMode::ShimOff;
  int rank = 0;
  std::uint64_t volume = 0;
  double t_w = 0;
  double t_t = 0;
  int rep = 0;
};

/// Every rank writes its own region of one shared file (offset rank*volume),
/// overlapping the write with injected work. Samples from all ranks are
/// gathered on rank 0.
std::vector<IoOverlapSample> run_io_overlap(RankContext& ctx,
                                            const IoOverlapFlags& flags);

/// The deterministic byte each rank writes at a given index of its region.
std::byte io_pattern_byte(int rank, std::uint64_t index);

/// Reads the file back and checks it equals the concatenation of every
/// rank's patterned region.
bool verify_io_file(const std::string& path, int ranks, std::uint64_t volume_per_rank);

} // namespace apr::bench
