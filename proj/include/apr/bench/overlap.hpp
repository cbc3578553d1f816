#pragma once

#include <cstdint>
#include <vector>

#include "apr/bench/harness.hpp"

namespace apr::bench {

enum class OverlapMode { ShimOff, ShimOn };
const char* to_string(OverlapMode mode);

enum class OverlapVariant { IsendRecv, IrecvSend, IsendIrecv };
const char* to_string(OverlapVariant variant);
OverlapVariant overlap_variant_from_string(const std::string& name);

/// One measurement of the simple overlap experiment: inject t_w of CPU work
/// between the non-blocking call and its wait, record the total.
struct OverlapSample {
  OverlapMode mode = OverlapMode::ShimOff;
  std::uint64_t volume = 0; // V, message bytes
  double t_w = 0;           // injected work, seconds
  double t_t = 0;           // measured total, seconds
  int rep = 0;
};

struct OverlapFlags {
  std::uint64_t volume = 10ull << 20;
  std::vector<double> t_w_sweep; // empty: derived as multiples of measured t_c
  int reps = 20;
  OverlapVariant variant = OverlapVariant::IsendRecv;
  bool run_shim_off = true;
  bool run_shim_on = true;
};

/// Measures the bare transfer time (t_w = 0) for the flags' volume; medians
/// over reps. Collective over both ranks.
double measure_transfer_time(RankContext& ctx, const OverlapFlags& flags,
                             OverlapMode mode);

/// Runs the sweep on 2 ranks. Rank 0 issues the non-blocking op, works,
/// waits; rank 1 plays the immediate counterpart. Returns all repetition
/// samples on rank 0, empty elsewhere.
std::vector<OverlapSample> run_overlap(RankContext& ctx, const OverlapFlags& flags);

} // namespace apr::bench
