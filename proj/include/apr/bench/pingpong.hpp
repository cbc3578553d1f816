#pragma once

#include <cstdint>
#include <vector>

#include "apr/bench/fit.hpp"
#include "apr/bench/harness.hpp"
#include "apr/bench/overlap.hpp"

namespace apr::bench {

struct PingPongFlags {
  std::vector<std::uint64_t> sizes; // empty: power-of-two ladder 1 KiB..8 MiB
  int reps = 30;
  bool via_shim = false;
};

struct PingPongPoint {
  std::uint64_t size = 0;
  double one_way_seconds = 0; // half the median round trip
  double bandwidth_bps = 0;
};

struct PingPongResult {
  std::vector<PingPongPoint> points;
  OverlapModel model; // fitted over the rendezvous-sized points
};

/// Classic ping-pong on 2 ranks; round trips halved per size, least-squares
/// fit of t_c(V) = V/B_N + t_l over the large sizes. Result valid on rank 0.
PingPongResult run_pingpong(RankContext& ctx, const PingPongFlags& flags);

} // namespace apr::bench
