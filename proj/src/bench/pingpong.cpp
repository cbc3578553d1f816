#include "apr/bench/pingpong.hpp"

#include <algorithm>
#include <chrono>

#include "apr/error.hpp"

namespace apr::bench {

namespace {
using clock = std::chrono::steady_clock;
constexpr int kPingTag = 11;
constexpr int kPongTag = 12;
} // namespace

PingPongResult run_pingpong(RankContext& ctx, const PingPongFlags& flags) {
  if (ctx.size() != 2)
    throw UsageError("ping-pong needs exactly 2 ranks");

  std::vector<std::uint64_t> sizes = flags.sizes;
  if (sizes.empty())
    for (std::uint64_t s = 1024; s <= (8ull << 20); s <<= 1)
      sizes.push_back(s);
  if (sizes.size() < 2)
    throw UsageError("ping-pong fit needs at least two sizes");

  auto& rt = ctx.runtime();
  P2p p2p{ctx, flags.via_shim};
  PingPongResult result;

  std::vector<std::byte> buf(*std::max_element(sizes.begin(), sizes.end()));
  for (const auto size : sizes) {
    std::span<std::byte> msg{buf.data(), size};
    std::vector<double> rtts;
    barrier(rt);
    for (int rep = 0; rep < flags.reps + 3; ++rep) {
      if (ctx.rank() == 0) {
        const auto t0 = clock::now();
        p2p.send(msg, 1, kPingTag);
        p2p.recv(msg, 1, kPongTag);
        if (rep >= 3)
          rtts.push_back(std::chrono::duration<double>(clock::now() - t0).count());
      } else {
        p2p.recv(msg, 0, kPingTag);
        p2p.send(msg, 0, kPongTag);
      }
    }
    if (ctx.rank() == 0) {
      PingPongPoint point;
      point.size = size;
      point.one_way_seconds = median(rtts) / 2.0;
      point.bandwidth_bps = static_cast<double>(size) / point.one_way_seconds;
      result.points.push_back(point);
    }
  }
  barrier(rt);
  if (ctx.rank() != 0)
    return result;

  // Fit over rendezvous-sized messages when possible: that regime carries the
  // handshake cost the overlap experiments see.
  const std::uint64_t threshold = rt.config().eager_threshold;
  std::vector<double> volumes, times;
  for (const auto& p : result.points) {
    if (p.size > threshold) {
      volumes.push_back(static_cast<double>(p.size));
      times.push_back(p.one_way_seconds);
    }
  }
  if (volumes.size() < 2) {
    volumes.clear();
    times.clear();
    for (const auto& p : result.points) {
      volumes.push_back(static_cast<double>(p.size));
      times.push_back(p.one_way_seconds);
    }
  }
  result.model = fit_overlap_model(volumes, times);
  return result;
}

} // namespace apr::bench
