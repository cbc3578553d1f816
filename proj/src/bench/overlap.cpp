#include "apr/bench/overlap.hpp"

#include <chrono>

#include "apr/bench/busywork.hpp"
#include "apr/bench/fit.hpp"
#include "apr/error.hpp"

namespace apr::bench {

namespace {

using clock = std::chrono::steady_clock;
constexpr int kDataTag = 7;

double seconds_since(clock::time_point t0) {
  return std::chrono::duration<double>(clock::now() - t0).count();
}

// One repetition; returns rank 0's total time for op + work + wait.
double one_rep(RankContext& ctx, P2p& p2p, OverlapVariant variant,
               std::span<std::byte> buf, double t_w) {
  auto& rt = ctx.runtime();
  barrier(rt);
  if (ctx.rank() == 0) {
    const auto t0 = clock::now();
    Request op;
    switch (variant) {
    case OverlapVariant::IsendRecv:
    case OverlapVariant::IsendIrecv:
      op = p2p.isend(buf, 1, kDataTag);
      break;
    case OverlapVariant::IrecvSend:
      op = p2p.irecv(buf, 1, kDataTag);
      break;
    }
    BusyWork::shared().run_for(t_w);
    p2p.wait(op);
    return seconds_since(t0);
  }
  // The second process acts immediately: a blocking receive for the send
  // variants, a blocking send for the irecv variant.
  switch (variant) {
  case OverlapVariant::IsendRecv:
    p2p.recv(buf, 0, kDataTag);
    break;
  case OverlapVariant::IsendIrecv: {
    auto op = p2p.irecv(buf, 0, kDataTag);
    p2p.wait(op);
    break;
  }
  case OverlapVariant::IrecvSend:
    p2p.send(buf, 0, kDataTag);
    break;
  }
  return 0;
}

} // namespace

const char* to_string(OverlapMode mode) {
  return mode == OverlapMode::ShimOff ? "SHIM_OFF" : "SHIM_ON";
}

const char* to_string(OverlapVariant variant) {
  switch (variant) {
  case OverlapVariant::IsendRecv: return "isend_recv";
  case OverlapVariant::IrecvSend: return "irecv_send";
  case OverlapVariant::IsendIrecv: return "isend_irecv";
  }
  return "?";
}

OverlapVariant overlap_variant_from_string(const std::string& name) {
  if (name == "isend_recv")
    return OverlapVariant::IsendRecv;
  if (name == "irecv_send")
    return OverlapVariant::IrecvSend;
  if (name == "isend_irecv")
    return OverlapVariant::IsendIrecv;
  throw ConfigError("unknown overlap variant '" + name + "'");
}

double measure_transfer_time(RankContext& ctx, const OverlapFlags& flags,
                             OverlapMode mode) {
  if (ctx.size() != 2)
    throw UsageError("overlap benchmark needs exactly 2 ranks");
  P2p p2p{ctx, mode == OverlapMode::ShimOn};
  std::vector<std::byte> buf(flags.volume);
  std::vector<double> samples;
  const int reps = std::max(flags.reps, 5);
  for (int rep = 0; rep < reps + 2; ++rep) {
    const double t = one_rep(ctx, p2p, flags.variant, buf, 0.0);
    if (rep >= 2 && ctx.rank() == 0) // first two are warmup
      samples.push_back(t);
  }
  barrier(ctx.runtime());
  return ctx.rank() == 0 ? median(samples) : 0.0;
}

std::vector<OverlapSample> run_overlap(RankContext& ctx, const OverlapFlags& flags) {
  if (ctx.size() != 2)
    throw UsageError("overlap benchmark needs exactly 2 ranks");

  std::vector<double> sweep = flags.t_w_sweep;
  if (sweep.empty()) {
    // Scale the sweep from the bare transfer time so that both regimes of
    // t_t = max(t_c, t_w) are exercised.
    const double t_c = measure_transfer_time(ctx, flags, OverlapMode::ShimOff);
    for (double f : {0.25, 0.5, 1.0, 2.0, 4.0})
      sweep.push_back(f * t_c);
    // Rank 0 knows t_c; broadcast so both ranks loop identically.
    if (ctx.rank() == 0) {
      send_blocking(ctx.runtime(),
                    std::as_bytes(std::span(sweep)), 1, 901);
    } else {
      recv_blocking(ctx.runtime(),
                    std::as_writable_bytes(std::span(sweep)), 0, 901);
    }
  }

  std::vector<OverlapSample> out;
  std::vector<std::byte> buf(flags.volume);
  for (OverlapMode mode : {OverlapMode::ShimOff, OverlapMode::ShimOn}) {
    if (mode == OverlapMode::ShimOff && !flags.run_shim_off)
      continue;
    if (mode == OverlapMode::ShimOn && !flags.run_shim_on)
      continue;
    P2p p2p{ctx, mode == OverlapMode::ShimOn};
    for (double t_w : sweep) {
      for (int rep = 0; rep < flags.reps + 1; ++rep) {
        const double t_t = one_rep(ctx, p2p, flags.variant, buf, t_w);
        if (rep == 0)
          continue; // warmup
        if (ctx.rank() == 0)
          out.push_back({mode, flags.volume, t_w, t_t, rep - 1});
      }
    }
  }
  barrier(ctx.runtime());
  return out;
}

} // namespace apr::bench
