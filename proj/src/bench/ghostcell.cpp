#include "apr/bench/ghostcell.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>

#include "apr/bench/busywork.hpp"
#include "apr/bench/fit.hpp"
#include "apr/error.hpp"

namespace apr::bench {

namespace {
using clock = std::chrono::steady_clock;
constexpr int kLeftTag = 21;  // stamped on data travelling leftwards
constexpr int kRightTag = 22; // and rightwards

double seconds_since(clock::time_point t0) {
  return std::chrono::duration<double>(clock::now() - t0).count();
}
} // namespace

std::vector<GhostCellBreakdown> run_ghostcell(RankContext& ctx,
                                              const GhostCellFlags& flags) {
  const int np = ctx.size();
  const int me = ctx.rank();
  if (np < 2)
    throw UsageError("ghost-cell exchange needs at least 2 ranks");
  auto& rt = ctx.runtime();
  if (flags.halo_bytes <= rt.config().eager_threshold && me == 0)
    std::fprintf(stderr,
                 "ghostcell: halo (%llu B) is under the eager threshold; "
                 "overlap mode has nothing to hide\n",
                 static_cast<unsigned long long>(flags.halo_bytes));

  const int left = (me - 1 + np) % np;
  const int right = (me + 1) % np;
  const double work_target = flags.base_work / np;

  TriadWorkload triad(flags.triad_array_bytes, ctx.seed + static_cast<unsigned>(me));
  triad.calibrate();

  std::vector<std::byte> send_left(flags.halo_bytes), send_right(flags.halo_bytes);
  std::vector<std::byte> recv_left(flags.halo_bytes), recv_right(flags.halo_bytes);

  std::vector<GhostCellBreakdown> mine;
  for (OverlapMode mode : {OverlapMode::ShimOff, OverlapMode::ShimOn}) {
    if (mode == OverlapMode::ShimOff && !flags.run_shim_off)
      continue;
    if (mode == OverlapMode::ShimOn && !flags.run_shim_on)
      continue;
    P2p p2p{ctx, mode == OverlapMode::ShimOn};
    std::vector<double> t_ws, t_totals;
    for (int iter = 0; iter < flags.iters + 1; ++iter) {
      barrier(rt);
      const auto t0 = clock::now();
      Request reqs[4];
      reqs[0] = p2p.irecv(recv_left, left, kRightTag);
      reqs[1] = p2p.irecv(recv_right, right, kLeftTag);
      reqs[2] = p2p.isend(send_left, left, kLeftTag);
      reqs[3] = p2p.isend(send_right, right, kRightTag);
      const auto w0 = clock::now();
      triad.run_for(work_target);
      const double t_w = seconds_since(w0);
      p2p.wait_all(reqs);
      const double t_total = seconds_since(t0);
      if (iter == 0)
        continue; // warmup
      t_ws.push_back(t_w);
      t_totals.push_back(t_total);
    }
    GhostCellBreakdown bd;
    bd.rank = me;
    bd.mode = mode;
    bd.t_w = median(t_ws);
    bd.t_total = median(t_totals);
    bd.t_visible_comm = bd.t_total - bd.t_w;
    bd.triad_ok = triad.verify();
    mine.push_back(bd);
  }

  // Gather the per-rank breakdowns on rank 0.
  barrier(rt);
  std::vector<GhostCellBreakdown> all;
  if (me == 0) {
    all = mine;
    std::vector<GhostCellBreakdown> remote(mine.size());
    for (int r = 1; r < np; ++r) {
      recv_blocking(rt,
                    std::as_writable_bytes(std::span(remote)), r, 29);
      all.insert(all.end(), remote.begin(), remote.end());
    }
  } else {
    send_blocking(rt, std::as_bytes(std::span(mine)), 0, 29);
  }
  barrier(rt);
  return all;
}

} // namespace apr::bench
