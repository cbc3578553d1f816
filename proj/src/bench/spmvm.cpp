#include "apr/bench/spmvm.hpp"

#include <chrono>
#include <random>
#include <thread>

#include "apr/bench/fit.hpp"
#include "apr/error.hpp"

namespace apr::bench {

namespace {

using clock = std::chrono::steady_clock;
constexpr int kDemandTag = 31;
constexpr int kValuesTag = 32;
constexpr int kGatherTag = 33;

void parallel_rows(int nthreads, std::int64_t n,
                   const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (nthreads <= 1 || n < 2 * nthreads) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::int64_t step = (n + nthreads - 1) / nthreads;
  for (int t = 1; t < nthreads; ++t) {
    const std::int64_t lo = std::min<std::int64_t>(t * step, n);
    const std::int64_t hi = std::min<std::int64_t>(lo + step, n);
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(0, std::min(step, n));
  for (auto& t : pool)
    t.join();
}

// y[rows] = M * x over [lo, hi), overwriting.
void spmv_rows(const CsrMatrix& m, std::span<const double> x, std::span<double> y,
               std::int64_t lo, std::int64_t hi, bool accumulate) {
  for (std::int64_t i = lo; i < hi; ++i) {
    double acc = accumulate ? y[static_cast<std::size_t>(i)] : 0.0;
    for (std::int64_t k = m.row_ptr[static_cast<std::size_t>(i)];
         k < m.row_ptr[static_cast<std::size_t>(i) + 1]; ++k)
      acc += m.values[static_cast<std::size_t>(k)] *
             x[static_cast<std::size_t>(m.col_idx[static_cast<std::size_t>(k)])];
    y[static_cast<std::size_t>(i)] = acc;
  }
}

} // namespace

const char* to_string(SpmvmMode mode) {
  switch (mode) {
  case SpmvmMode::Vector: return "vector";
  case SpmvmMode::VectorShim: return "vector_shim";
  case SpmvmMode::Task: return "task";
  }
  return "?";
}

SpmvmMode spmvm_mode_from_string(const std::string& name) {
  if (name == "vector")
    return SpmvmMode::Vector;
  if (name == "vector_shim")
    return SpmvmMode::VectorShim;
  if (name == "task")
    return SpmvmMode::Task;
  throw ConfigError("unknown spmvm mode '" + name + "'");
}

std::vector<double> spmvm_input_vector(std::int64_t n, std::uint64_t seed) {
  std::vector<double> x(static_cast<std::size_t>(n));
  std::mt19937_64 rng(seed ^ 0xC0FFEEull);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& v : x)
    v = dist(rng);
  return x;
}

SpmvmOutcome run_spmvm(RankContext& ctx, const CsrMatrix& matrix,
                       const SpmvmFlags& flags) {
  const int np = ctx.size();
  const int me = ctx.rank();
  auto& rt = ctx.runtime();
  if (flags.threads < 1)
    throw UsageError("spmvm needs at least one thread");
  if (flags.mode == SpmvmMode::Task && flags.threads < 2)
    throw UsageError("task mode with 1 thread leaves no workers");

  const RowPartition part = partition_rows_by_nnz(matrix, np);
  const std::int64_t r0 = part.begin(me), r1 = part.end(me);
  const CsrMatrix block = take_rows(matrix, r0, r1);
  const PhaseSplit split = spmv_phase_split(block, r0, r1);

  // Group my needed remote columns by owner; they are sorted, so each owner
  // holds one contiguous slice of remote_cols.
  struct PeerNeed {
    int peer = 0;
    std::size_t offset = 0; // into remote_cols / remote values buffer
    std::size_t count = 0;
  };
  std::vector<PeerNeed> needs;
  for (std::size_t i = 0; i < split.remote_cols.size();) {
    const int owner = part.owner_of(split.remote_cols[i]);
    std::size_t j = i;
    while (j < split.remote_cols.size() && part.owner_of(split.remote_cols[j]) == owner)
      ++j;
    needs.push_back({owner, i, j - i});
    i = j;
  }

  // Tell every peer which of its entries I need; learn what they need of me.
  const std::int64_t my_rows = r1 - r0;
  std::vector<std::vector<std::int32_t>> serve(static_cast<std::size_t>(np));
  {
    std::vector<Request> reqs;
    for (const auto& need : needs)
      reqs.push_back(rt.isend(
          std::as_bytes(std::span(split.remote_cols).subspan(need.offset, need.count)),
          need.peer, kDemandTag, rt.world()));
    std::vector<std::vector<std::int32_t>> inbox(static_cast<std::size_t>(np));
    std::vector<Request> recvs;
    std::vector<int> recv_peer;
    for (int p = 0; p < np; ++p) {
      if (p == me)
        continue;
      inbox[static_cast<std::size_t>(p)].resize(static_cast<std::size_t>(my_rows));
      recvs.push_back(rt.irecv(std::as_writable_bytes(std::span(inbox[static_cast<std::size_t>(p)])),
                               p, kDemandTag, rt.world()));
      recv_peer.push_back(p);
    }
    for (std::size_t k = 0; k < recvs.size(); ++k) {
      const Status st = rt.wait(recvs[k]);
      auto& list = inbox[static_cast<std::size_t>(recv_peer[k])];
      list.resize(st.received_bytes / sizeof(std::int32_t));
      serve[static_cast<std::size_t>(recv_peer[k])] = std::move(list);
    }
    rt.wait_all(reqs);
  }

  const std::vector<double> x = spmvm_input_vector(matrix.n_rows, ctx.seed);
  const std::span<const double> x_local{x.data() + r0, static_cast<std::size_t>(my_rows)};
  std::vector<double> remote_vals(split.remote_cols.size());
  std::vector<double> y_mine(static_cast<std::size_t>(my_rows));
  std::vector<std::vector<double>> pack(static_cast<std::size_t>(np));
  for (int p = 0; p < np; ++p)
    pack[static_cast<std::size_t>(p)].resize(serve[static_cast<std::size_t>(p)].size());

  P2p p2p{ctx, flags.mode == SpmvmMode::VectorShim};

  const auto post_exchanges = [&](std::vector<Request>& reqs) {
    for (const auto& need : needs)
      reqs.push_back(p2p.irecv(
          std::as_writable_bytes(std::span(remote_vals).subspan(need.offset, need.count)),
          need.peer, kValuesTag));
    for (int p = 0; p < np; ++p) {
      const auto& list = serve[static_cast<std::size_t>(p)];
      if (list.empty())
        continue;
      auto& buf = pack[static_cast<std::size_t>(p)];
      for (std::size_t k = 0; k < list.size(); ++k)
        buf[k] = x[static_cast<std::size_t>(list[k])];
      reqs.push_back(p2p.isend(std::as_bytes(std::span(buf)), p, kValuesTag));
    }
  };

  const auto local_phase = [&](int workers) {
    parallel_rows(workers, my_rows, [&](std::int64_t lo, std::int64_t hi) {
      spmv_rows(split.local, x_local, y_mine, lo, hi, false);
    });
  };
  const auto nonlocal_phase = [&] {
    parallel_rows(flags.threads, my_rows, [&](std::int64_t lo, std::int64_t hi) {
      spmv_rows(split.nonlocal, remote_vals, y_mine, lo, hi, true);
    });
  };

  std::vector<double> iter_seconds;
  for (int iter = 0; iter < flags.iters + 1; ++iter) {
    barrier(rt);
    const auto t0 = clock::now();
    if (flags.mode == SpmvmMode::Task) {
      // One dedicated thread owns the whole exchange, blocking included; the
      // remaining workers run the local phase meanwhile.
      std::thread comm([&] {
        std::vector<Request> reqs;
        post_exchanges(reqs);
        rt.wait_all(reqs);
      });
      local_phase(flags.threads - 1);
      comm.join();
    } else {
      std::vector<Request> reqs;
      post_exchanges(reqs);
      local_phase(flags.threads);
      p2p.wait_all(reqs);
    }
    nonlocal_phase();
    barrier(rt); // the trailing barrier charges the slowest rank's time
    const double dt = std::chrono::duration<double>(clock::now() - t0).count();
    if (iter > 0)
      iter_seconds.push_back(dt);
  }

  SpmvmOutcome outcome;
  outcome.seconds_per_multiply = median(iter_seconds);

  // Gather the distributed result on rank 0 for verification.
  if (me == 0) {
    outcome.result.assign(static_cast<std::size_t>(matrix.n_rows), 0.0);
    std::copy(y_mine.begin(), y_mine.end(), outcome.result.begin() + r0);
    for (int p = 1; p < np; ++p) {
      const std::int64_t pr0 = part.begin(p), pr1 = part.end(p);
      recv_blocking(rt,
                    std::as_writable_bytes(std::span(outcome.result)
                                               .subspan(static_cast<std::size_t>(pr0),
                                                        static_cast<std::size_t>(pr1 - pr0))),
                    p, kGatherTag);
    }
  } else {
    send_blocking(rt, std::as_bytes(std::span(y_mine)), 0, kGatherTag);
  }
  barrier(rt);
  return outcome;
}

} // namespace apr::bench
