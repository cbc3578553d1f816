#include "apr/bench/io_overlap.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "apr/bench/busywork.hpp"
#include "apr/error.hpp"
#include "apr/fileio.hpp"

namespace apr::bench {

namespace {
using clock = std::chrono::steady_clock;
constexpr int kGatherTag = 41;
} // namespace

std::byte io_pattern_byte(int rank, std::uint64_t index) {
  return static_cast<std::byte>((index * 131 + static_cast<std::uint64_t>(rank) * 29 + 7) & 0xFF);
}

bool verify_io_file(const std::string& path, int ranks, std::uint64_t volume_per_rank) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    return false;
  std::vector<char> chunk(1 << 20);
  for (int r = 0; r < ranks; ++r) {
    std::uint64_t left = volume_per_rank, index = 0;
    while (left > 0) {
      const std::uint64_t n = std::min<std::uint64_t>(left, chunk.size());
      if (!in.read(chunk.data(), static_cast<std::streamsize>(n)))
        return false;
      for (std::uint64_t i = 0; i < n; ++i)
        if (static_cast<std::byte>(chunk[i]) != io_pattern_byte(r, index + i))
          return false;
      index += n;
      left -= n;
    }
  }
  return in.peek() == EOF;
}

std::vector<IoOverlapSample> run_io_overlap(RankContext& ctx,
                                            const IoOverlapFlags& flags) {
  const int np = ctx.size();
  const int me = ctx.rank();
  auto& rt = ctx.runtime();
  if (flags.path.empty())
    throw UsageError("io-overlap needs a file path");
  if (flags.throttle_bps == 0 && me == 0)
    std::fprintf(stderr, "io-overlap: no throttle set; overlap windows on fast "
                         "page caches will be too short to read anything from\n");

  // Rank 0 truncates the shared file, then everyone opens it read-write.
  if (me == 0) {
    FileHandle::open(flags.path, FileMode::Write, 0).close();
  }
  barrier(rt);
  FileHandle file = FileHandle::open(flags.path, FileMode::ReadWrite, flags.throttle_bps);

  std::vector<std::byte> data(flags.volume_per_rank);
  for (std::uint64_t i = 0; i < flags.volume_per_rank; ++i)
    data[i] = io_pattern_byte(me, i);
  const std::uint64_t offset = static_cast<std::uint64_t>(me) * flags.volume_per_rank;

  std::vector<double> sweep = flags.t_w_sweep;
  if (sweep.empty()) {
    const double t_io_est =
        flags.throttle_bps ? static_cast<double>(flags.volume_per_rank) /
                                 static_cast<double>(flags.throttle_bps)
                           : 0.5;
    sweep = {0.0, 0.5 * t_io_est, 1.5 * t_io_est};
  }

  std::vector<IoOverlapSample> mine;
  for (OverlapMode mode : {OverlapMode::ShimOff, OverlapMode::ShimOn}) {
    if (mode == OverlapMode::ShimOff && !flags.run_shim_off)
      continue;
    if (mode == OverlapMode::ShimOn && !flags.run_shim_on)
      continue;
    P2p p2p{ctx, mode == OverlapMode::ShimOn};
    for (const double t_w : sweep) {
      for (int rep = 0; rep < flags.reps; ++rep) {
        barrier(rt);
        const auto t0 = clock::now();
        Request req = p2p.file_iwrite(file, offset, data);
        BusyWork::shared().run_for(t_w);
        p2p.wait(req);
        const double t_t = std::chrono::duration<double>(clock::now() - t0).count();
        mine.push_back({mode, me, flags.volume_per_rank, t_w, t_t, rep});
      }
    }
  }

  barrier(rt);
  std::vector<IoOverlapSample> all;
  if (me == 0) {
    all = mine;
    std::vector<IoOverlapSample> remote(mine.size());
    for (int r = 1; r < np; ++r) {
      recv_blocking(rt, std::as_writable_bytes(std::span(remote)), r, kGatherTag);
      all.insert(all.end(), remote.begin(), remote.end());
    }
  } else {
    send_blocking(rt, std::as_bytes(std::span(mine)), 0, kGatherTag);
  }
  barrier(rt);
  return all;
}

} // namespace apr::bench
