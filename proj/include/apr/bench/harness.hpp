#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "apr/shim.hpp"

namespace apr::bench {

/// Everything a per-rank benchmark body needs. The shim is always present;
/// SHIM_OFF phases go straight at the underlying runtime (whose progress
/// happens only inside application calls), SHIM_ON phases go through the
/// shim's proxy machinery.
struct RankContext {
  ProgressShim& shim;
  std::uint64_t seed = 0;

  Runtime& runtime() { return shim.underlying(); }
  const Communicator& world() const { return shim.world(); }
  int rank() const { return shim.rank(); }
  int size() const { return shim.size(); }
};

/// Uniform call surface for mode-agnostic benchmark loops.
struct P2p {
  RankContext& ctx;
  bool via_shim;

  Request isend(std::span<const std::byte> data, int dest, int tag) {
    return via_shim ? ctx.shim.isend(data, dest, tag, ctx.world())
                    : ctx.runtime().isend(data, dest, tag, ctx.world());
  }
  Request irecv(std::span<std::byte> buf, int source, int tag) {
    return via_shim ? ctx.shim.irecv(buf, source, tag, ctx.world())
                    : ctx.runtime().irecv(buf, source, tag, ctx.world());
  }
  Status wait(Request& r) {
    return via_shim ? ctx.shim.wait(r) : ctx.runtime().wait(r);
  }
  void wait_all(std::span<Request> rs) {
    if (via_shim)
      ctx.shim.wait_all(rs);
    else
      ctx.runtime().wait_all(rs);
  }
  Request file_iwrite(FileHandle& f, std::uint64_t offset,
                      std::span<const std::byte> data) {
    return via_shim ? ctx.shim.file_iwrite(f, offset, data)
                    : iwrite_at(ctx.runtime(), f, offset, data);
  }

  void send(std::span<const std::byte> data, int dest, int tag) {
    auto r = isend(data, dest, tag);
    wait(r);
  }
  Status recv(std::span<std::byte> buf, int source, int tag) {
    auto r = irecv(buf, source, tag);
    return wait(r);
  }
};

/// Dissemination barrier over eager zero-byte messages. Tag space 9900+round
/// is reserved for it.
void barrier(Runtime& rt);

/// Blocking helpers composed from the non-blocking pairs.
void send_blocking(Runtime& rt, std::span<const std::byte> data, int dest, int tag);
Status recv_blocking(Runtime& rt, std::span<std::byte> buf, int source, int tag);

using RankFn = std::function<void(RankContext&)>;

struct InProcessJobOptions {
  int size = 2;
  MeshBackend backend = MeshBackend::Channel;
  RuntimeConfig runtime_config;
  ShimConfig shim_config;
  std::uint64_t seed = 1;
};

/// Runs `fn` once per rank, each rank on its own thread with its own runtime
/// and shim, over a shared channel hub or a loopback socket mesh. Finalizes
/// everything; the first rank exception is rethrown.
void run_in_process(const InProcessJobOptions& options, const RankFn& fn);

/// Simple CSV sink: `# key=value` comment lines, one header, then rows.
class CsvWriter {
public:
  void comment(const std::string& key, const std::string& value);
  void header(const std::vector<std::string>& columns);
  void row(const std::vector<std::string>& fields);
  std::string str() const;
  void write_file(const std::string& path) const;
  bool empty() const { return lines_.empty(); }

private:
  std::vector<std::string> lines_;
  bool header_written_ = false;
};

} // namespace apr::bench
