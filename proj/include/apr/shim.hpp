#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "apr/fileio.hpp"
#include "apr/runtime.hpp"

namespace apr {

namespace detail {
struct ProxyState;
}

enum class WaitsetStrategy { TestSome, WaitAny };

/// "0_2_4" -> {0, 2, 4}; the i-th local process takes the i-th entry, a list
/// shorter than the local process count leaves the excess unpinned. A
/// non-numeric token is a configuration error naming the token.
std::vector<int> parse_affinity(std::string_view spec);

struct ShimConfig {
  bool enabled = true;
  /// Payloads at or below this bypass the proxy machinery entirely; the
  /// underlying request is handed straight back. Defaults to the runtime's
  /// eager threshold.
  std::optional<std::uint64_t> eager_threshold;
  std::vector<int> affinity_list;
  int local_index = 0;
  std::chrono::microseconds backoff_min{1};
  std::chrono::microseconds backoff_max{1000};
  WaitsetStrategy waitset = WaitsetStrategy::TestSome;

  /// APR_ASYNC, APR_ASYNC_CPU_LIST, APR_EAGER_THRESHOLD, APR_WAITSET,
  /// APR_LOCAL_INDEX.
  static ShimConfig from_env();
};

struct ShimDiagnostics {
  std::uint64_t proxy_enqueues = 0;
  std::uint64_t bypassed = 0;
  std::uint64_t progress_polls = 0;
  std::uint64_t proxies_completed = 0;
  bool progress_thread_running = false;
  bool affinity_applied = false;
};

/// Interposition layer over the runtime: non-blocking calls are executed in
/// the caller's thread (the deadlock-avoidance rule), the returned handle is
/// a proxy whose status the dedicated progress thread fills in on completion.
/// Small messages bypass the proxy machinery. File operations are the
/// exception: they run entirely on the progress thread.
///
/// Disabled (APR_ASYNC=0), every call is a pure passthrough and no thread is
/// spawned.
class ProgressShim {
public:
  /// Forces the MULTIPLE thread level regardless of the requested one, reads
  /// the shim configuration from the environment unless given, starts the
  /// progress thread, applies affinity best-effort.
  ProgressShim(const JobSpec& job, ThreadLevel requested,
               std::optional<ShimConfig> config = std::nullopt);
  ProgressShim(std::unique_ptr<Runtime> runtime, ShimConfig config);
  ~ProgressShim();
  ProgressShim(const ProgressShim&) = delete;
  ProgressShim& operator=(const ProgressShim&) = delete;

  Runtime& underlying() { return *runtime_; }
  const ShimConfig& config() const { return config_; }
  const Communicator& world() const { return runtime_->world(); }
  int rank() const { return runtime_->rank(); }
  int size() const { return runtime_->size(); }

  Request isend(std::span<const std::byte> data, int dest, int tag,
                const Communicator& comm);
  Request irecv(std::span<std::byte> buffer, int source, int tag,
                const Communicator& comm);

  /// Unlike point-to-point, the underlying operation itself is executed by
  /// the progress thread; this call only enqueues a descriptor.
  Request file_iwrite(FileHandle& file, std::uint64_t offset,
                      std::span<const std::byte> data);
  Request file_iread(FileHandle& file, std::uint64_t offset,
                     std::span<std::byte> buffer);

  /// Accept both proxies and passthrough requests; a proxy is observably
  /// indistinguishable from a plain request through test/wait.
  std::optional<Status> test(Request& request);
  Status wait(Request& request);
  std::vector<std::pair<std::size_t, Status>> test_some(std::span<Request> requests);
  std::pair<std::size_t, Status> wait_any(std::span<Request> requests);
  void wait_all(std::span<Request> requests);

  /// Joins the progress thread first, then finalizes the runtime. The
  /// ordering is mandatory. Unconsumed proxies are a usage error naming them.
  void finalize();
  bool finalized() const;

  ShimDiagnostics diagnostics() const;

private:
  struct Impl;
  void start();
  void progress_main();
  bool queue_empty_locked() const;
  Request make_proxy(Request underlying, RequestKind kind,
                     std::unique_ptr<detail::FileOp> op);
  void consume_proxy(detail::ProxyState& proxy);
  std::unique_ptr<Runtime> runtime_;
  ShimConfig config_;
  std::uint64_t bypass_threshold_ = 0;
  std::unique_ptr<Impl> impl_;
};

} // namespace apr
