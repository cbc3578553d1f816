#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "apr/transport.hpp"
#include "apr/wire.hpp"

namespace apr {

enum class ThreadLevel { Single, Funneled, Serialized, Multiple };
const char* to_string(ThreadLevel level);

struct Communicator {
  std::uint32_t context_id = 0;
  std::vector<int> ranks;
  int my_rank = 0;

  int size() const { return static_cast<int>(ranks.size()); }
};

enum class StatusError : std::uint8_t { Ok, Truncated, Protocol, Cancelled };
const char* to_string(StatusError error);

struct Status {
  int source = -1;
  int tag = -1;
  std::uint64_t received_bytes = 0;
  StatusError error = StatusError::Ok;

  friend bool operator==(const Status&, const Status&) = default;
};

enum class RequestKind : std::uint8_t { Send, Recv, FileWrite, FileRead };
const char* to_string(RequestKind kind);

/// PENDING -> MATCHED -> TRANSFERRING -> COMPLETE, monotone; ERRORED is
/// reachable from any non-terminal state.
enum class RequestPhase : std::uint8_t {
  Pending,
  Matched,
  Transferring,
  Complete,
  Errored
};

namespace detail {
struct OpState;
struct CoreState;
class FileOp;
struct Access;
} // namespace detail

/// Handle for one in-flight non-blocking operation. Single-consumer: exactly
/// one thread owns the test/wait sequence; a successful test or a wait
/// consumes the handle.
class Request {
public:
  Request() = default;

  bool valid() const { return state_ != nullptr; }
  RequestKind kind() const;
  RequestPhase phase() const;
  std::uint64_t id() const;
  bool consumed() const;

private:
  friend class Runtime;
  friend class ProgressShim;
  friend struct detail::Access;
  explicit Request(std::shared_ptr<detail::OpState> state) : state_(std::move(state)) {}
  std::shared_ptr<detail::OpState> state_;
};

enum class MeshBackend { Socket, Channel };

struct RuntimeConfig {
  /// Payloads at or below this go eager; larger ones take the rendezvous
  /// handshake. One concrete value fits the whole job.
  std::uint64_t eager_threshold = 256 * 1024;
  /// Injected per-byte delay (as a byte rate) on data-frame payloads.
  std::uint64_t net_throttle_bps = 0;
  /// Hard cap on buffered unexpected eager payload per peer.
  std::uint64_t unexpected_cap_bytes = 64ull << 20;
  std::chrono::milliseconds connect_timeout{10000};
};

struct JobSpec {
  int rank = 0;
  int size = 1;
  MeshBackend backend = MeshBackend::Channel;
  std::vector<Endpoint> endpoints;    // socket backend
  std::shared_ptr<ChannelHub> hub;    // channel backend
  std::optional<int> listen_fd;       // pre-bound listener from the launcher
  RuntimeConfig config;
};

struct RuntimeDiagnostics {
  std::uint64_t progress_calls = 0;
  std::uint64_t frames_handled = 0;
  std::uint64_t eager_sends = 0;
  std::uint64_t rendezvous_sends = 0;
  std::uint64_t unexpected_bytes_peak = 0;
};

/// The MPI-like core: communicators, non-blocking point-to-point, message
/// matching, the test/wait family. Every call into the runtime drives the
/// protocol engine; there is no internal progress thread, so asynchronous
/// progress is exclusively the shim's job.
///
/// All public operations are callable concurrently from any thread (the
/// MULTIPLE contract). wait blocks without holding the matching lock, so
/// other threads can complete the awaited request.
class Runtime {
public:
  /// Establishes the mesh and returns the context. The granted thread level
  /// is always MULTIPLE.
  static std::unique_ptr<Runtime> init(const JobSpec& job, ThreadLevel requested);

  /// Reads APR_RANK, APR_SIZE, APR_ENDPOINTS, APR_EAGER_THRESHOLD (plus
  /// APR_NET_THROTTLE and APR_LISTEN_FD) and calls init. Guarded: a second
  /// env-init while one is active is a usage error.
  static std::unique_ptr<Runtime> init_from_env(ThreadLevel requested);

  ~Runtime();
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  ThreadLevel thread_level() const { return ThreadLevel::Multiple; }
  ThreadLevel requested_thread_level() const { return requested_level_; }
  const Communicator& world() const { return world_; }
  int rank() const { return world_.my_rank; }
  int size() const { return static_cast<int>(world_.ranks.size()); }
  const RuntimeConfig& config() const { return config_; }

  /// Returns immediately. The buffer must remain stable until completion.
  /// Payloads at or below the eager threshold are written out eagerly and the
  /// request completes before return; larger payloads emit RTS and complete
  /// once CTS arrives and the data phase runs (inside a later test/wait).
  Request isend(std::span<const std::byte> data, int dest, int tag,
                const Communicator& comm);

  /// Returns immediately. Matches the unexpected queue first, else joins the
  /// posted-receive queue. source/tag may be kAnySource/kAnyTag.
  Request irecv(std::span<std::byte> buffer, int source, int tag,
                const Communicator& comm);

  /// Never blocks on completion; drives one round of protocol progress.
  std::optional<Status> test(Request& request);

  /// Blocks until completion, driving progress.
  Status wait(Request& request);

  /// Completed subset in one call; consumed and skipped entries are ignored.
  std::vector<std::pair<std::size_t, Status>> test_some(std::span<Request> requests);

  std::pair<std::size_t, Status> wait_any(std::span<Request> requests);

  /// wait_any with a deadline; nullopt on timeout.
  std::optional<std::pair<std::size_t, Status>>
  wait_any_for(std::span<Request> requests, std::chrono::nanoseconds timeout);

  void wait_all(std::span<Request> requests);

  /// Exchanges SHUTDOWN frames, drains, closes connections. Outstanding
  /// incomplete application requests make this a usage error naming them.
  void finalize();
  bool finalized() const;

  RuntimeDiagnostics diagnostics() const;

  /// Registers an already-described file operation as a request; the
  /// operation advances by one chunk per test and to completion in wait.
  /// Used by the fileio module.
  Request submit_file_op(std::unique_ptr<detail::FileOp> op);

  /// Thread that submitted the request (instrumentation for placement
  /// assertions).
  std::thread::id submitting_thread(const Request& request) const;

private:
  friend struct detail::Access;
  struct Impl;
  explicit Runtime(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
  Communicator world_;
  RuntimeConfig config_;
  ThreadLevel requested_level_ = ThreadLevel::Multiple;
};

} // namespace apr
