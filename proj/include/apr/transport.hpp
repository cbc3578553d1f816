#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "apr/pacer.hpp"
#include "apr/wire.hpp"

namespace apr {

struct HostPort {
  std::string host;
  std::uint16_t port = 0;

  std::string to_string() const;
  static HostPort parse(const std::string& text);
};

/// One rank's contact point. The channel backend ignores the address; the
/// rank doubles as the in-process channel id.
struct Endpoint {
  int rank = 0;
  HostPort addr;
};

/// Frames decoded off a connection are handed to the owner via this sink,
/// tagged with the sending rank. The sink must be callable from any thread
/// and must not block on protocol work.
using FrameSink = std::function<void(int from, Frame&&)>;

/// In-process fabric: delivery is a direct push into the destination rank's
/// sink. Exists so multi-rank tests run deterministically without sockets.
class ChannelHub {
public:
  explicit ChannelHub(int size);

  int size() const { return size_; }
  void attach(int rank, FrameSink sink);
  void detach(int rank);
  /// Blocks until every rank has attached; names the first missing rank on
  /// timeout.
  void await_all_attached(std::chrono::milliseconds timeout);
  void deliver(int from, int to, Frame&& frame);

private:
  int size_;
  std::mutex mu_;
  std::condition_variable attached_cv_;
  std::vector<FrameSink> sinks_;
  int attached_ = 0;
};

/// RAII wrapper over a listening TCP socket. Binding port 0 and publishing
/// the chosen port is how the launcher avoids allocation races.
class TcpListener {
public:
  TcpListener() = default;
  static TcpListener bind(const std::string& host, std::uint16_t port);
  static TcpListener adopt(int fd);
  ~TcpListener();

  TcpListener(TcpListener&& other) noexcept;
  TcpListener& operator=(TcpListener&& other) noexcept;
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  std::uint16_t local_port() const;
  int release();

private:
  int fd_ = -1;
};

struct TransportConfig {
  /// Injected per-byte delay on data-frame payloads, expressed as a byte
  /// rate; 0 disables pacing. Makes transfer times stable and measurable on
  /// loopback.
  std::uint64_t net_throttle_bps = 0;
  std::chrono::milliseconds connect_timeout{10000};
};

namespace detail {
class Connection;
}

/// Full mesh of byte streams between the ranks of one job: every pair is
/// connected exactly once, self is an in-process loopback. Frame writes are
/// atomic per connection (internal per-connection mutual exclusion), so the
/// application and a progress thread may send concurrently.
class Mesh {
public:
  Mesh() = default;
  ~Mesh();
  Mesh(Mesh&&) noexcept;
  Mesh& operator=(Mesh&&) noexcept;
  Mesh(const Mesh&) = delete;
  Mesh& operator=(const Mesh&) = delete;

  /// Socket backend. `listener` may be a pre-bound socket (launcher hands one
  /// down via APR_LISTEN_FD); otherwise the local endpoint's address is bound
  /// here. Retries peer connects until `config.connect_timeout`, then fails
  /// naming the unreachable rank.
  static Mesh establish(int my_rank, const std::vector<Endpoint>& endpoints,
                        FrameSink sink, const TransportConfig& config,
                        std::optional<TcpListener> listener = std::nullopt);

  /// Channel backend.
  static Mesh establish(int my_rank, std::shared_ptr<ChannelHub> hub,
                        FrameSink sink, const TransportConfig& config);

  int size() const { return size_; }
  /// Distinct pairwise streams this rank participates in (loopback excluded).
  std::size_t connection_count() const;

  /// Writes one frame to `dest`; payload bytes of data frames are paced when
  /// the throttle is set. Blocks until the frame is fully handed off.
  void send(int dest, const Frame& frame);

  /// Stops readers and closes streams. Safe to call more than once.
  void close();

private:
  int my_rank_ = -1;
  int size_ = 0;
  std::vector<std::unique_ptr<detail::Connection>> conns_; // by peer rank
  std::shared_ptr<ChannelHub> hub_;
  FrameSink sink_;
  bool closed_ = false;
};

} // namespace apr
