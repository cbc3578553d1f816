#include "apr/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

#include "apr/error.hpp"

namespace apr {

namespace {

constexpr std::uint32_t kHelloMagic = 0x4150524D; // "APRM"

void write_all(int fd, const std::byte* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR)
        continue;
      throw ProtocolError(std::string("socket write failed: ") + std::strerror(errno));
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

bool read_exact(int fd, std::byte* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::recv(fd, data, len, 0);
    if (n == 0)
      return false;
    if (n < 0) {
      if (errno == EINTR)
        continue;
      return false;
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

sockaddr_in make_addr(const HostPort& hp) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(hp.port);
  if (::inet_pton(AF_INET, hp.host.c_str(), &addr.sin_addr) != 1)
    throw StartupError("bad host address '" + hp.host + "'");
  return addr;
}

} // namespace

std::string HostPort::to_string() const {
  return host + ":" + std::to_string(port);
}

HostPort HostPort::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("endpoint '" + text + "' is not host:port");
  HostPort hp;
  hp.host = text.substr(0, colon);
  const auto port_str = text.substr(colon + 1);
  char* end = nullptr;
  const long port = std::strtol(port_str.c_str(), &end, 10);
  if (end == port_str.c_str() || *end != '\0' || port < 0 || port > 65535)
    throw ConfigError("endpoint '" + text + "' has a bad port");
  hp.port = static_cast<std::uint16_t>(port);
  return hp;
}

// --------------------------------------------------------------------------
// ChannelHub

ChannelHub::ChannelHub(int size) : size_(size), sinks_(size) {}

void ChannelHub::attach(int rank, FrameSink sink) {
  std::lock_guard lock(mu_);
  if (rank < 0 || rank >= size_)
    throw UsageError("channel rank out of range");
  if (sinks_[rank])
    throw UsageError("rank " + std::to_string(rank) + " already attached");
  sinks_[rank] = std::move(sink);
  ++attached_;
  attached_cv_.notify_all();
}

void ChannelHub::detach(int rank) {
  std::lock_guard lock(mu_);
  if (sinks_[rank]) {
    sinks_[rank] = nullptr;
    --attached_;
  }
}

void ChannelHub::await_all_attached(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  if (!attached_cv_.wait_for(lock, timeout, [&] { return attached_ == size_; })) {
    for (int r = 0; r < size_; ++r)
      if (!sinks_[r])
        throw StartupError("rank " + std::to_string(r) + " never attached to channel hub");
  }
}

void ChannelHub::deliver(int from, int to, Frame&& frame) {
  FrameSink sink;
  {
    std::lock_guard lock(mu_);
    if (to < 0 || to >= size_ || !sinks_[to])
      throw ProtocolError("delivery to detached rank " + std::to_string(to), to);
    sink = sinks_[to];
  }
  sink(from, std::move(frame));
}

// --------------------------------------------------------------------------
// TcpListener

TcpListener TcpListener::bind(const std::string& host, std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0)
    throw StartupError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = make_addr({host, port});
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(fd);
    throw StartupError("bind " + host + ":" + std::to_string(port) + ": " +
                       std::strerror(err));
  }
  if (::listen(fd, 64) != 0) {
    const int err = errno;
    ::close(fd);
    throw StartupError(std::string("listen: ") + std::strerror(err));
  }
  return adopt(fd);
}

TcpListener TcpListener::adopt(int fd) {
  TcpListener l;
  l.fd_ = fd;
  return l;
}

TcpListener::~TcpListener() {
  if (fd_ >= 0)
    ::close(fd_);
}

TcpListener::TcpListener(TcpListener&& other) noexcept : fd_(other.fd_) {
  other.fd_ = -1;
}

TcpListener& TcpListener::operator=(TcpListener&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0)
      ::close(fd_);
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

std::uint16_t TcpListener::local_port() const {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0)
    throw StartupError(std::string("getsockname: ") + std::strerror(errno));
  return ntohs(addr.sin_port);
}

int TcpListener::release() {
  return std::exchange(fd_, -1);
}

// --------------------------------------------------------------------------
// Connections

namespace detail {

class Connection {
public:
  virtual ~Connection() = default;
  virtual void send_frame(const Frame& frame) = 0;
  virtual void begin_close() {}
  virtual void join() {}
};

// Destination is this process; no wire involved, but pacing still applies so
// loopback behaves like any other link under an injected delay.
class LoopbackConnection : public Connection {
public:
  LoopbackConnection(int rank, FrameSink sink, std::uint64_t throttle)
      : rank_(rank), sink_(std::move(sink)), pacer_(throttle) {}

  void send_frame(const Frame& frame) override {
    Frame copy = frame;
    {
      std::lock_guard lock(mu_);
      if (frame.kind == FrameKind::EagerData || frame.kind == FrameKind::RdvData)
        pacer_.pace(frame.payload.size());
    }
    sink_(rank_, std::move(copy));
  }

private:
  int rank_;
  FrameSink sink_;
  std::mutex mu_;
  Pacer pacer_;
};

class ChannelConnection : public Connection {
public:
  ChannelConnection(std::shared_ptr<ChannelHub> hub, int from, int to,
                    std::uint64_t throttle)
      : hub_(std::move(hub)), from_(from), to_(to), pacer_(throttle) {}

  void send_frame(const Frame& frame) override {
    Frame copy = frame;
    {
      std::lock_guard lock(mu_);
      if (frame.kind == FrameKind::EagerData || frame.kind == FrameKind::RdvData)
        pacer_.pace(frame.payload.size());
    }
    hub_->deliver(from_, to_, std::move(copy));
  }

private:
  std::shared_ptr<ChannelHub> hub_;
  int from_;
  int to_;
  std::mutex mu_;
  Pacer pacer_;
};

class SocketConnection : public Connection {
public:
  SocketConnection(int fd, int peer_rank, FrameSink sink, std::uint64_t throttle)
      : fd_(fd), peer_(peer_rank), sink_(std::move(sink)), pacer_(throttle) {
    set_nodelay(fd_);
    reader_ = std::thread([this] { read_loop(); });
  }

  ~SocketConnection() override {
    begin_close();
    join();
    if (fd_ >= 0)
      ::close(fd_);
  }

  void send_frame(const Frame& frame) override {
    const auto bytes = encode_frame(frame);
    const std::size_t header = kFrameHeaderBytes;
    std::lock_guard lock(write_mu_);
    write_all(fd_, bytes.data(), header);
    const std::byte* payload = bytes.data() + header;
    std::size_t left = bytes.size() - header;
    const bool paced = pacer_.enabled() && (frame.kind == FrameKind::EagerData ||
                                            frame.kind == FrameKind::RdvData);
    const std::size_t chunk =
        paced ? static_cast<std::size_t>(pacer_.window_chunk(256 * 1024)) : left;
    while (left > 0) {
      const std::size_t n = std::min(left, std::max<std::size_t>(chunk, 1));
      write_all(fd_, payload, n);
      if (paced)
        pacer_.pace(n);
      payload += n;
      left -= n;
    }
  }

  void begin_close() override {
    bool expected = false;
    if (closing_.compare_exchange_strong(expected, true))
      ::shutdown(fd_, SHUT_RDWR);
  }

  void join() override {
    if (reader_.joinable())
      reader_.join();
  }

private:
  void read_loop() {
    FrameDecoder decoder;
    std::vector<std::byte> buf(64 * 1024);
    for (;;) {
      const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
      if (n == 0)
        break;
      if (n < 0) {
        if (errno == EINTR)
          continue;
        break; // peer gone or local shutdown; the runtime notices via SHUTDOWN accounting
      }
      try {
        decoder.feed({buf.data(), static_cast<std::size_t>(n)});
        bool saw_shutdown = false;
        while (auto frame = decoder.next()) {
          saw_shutdown = frame->kind == FrameKind::Shutdown;
          sink_(peer_, std::move(*frame));
          if (saw_shutdown)
            break;
        }
        if (saw_shutdown)
          break;
      } catch (const ProtocolError& e) {
        Frame poison;
        poison.kind = FrameKind::Shutdown;
        poison.envelope.source = peer_;
        poison.envelope.tag = 0;
        poison.envelope.seq = ~0ull; // marks a protocol failure, not a clean shutdown
        sink_(peer_, std::move(poison));
        break;
      }
    }
  }

  int fd_;
  int peer_;
  FrameSink sink_;
  std::mutex write_mu_;
  Pacer pacer_;
  std::thread reader_;
  std::atomic<bool> closing_{false};
};

} // namespace detail

// --------------------------------------------------------------------------
// Mesh

Mesh::~Mesh() {
  close();
}

Mesh::Mesh(Mesh&&) noexcept = default;
Mesh& Mesh::operator=(Mesh&&) noexcept = default;

std::size_t Mesh::connection_count() const {
  std::size_t n = 0;
  for (int r = 0; r < size_; ++r)
    if (r != my_rank_ && conns_[static_cast<std::size_t>(r)])
      ++n;
  return n;
}

void Mesh::send(int dest, const Frame& frame) {
  if (dest < 0 || dest >= size_)
    throw UsageError("send to rank " + std::to_string(dest) + " out of range");
  conns_[static_cast<std::size_t>(dest)]->send_frame(frame);
}

void Mesh::close() {
  if (closed_)
    return;
  closed_ = true;
  for (auto& c : conns_)
    if (c)
      c->begin_close();
  for (auto& c : conns_)
    if (c)
      c->join();
  conns_.clear();
  if (hub_ && my_rank_ >= 0)
    hub_->detach(my_rank_);
  hub_.reset();
}

Mesh Mesh::establish(int my_rank, std::shared_ptr<ChannelHub> hub,
                     FrameSink sink, const TransportConfig& config) {
  Mesh mesh;
  mesh.my_rank_ = my_rank;
  mesh.size_ = hub->size();
  mesh.sink_ = sink;
  mesh.hub_ = hub;
  hub->attach(my_rank, sink);
  hub->await_all_attached(config.connect_timeout);
  mesh.conns_.resize(static_cast<std::size_t>(mesh.size_));
  for (int r = 0; r < mesh.size_; ++r) {
    if (r == my_rank)
      mesh.conns_[static_cast<std::size_t>(r)] =
          std::make_unique<detail::LoopbackConnection>(my_rank, sink,
                                                       config.net_throttle_bps);
    else
      mesh.conns_[static_cast<std::size_t>(r)] =
          std::make_unique<detail::ChannelConnection>(hub, my_rank, r,
                                                      config.net_throttle_bps);
  }
  return mesh;
}

Mesh Mesh::establish(int my_rank, const std::vector<Endpoint>& endpoints,
                     FrameSink sink, const TransportConfig& config,
                     std::optional<TcpListener> listener) {
  const int size = static_cast<int>(endpoints.size());
  if (my_rank < 0 || my_rank >= size)
    throw StartupError("rank " + std::to_string(my_rank) + " not in endpoint list");

  Mesh mesh;
  mesh.my_rank_ = my_rank;
  mesh.size_ = size;
  mesh.sink_ = sink;
  mesh.conns_.resize(static_cast<std::size_t>(size));
  mesh.conns_[static_cast<std::size_t>(my_rank)] =
      std::make_unique<detail::LoopbackConnection>(my_rank, sink,
                                                   config.net_throttle_bps);
  if (size == 1)
    return mesh;

  TcpListener local = listener && listener->valid()
                          ? std::move(*listener)
                          : TcpListener::bind(endpoints[static_cast<std::size_t>(my_rank)].addr.host,
                                              endpoints[static_cast<std::size_t>(my_rank)].addr.port);

  // Pair convention: the higher rank connects, the lower rank accepts, so
  // every pair is connected exactly once.
  const int expect_accepts = size - 1 - my_rank;

  std::exception_ptr accept_error;
  std::vector<std::pair<int, int>> accepted; // (peer rank, fd)
  std::mutex accepted_mu;

  std::thread accepter([&] {
    try {
      for (int i = 0; i < expect_accepts; ++i) {
        pollfd pfd{local.fd(), POLLIN, 0};
        const auto deadline = std::chrono::steady_clock::now() + config.connect_timeout;
        for (;;) {
          const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
              deadline - std::chrono::steady_clock::now());
          if (left.count() <= 0)
            throw StartupError("timed out accepting peer connections (got " +
                               std::to_string(i) + " of " +
                               std::to_string(expect_accepts) + ")");
          const int pr = ::poll(&pfd, 1, static_cast<int>(left.count()));
          if (pr > 0)
            break;
          if (pr < 0 && errno != EINTR)
            throw StartupError(std::string("poll: ") + std::strerror(errno));
        }
        const int fd = ::accept(local.fd(), nullptr, nullptr);
        if (fd < 0)
          throw StartupError(std::string("accept: ") + std::strerror(errno));
        std::byte hello[8];
        if (!read_exact(fd, hello, sizeof(hello))) {
          ::close(fd);
          --i;
          continue;
        }
        std::uint32_t magic = 0, rank = 0;
        std::memcpy(&magic, hello, 4);
        std::memcpy(&rank, hello + 4, 4);
        if (magic != kHelloMagic || static_cast<int>(rank) <= my_rank ||
            static_cast<int>(rank) >= size) {
          ::close(fd);
          --i; // stray connection; keep waiting for the real peer
          continue;
        }
        std::lock_guard lock(accepted_mu);
        accepted.emplace_back(static_cast<int>(rank), fd);
      }
    } catch (...) {
      accept_error = std::current_exception();
    }
  });

  // Connect to every lower rank, retrying while their listeners come up.
  try {
    for (int peer = 0; peer < my_rank; ++peer) {
      const auto& ep = endpoints[static_cast<std::size_t>(peer)];
      const auto deadline = std::chrono::steady_clock::now() + config.connect_timeout;
      int fd = -1;
      for (;;) {
        fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0)
          throw StartupError(std::string("socket: ") + std::strerror(errno));
        sockaddr_in addr = make_addr(ep.addr);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0)
          break;
        ::close(fd);
        fd = -1;
        if (std::chrono::steady_clock::now() >= deadline)
          throw StartupError("rank " + std::to_string(peer) + " unreachable at " +
                             ep.addr.to_string());
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
      std::byte hello[8];
      std::uint32_t magic = kHelloMagic, rank = static_cast<std::uint32_t>(my_rank);
      std::memcpy(hello, &magic, 4);
      std::memcpy(hello + 4, &rank, 4);
      write_all(fd, hello, sizeof(hello));
      mesh.conns_[static_cast<std::size_t>(peer)] =
          std::make_unique<detail::SocketConnection>(fd, peer, sink,
                                                     config.net_throttle_bps);
    }
  } catch (...) {
    ::shutdown(local.fd(), SHUT_RDWR);
    accepter.join();
    throw;
  }

  accepter.join();
  if (accept_error)
    std::rethrow_exception(accept_error);
  for (auto& [rank, fd] : accepted)
    mesh.conns_[static_cast<std::size_t>(rank)] =
        std::make_unique<detail::SocketConnection>(fd, rank, sink,
                                                   config.net_throttle_bps);
  return mesh;
}

} // namespace apr
