#include "apr/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "apr/detail/request_state.hpp"
#include "apr/env.hpp"
#include "apr/error.hpp"

namespace apr {

using detail::CoreState;
using detail::FileOp;

namespace {

// Poison marker: a reader thread that hit a protocol error injects a
// SHUTDOWN frame with this sequence number instead of throwing into nowhere.
constexpr std::uint64_t kPoisonSeq = ~0ull;

std::atomic<bool> g_env_init_active{false};

bool pattern_matches(const MessageEnvelope& pattern, const MessageEnvelope& arrival) {
  if (pattern.context_id != arrival.context_id)
    return false;
  if (pattern.source != kAnySource && pattern.source != arrival.source)
    return false;
  if (pattern.tag != kAnyTag && pattern.tag != arrival.tag)
    return false;
  return true;
}

struct UnexpectedMsg {
  FrameKind kind = FrameKind::EagerData; // EagerData or Rts
  MessageEnvelope envelope;
  std::vector<std::byte> payload; // eager only
};

} // namespace

const char* to_string(ThreadLevel level) {
  switch (level) {
  case ThreadLevel::Single: return "SINGLE";
  case ThreadLevel::Funneled: return "FUNNELED";
  case ThreadLevel::Serialized: return "SERIALIZED";
  case ThreadLevel::Multiple: return "MULTIPLE";
  }
  return "?";
}

const char* to_string(StatusError error) {
  switch (error) {
  case StatusError::Ok: return "OK";
  case StatusError::Truncated: return "TRUNCATED";
  case StatusError::Protocol: return "PROTOCOL";
  case StatusError::Cancelled: return "CANCELLED";
  }
  return "?";
}

const char* to_string(RequestKind kind) {
  switch (kind) {
  case RequestKind::Send: return "SEND";
  case RequestKind::Recv: return "RECV";
  case RequestKind::FileWrite: return "FILE_WRITE";
  case RequestKind::FileRead: return "FILE_READ";
  }
  return "?";
}

RequestKind Request::kind() const {
  if (!state_)
    throw UsageError("empty request handle");
  return state_->kind();
}

RequestPhase Request::phase() const {
  if (!state_)
    throw UsageError("empty request handle");
  return state_->phase();
}

std::uint64_t Request::id() const {
  if (!state_)
    throw UsageError("empty request handle");
  return state_->id();
}

bool Request::consumed() const {
  if (!state_)
    throw UsageError("empty request handle");
  return state_->consumed();
}

// ---------------------------------------------------------------------------

struct Runtime::Impl {
  int my_rank = 0;
  int job_size = 1;
  RuntimeConfig config;
  Mesh mesh;
  bool env_guard_held = false;

  // Inbox: reader threads / channel senders push, the progress engine drains.
  std::mutex inbox_mu;
  std::condition_variable activity_cv;
  std::deque<std::pair<int, Frame>> inbox;

  // Protocol state. The engine mutex serializes protocol passes; wire writes
  // and payload copies happen while it is held. Blocking waits never hold it.
  std::mutex engine_mu;
  std::deque<std::shared_ptr<CoreState>> posted_recvs;
  std::deque<UnexpectedMsg> unexpected;
  std::vector<std::uint64_t> unexpected_bytes; // per source rank
  std::map<std::tuple<std::uint32_t, int, std::uint64_t>, std::shared_ptr<CoreState>>
      pending_rdv_sends; // (context, dest, seq) awaiting CTS
  std::map<std::tuple<std::uint32_t, int, std::uint64_t>, std::shared_ptr<CoreState>>
      rdv_bindings; // (context, source, seq) -> matched receive
  std::map<std::pair<std::uint32_t, int>, std::uint64_t> send_seq; // (context, dest)
  std::unordered_map<std::uint64_t, std::shared_ptr<CoreState>> outstanding;

  std::vector<bool> shutdown_from;
  int shutdowns_seen = 0;
  std::optional<std::string> poisoned;
  bool finalized = false;

  std::atomic<std::uint64_t> next_req_id{1};
  std::atomic<std::uint64_t> progress_calls{0};
  std::atomic<std::uint64_t> frames_handled{0};
  std::atomic<std::uint64_t> eager_sends{0};
  std::atomic<std::uint64_t> rendezvous_sends{0};
  std::uint64_t unexpected_bytes_peak = 0;

  void push_frame(int from, Frame&& frame) {
    {
      std::lock_guard lock(inbox_mu);
      inbox.emplace_back(from, std::move(frame));
    }
    activity_cv.notify_all();
  }

  void notify_activity() {
    // Pairs with predicate checks under inbox_mu in blocking waits.
    std::lock_guard lock(inbox_mu);
    activity_cv.notify_all();
  }

  void complete(CoreState& state, Status status, RequestPhase terminal) {
    state.status = status;
    state.req_phase.store(terminal, std::memory_order_release);
    outstanding.erase(state.req_id);
  }

  void throw_if_poisoned() {
    if (poisoned)
      throw ProtocolError(*poisoned);
  }

  // One protocol pass: drain whatever is in the inbox and act on it.
  // Returns true when any frame was handled.
  bool progress_once() {
    progress_calls.fetch_add(1, std::memory_order_relaxed);
    std::unique_lock engine(engine_mu);
    throw_if_poisoned();
    std::deque<std::pair<int, Frame>> batch;
    {
      std::lock_guard lock(inbox_mu);
      batch.swap(inbox);
    }
    if (batch.empty())
      return false;
    for (auto& [from, frame] : batch) {
      frames_handled.fetch_add(1, std::memory_order_relaxed);
      handle_frame(from, std::move(frame));
    }
    engine.unlock();
    notify_activity();
    return true;
  }

  void handle_frame(int from, Frame&& frame) {
    switch (frame.kind) {
    case FrameKind::EagerData:
      handle_arrival(from, std::move(frame));
      break;
    case FrameKind::Rts:
      handle_arrival(from, std::move(frame));
      break;
    case FrameKind::Cts:
      handle_cts(frame.envelope);
      break;
    case FrameKind::RdvData:
      handle_rdv_data(std::move(frame));
      break;
    case FrameKind::Shutdown:
      if (frame.envelope.seq == kPoisonSeq) {
        poisoned = "protocol error on stream from rank " + std::to_string(from);
        throw ProtocolError(*poisoned, from);
      }
      if (shutdown_from[static_cast<std::size_t>(from)]) {
        poisoned = "duplicate SHUTDOWN from rank " + std::to_string(from);
        throw ProtocolError(*poisoned, from);
      }
      shutdown_from[static_cast<std::size_t>(from)] = true;
      ++shutdowns_seen;
      break;
    case FrameKind::FileioControl:
      poisoned = "unexpected FILEIO_CONTROL frame from rank " + std::to_string(from);
      throw ProtocolError(*poisoned, from);
    }
  }

  // EAGER_DATA or RTS: first posted receive (FIFO) wins, else the message is
  // stored in the unexpected queue.
  void handle_arrival(int from, Frame&& frame) {
    std::shared_ptr<CoreState> match;
    for (auto it = posted_recvs.begin(); it != posted_recvs.end(); ++it) {
      if (pattern_matches((*it)->envelope, frame.envelope)) {
        match = *it;
        posted_recvs.erase(it);
        break;
      }
    }
    if (!match) {
      UnexpectedMsg msg;
      msg.kind = frame.kind;
      msg.envelope = frame.envelope;
      if (frame.kind == FrameKind::EagerData) {
        auto& counter = unexpected_bytes[static_cast<std::size_t>(from)];
        counter += frame.payload.size();
        unexpected_bytes_peak = std::max(unexpected_bytes_peak, counter);
        if (counter > config.unexpected_cap_bytes) {
          poisoned = "unexpected-message buffer for rank " + std::to_string(from) +
                     " exceeded cap (" + std::to_string(counter) + " bytes)";
          throw ProtocolError(*poisoned, from);
        }
        msg.payload = std::move(frame.payload);
      }
      unexpected.push_back(std::move(msg));
      return;
    }
    if (frame.kind == FrameKind::EagerData) {
      deliver_payload(*match, frame.envelope, frame.payload);
    } else {
      bind_rendezvous(match, frame.envelope);
    }
  }

  // Copies an arrived payload into the posted buffer and completes the
  // receive; a too-short buffer truncates and errors the request.
  void deliver_payload(CoreState& recv, const MessageEnvelope& envelope,
                       std::span<const std::byte> payload) {
    const std::uint64_t copy_len =
        std::min<std::uint64_t>(envelope.length, recv.recv_capacity);
    if (copy_len > 0)
      std::memcpy(recv.recv_buffer, payload.data(), copy_len);
    Status status;
    status.source = envelope.source;
    status.tag = envelope.tag;
    status.received_bytes = copy_len;
    const bool truncated = envelope.length > recv.recv_capacity;
    status.error = truncated ? StatusError::Truncated : StatusError::Ok;
    recv.envelope = envelope;
    complete(recv, status, truncated ? RequestPhase::Errored : RequestPhase::Complete);
  }

  // RTS matched a receive: answer CTS and remember the binding; the payload
  // arrives later as exactly one RDV_DATA frame.
  void bind_rendezvous(std::shared_ptr<CoreState> recv,
                       const MessageEnvelope& envelope) {
    recv->req_phase.store(RequestPhase::Matched, std::memory_order_release);
    recv->envelope = envelope;
    rdv_bindings.emplace(
        std::make_tuple(envelope.context_id, envelope.source, envelope.seq), recv);
    Frame cts;
    cts.kind = FrameKind::Cts;
    cts.envelope = envelope;
    mesh.send(envelope.source, cts);
    recv->req_phase.store(RequestPhase::Transferring, std::memory_order_release);
  }

  // CTS arrived: run the data phase for the matching rendezvous send in the
  // calling thread, then complete it.
  void handle_cts(const MessageEnvelope& envelope) {
    auto key = std::make_tuple(envelope.context_id, envelope.dest, envelope.seq);
    auto it = pending_rdv_sends.find(key);
    if (it == pending_rdv_sends.end()) {
      poisoned = "CTS without a pending rendezvous send (seq " +
                 std::to_string(envelope.seq) + ")";
      throw ProtocolError(*poisoned);
    }
    auto send = it->second;
    pending_rdv_sends.erase(it);
    send->req_phase.store(RequestPhase::Transferring, std::memory_order_release);
    Frame data;
    data.kind = FrameKind::RdvData;
    data.envelope = send->envelope;
    data.payload.assign(send->send_data, send->send_data + send->envelope.length);
    mesh.send(send->envelope.dest, data);
    Status status;
    status.source = send->envelope.source;
    status.tag = send->envelope.tag;
    status.received_bytes = send->envelope.length;
    status.error = StatusError::Ok;
    complete(*send, status, RequestPhase::Complete);
  }

  void handle_rdv_data(Frame&& frame) {
    auto key = std::make_tuple(frame.envelope.context_id, frame.envelope.source,
                               frame.envelope.seq);
    auto it = rdv_bindings.find(key);
    if (it == rdv_bindings.end()) {
      poisoned = "RDV_DATA without a prior matching CTS (seq " +
                 std::to_string(frame.envelope.seq) + ")";
      throw ProtocolError(*poisoned);
    }
    auto recv = it->second;
    rdv_bindings.erase(it);
    deliver_payload(*recv, frame.envelope, frame.payload);
  }
};

// ---------------------------------------------------------------------------

Runtime::Runtime(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}

Runtime::~Runtime() {
  if (impl_ && !impl_->finalized) {
    // Abandon politely; peers blocked in finalize see the stream close.
    impl_->mesh.close();
  }
  if (impl_ && impl_->env_guard_held)
    g_env_init_active.store(false);
}

std::unique_ptr<Runtime> Runtime::init(const JobSpec& job, ThreadLevel requested) {
  if (job.size < 1)
    throw UsageError("job size must be at least 1");
  if (job.rank < 0 || job.rank >= job.size)
    throw UsageError("rank out of range");

  auto impl = std::make_unique<Impl>();
  impl->my_rank = job.rank;
  impl->job_size = job.size;
  impl->config = job.config;
  impl->unexpected_bytes.assign(static_cast<std::size_t>(job.size), 0);
  impl->shutdown_from.assign(static_cast<std::size_t>(job.size), false);

  Impl* raw = impl.get();
  FrameSink sink = [raw](int from, Frame&& frame) {
    raw->push_frame(from, std::move(frame));
  };

  TransportConfig tcfg;
  tcfg.net_throttle_bps = job.config.net_throttle_bps;
  tcfg.connect_timeout = job.config.connect_timeout;

  if (job.backend == MeshBackend::Channel) {
    if (!job.hub)
      throw UsageError("channel backend requires a hub");
    if (job.hub->size() != job.size)
      throw UsageError("hub size disagrees with job size");
    impl->mesh = Mesh::establish(job.rank, job.hub, sink, tcfg);
  } else {
    if (static_cast<int>(job.endpoints.size()) != job.size)
      throw UsageError("endpoint list size disagrees with job size");
    std::optional<TcpListener> listener;
    if (job.listen_fd)
      listener = TcpListener::adopt(*job.listen_fd);
    impl->mesh = Mesh::establish(job.rank, job.endpoints, sink, tcfg,
                                 std::move(listener));
  }

  auto runtime = std::unique_ptr<Runtime>(new Runtime(std::move(impl)));
  runtime->world_.context_id = 0;
  runtime->world_.ranks.resize(static_cast<std::size_t>(job.size));
  for (int r = 0; r < job.size; ++r)
    runtime->world_.ranks[static_cast<std::size_t>(r)] = r;
  runtime->world_.my_rank = job.rank;
  runtime->config_ = job.config;
  runtime->requested_level_ = requested;
  return runtime;
}

std::unique_ptr<Runtime> Runtime::init_from_env(ThreadLevel requested) {
  bool expected = false;
  if (!g_env_init_active.compare_exchange_strong(expected, true))
    throw UsageError("double init: an environment-initialized runtime is already active");

  try {
    JobSpec job;
    job.rank = env::get_int("APR_RANK", 0);
    job.size = env::get_int("APR_SIZE", 1);
    job.backend = MeshBackend::Socket;
    job.config.eager_threshold =
        env::get_u64("APR_EAGER_THRESHOLD", job.config.eager_threshold);
    job.config.net_throttle_bps = env::get_u64("APR_NET_THROTTLE", 0);
    if (auto endpoints = env::get("APR_ENDPOINTS")) {
      int r = 0;
      for (const auto& item : env::split(*endpoints, ','))
        job.endpoints.push_back({r++, HostPort::parse(item)});
    } else if (job.size == 1) {
      job.endpoints.push_back({0, {"127.0.0.1", 0}});
    } else {
      throw ConfigError("APR_ENDPOINTS required for multi-rank jobs");
    }
    if (static_cast<int>(job.endpoints.size()) != job.size)
      throw ConfigError("APR_ENDPOINTS count disagrees with APR_SIZE");
    if (auto fd = env::get("APR_LISTEN_FD"))
      job.listen_fd = std::stoi(*fd);
    auto runtime = init(job, requested);
    runtime->impl_->env_guard_held = true;
    return runtime;
  } catch (...) {
    g_env_init_active.store(false);
    throw;
  }
}

// ---------------------------------------------------------------------------

namespace {

CoreState& need_core(Request& request, const char* what) {
  if (!request.valid())
    throw UsageError(std::string(what) + " on an empty request handle");
  auto* state = detail::Access::state(request).get();
  if (state->is_proxy())
    throw UsageError(std::string(what) + ": request does not belong to this runtime");
  return *static_cast<CoreState*>(state);
}

// Guards one test/wait call; trips on concurrent consumption attempts.
struct ConsumeGuard {
  explicit ConsumeGuard(CoreState& state) : state_(state) {
    if (state.was_consumed.load(std::memory_order_acquire))
      throw UsageError("request already consumed by a previous wait/test");
    bool expected = false;
    if (!state.consuming.compare_exchange_strong(expected, true))
      throw UsageError("concurrent test/wait on one request");
  }
  ~ConsumeGuard() { state_.consuming.store(false, std::memory_order_release); }
  CoreState& state_;
};

} // namespace

Request Runtime::isend(std::span<const std::byte> data, int dest, int tag,
                       const Communicator& comm) {
  if (impl_->finalized)
    throw UsageError("isend after finalize");
  if (dest < 0 || dest >= comm.size())
    throw UsageError("isend: dest rank " + std::to_string(dest) + " out of range");
  if (tag < 0)
    throw UsageError("isend: tag must be non-negative");

  auto state = std::make_shared<CoreState>();
  state->req_id = impl_->next_req_id.fetch_add(1);
  state->req_kind = RequestKind::Send;
  state->submitted_by = std::this_thread::get_id();
  state->envelope = {comm.context_id, tag, comm.my_rank, dest, 0, data.size()};
  state->send_data = data.data();

  const bool eager = data.size() <= impl_->config.eager_threshold;
  {
    std::lock_guard engine(impl_->engine_mu);
    impl_->throw_if_poisoned();
    state->envelope.seq = impl_->send_seq[{comm.context_id, dest}]++;
    if (eager) {
      Frame frame;
      frame.kind = FrameKind::EagerData;
      frame.envelope = state->envelope;
      frame.payload.assign(data.begin(), data.end());
      impl_->mesh.send(dest, frame);
      Status status{comm.my_rank, tag, data.size(), StatusError::Ok};
      state->status = status;
      state->req_phase.store(RequestPhase::Complete, std::memory_order_release);
      impl_->eager_sends.fetch_add(1, std::memory_order_relaxed);
    } else {
      impl_->outstanding.emplace(state->req_id, state);
      impl_->pending_rdv_sends.emplace(
          std::make_tuple(comm.context_id, dest, state->envelope.seq), state);
      Frame rts;
      rts.kind = FrameKind::Rts;
      rts.envelope = state->envelope;
      impl_->mesh.send(dest, rts);
      impl_->rendezvous_sends.fetch_add(1, std::memory_order_relaxed);
    }
  }
  if (eager)
    impl_->notify_activity();
  return Request(std::move(state));
}

Request Runtime::irecv(std::span<std::byte> buffer, int source, int tag,
                       const Communicator& comm) {
  if (impl_->finalized)
    throw UsageError("irecv after finalize");
  if (source != kAnySource && (source < 0 || source >= comm.size()))
    throw UsageError("irecv: source rank out of range");
  if (tag != kAnyTag && tag < 0)
    throw UsageError("irecv: tag must be non-negative or kAnyTag");

  auto state = std::make_shared<CoreState>();
  state->req_id = impl_->next_req_id.fetch_add(1);
  state->req_kind = RequestKind::Recv;
  state->submitted_by = std::this_thread::get_id();
  state->envelope = {comm.context_id, tag, source, comm.my_rank, 0, buffer.size()};
  state->recv_buffer = buffer.data();
  state->recv_capacity = buffer.size();

  bool completed = false;
  {
    std::lock_guard engine(impl_->engine_mu);
    impl_->throw_if_poisoned();
    impl_->outstanding.emplace(state->req_id, state);

    // Unexpected queue first, in arrival order.
    auto it = std::find_if(impl_->unexpected.begin(), impl_->unexpected.end(),
                           [&](const UnexpectedMsg& msg) {
                             return pattern_matches(state->envelope, msg.envelope);
                           });
    if (it != impl_->unexpected.end()) {
      UnexpectedMsg msg = std::move(*it);
      impl_->unexpected.erase(it);
      if (msg.kind == FrameKind::EagerData) {
        impl_->unexpected_bytes[static_cast<std::size_t>(msg.envelope.source)] -=
            msg.payload.size();
        impl_->deliver_payload(*state, msg.envelope, msg.payload);
        completed = true;
      } else {
        impl_->bind_rendezvous(state, msg.envelope);
      }
    } else {
      impl_->posted_recvs.push_back(state);
    }
  }
  if (completed)
    impl_->notify_activity();
  return Request(std::move(state));
}

std::optional<Status> Runtime::test(Request& request) {
  CoreState& state = need_core(request, "test");
  ConsumeGuard guard(state);
  if (!state.done()) {
    if (state.file_op) {
      if (auto status = state.file_op->step()) {
        std::lock_guard engine(impl_->engine_mu);
        impl_->complete(state, *status,
                        status->error == StatusError::Ok ? RequestPhase::Complete
                                                         : RequestPhase::Errored);
        impl_->notify_activity();
      }
    } else {
      impl_->progress_once();
    }
  }
  if (state.done()) {
    state.was_consumed.store(true, std::memory_order_release);
    return state.status;
  }
  return std::nullopt;
}

Status Runtime::wait(Request& request) {
  CoreState& state = need_core(request, "wait");
  ConsumeGuard guard(state);
  if (state.file_op) {
    while (!state.done()) {
      if (auto status = state.file_op->step()) {
        std::lock_guard engine(impl_->engine_mu);
        impl_->complete(state, *status,
                        status->error == StatusError::Ok ? RequestPhase::Complete
                                                         : RequestPhase::Errored);
        impl_->notify_activity();
      }
    }
  } else {
    while (!state.done()) {
      impl_->progress_once();
      if (state.done())
        break;
      std::unique_lock lock(impl_->inbox_mu);
      impl_->activity_cv.wait_for(lock, std::chrono::milliseconds(1), [&] {
        return !impl_->inbox.empty() || state.done();
      });
    }
  }
  state.was_consumed.store(true, std::memory_order_release);
  return state.status;
}

std::vector<std::pair<std::size_t, Status>> Runtime::test_some(std::span<Request> requests) {
  impl_->progress_once();
  std::vector<std::pair<std::size_t, Status>> completed;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    auto& r = requests[i];
    if (!r.valid() || r.consumed())
      continue;
    CoreState& state = need_core(r, "test_some");
    ConsumeGuard guard(state);
    if (!state.done() && state.file_op) {
      if (auto status = state.file_op->step()) {
        std::lock_guard engine(impl_->engine_mu);
        impl_->complete(state, *status,
                        status->error == StatusError::Ok ? RequestPhase::Complete
                                                         : RequestPhase::Errored);
        impl_->notify_activity();
      }
    }
    if (state.done()) {
      state.was_consumed.store(true, std::memory_order_release);
      completed.emplace_back(i, state.status);
    }
  }
  return completed;
}

std::optional<std::pair<std::size_t, Status>>
Runtime::wait_any_for(std::span<Request> requests, std::chrono::nanoseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  bool has_active = false;
  for (auto& r : requests)
    if (r.valid() && !r.consumed())
      has_active = true;
  if (!has_active)
    throw UsageError("wait_any over no active requests");
  for (;;) {
    auto completed = test_some(requests);
    if (!completed.empty())
      return completed.front();
    if (std::chrono::steady_clock::now() >= deadline)
      return std::nullopt;
    std::unique_lock lock(impl_->inbox_mu);
    impl_->activity_cv.wait_for(lock, std::chrono::milliseconds(1),
                                [&] { return !impl_->inbox.empty(); });
  }
}

std::pair<std::size_t, Status> Runtime::wait_any(std::span<Request> requests) {
  for (;;) {
    auto result = wait_any_for(requests, std::chrono::seconds(3600));
    if (result)
      return *result;
  }
}

void Runtime::wait_all(std::span<Request> requests) {
  for (auto& r : requests)
    if (r.valid() && !r.consumed())
      wait(r);
}

Request Runtime::submit_file_op(std::unique_ptr<FileOp> op) {
  if (impl_->finalized)
    throw UsageError("file operation after finalize");
  auto state = std::make_shared<CoreState>();
  state->req_id = impl_->next_req_id.fetch_add(1);
  state->req_kind = op->kind();
  state->submitted_by = std::this_thread::get_id();
  state->file_op = std::move(op);
  {
    std::lock_guard engine(impl_->engine_mu);
    impl_->outstanding.emplace(state->req_id, state);
  }
  return Request(std::move(state));
}

void Runtime::finalize() {
  if (impl_->finalized)
    throw UsageError("finalize called twice");
  {
    std::lock_guard engine(impl_->engine_mu);
    impl_->throw_if_poisoned();
    if (!impl_->outstanding.empty()) {
      std::ostringstream msg;
      msg << "finalize with outstanding incomplete requests:";
      for (const auto& [id, state] : impl_->outstanding)
        msg << " #" << id << "(" << to_string(state->req_kind) << ")";
      throw UsageError(msg.str());
    }
    Frame bye;
    bye.kind = FrameKind::Shutdown;
    bye.envelope.source = impl_->my_rank;
    for (int peer = 0; peer < impl_->job_size; ++peer)
      if (peer != impl_->my_rank)
        impl_->mesh.send(peer, bye);
  }
  // Drain until every peer has said goodbye; progress keeps serving any
  // in-flight rendezvous the peers still owe us nothing for.
  while (true) {
    {
      std::lock_guard engine(impl_->engine_mu);
      if (impl_->shutdowns_seen >= impl_->job_size - 1)
        break;
    }
    impl_->progress_once();
    std::unique_lock lock(impl_->inbox_mu);
    impl_->activity_cv.wait_for(lock, std::chrono::milliseconds(1),
                                [&] { return !impl_->inbox.empty(); });
  }
  impl_->mesh.close();
  impl_->finalized = true;
  if (impl_->env_guard_held) {
    g_env_init_active.store(false);
    impl_->env_guard_held = false;
  }
}

bool Runtime::finalized() const {
  return impl_->finalized;
}

RuntimeDiagnostics Runtime::diagnostics() const {
  RuntimeDiagnostics d;
  d.progress_calls = impl_->progress_calls.load();
  d.frames_handled = impl_->frames_handled.load();
  d.eager_sends = impl_->eager_sends.load();
  d.rendezvous_sends = impl_->rendezvous_sends.load();
  d.unexpected_bytes_peak = impl_->unexpected_bytes_peak;
  return d;
}

std::thread::id Runtime::submitting_thread(const Request& request) const {
  auto* core = detail::Access::core(request);
  if (!core)
    throw UsageError("submitting_thread: not a core request");
  return core->submitted_by;
}

} // namespace apr
