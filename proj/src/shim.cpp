#include "apr/shim.hpp"

#include <pthread.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "apr/detail/request_state.hpp"
#include "apr/env.hpp"
#include "apr/error.hpp"

namespace apr {

namespace detail {

/// The generalized-request stand-in returned to the application. Mirrors the
/// underlying request's status byte for byte once the progress thread marks
/// it completed.
struct ProxyState final : OpState {
  RequestKind op_kind = RequestKind::Send;
  std::uint64_t proxy_id = 0;
  std::atomic<RequestPhase> mirrored{RequestPhase::Pending};
  std::atomic<bool> completed{false};
  Status final_status; // stable once `completed` is set (release/acquire)
  std::atomic<bool> was_consumed{false};
  std::atomic<bool> consuming{false};

  bool is_proxy() const override { return true; }
  RequestKind kind() const override { return op_kind; }
  RequestPhase phase() const override {
    return mirrored.load(std::memory_order_acquire);
  }
  std::uint64_t id() const override { return proxy_id; }
  bool consumed() const override {
    return was_consumed.load(std::memory_order_acquire);
  }
};

} // namespace detail

using detail::ProxyState;

std::vector<int> parse_affinity(std::string_view spec) {
  std::vector<int> cores;
  if (spec.empty())
    return cores;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto pos = spec.find('_', start);
    const auto token = spec.substr(start, pos == std::string_view::npos
                                              ? std::string_view::npos
                                              : pos - start);
    if (token.empty())
      throw ConfigError("affinity list has an empty token");
    int value = 0;
    for (char c : token) {
      if (c < '0' || c > '9')
        throw ConfigError("affinity token '" + std::string(token) +
                          "' is not a non-negative integer");
      value = value * 10 + (c - '0');
    }
    cores.push_back(value);
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return cores;
}

ShimConfig ShimConfig::from_env() {
  ShimConfig cfg;
  cfg.enabled = env::get_flag("APR_ASYNC", true);
  if (auto list = env::get("APR_ASYNC_CPU_LIST"))
    cfg.affinity_list = parse_affinity(*list);
  if (auto thr = env::get("APR_EAGER_THRESHOLD"))
    cfg.eager_threshold = env::get_u64("APR_EAGER_THRESHOLD", 262144);
  cfg.local_index = env::get_int("APR_LOCAL_INDEX", 0);
  if (auto ws = env::get("APR_WAITSET")) {
    if (*ws == "test_some")
      cfg.waitset = WaitsetStrategy::TestSome;
    else if (*ws == "wait_any")
      cfg.waitset = WaitsetStrategy::WaitAny;
    else
      throw ConfigError("APR_WAITSET='" + *ws + "' (want test_some|wait_any)");
  }
  return cfg;
}

// ---------------------------------------------------------------------------

struct ProgressShim::Impl {
  // Pending FIFO consumed by the progress thread. A point-to-point entry
  // carries the already-submitted underlying request; a file entry carries
  // only a descriptor, submitted by the progress thread itself.
  struct PendingEntry {
    std::shared_ptr<ProxyState> proxy;
    Request underlying;                   // p2p
    std::unique_ptr<detail::FileOp> op;   // file
  };

  std::mutex queue_mu;
  std::condition_variable queue_cv;
  std::deque<PendingEntry> queue;
  bool shutdown = false;

  std::mutex proxy_mu;
  std::condition_variable proxy_cv;
  std::set<std::uint64_t> live_proxies; // enqueued or delivered, not yet consumed

  std::thread progress;
  std::atomic<std::uint64_t> next_proxy_id{1};
  std::atomic<std::uint64_t> enqueues{0};
  std::atomic<std::uint64_t> bypassed{0};
  std::atomic<std::uint64_t> polls{0};
  std::atomic<std::uint64_t> completed{0};
  std::atomic<bool> running{false};
  std::atomic<bool> affinity_applied{false};

  void deliver(ProxyState& proxy, const Status& status) {
    proxy.final_status = status;
    proxy.mirrored.store(status.error == StatusError::Ok ? RequestPhase::Complete
                                                         : RequestPhase::Errored,
                         std::memory_order_release);
    proxy.completed.store(true, std::memory_order_release);
    completed.fetch_add(1, std::memory_order_relaxed);
    {
      std::lock_guard lock(proxy_mu);
    }
    proxy_cv.notify_all();
  }
};

ProgressShim::ProgressShim(const JobSpec& job, ThreadLevel requested,
                           std::optional<ShimConfig> config)
    : ProgressShim(nullptr, config ? *config : ShimConfig::from_env()) {
  (void)requested; // the MULTIPLE level is enforced no matter what was asked
  JobSpec adjusted = job;
  if (config_.eager_threshold)
    adjusted.config.eager_threshold = *config_.eager_threshold;
  runtime_ = Runtime::init(adjusted, ThreadLevel::Multiple);
  if (runtime_->thread_level() != ThreadLevel::Multiple)
    throw StartupError("runtime does not support the MULTIPLE thread level");
  bypass_threshold_ = runtime_->config().eager_threshold;
  start();
}

ProgressShim::ProgressShim(std::unique_ptr<Runtime> runtime, ShimConfig config)
    : runtime_(std::move(runtime)), config_(std::move(config)),
      impl_(std::make_unique<Impl>()) {
  if (runtime_) {
    bypass_threshold_ = config_.eager_threshold ? *config_.eager_threshold
                                                : runtime_->config().eager_threshold;
    start();
  }
}

void ProgressShim::start() {
  if (!config_.enabled)
    return;
  impl_->running.store(true);
  impl_->progress = std::thread([this] {
    if (!config_.affinity_list.empty() &&
        config_.local_index < static_cast<int>(config_.affinity_list.size())) {
      const int core = config_.affinity_list[static_cast<std::size_t>(config_.local_index)];
      cpu_set_t set;
      CPU_ZERO(&set);
      CPU_SET(static_cast<unsigned>(core), &set);
      if (pthread_setaffinity_np(pthread_self(), sizeof(set), &set) == 0)
        impl_->affinity_applied.store(true);
      // Failure is fine: affinity is best-effort and never affects correctness.
    }
    progress_main();
  });
}

ProgressShim::~ProgressShim() {
  if (impl_ && impl_->running.load()) {
    {
      std::lock_guard lock(impl_->queue_mu);
      impl_->shutdown = true;
    }
    impl_->queue_cv.notify_all();
    if (impl_->progress.joinable())
      impl_->progress.join();
  }
}

void ProgressShim::progress_main() {
  std::vector<Request> working;
  std::vector<std::shared_ptr<ProxyState>> proxies;
  auto backoff = config_.backoff_min;

  const auto remove_completed =
      [&](const std::vector<std::pair<std::size_t, Status>>& done) {
        // Indices are ascending; erase from the back.
        for (auto it = done.rbegin(); it != done.rend(); ++it) {
          impl_->deliver(*proxies[it->first], it->second);
          working.erase(working.begin() + static_cast<long>(it->first));
          proxies.erase(proxies.begin() + static_cast<long>(it->first));
        }
      };

  for (;;) {
    {
      std::unique_lock lock(impl_->queue_mu);
      if (queue_empty_locked() && working.empty()) {
        // Idle: block until new work or shutdown; no polling, no CPU.
        impl_->queue_cv.wait(lock, [&] { return impl_->shutdown || !impl_->queue.empty(); });
      }
      if (impl_->shutdown && impl_->queue.empty() && working.empty())
        break;
      while (!impl_->queue.empty()) {
        auto entry = std::move(impl_->queue.front());
        impl_->queue.pop_front();
        lock.unlock();
        if (entry.op) {
          // File submission deliberately happens here, on the progress thread.
          entry.underlying = runtime_->submit_file_op(std::move(entry.op));
        }
        working.push_back(std::move(entry.underlying));
        proxies.push_back(std::move(entry.proxy));
        lock.lock();
      }
    }
    if (working.empty())
      continue;

    impl_->polls.fetch_add(1, std::memory_order_relaxed);
    if (config_.waitset == WaitsetStrategy::TestSome) {
      auto done = runtime_->test_some(working);
      if (done.empty()) {
        std::this_thread::sleep_for(backoff);
        backoff = std::min(backoff * 2, config_.backoff_max);
      } else {
        backoff = config_.backoff_min;
        remove_completed(done);
      }
    } else {
      auto done = runtime_->wait_any_for(
          working, std::chrono::duration_cast<std::chrono::nanoseconds>(
                       config_.backoff_max));
      if (done)
        remove_completed({*done});
    }
  }
}

bool ProgressShim::queue_empty_locked() const {
  return impl_->queue.empty();
}

Request ProgressShim::make_proxy(Request underlying, RequestKind kind,
                                 std::unique_ptr<detail::FileOp> op) {
  auto proxy = std::make_shared<ProxyState>();
  proxy->op_kind = kind;
  proxy->proxy_id = impl_->next_proxy_id.fetch_add(1);
  {
    std::lock_guard lock(impl_->proxy_mu);
    impl_->live_proxies.insert(proxy->proxy_id);
  }
  {
    std::lock_guard lock(impl_->queue_mu);
    Impl::PendingEntry entry;
    entry.proxy = proxy;
    entry.underlying = std::move(underlying);
    entry.op = std::move(op);
    impl_->queue.push_back(std::move(entry));
    impl_->enqueues.fetch_add(1, std::memory_order_relaxed);
  }
  impl_->queue_cv.notify_one();
  return detail::Access::wrap(proxy);
}

Request ProgressShim::isend(std::span<const std::byte> data, int dest, int tag,
                            const Communicator& comm) {
  // The underlying call always runs in the caller's thread; deferring it to
  // the progress thread would deadlock matching self sends (the rule this
  // whole layer is built around).
  Request underlying = runtime_->isend(data, dest, tag, comm);
  if (!config_.enabled || data.size() <= bypass_threshold_) {
    impl_->bypassed.fetch_add(1, std::memory_order_relaxed);
    return underlying;
  }
  return make_proxy(std::move(underlying), RequestKind::Send, nullptr);
}

Request ProgressShim::irecv(std::span<std::byte> buffer, int source, int tag,
                            const Communicator& comm) {
  Request underlying = runtime_->irecv(buffer, source, tag, comm);
  if (!config_.enabled || buffer.size() <= bypass_threshold_) {
    impl_->bypassed.fetch_add(1, std::memory_order_relaxed);
    return underlying;
  }
  return make_proxy(std::move(underlying), RequestKind::Recv, nullptr);
}

Request ProgressShim::file_iwrite(FileHandle& file, std::uint64_t offset,
                                  std::span<const std::byte> data) {
  auto op = make_iwrite_op(file, offset, data);
  if (!config_.enabled)
    return runtime_->submit_file_op(std::move(op));
  return make_proxy(Request(), RequestKind::FileWrite, std::move(op));
}

Request ProgressShim::file_iread(FileHandle& file, std::uint64_t offset,
                                 std::span<std::byte> buffer) {
  auto op = make_iread_op(file, offset, buffer);
  if (!config_.enabled)
    return runtime_->submit_file_op(std::move(op));
  return make_proxy(Request(), RequestKind::FileRead, std::move(op));
}

namespace {

ProxyState* as_proxy(Request& request) {
  if (!request.valid())
    throw UsageError("empty request handle");
  auto state = detail::Access::state(request);
  return state->is_proxy() ? static_cast<ProxyState*>(state.get()) : nullptr;
}

struct ProxyConsumeGuard {
  explicit ProxyConsumeGuard(ProxyState& proxy) : proxy_(proxy) {
    if (proxy.was_consumed.load(std::memory_order_acquire))
      throw UsageError("proxy request already consumed");
    bool expected = false;
    if (!proxy.consuming.compare_exchange_strong(expected, true))
      throw UsageError("concurrent test/wait on one proxy request");
  }
  ~ProxyConsumeGuard() { proxy_.consuming.store(false, std::memory_order_release); }
  ProxyState& proxy_;
};

} // namespace

void ProgressShim::consume_proxy(ProxyState& proxy) {
  proxy.was_consumed.store(true, std::memory_order_release);
  std::lock_guard lock(impl_->proxy_mu);
  impl_->live_proxies.erase(proxy.proxy_id);
}

std::optional<Status> ProgressShim::test(Request& request) {
  ProxyState* proxy = as_proxy(request);
  if (!proxy)
    return runtime_->test(request);
  ProxyConsumeGuard guard(*proxy);
  if (!proxy->completed.load(std::memory_order_acquire))
    return std::nullopt;
  consume_proxy(*proxy);
  return proxy->final_status;
}

Status ProgressShim::wait(Request& request) {
  ProxyState* proxy = as_proxy(request);
  if (!proxy)
    return runtime_->wait(request);
  // Block on the completed flag only. Calling the underlying wait here would
  // race the progress thread, which owns the underlying request.
  ProxyConsumeGuard guard(*proxy);
  {
    std::unique_lock lock(impl_->proxy_mu);
    impl_->proxy_cv.wait(lock, [&] {
      return proxy->completed.load(std::memory_order_acquire);
    });
  }
  consume_proxy(*proxy);
  return proxy->final_status;
}

std::vector<std::pair<std::size_t, Status>>
ProgressShim::test_some(std::span<Request> requests) {
  std::vector<std::pair<std::size_t, Status>> out;
  std::vector<Request*> cores;
  std::vector<std::size_t> core_idx;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    auto& r = requests[i];
    if (!r.valid() || r.consumed())
      continue;
    if (ProxyState* proxy = as_proxy(r)) {
      ProxyConsumeGuard guard(*proxy);
      if (proxy->completed.load(std::memory_order_acquire)) {
        consume_proxy(*proxy);
        out.emplace_back(i, proxy->final_status);
      }
    } else {
      cores.push_back(&r);
      core_idx.push_back(i);
    }
  }
  if (!cores.empty()) {
    // Gather core requests into one contiguous waitset call.
    std::vector<Request> local;
    local.reserve(cores.size());
    for (auto* r : cores)
      local.push_back(std::move(*r));
    auto done = runtime_->test_some(local);
    for (std::size_t k = 0; k < local.size(); ++k)
      *cores[k] = std::move(local[k]);
    for (auto& [k, status] : done)
      out.emplace_back(core_idx[k], status);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::pair<std::size_t, Status> ProgressShim::wait_any(std::span<Request> requests) {
  bool any_active = false;
  for (auto& r : requests)
    if (r.valid() && !r.consumed())
      any_active = true;
  if (!any_active)
    throw UsageError("wait_any over no active requests");
  for (;;) {
    auto done = test_some(requests);
    if (!done.empty())
      return done.front();
    std::unique_lock lock(impl_->proxy_mu);
    impl_->proxy_cv.wait_for(lock, std::chrono::milliseconds(1));
  }
}

void ProgressShim::wait_all(std::span<Request> requests) {
  for (auto& r : requests)
    if (r.valid() && !r.consumed())
      wait(r);
}

void ProgressShim::finalize() {
  if (runtime_->finalized())
    throw UsageError("shim finalize called twice");
  if (config_.enabled) {
    {
      std::lock_guard lock(impl_->proxy_mu);
      if (!impl_->live_proxies.empty()) {
        std::ostringstream msg;
        msg << "finalize with unconsumed proxy requests:";
        for (auto id : impl_->live_proxies)
          msg << " proxy#" << id;
        throw UsageError(msg.str());
      }
    }
    {
      std::lock_guard lock(impl_->queue_mu);
      impl_->shutdown = true;
    }
    impl_->queue_cv.notify_all();
    if (impl_->progress.joinable())
      impl_->progress.join(); // progress thread stops before the runtime goes down
    impl_->running.store(false);
  }
  runtime_->finalize();
}

bool ProgressShim::finalized() const {
  return runtime_->finalized();
}

ShimDiagnostics ProgressShim::diagnostics() const {
  ShimDiagnostics d;
  d.proxy_enqueues = impl_->enqueues.load();
  d.bypassed = impl_->bypassed.load();
  d.progress_polls = impl_->polls.load();
  d.proxies_completed = impl_->completed.load();
  d.progress_thread_running = impl_->running.load();
  d.affinity_applied = impl_->affinity_applied.load();
  return d;
}

} // namespace apr
