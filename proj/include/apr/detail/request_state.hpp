#pragma once

// Internal request representation shared by the runtime, the shim and the
// fileio module. Not part of the stable surface.

#include <atomic>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "apr/runtime.hpp"
#include "apr/wire.hpp"

namespace apr::detail {

struct OpState {
  virtual ~OpState() = default;
  virtual bool is_proxy() const = 0;
  virtual RequestKind kind() const = 0;
  virtual RequestPhase phase() const = 0;
  virtual std::uint64_t id() const = 0;
  virtual bool consumed() const = 0;
};

/// One chunked file operation. step() performs one bounded unit of work and
/// returns the final status once the operation is done.
class FileOp {
public:
  virtual ~FileOp() = default;
  virtual RequestKind kind() const = 0;
  virtual std::optional<Status> step() = 0;
  virtual std::string describe() const = 0;
};

struct CoreState final : OpState {
  std::uint64_t req_id = 0;
  RequestKind req_kind = RequestKind::Send;
  std::atomic<RequestPhase> req_phase{RequestPhase::Pending};

  MessageEnvelope envelope; // receive patterns may hold wildcards until matched

  std::byte* recv_buffer = nullptr;
  std::size_t recv_capacity = 0;
  const std::byte* send_data = nullptr;

  // Valid once req_phase is Complete/Errored (phase store is the release).
  Status status;

  std::thread::id submitted_by;
  std::unique_ptr<FileOp> file_op;

  std::atomic<bool> was_consumed{false};
  std::atomic<bool> consuming{false};

  bool is_proxy() const override { return false; }
  RequestKind kind() const override { return req_kind; }
  RequestPhase phase() const override {
    return req_phase.load(std::memory_order_acquire);
  }
  std::uint64_t id() const override { return req_id; }
  bool consumed() const override {
    return was_consumed.load(std::memory_order_acquire);
  }

  bool done() const {
    const auto p = phase();
    return p == RequestPhase::Complete || p == RequestPhase::Errored;
  }
};

/// Test-only accessor; definitions live with the tests.
struct Access {
  static std::shared_ptr<OpState> state(const Request& r) { return r.state_; }
  static CoreState* core(const Request& r) {
    return r.state_ && !r.state_->is_proxy() ? static_cast<CoreState*>(r.state_.get())
                                             : nullptr;
  }
  static Request wrap(std::shared_ptr<OpState> state) {
    return Request(std::move(state));
  }
};

} // namespace apr::detail
