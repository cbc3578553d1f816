#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "apr/detail/request_state.hpp"
#include "apr/runtime.hpp"

namespace apr {

enum class FileMode { Read, Write, ReadWrite };

/// Non-blocking file I/O with request handles. A rate throttle (bytes/second)
/// substitutes for real disk latency so overlap experiments are reproducible
/// on a laptop; throttled transfers never exceed the cap over any 100 ms
/// window by more than one chunk.
///
/// One in-flight operation per handle per direction; violations are usage
/// errors. Operations are chunked internally (default 4 MiB) so throttling
/// and cancellation points exist.
class FileHandle {
public:
  FileHandle() = default;

  /// Write mode truncates. `throttle_bps` of nullopt reads APR_IO_THROTTLE;
  /// 0 disables throttling.
  static FileHandle open(const std::string& path, FileMode mode,
                         std::optional<std::uint64_t> throttle_bps = std::nullopt);

  bool valid() const { return state_ != nullptr; }
  const std::string& path() const;
  FileMode mode() const;
  std::uint64_t throttle_bps() const;
  std::uint64_t size() const;
  void close();

private:
  friend std::unique_ptr<detail::FileOp>
  make_iwrite_op(FileHandle&, std::uint64_t, std::span<const std::byte>);
  friend std::unique_ptr<detail::FileOp> make_iread_op(FileHandle&, std::uint64_t,
                                                       std::span<std::byte>);
  struct State;
  std::shared_ptr<State> state_;
};

/// Descriptor-only constructors; nothing executes until the op is submitted
/// and stepped. The shim hands these to its progress thread so that even the
/// submission happens off the application thread.
std::unique_ptr<detail::FileOp> make_iwrite_op(FileHandle& file, std::uint64_t offset,
                                               std::span<const std::byte> data);
std::unique_ptr<detail::FileOp> make_iread_op(FileHandle& file, std::uint64_t offset,
                                              std::span<std::byte> buffer);

/// Returns a request that completes when the bytes are written through to the
/// OS; short reads at EOF complete with received_bytes < requested.
Request iwrite_at(Runtime& runtime, FileHandle& file, std::uint64_t offset,
                  std::span<const std::byte> data);
Request iread_at(Runtime& runtime, FileHandle& file, std::uint64_t offset,
                 std::span<std::byte> buffer);

} // namespace apr
