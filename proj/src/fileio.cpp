#include "apr/fileio.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <mutex>

#include "apr/env.hpp"
#include "apr/error.hpp"
#include "apr/pacer.hpp"

namespace apr {

namespace {
constexpr std::uint64_t kDefaultChunk = 4ull << 20;
}

struct FileHandle::State {
  int fd = -1;
  FileMode mode = FileMode::Read;
  std::string path;
  std::uint64_t throttle_bps = 0;
  Pacer pacer{0};
  std::mutex pacer_mu;
  std::atomic<bool> write_busy{false};
  std::atomic<bool> read_busy{false};

  ~State() {
    if (fd >= 0)
      ::close(fd);
  }
};

FileHandle FileHandle::open(const std::string& path, FileMode mode,
                            std::optional<std::uint64_t> throttle_bps) {
  int flags = 0;
  switch (mode) {
  case FileMode::Read: flags = O_RDONLY; break;
  case FileMode::Write: flags = O_WRONLY | O_CREAT | O_TRUNC; break;
  case FileMode::ReadWrite: flags = O_RDWR | O_CREAT; break;
  }
  const int fd = ::open(path.c_str(), flags, 0644);
  if (fd < 0)
    throw UsageError("open '" + path + "': " + std::strerror(errno));

  FileHandle handle;
  handle.state_ = std::make_shared<State>();
  handle.state_->fd = fd;
  handle.state_->mode = mode;
  handle.state_->path = path;
  handle.state_->throttle_bps =
      throttle_bps ? *throttle_bps : env::get_u64("APR_IO_THROTTLE", 0);
  handle.state_->pacer = Pacer(handle.state_->throttle_bps);
  return handle;
}

const std::string& FileHandle::path() const { return state_->path; }
FileMode FileHandle::mode() const { return state_->mode; }
std::uint64_t FileHandle::throttle_bps() const { return state_->throttle_bps; }

std::uint64_t FileHandle::size() const {
  struct stat st{};
  if (::fstat(state_->fd, &st) != 0)
    throw UsageError("fstat '" + state_->path + "': " + std::strerror(errno));
  return static_cast<std::uint64_t>(st.st_size);
}

void FileHandle::close() {
  state_.reset();
}

namespace {

class TransferOp final : public detail::FileOp {
public:
  TransferOp(std::shared_ptr<FileHandle::State> file, RequestKind kind,
             std::uint64_t offset, std::byte* rbuf, const std::byte* wbuf,
             std::uint64_t len)
      : file_(std::move(file)), kind_(kind), offset_(offset), rbuf_(rbuf),
        wbuf_(wbuf), len_(len) {
    auto& busy = kind_ == RequestKind::FileWrite ? file_->write_busy : file_->read_busy;
    bool expected = false;
    if (!busy.compare_exchange_strong(expected, true))
      throw UsageError("another " + std::string(to_string(kind_)) +
                       " is already in flight on '" + file_->path + "'");
  }

  ~TransferOp() override {
    release_busy();
  }

  RequestKind kind() const override { return kind_; }

  std::optional<Status> step() override {
    if (finished_)
      return status_;
    std::lock_guard pace_lock(file_->pacer_mu);
    const std::uint64_t chunk = file_->pacer.window_chunk(kDefaultChunk);
    const std::uint64_t n = std::min<std::uint64_t>(chunk, len_ - done_);
    ssize_t got = 0;
    if (n > 0) {
      if (kind_ == RequestKind::FileWrite)
        got = ::pwrite(file_->fd, wbuf_ + done_, n,
                       static_cast<off_t>(offset_ + done_));
      else
        got = ::pread(file_->fd, rbuf_ + done_, n,
                      static_cast<off_t>(offset_ + done_));
    }
    if (got < 0) {
      if (errno == EINTR)
        return std::nullopt;
      return finish(StatusError::Protocol);
    }
    done_ += static_cast<std::uint64_t>(got);
    file_->pacer.pace(static_cast<std::uint64_t>(got));
    // A short read means EOF: complete with what we have, not an error.
    const bool eof_read = kind_ == RequestKind::FileRead &&
                          static_cast<std::uint64_t>(got) < n;
    if (done_ >= len_ || eof_read || n == 0)
      return finish(StatusError::Ok);
    return std::nullopt;
  }

  std::string describe() const override {
    return std::string(to_string(kind_)) + " " + std::to_string(len_) +
           " bytes at " + std::to_string(offset_) + " on '" + file_->path + "'";
  }

private:
  std::optional<Status> finish(StatusError error) {
    status_.source = -1;
    status_.tag = -1;
    status_.received_bytes = done_;
    status_.error = error;
    finished_ = true;
    release_busy();
    return status_;
  }

  void release_busy() {
    if (busy_released_)
      return;
    busy_released_ = true;
    auto& busy = kind_ == RequestKind::FileWrite ? file_->write_busy : file_->read_busy;
    busy.store(false);
  }

  std::shared_ptr<FileHandle::State> file_;
  RequestKind kind_;
  std::uint64_t offset_;
  std::byte* rbuf_;
  const std::byte* wbuf_;
  std::uint64_t len_;
  std::uint64_t done_ = 0;
  bool finished_ = false;
  bool busy_released_ = false;
  Status status_;
};

} // namespace

std::unique_ptr<detail::FileOp> make_iwrite_op(FileHandle& file, std::uint64_t offset,
                                               std::span<const std::byte> data) {
  if (!file.valid())
    throw UsageError("iwrite_at on a closed file");
  if (file.mode() == FileMode::Read)
    throw UsageError("iwrite_at on a read-only file");
  return std::make_unique<TransferOp>(file.state_, RequestKind::FileWrite, offset,
                                      nullptr, data.data(), data.size());
}

std::unique_ptr<detail::FileOp> make_iread_op(FileHandle& file, std::uint64_t offset,
                                              std::span<std::byte> buffer) {
  if (!file.valid())
    throw UsageError("iread_at on a closed file");
  if (file.mode() == FileMode::Write)
    throw UsageError("iread_at on a write-only file");
  return std::make_unique<TransferOp>(file.state_, RequestKind::FileRead, offset,
                                      buffer.data(), nullptr, buffer.size());
}

Request iwrite_at(Runtime& runtime, FileHandle& file, std::uint64_t offset,
                  std::span<const std::byte> data) {
  return runtime.submit_file_op(make_iwrite_op(file, offset, data));
}

Request iread_at(Runtime& runtime, FileHandle& file, std::uint64_t offset,
                 std::span<std::byte> buffer) {
  return runtime.submit_file_op(make_iread_op(file, offset, buffer));
}

} // namespace apr
