#pragma once

#include <chrono>
#include <cstdint>
#include <thread>

namespace apr {

/// Paces a byte stream to a target rate by sleeping the caller. The clock
/// starts at the first byte and resets after an idle gap, so bursts separated
/// by silence each see the full rate instead of an accumulated credit.
class Pacer {
public:
  using clock = std::chrono::steady_clock;

  explicit Pacer(std::uint64_t bytes_per_second = 0) : rate_(bytes_per_second) {}

  std::uint64_t rate() const { return rate_; }
  bool enabled() const { return rate_ > 0; }

  /// Account `n` bytes and sleep until they would have drained at the rate.
  void pace(std::uint64_t n) {
    if (rate_ == 0 || n == 0)
      return;
    const auto now = clock::now();
    if (credit_until_ < now)
      credit_until_ = now;
    credit_until_ += std::chrono::nanoseconds(
        static_cast<std::int64_t>(1e9 * static_cast<double>(n) /
                                  static_cast<double>(rate_)));
    std::this_thread::sleep_until(credit_until_);
  }

  /// Chunk size that keeps any 100 ms window within one chunk of the cap.
  std::uint64_t window_chunk(std::uint64_t preferred) const {
    if (rate_ == 0)
      return preferred;
    const std::uint64_t per_window = rate_ / 10;
    return std::max<std::uint64_t>(1, std::min(preferred, per_window));
  }

private:
  std::uint64_t rate_;
  clock::time_point credit_until_{};
};

} // namespace apr
