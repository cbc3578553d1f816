#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace apr::bench {

/// CPU-bound spin calibrated against the monotonic clock at startup. The run
/// is open loop (no clock polling), so interference shows up as a longer wall
/// time instead of being silently absorbed. Pure register arithmetic, no
/// memory traffic beyond L1.
class BusyWork {
public:
  static BusyWork calibrate();
  /// Process-wide instance, calibrated on first use.
  static const BusyWork& shared();

  void run_for(double seconds) const;
  double rounds_per_second() const { return rounds_per_second_; }

private:
  double rounds_per_second_ = 0;
};

/// The triad loop a(:) = b(:) * c(:) + d(:), sized to stay core-private.
/// Used as the ghost-cell workload; verifiable elementwise after a run.
class TriadWorkload {
public:
  TriadWorkload(std::size_t array_bytes, std::uint64_t seed);

  void run_once();
  /// Repeats full passes until the target is covered, open loop per pass.
  void run_for(double seconds);
  void calibrate();
  double seconds_per_pass() const { return seconds_per_pass_; }
  std::uint64_t passes() const { return passes_; }
  bool verify() const;

private:
  std::vector<double> a_, b_, c_, d_;
  double seconds_per_pass_ = 0;
  std::uint64_t passes_ = 0;
};

} // namespace apr::bench
