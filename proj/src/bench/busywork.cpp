#include "apr/bench/busywork.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "apr/error.hpp"

namespace apr::bench {

namespace {

using clock = std::chrono::steady_clock;

// Dependent xorshift chain; the result is sunk through a volatile so the
// whole loop cannot be folded away.
std::uint64_t spin_rounds(std::uint64_t rounds) {
  std::uint64_t x = 0x9E3779B97F4A7C15ull;
  for (std::uint64_t i = 0; i < rounds; ++i) {
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
  }
  return x;
}

volatile std::uint64_t g_sink;

double seconds_since(clock::time_point t0) {
  return std::chrono::duration<double>(clock::now() - t0).count();
}

} // namespace

BusyWork BusyWork::calibrate() {
  constexpr std::uint64_t probe = 1u << 22;
  double best = 1e9;
  for (int trial = 0; trial < 7; ++trial) {
    const auto t0 = clock::now();
    g_sink = spin_rounds(probe);
    best = std::min(best, seconds_since(t0));
  }
  BusyWork bw;
  bw.rounds_per_second_ = static_cast<double>(probe) / best;
  return bw;
}

const BusyWork& BusyWork::shared() {
  static const BusyWork instance = calibrate();
  return instance;
}

void BusyWork::run_for(double seconds) const {
  if (seconds <= 0)
    return;
  const auto rounds = static_cast<std::uint64_t>(seconds * rounds_per_second_);
  g_sink = spin_rounds(rounds);
}

TriadWorkload::TriadWorkload(std::size_t array_bytes, std::uint64_t seed) {
  const std::size_t n = std::max<std::size_t>(array_bytes / sizeof(double), 1);
  a_.assign(n, 0.0);
  b_.resize(n);
  c_.resize(n);
  d_.resize(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.5, 2.0);
  for (std::size_t i = 0; i < n; ++i) {
    b_[i] = dist(rng);
    c_[i] = dist(rng);
    d_[i] = dist(rng);
  }
}

void TriadWorkload::run_once() {
  double* __restrict a = a_.data();
  const double* __restrict b = b_.data();
  const double* __restrict c = c_.data();
  const double* __restrict d = d_.data();
  const std::size_t n = a_.size();
  for (std::size_t i = 0; i < n; ++i)
    a[i] = b[i] * c[i] + d[i];
  ++passes_;
  g_sink = static_cast<std::uint64_t>(a[n / 2]);
}

void TriadWorkload::calibrate() {
  run_once(); // warm the arrays
  constexpr int probes = 64;
  const auto t0 = clock::now();
  for (int i = 0; i < probes; ++i)
    run_once();
  seconds_per_pass_ = seconds_since(t0) / probes;
}

void TriadWorkload::run_for(double seconds) {
  if (seconds_per_pass_ <= 0)
    calibrate();
  const auto target = static_cast<std::uint64_t>(
      std::max(1.0, seconds / seconds_per_pass_));
  for (std::uint64_t i = 0; i < target; ++i)
    run_once();
}

bool TriadWorkload::verify() const {
  for (std::size_t i = 0; i < a_.size(); ++i)
    if (a_[i] != b_[i] * c_[i] + d_[i])
      return false;
  return passes_ > 0;
}

} // namespace apr::bench
