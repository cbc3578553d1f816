#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "apr/error.hpp"

namespace apr::bench {

struct LinearFit {
  double slope = 0;
  double intercept = 0;
};

/// Ordinary least squares of y over x. Needs at least two distinct x values.
inline LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw UsageError("least_squares needs at least two (x, y) pairs");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double det = n * sxx - sx * sx;
  if (det == 0)
    throw UsageError("least_squares: all x values identical");
  LinearFit fit;
  fit.slope = (n * sxy - sx * sy) / det;
  fit.intercept = (sy - fit.slope * sx) / n;
  return fit;
}

/// The fitted communication model t_c(V) = V / B_N + t_l.
struct OverlapModel {
  double bandwidth_bps = 0; // B_N
  double latency_s = 0;     // t_l

  double t_c(std::uint64_t volume_bytes) const {
    return static_cast<double>(volume_bytes) / bandwidth_bps + latency_s;
  }
};

/// Fits the model from (volume, one-way seconds) samples.
inline OverlapModel fit_overlap_model(std::span<const double> volumes,
                                      std::span<const double> seconds) {
  const LinearFit fit = least_squares(volumes, seconds);
  if (fit.slope <= 0)
    throw UsageError("overlap model fit produced non-positive bandwidth");
  OverlapModel model;
  model.bandwidth_bps = 1.0 / fit.slope;
  model.latency_s = std::max(fit.intercept, 0.0);
  return model;
}

inline double median(std::vector<double> values) {
  if (values.empty())
    throw UsageError("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

} // namespace apr::bench
