#pragma once

// Small numeric helpers shared by the analysis modules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace epps {

inline constexpr double kSpeedOfLightUmPerFs = 0.299792458;
inline constexpr double kSpeedOfLightNmPerFs = 299.792458;
// FWHM = kFwhmPerSigma * sigma for a Gaussian.
inline const double kFwhmPerSigma = 2.0 * std::sqrt(2.0 * std::numbers::ln2);

inline double sinc(double x) {
  if (std::abs(x) < 1e-8) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

// Index of the largest element (first one on ties).
inline std::size_t argmax(std::span<const double> y) {
  return static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
}

// Sub-sample peak location by a parabola through the maximum and its
// neighbours. Falls back to the grid point at the edges.
inline double peak_position(std::span<const double> x, std::span<const double> y) {
  const std::size_t i = argmax(y);
  if (i == 0 || i + 1 >= y.size()) return x[i];
  const double y0 = y[i - 1], y1 = y[i], y2 = y[i + 1];
  const double denom = y0 - 2.0 * y1 + y2;
  if (denom >= 0.0) return x[i];
  const double d = 0.5 * (y0 - y2) / denom;
  // Non-uniform grids: interpolate between the neighbouring abscissae.
  return d >= 0.0 ? x[i] + d * (x[i + 1] - x[i]) : x[i] + d * (x[i] - x[i - 1]);
}

// Full width at half maximum between the outermost half-maximum crossings,
// linearly interpolated. Returns nullopt if the curve never drops below half
// maximum on one side (the width is then not resolved on the grid).
inline std::optional<double> fwhm(std::span<const double> x, std::span<const double> y) {
  if (y.size() < 3) return std::nullopt;
  const std::size_t ipk = argmax(y);
  const double half = 0.5 * y[ipk];
  if (!(half > 0.0)) return std::nullopt;

  std::size_t lo = 0;
  while (lo < ipk && y[lo] < half) ++lo;
  std::size_t hi = y.size() - 1;
  while (hi > ipk && y[hi] < half) --hi;
  if (lo == 0 || hi == y.size() - 1) return std::nullopt;

  const auto cross = [&](std::size_t a, std::size_t b) {
    return x[a] + (half - y[a]) * (x[b] - x[a]) / (y[b] - y[a]);
  };
  return cross(hi, hi + 1) - cross(lo - 1, lo);
}

// Centroid sum(x*y)/sum(y).
inline double centroid(std::span<const double> x, std::span<const double> y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += x[i] * y[i];
    den += y[i];
  }
  return den > 0.0 ? num / den : std::nan("");
}

// Uniform grid [lo, hi] with the given step; hi is included when it lands on
// the grid within 1e-9 steps.
inline std::vector<double> linspace_step(double lo, double hi, double step) {
  std::vector<double> g;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  g.reserve(n);
  for (std::size_t i = 0; i < n; ++i) g.push_back(lo + static_cast<double>(i) * step);
  return g;
}

}  // namespace epps
