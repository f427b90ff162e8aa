#pragma once

// Shared helpers for the unit suites: scratch directories, seeded generators
// for property loops and closed-form oracles.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "epps/tcspc.hpp"

namespace epps::testing {

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("epps-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Uniform draws for property loops; the seed is fixed per test case so
// failures reproduce.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng_);
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// CDF of a Gaussian(mu, sigma) convolved with a unit-area exponential of
// lifetime tau (the exponentially modified Gaussian).
inline double exgauss_cdf(double t, double mu, double sigma, double tau) {
  const double lam = 1.0 / tau;
  const double z = (t - mu) / sigma;
  return normal_cdf(z) - std::exp(-lam * (t - mu) + 0.5 * lam * lam * sigma * sigma) * normal_cdf(z - lam * sigma);
}

// Gaussian IRF integrated over each bin.
inline tcspc::BasicHistogram<double> gaussian_irf(std::int64_t bin_ps, std::size_t n_bins, double mu_ps,
                                                  double fwhm_ps, double total = 1.0) {
  const double sigma = fwhm_ps / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  tcspc::BasicHistogram<double> h;
  h.bin_width_ps = bin_ps;
  h.counts.resize(n_bins);
  for (std::size_t i = 0; i < n_bins; ++i) {
    const double a = static_cast<double>(i) * static_cast<double>(bin_ps);
    const double b = a + static_cast<double>(bin_ps);
    h.counts[i] = total * (normal_cdf((b - mu_ps) / sigma) - normal_cdf((a - mu_ps) / sigma));
  }
  return h;
}

}  // namespace epps::testing
