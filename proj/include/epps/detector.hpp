#pragma once

// Single-photon detector response: efficiency thinning, Gaussian timing
// jitter, fixed cable delay, Poisson dark counts and non-paralyzable dead
// time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epps/error.hpp"
#include "epps/events.hpp"
#include "epps/numeric.hpp"

namespace epps::sim {

struct DetectorModel {
  double efficiency = 1.0;
  double jitter_fwhm_ps = 0.0;
  double dead_time_ns = 0.0;
  double dark_rate_hz = 0.0;
  double cable_delay_ps = 0.0;  // constant offset added to every detection

  std::vector<std::string> violations(std::string_view path) const {
    std::vector<std::string> v;
    const std::string p(path);
    if (!(efficiency >= 0.0 && efficiency <= 1.0))
      v.push_back(p + ".efficiency: must lie in [0, 1]");
    if (!(jitter_fwhm_ps >= 0.0)) v.push_back(p + ".jitter_fwhm_ps: must be >= 0");
    if (!(dead_time_ns >= 0.0)) v.push_back(p + ".dead_time_ns: must be >= 0");
    if (!(dark_rate_hz >= 0.0)) v.push_back(p + ".dark_rate_hz: must be >= 0");
    if (!std::isfinite(cable_delay_ps)) v.push_back(p + ".cable_delay_ps: must be finite");
    return v;
  }

  void validate(std::string_view path = "detector") const {
    if (auto v = violations(path); !v.empty()) throw ConfigError(std::move(v));
  }

  std::int64_t dead_time_ps() const { return std::llround(dead_time_ns * 1e3); }

  static DetectorModel ideal() { return {}; }

  // Fast, small-area SPAD. Two of these in quadrature give a 260 ps IRF.
  static DetectorModel mpd() { return {0.45, 184.0, 77.0, 50.0, 0.0}; }

  // Large-area SPAD; with an mpd herald the combined IRF is 600 ps.
  static DetectorModel excelitas() {
    return {0.65, std::sqrt(600.0 * 600.0 - 184.0 * 184.0), 22.0, 100.0, 0.0};
  }

  static DetectorModel preset(std::string_view name) {
    if (name == "ideal") return ideal();
    if (name == "mpd") return mpd();
    if (name == "excelitas") return excelitas();
    throw ConfigError("unknown detector preset '" + std::string(name) +
                      "' (expected ideal, mpd or excelitas)");
  }
};

// One photon reaching the detector: arrival time and the probability that it
// survives the optics in front of the detector.
struct Arrival {
  std::int64_t t_ps = 0;
  double accept_prob = 1.0;
};

class DetectorChannel {
 public:
  explicit DetectorChannel(const DetectorModel& m)
      : model_(m), sigma_ps_(m.jitter_fwhm_ps / kFwhmPerSigma) {}

  const DetectorModel& model() const { return model_; }

  // Thins by accept_prob * efficiency, then delays and jitters. Detections
  // that would land before t = 0 are dropped.
  template <class R>
  void detect(double t_ps, double accept_prob, R& rng, std::vector<std::int64_t>& out) const {
    const double p = accept_prob * model_.efficiency;
    if (p < 1.0 && !(unit_(rng) < p)) return;
    double t = t_ps + model_.cable_delay_ps;
    if (sigma_ps_ > 0.0) t += sigma_ps_ * gauss_(rng);
    const auto ti = std::llround(t);
    if (ti >= 0) out.push_back(ti);
  }

  // Homogeneous Poisson dark counts on [begin, end).
  template <class R>
  void add_dark_counts(std::int64_t begin_ps, std::int64_t end_ps, R& rng,
                       std::vector<std::int64_t>& out) const {
    if (!(model_.dark_rate_hz > 0.0) || end_ps <= begin_ps) return;
    std::exponential_distribution<double> gap(model_.dark_rate_hz * 1e-12);
    double t = static_cast<double>(begin_ps) + gap(rng);
    while (t < static_cast<double>(end_ps)) {
      out.push_back(static_cast<std::int64_t>(t));
      t += gap(rng);
    }
  }

 private:
  DetectorModel model_;
  double sigma_ps_;
  mutable std::uniform_real_distribution<double> unit_{0.0, 1.0};
  mutable std::normal_distribution<double> gauss_{0.0, 1.0};
};

// Non-paralyzable dead time on a sorted list: a detection is dropped when it
// falls within dead_ps after the previous *kept* detection.
inline void apply_dead_time(std::vector<std::int64_t>& sorted_times, std::int64_t dead_ps) {
  if (dead_ps <= 0 || sorted_times.empty()) return;
  std::size_t w = 1;
  std::int64_t last = sorted_times[0];
  for (std::size_t i = 1; i < sorted_times.size(); ++i) {
    if (sorted_times[i] - last >= dead_ps) {
      last = sorted_times[i];
      sorted_times[w++] = last;
    }
  }
  sorted_times.resize(w);
}

// Full detector response for one channel: thinning, delay, jitter, dark
// counts over [begin_ps, end_ps), then dead time. Output is time-sorted.
template <class R>
std::vector<PhotonEvent> apply_detector(std::span<const Arrival> arrivals, const DetectorModel& det,
                                        std::uint8_t channel, std::int64_t begin_ps,
                                        std::int64_t end_ps, R& rng) {
  const DetectorChannel ch(det);
  std::vector<std::int64_t> t;
  t.reserve(arrivals.size());
  for (const auto& a : arrivals) ch.detect(static_cast<double>(a.t_ps), a.accept_prob, rng, t);
  ch.add_dark_counts(begin_ps, end_ps, rng, t);
  std::sort(t.begin(), t.end());
  apply_dead_time(t, det.dead_time_ps());
  std::vector<PhotonEvent> out;
  out.reserve(t.size());
  for (auto ti : t) out.push_back({channel, ti});
  return out;
}

}  // namespace epps::sim
