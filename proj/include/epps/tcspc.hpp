#pragma once

// Time-correlated single photon counting on event streams: start-stop
// delay histograms, coincidence rates and the heralded second-order
// correlation g2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "epps/error.hpp"
#include "epps/events.hpp"
#include "epps/numeric.hpp"

namespace epps::tcspc {

template <class Count>
struct BasicHistogram {
  std::int64_t bin_width_ps = 4;
  std::int64_t t0_ps = 0;  // left edge of bin 0
  std::vector<Count> counts;
  std::uint64_t n_starts = 0;
  bool empty = false;  // built from a stream without start events

  std::size_t size() const { return counts.size(); }
  std::int64_t bin_left_ps(std::size_t i) const {
    return t0_ps + static_cast<std::int64_t>(i) * bin_width_ps;
  }
  double bin_center_ps(std::size_t i) const {
    return static_cast<double>(bin_left_ps(i)) + 0.5 * static_cast<double>(bin_width_ps);
  }
  double total() const {
    double s = 0.0;
    for (const auto c : counts) s += static_cast<double>(c);
    return s;
  }
  std::vector<double> as_double() const { return {counts.begin(), counts.end()}; }

  template <class Other>
  BasicHistogram<Other> cast() const {
    BasicHistogram<Other> h{bin_width_ps, t0_ps, {}, n_starts, empty};
    h.counts.reserve(counts.size());
    for (const auto c : counts) h.counts.push_back(static_cast<Other>(c));
    return h;
  }
};

using Histogram = BasicHistogram<std::uint64_t>;

enum class StopMode { first_stop, all_stops };

inline void check_histogram_args(std::uint8_t start, std::uint8_t stop, std::int64_t bin_width_ps,
                                 std::int64_t window_ps) {
  if (start == stop) throw DomainError("tcspc: start and stop channels must differ");
  if (bin_width_ps <= 0) throw DomainError("tcspc: bin_width_ps must be > 0");
  if (window_ps <= 0 || window_ps % bin_width_ps != 0)
    throw DomainError("tcspc: window_ps must be a positive multiple of bin_width_ps");
}

// For every start event, the first stop with 0 <= dt < window adds one count
// to bin floor(dt / bin_width). With StopMode::all_stops every stop in the
// window counts (diagnostic; shows no pile-up distortion).
inline Histogram build_histogram(std::span<const PhotonEvent> events, std::uint8_t start_channel,
                                 std::uint8_t stop_channel, std::int64_t bin_width_ps,
                                 std::int64_t window_ps, StopMode mode = StopMode::first_stop) {
  check_histogram_args(start_channel, stop_channel, bin_width_ps, window_ps);
  Histogram h;
  h.bin_width_ps = bin_width_ps;
  h.t0_ps = 0;
  h.counts.assign(static_cast<std::size_t>(window_ps / bin_width_ps), 0);

  const auto starts = channel_times(events, start_channel);
  const auto stops = channel_times(events, stop_channel);
  h.n_starts = starts.size();
  h.empty = starts.empty();

  std::size_t j = 0;
  for (const auto ts : starts) {
    while (j < stops.size() && stops[j] < ts) ++j;
    for (std::size_t k = j; k < stops.size(); ++k) {
      const std::int64_t dt = stops[k] - ts;
      if (dt >= window_ps) break;
      ++h.counts[static_cast<std::size_t>(dt / bin_width_ps)];
      if (mode == StopMode::first_stop) break;
    }
  }
  return h;
}

inline Histogram build_histogram(const EventStream& s, std::uint8_t start_channel,
                                 std::uint8_t stop_channel, std::int64_t bin_width_ps = 4,
                                 std::int64_t window_ps = 50'000,
                                 StopMode mode = StopMode::first_stop) {
  return build_histogram(s.events, start_channel, stop_channel, bin_width_ps, window_ps, mode);
}

// Merge groups of `factor` adjacent bins. A trailing partial group is
// dropped.
template <class Count>
BasicHistogram<Count> rebin(const BasicHistogram<Count>& h, std::size_t factor) {
  if (factor == 0) throw DomainError("tcspc: rebin factor must be >= 1");
  BasicHistogram<Count> out{h.bin_width_ps * static_cast<std::int64_t>(factor), h.t0_ps, {},
                            h.n_starts, h.empty};
  out.counts.assign(h.counts.size() / factor, Count{});
  for (std::size_t i = 0; i < out.counts.size() * factor; ++i) out.counts[i / factor] += h.counts[i];
  return out;
}

// Centered moving average over 2*half+1 bins.
inline std::vector<double> smooth(std::span<const double> y, std::size_t half) {
  if (half == 0) return {y.begin(), y.end()};
  std::vector<double> out(y.size());
  std::vector<double> cum(y.size() + 1, 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) cum[i + 1] = cum[i] + y[i];
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t a = i >= half ? i - half : 0;
    const std::size_t b = std::min(y.size(), i + half + 1);
    out[i] = (cum[b] - cum[a]) / static_cast<double>(b - a);
  }
  return out;
}

// FWHM of the histogram peak in ps, after optional smoothing over
// 2*smooth_half+1 bins. Returns NaN when the width is not resolved.
template <class Count>
double fwhm_ps(const BasicHistogram<Count>& h, std::size_t smooth_half = 0) {
  const auto y = smooth(h.as_double(), smooth_half);
  std::vector<double> x(h.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = h.bin_center_ps(i);
  const auto w = fwhm(x, y);
  return w ? *w : std::nan("");
}

template <class Count>
double peak_time_ps(const BasicHistogram<Count>& h, std::size_t smooth_half = 0) {
  const auto y = smooth(h.as_double(), smooth_half);
  std::vector<double> x(h.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = h.bin_center_ps(i);
  return peak_position(x, y);
}

struct CoincidenceRate {
  std::uint64_t count = 0;
  double rate_hz = 0.0;
  double error_hz = 0.0;
};

// Counts every (a, b) pair with |t_b - t_a - offset| <= window/2 and divides
// by the stream duration.
inline CoincidenceRate coincidence_rate(const EventStream& s, std::uint8_t ch_a, std::uint8_t ch_b,
                                        std::int64_t window_ps, std::int64_t offset_ps = 0) {
  if (window_ps <= 0) throw DomainError("tcspc: coincidence window must be > 0");
  if (s.duration_ps <= 0) throw DomainError("tcspc: stream duration unknown");
  const auto a = channel_times(s.events, ch_a);
  const auto b = channel_times(s.events, ch_b);
  // Doubled times keep the symmetric window exact for odd widths.
  std::uint64_t n = 0;
  std::size_t lo = 0, hi = 0;
  for (const auto ta : a) {
    const std::int64_t c2 = 2 * (ta + offset_ps);
    while (lo < b.size() && 2 * b[lo] < c2 - window_ps) ++lo;
    if (hi < lo) hi = lo;
    while (hi < b.size() && 2 * b[hi] <= c2 + window_ps) ++hi;
    n += hi - lo;
  }
  const double d = s.duration_s();
  return {n, static_cast<double>(n) / d, std::sqrt(static_cast<double>(n)) / d};
}

struct G2Curve {
  std::vector<std::int64_t> delay_ps;
  std::vector<double> g2;
  std::vector<double> err;
  // Accidental triple-coincidence estimate N_ht * N_hr / N_h at zero delay.
  double normalization = 0.0;
  std::uint64_t n_herald = 0;
  std::vector<std::uint64_t> n_htr, n_ht, n_hr;
};

// Heralded g2 from a herald channel and the two HBT arms. For delay d the
// transmitted-arm window is centred at t_h - d/2 and the reflected-arm window
// at t_h + d/2, each `coincidence_window_ps` wide. Per delay
//   g2(d) = N_htr(d) N_h / (N_ht(d) N_hr(d))
// where N_ht counts heralds with a transmitted click in its window, N_hr
// likewise, and N_htr heralds with both. Swapping the arms mirrors the delay
// axis exactly.
inline G2Curve heralded_g2(const EventStream& s, std::uint8_t herald_channel,
                           std::uint8_t t_channel, std::uint8_t r_channel,
                           std::int64_t coincidence_window_ps,
                           std::span<const std::int64_t> delay_axis) {
  if (herald_channel == t_channel || herald_channel == r_channel || t_channel == r_channel)
    throw DomainError("tcspc: heralded_g2 needs three distinct channels");
  if (coincidence_window_ps <= 0) throw DomainError("tcspc: coincidence window must be > 0");
  if (delay_axis.empty() || !std::is_sorted(delay_axis.begin(), delay_axis.end()) ||
      std::adjacent_find(delay_axis.begin(), delay_axis.end()) != delay_axis.end())
    throw DomainError("tcspc: delay axis must be nonempty and strictly increasing");

  const auto H = channel_times(s.events, herald_channel);
  const auto T = channel_times(s.events, t_channel);
  const auto R = channel_times(s.events, r_channel);
  const std::size_t nd = delay_axis.size();
  const std::int64_t w = coincidence_window_ps;
  const std::int64_t dmin = delay_axis.front(), dmax = delay_axis.back();

  G2Curve g;
  g.delay_ps.assign(delay_axis.begin(), delay_axis.end());
  g.n_herald = H.size();
  g.n_htr.assign(nd, 0);
  g.n_ht.assign(nd, 0);
  g.n_hr.assign(nd, 0);

  constexpr std::uint64_t kNone = ~std::uint64_t{0};
  std::vector<std::uint64_t> stamp_t(nd, kNone), stamp_r(nd, kNone), stamp_tr(nd, kNone);

  // Delay indices d with lo <= d <= hi.
  const auto index_range = [&](std::int64_t lo, std::int64_t hi) {
    const auto a = std::lower_bound(delay_axis.begin(), delay_axis.end(), lo);
    const auto b = std::upper_bound(delay_axis.begin(), delay_axis.end(), hi);
    return std::pair<std::size_t, std::size_t>(a - delay_axis.begin(), b - delay_axis.begin());
  };

  // Transmitted click at offset a = t - t_h qualifies for d in [-2a - w, -2a + w];
  // reflected click at offset b for d in [2b - w, 2b + w].
  std::size_t t_lo = 0, r_lo = 0;
  std::vector<std::pair<std::size_t, std::size_t>> r_ranges;
  for (std::size_t hi_idx = 0; hi_idx < H.size(); ++hi_idx) {
    const std::int64_t th = H[hi_idx];
    const std::uint64_t id = hi_idx;
    // 2a must lie in [-dmax - w, -dmin + w].
    while (t_lo < T.size() && 2 * (T[t_lo] - th) < -dmax - w) ++t_lo;
    while (r_lo < R.size() && 2 * (R[r_lo] - th) < dmin - w) ++r_lo;

    for (std::size_t k = t_lo; k < T.size() && 2 * (T[k] - th) <= -dmin + w; ++k) {
      const std::int64_t a2 = 2 * (T[k] - th);
      const auto [i0, i1] = index_range(-a2 - w, -a2 + w);
      for (std::size_t i = i0; i < i1; ++i) {
        if (stamp_t[i] != id) {
          stamp_t[i] = id;
          ++g.n_ht[i];
        }
      }
    }
    r_ranges.clear();
    for (std::size_t k = r_lo; k < R.size() && 2 * (R[k] - th) <= dmax + w; ++k) {
      const std::int64_t b2 = 2 * (R[k] - th);
      const auto range = index_range(b2 - w, b2 + w);
      r_ranges.push_back(range);
      for (std::size_t i = range.first; i < range.second; ++i) {
        if (stamp_r[i] != id) {
          stamp_r[i] = id;
          ++g.n_hr[i];
        }
      }
    }
    for (const auto& [i0, i1] : r_ranges) {
      for (std::size_t i = i0; i < i1; ++i) {
        if (stamp_t[i] == id && stamp_tr[i] != id) {
          stamp_tr[i] = id;
          ++g.n_htr[i];
        }
      }
    }
  }

  g.g2.resize(nd);
  g.err.resize(nd);
  const double nh = static_cast<double>(g.n_herald);
  for (std::size_t i = 0; i < nd; ++i) {
    if (g.n_ht[i] == 0)
      throw UndefinedG2Error("tcspc: g2 undefined: no herald-T coincidences (channels " +
                             std::to_string(herald_channel) + "-" + std::to_string(t_channel) +
                             ") at delay " + std::to_string(delay_axis[i]) + " ps");
    if (g.n_hr[i] == 0)
      throw UndefinedG2Error("tcspc: g2 undefined: no herald-R coincidences (channels " +
                             std::to_string(herald_channel) + "-" + std::to_string(r_channel) +
                             ") at delay " + std::to_string(delay_axis[i]) + " ps");
    const double ht = static_cast<double>(g.n_ht[i]);
    const double hr = static_cast<double>(g.n_hr[i]);
    const double htr = static_cast<double>(g.n_htr[i]);
    const double scale = nh / (ht * hr);
    g.g2[i] = htr * scale;
    // Poisson errors; an empty triple bin gets the one-count error.
    g.err[i] = htr > 0.0 ? g.g2[i] * std::sqrt(1.0 / htr + 1.0 / ht + 1.0 / hr + 1.0 / nh) : scale;
  }
  const auto zero = std::lower_bound(delay_axis.begin(), delay_axis.end(), 0) - delay_axis.begin();
  const std::size_t iz = std::min<std::size_t>(static_cast<std::size_t>(zero), nd - 1);
  g.normalization = static_cast<double>(g.n_ht[iz]) * static_cast<double>(g.n_hr[iz]) / nh;
  return g;
}

// Symmetric delay axis -max..max in steps of `step`.
inline std::vector<std::int64_t> symmetric_delay_axis(std::int64_t max_ps, std::int64_t step_ps) {
  if (step_ps <= 0 || max_ps < 0) throw DomainError("tcspc: bad delay axis parameters");
  std::vector<std::int64_t> d;
  const std::int64_t n = max_ps / step_ps;
  for (std::int64_t i = -n; i <= n; ++i) d.push_back(i * step_ps);
  return d;
}

}  // namespace epps::tcspc
