#pragma once

// Measurement pipelines driven by an ExperimentConfig: simulation, TCSPC
// histogramming, g2, calibration and map reconstruction, plus the spectral
// summaries used by the presets.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "epps/config.hpp"
#include "epps/error.hpp"
#include "epps/fit.hpp"
#include "epps/simulate.hpp"
#include "epps/tcspc.hpp"
#include "epps/twins.hpp"

namespace epps::pipeline {

inline EventStream simulate(const ExperimentConfig& c) {
  return sim::simulate_stream(c.source, c.sample, c.herald.model, c.signal.model, c.twins_spec(), c.run);
}

inline sim::HistogramSpec histogram_spec(const ExperimentConfig& c) {
  return {0, 1, c.analysis.bin_width_ps, c.analysis.window_ps};
}

// Herald-start, signal-stop histogram.
inline tcspc::Histogram histogram(const ExperimentConfig& c, const EventStream& s) {
  const auto hs = histogram_spec(c);
  return tcspc::build_histogram(s.events, hs.start_channel, hs.stop_channel, hs.bin_width_ps, hs.window_ps,
                                c.analysis.stop_mode);
}

inline tcspc::G2Curve g2(const ExperimentConfig& c, const EventStream& s) {
  if (s.channel_count < 3) throw DomainError("g2: stream has no second HBT arm (run.topology must be 'hbt')");
  const auto axis = tcspc::symmetric_delay_axis(c.analysis.g2_max_delay_ps, c.analysis.g2_step_ps);
  return tcspc::heralded_g2(s, 0, 1, 2, c.analysis.g2_window_ps, axis);
}

// Run length giving `coincidences` expected herald-signal pairs in the IRF
// topology, ignoring dead-time losses.
inline double irf_duration_s(const ExperimentConfig& c, double coincidences) {
  const double r = c.source.pump.pair_rate_hz * c.herald.model.efficiency * c.signal.model.efficiency;
  if (!(r > 0.0)) throw DomainError("irf: pair rate times detector efficiencies is zero");
  return coincidences / r;
}

// IRF histogram: signal-idler coincidences with the sample and the
// interferometer removed.
inline tcspc::Histogram measure_irf(ExperimentConfig c, double coincidences, EventStream* keep = nullptr) {
  c.sample.reset();
  c.twins.reset();
  c.run.twins_position_um.reset();
  c.run.topology = sim::Topology::irf;
  c.run.duration_s = irf_duration_s(c, coincidences);
  auto s = simulate(c);
  auto h = histogram(c, s);
  if (keep) *keep = std::move(s);
  return h;
}

// Wavelength of the mean optical frequency of a spectrum.
inline double frequency_centroid_nm(const spdc::JointSpectralDensity& s) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.signal_nm.size(); ++i) {
    num += s.density[i] / s.signal_nm[i];
    den += s.density[i];
  }
  if (!(num > 0.0)) throw EmptySupportError("pipeline: spectrum has no weight");
  return den / num;
}

struct Calibrated {
  twins::InterferogramCube reference;
  twins::Calibration calibration;
  double reference_nm = 0.0;
};

// Calibrates the interferometer with the heralded signal photons themselves
// (IRF topology, no sample). The reference wavelength is the frequency
// centroid of the conditioned signal spectrum.
inline Calibrated calibrate(ExperimentConfig c, double per_position_duration_s) {
  if (!c.twins) throw ConfigError("twins: calibration needs a twins section");
  c.sample.reset();
  c.run.topology = sim::Topology::irf;
  c.run.seed = derive_seed(c.run.seed, 0xCA1B);
  sim::RunConfig run = c.run;
  run.duration_s = per_position_duration_s;
  Calibrated out;
  const auto pos = c.twins->scan.positions();
  out.reference = sim::acquire_cube(c.source, std::nullopt, c.herald.model, c.signal.model, c.twins->spec, pos,
                                    run, histogram_spec(c));
  out.reference_nm = frequency_centroid_nm(c.source.signal_spectrum());
  out.calibration = twins::calibrate_delay(out.reference, out.reference_nm);
  return out;
}

inline twins::InterferogramCube acquire(const ExperimentConfig& c) {
  if (!c.twins) throw ConfigError("twins: acquiring a cube needs a twins section");
  sim::RunConfig run = c.run;
  run.duration_s = c.twins->scan.per_position_duration_s;
  const auto pos = c.twins->scan.positions();
  return sim::acquire_cube(c.source, c.sample, c.herald.model, c.signal.model, c.twins->spec, pos, run,
                           histogram_spec(c));
}

inline twins::TimeFrequencyMap map(const ExperimentConfig& c, const twins::InterferogramCube& cube,
                                   const twins::Calibration& cal) {
  const auto& a = c.analysis;
  const auto coarse = twins::rebin(cube, a.map_time_rebin);
  return twins::reconstruct_map(coarse, cal, a.map_apodization, a.map_dc_removal,
                                {a.map_zero_pad_factor, a.map_wavelength_min_nm, a.map_wavelength_max_nm});
}

inline fit::FitOptions fit_options(const ExperimentConfig& c) {
  fit::FitOptions o;
  o.seed = c.analysis.fit_seed;
  o.n_starts = c.analysis.fit_starts;
  return o;
}

// Intensity-weighted mean wavelength of a spectrum profile inside [lo, hi].
inline double spectral_centroid_nm(const fit::Profile& spectrum, double lo_nm, double hi_nm) {
  if (spectrum.cut != fit::SliceAxis::time) throw DomainError("pipeline: profile is a decay, not a spectrum");
  const auto& x = spectrum.axis;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < lo_nm || x[i] > hi_nm) continue;
    const double dx = i + 1 < x.size() ? x[i + 1] - x[i] : x[i] - x[i - 1];
    num += x[i] * spectrum.values[i] * dx;
    den += spectrum.values[i] * dx;
  }
  if (!(den > 0.0)) throw DomainError("pipeline: spectrum is empty inside the centroid band");
  return num / den;
}

// Local maxima of a spectrum inside [lo, hi] that reach `rel` of the band
// maximum, strongest first.
inline std::vector<double> spectral_peaks_nm(const fit::Profile& spectrum, double lo_nm, double hi_nm,
                                             double rel = 0.2) {
  const auto& x = spectrum.axis;
  const auto& y = spectrum.values;
  double top = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] >= lo_nm && x[i] <= hi_nm) top = std::max(top, y[i]);
  std::vector<std::size_t> idx;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    if (x[i] < lo_nm || x[i] > hi_nm) continue;
    if (y[i] > y[i - 1] && y[i] >= y[i + 1] && y[i] >= rel * top) idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return y[a] > y[b]; });
  std::vector<double> out;
  for (auto i : idx) {
    // Parabolic refinement on the (locally near-uniform) grid.
    const double d = y[i - 1] - 2.0 * y[i] + y[i + 1];
    const double off = d < 0.0 ? 0.5 * (y[i - 1] - y[i + 1]) / d : 0.0;
    out.push_back(x[i] + off * 0.5 * (x[i + 1] - x[i - 1]));
  }
  return out;
}

}  // namespace epps::pipeline
