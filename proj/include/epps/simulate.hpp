#pragma once

// Monte Carlo generation of timestamped detection streams for the three
// experiment topologies:
//   irf          herald + signal photon, straight onto two detectors
//   hbt          herald + signal split by a 50/50 beam splitter (channels 1, 2)
//   fluorescence herald + fluorescence photon emitted by the sample
//
// Pair births are a homogeneous Poisson process. The run is cut into
// fixed-length time chunks, each with its own RNG stream derived from
// (seed, chunk index), so output is a pure function of (config, seed)
// regardless of how many threads process the chunks. Dead time is applied
// after the chunks are merged.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "epps/detector.hpp"
#include "epps/error.hpp"
#include "epps/events.hpp"
#include "epps/parallel.hpp"
#include "epps/rng.hpp"
#include "epps/sample.hpp"
#include "epps/spdc.hpp"
#include "epps/tcspc.hpp"
#include "epps/twins.hpp"

namespace epps::sim {

enum class Topology { irf, hbt, fluorescence };

inline const char* to_string(Topology t) {
  switch (t) {
    case Topology::irf: return "irf";
    case Topology::hbt: return "hbt";
    case Topology::fluorescence: return "fluorescence";
  }
  return "?";
}

struct SourceModel {
  spdc::PumpSpec pump;  // pair_rate_hz: pairs inside the herald passband
  spdc::CrystalSpec crystal;
  std::optional<spdc::FilterSpec> herald_filter = spdc::FilterSpec{};
  double grid_min_nm = 650.0;
  double grid_step_nm = 0.01;

  // Spectrum of the photon sent towards the sample, conditioned on the
  // herald filter when one is present.
  spdc::JointSpectralDensity signal_spectrum() const {
    const auto grid = spdc::default_signal_grid(pump, grid_min_nm, grid_step_nm);
    auto jsd = spdc::joint_spectral_density(pump, crystal, grid);
    return herald_filter ? spdc::herald_conditioned_spectrum(jsd, *herald_filter) : jsd;
  }
};

struct RunConfig {
  double duration_s = 1.0;
  std::uint64_t seed = 1;
  Topology topology = Topology::irf;
  std::optional<double> twins_position_um;
  double chunk_duration_s = 0.01;
};

// Draws wavelengths from a sampled density (piecewise constant per cell).
class WavelengthSampler {
 public:
  explicit WavelengthSampler(const spdc::JointSpectralDensity& d) : grid_(d.signal_nm) {
    cdf_.resize(d.density.size());
    double s = 0.0;
    for (std::size_t i = 0; i < d.density.size(); ++i) cdf_[i] = (s += d.density[i]);
    for (double& c : cdf_) c /= s;
    step_ = grid_.size() > 1 ? grid_[1] - grid_[0] : 0.0;
  }

  template <class R>
  double operator()(R& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const std::size_t i = std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1);
    const double lo = i == 0 ? 0.0 : cdf_[i - 1];
    const double w = cdf_[i] - lo;
    const double frac = w > 0.0 ? (u - lo) / w : 0.5;
    return grid_[i] + (frac - 0.5) * step_;
  }

 private:
  std::vector<double> grid_;
  std::vector<double> cdf_;
  double step_ = 0.0;
};

inline std::uint16_t channel_count(Topology t) { return t == Topology::hbt ? 3 : 2; }

inline void check_topology(const std::optional<SampleModel>& sample,
                           const std::optional<twins::TwinsSpec>& tw, const RunConfig& run) {
  std::vector<std::string> v;
  if (!(run.duration_s > 0.0)) v.push_back("run.duration_s: must be > 0");
  if (!(run.chunk_duration_s > 0.0)) v.push_back("run.chunk_duration_s: must be > 0");
  if (run.topology == Topology::fluorescence && !sample)
    v.push_back("sample: required for the fluorescence topology");
  if (run.topology != Topology::fluorescence && sample)
    v.push_back(std::string("sample: not allowed for the ") + to_string(run.topology) + " topology");
  if (tw && !run.twins_position_um)
    v.push_back("run.twins_position_um: required when the interferometer is in the path");
  if (!tw && run.twins_position_um)
    v.push_back("run.twins_position_um: set but no interferometer configured");
  if (tw && run.twins_position_um &&
      (*run.twins_position_um < tw->position_min_um || *run.twins_position_um > tw->position_max_um))
    v.push_back("run.twins_position_um: outside the interferometer scan range");
  if (!v.empty()) throw ConfigError(std::move(v));
}

// Signal-arm spectrum is expensive to build; callers running many streams
// with the same source pass it in.
inline EventStream simulate_stream(const SourceModel& source, const std::optional<SampleModel>& sample,
                                   const DetectorModel& herald_det, const DetectorModel& signal_det,
                                   const std::optional<twins::TwinsSpec>& tw, const RunConfig& run,
                                   const spdc::JointSpectralDensity& signal_spectrum) {
  check_topology(sample, tw, run);
  herald_det.validate("detectors.herald");
  signal_det.validate("detectors.signal");
  if (sample) sample->validate("sample");
  if (tw) tw->validate("twins");
  source.pump.validate();

  const Topology topo = run.topology;
  const std::uint16_t nch = channel_count(topo);
  const auto duration_ps = static_cast<std::int64_t>(std::llround(run.duration_s * 1e12));
  const auto chunk_ps = std::max<std::int64_t>(1, std::llround(run.chunk_duration_s * 1e12));
  const std::size_t n_chunks = static_cast<std::size_t>((duration_ps + chunk_ps - 1) / chunk_ps);
  const double rate_per_ps = source.pump.pair_rate_hz * 1e-12;
  const WavelengthSampler pick_signal(signal_spectrum);

  // chunk -> channel -> detection times (before dead time)
  std::vector<std::vector<std::vector<std::int64_t>>> raw(n_chunks);

  parallel_for(n_chunks, [&](std::size_t c) {
    Rng rng = make_rng(run.seed, c);
    const DetectorChannel herald(herald_det), signal(signal_det);
    std::optional<FluorescenceSampler> fluor;
    if (sample) fluor.emplace(*sample);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto& out = raw[c];
    out.assign(nch, {});

    const std::int64_t t0 = static_cast<std::int64_t>(c) * chunk_ps;
    const std::int64_t t1 = std::min(duration_ps, t0 + chunk_ps);
    if (rate_per_ps > 0.0) {
      std::exponential_distribution<double> gap(rate_per_ps);
      for (double t = static_cast<double>(t0) + gap(rng); t < static_cast<double>(t1); t += gap(rng)) {
        const double signal_nm = pick_signal(rng);
        herald.detect(t, 1.0, rng, out[0]);
        switch (topo) {
          case Topology::irf: {
            const double p = tw ? twins::transmission(signal_nm, *run.twins_position_um, *tw) : 1.0;
            signal.detect(t, p, rng, out[1]);
            break;
          }
          case Topology::hbt: {
            const std::size_t arm = unit(rng) < 0.5 ? 1 : 2;
            signal.detect(t, 1.0, rng, out[arm]);
            break;
          }
          case Topology::fluorescence: {
            const auto em = (*fluor)(rng);
            if (!em) break;
            const double p =
                tw ? twins::transmission(em->wavelength_nm, *run.twins_position_um, *tw) : 1.0;
            signal.detect(t + em->delay_ps, p, rng, out[1]);
            break;
          }
        }
      }
    }
    herald.add_dark_counts(t0, t1, rng, out[0]);
    for (std::uint16_t ch = 1; ch < nch; ++ch) signal.add_dark_counts(t0, t1, rng, out[ch]);
  });

  EventStream s;
  s.duration_ps = duration_ps;
  s.channel_count = nch;
  s.empty_warning = !(source.pump.pair_rate_hz > 0.0) && !(herald_det.dark_rate_hz > 0.0) &&
                    !(signal_det.dark_rate_hz > 0.0);
  for (std::uint16_t ch = 0; ch < nch; ++ch) {
    std::vector<std::int64_t> t;
    std::size_t total = 0;
    for (const auto& chunk : raw) total += chunk[ch].size();
    t.reserve(total);
    for (auto& chunk : raw) {
      t.insert(t.end(), chunk[ch].begin(), chunk[ch].end());
      std::vector<std::int64_t>().swap(chunk[ch]);
    }
    std::sort(t.begin(), t.end());
    apply_dead_time(t, (ch == 0 ? herald_det : signal_det).dead_time_ps());
    for (auto ti : t) s.events.push_back({static_cast<std::uint8_t>(ch), ti});
  }
  std::sort(s.events.begin(), s.events.end(), event_before);
  return s;
}

inline EventStream simulate_stream(const SourceModel& source, const std::optional<SampleModel>& sample,
                                   const DetectorModel& herald_det, const DetectorModel& signal_det,
                                   const std::optional<twins::TwinsSpec>& tw, const RunConfig& run) {
  return simulate_stream(source, sample, herald_det, signal_det, tw, run, source.signal_spectrum());
}

struct HistogramSpec {
  std::uint8_t start_channel = 0;
  std::uint8_t stop_channel = 1;
  std::int64_t bin_width_ps = 4;
  std::int64_t window_ps = 50'000;
};

// Shortest wavelength reaching the interferometer: the sample's emission
// edge, or the signal spectrum edge when no sample is present.
inline double shortest_detected_nm(const std::optional<SampleModel>& sample,
                                   const spdc::JointSpectralDensity& signal_spectrum) {
  if (sample) return sample->shortest_emission_nm();
  double peak = 0.0;
  for (double v : signal_spectrum.density) peak = std::max(peak, v);
  for (std::size_t i = 0; i < signal_spectrum.density.size(); ++i)
    if (signal_spectrum.density[i] >= 1e-3 * peak) return signal_spectrum.signal_nm[i];
  return signal_spectrum.signal_nm.front();
}

inline void check_nyquist(const twins::TwinsSpec& tw, std::span<const double> positions,
                          double shortest_nm) {
  const double step = twins::uniform_step(positions);
  const double limit = tw.nyquist_spacing_um(shortest_nm);
  if (step > limit) {
    throw ConfigError("twins positions: spacing " + std::to_string(step) +
                      " um violates Nyquist for " + std::to_string(shortest_nm) +
                      " nm; required spacing <= " + std::to_string(limit) + " um");
  }
}

// One TCSPC histogram per wedge position; each position is an independent
// run seeded from (run.seed, position index).
inline twins::InterferogramCube acquire_cube(const SourceModel& source,
                                             const std::optional<SampleModel>& sample,
                                             const DetectorModel& herald_det,
                                             const DetectorModel& signal_det,
                                             const twins::TwinsSpec& tw,
                                             std::span<const double> positions,
                                             const RunConfig& per_position_run,
                                             const HistogramSpec& hs = {}) {
  if (positions.size() < 2) throw ConfigError("twins positions: need at least 2 positions");
  tw.validate("twins");
  const auto spectrum = source.signal_spectrum();
  check_nyquist(tw, positions, shortest_detected_nm(sample, spectrum));

  twins::InterferogramCube cube;
  cube.positions_um.assign(positions.begin(), positions.end());
  cube.metadata = {tw, per_position_run.duration_s, per_position_run.seed};
  cube.histograms.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    RunConfig r = per_position_run;
    r.seed = derive_seed(per_position_run.seed, 0xC0BEULL, i);
    r.twins_position_um = positions[i];
    const auto s = simulate_stream(source, sample, herald_det, signal_det, tw, r, spectrum);
    cube.histograms.push_back(tcspc::build_histogram(s.events, hs.start_channel, hs.stop_channel,
                                                     hs.bin_width_ps, hs.window_ps));
  }
  return cube;
}

// Uniform positions covering [first, first + (count-1) * step].
inline std::vector<double> scan_positions(double first_um, double step_um, std::size_t count) {
  std::vector<double> p(count);
  for (std::size_t i = 0; i < count; ++i) p[i] = first_um + static_cast<double>(i) * step_um;
  return p;
}

}  // namespace epps::sim
