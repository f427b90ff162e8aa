#pragma once

// Fluorescent sample: a mixture of emitter species with their own
// lifetimes, Gaussian emission spectra and quantum yields.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "epps/error.hpp"
#include "epps/numeric.hpp"

namespace epps::sim {

struct EmitterSpecies {
  double weight = 1.0;
  double lifetime_ns = 1.0;
  double emission_center_nm = 810.0;
  double emission_fwhm_nm = 40.0;
  double quantum_yield = 1.0;
};

struct SampleModel {
  std::vector<EmitterSpecies> species;
  double absorption_prob = 1.0;

  std::vector<std::string> violations(std::string_view path) const {
    std::vector<std::string> v;
    const std::string p(path);
    if (species.empty()) v.push_back(p + ".species: must not be empty");
    if (!(absorption_prob >= 0.0 && absorption_prob <= 1.0))
      v.push_back(p + ".absorption_prob: must lie in [0, 1]");
    double wsum = 0.0;
    for (std::size_t i = 0; i < species.size(); ++i) {
      const auto& s = species[i];
      const std::string q = p + ".species[" + std::to_string(i) + "]";
      if (!(s.weight >= 0.0)) v.push_back(q + ".weight: must be >= 0");
      if (!(s.lifetime_ns > 0.0)) v.push_back(q + ".lifetime_ns: must be > 0");
      if (!(s.emission_fwhm_nm > 0.0)) v.push_back(q + ".emission_fwhm_nm: must be > 0");
      if (!(s.emission_center_nm > 0.0)) v.push_back(q + ".emission_center_nm: must be > 0");
      if (!(s.quantum_yield >= 0.0 && s.quantum_yield <= 1.0))
        v.push_back(q + ".quantum_yield: must lie in [0, 1]");
      if (s.weight > 0.0) wsum += s.weight;
    }
    if (!species.empty() && !(wsum > 0.0)) v.push_back(p + ".species: weights are all zero");
    return v;
  }

  void validate(std::string_view path = "sample") const {
    if (auto v = violations(path); !v.empty()) throw ConfigError(std::move(v));
  }

  // Shortest wavelength the sample emits with appreciable probability:
  // center - fwhm over all species (about 2.4 sigma).
  double shortest_emission_nm() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& s : species) m = std::min(m, s.emission_center_nm - s.emission_fwhm_nm);
    return m;
  }
};

struct Emission {
  double delay_ps = 0.0;
  double wavelength_nm = 0.0;
  std::size_t species = 0;
};

// Precomputed species table for repeated draws.
class FluorescenceSampler {
 public:
  explicit FluorescenceSampler(const SampleModel& s) : sample_(s) {
    s.validate();
    std::vector<double> w;
    for (const auto& sp : s.species) w.push_back(std::max(sp.weight, 0.0));
    pick_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }

  // nullopt when the excitation photon is not absorbed or the excited state
  // decays non-radiatively.
  template <class R>
  std::optional<Emission> operator()(R& rng) const {
    if (sample_.absorption_prob < 1.0 && !(unit_(rng) < sample_.absorption_prob))
      return std::nullopt;
    const std::size_t k = pick_(rng);
    const auto& sp = sample_.species[k];
    if (sp.quantum_yield < 1.0 && !(unit_(rng) < sp.quantum_yield)) return std::nullopt;
    Emission e;
    e.species = k;
    e.delay_ps = std::exponential_distribution<double>(1.0 / (sp.lifetime_ns * 1e3))(rng);
    const double sigma = sp.emission_fwhm_nm / kFwhmPerSigma;
    do {
      e.wavelength_nm = sp.emission_center_nm + sigma * gauss_(rng);
    } while (e.wavelength_nm <= 0.0);
    return e;
  }

 private:
  SampleModel sample_;
  mutable std::discrete_distribution<std::size_t> pick_;
  mutable std::uniform_real_distribution<double> unit_{0.0, 1.0};
  mutable std::normal_distribution<double> gauss_{0.0, 1.0};
};

template <class R>
std::optional<Emission> sample_fluorescence(const SampleModel& sample, R& rng) {
  return FluorescenceSampler(sample)(rng);
}

}  // namespace epps::sim
