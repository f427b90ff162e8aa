#pragma once

// IRF-reconvolution fitting of multi-exponential decays to TCSPC histograms
// under a Poisson likelihood.
//
// Model for target bin b (width D, left edge t_b):
//   e[b] = background + sum_k a_k * y_k[b - shift / D]
// where y_k is the normalized IRF convolved with exp(-t / tau_k) and
// integrated over the bin. With the IRF spread uniformly over each of its
// bins the bin-integrated kernel is
//   K[0]   = (1 - (1 - r) / x) / x
//   K[m>0] = ((1 - r) / x)^2 * r^(m-1),        x = D/tau, r = exp(-x)
// so a_k is the count per bin at the exponential's origin. Uniform spreading
// overstates the IRF by D^2/12 times its second derivative; the kernel
// carries the matching correction K - (K[m+1] - 2K[m] + K[m-1]) / 12, which
// leaves m >= 2 equal to the exponential to O(x^2). Fractional shifts
// interpolate linearly between bins.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "epps/error.hpp"
#include "epps/nelder_mead.hpp"
#include "epps/numeric.hpp"
#include "epps/parallel.hpp"
#include "epps/rng.hpp"
#include "epps/tcspc.hpp"
#include "epps/twins.hpp"

namespace epps::fit {

struct DecayComponent {
  double amplitude = 0.0;  // counts per bin at the exponential's origin, >= 0
  double lifetime_ns = 1.0;
};

struct DecayModel {
  std::vector<DecayComponent> components;
  double background = 0.0;  // counts per bin, >= 0
  double t_shift_ps = 0.0;  // delay of the decay relative to the IRF

  void validate() const {
    if (components.empty()) throw DomainError("fit: model needs at least one component");
    for (const auto& c : components) {
      if (!(c.amplitude >= 0.0)) throw DomainError("fit: amplitudes must be >= 0");
      if (!(c.lifetime_ns > 0.0)) throw DomainError("fit: lifetimes must be > 0");
    }
    if (!(background >= 0.0)) throw DomainError("fit: background must be >= 0");
    if (!std::isfinite(t_shift_ps)) throw DomainError("fit: t_shift_ps must be finite");
  }
};

struct BinAxis {
  std::int64_t bin_width_ps = 4;
  std::int64_t t0_ps = 0;
  std::size_t n_bins = 0;
};

template <class Count>
BinAxis axis_of(const tcspc::BasicHistogram<Count>& h) {
  return {h.bin_width_ps, h.t0_ps, h.size()};
}

// Unit-amplitude responses of the IRF to exponentials on a target bin axis.
class Convolver {
 public:
  template <class Count>
  Convolver(const tcspc::BasicHistogram<Count>& irf, const BinAxis& target)
      : width_(static_cast<double>(target.bin_width_ps)), n_target_(target.n_bins) {
    if (irf.bin_width_ps != target.bin_width_ps)
      throw DomainError("fit: IRF bin width " + std::to_string(irf.bin_width_ps) +
                        " ps differs from histogram bin width " +
                        std::to_string(target.bin_width_ps) + " ps");
    if ((target.t0_ps - irf.t0_ps) % irf.bin_width_ps != 0)
      throw DomainError("fit: IRF and histogram bin edges are not aligned");
    offset_ = (target.t0_ps - irf.t0_ps) / irf.bin_width_ps;
    double sum = 0.0;
    for (const auto c : irf.counts) {
      if (!(static_cast<double>(c) >= 0.0)) throw DomainError("fit: IRF counts must be >= 0");
      sum += static_cast<double>(c);
    }
    if (!(sum > 0.0)) throw DomainError("fit: IRF is empty");
    irf_.reserve(irf.size());
    for (const auto c : irf.counts) irf_.push_back(static_cast<double>(c) / sum);
  }

  std::size_t size() const { return n_target_; }
  double bin_width_ps() const { return width_; }

  // out[i] = response at target bin first + i, for bins [first, last].
  void response(double tau_ps, double shift_bins, std::size_t first, std::size_t last,
                std::vector<double>& out) const {
    out.assign(last - first + 1, 0.0);
    // IRF-grid coordinate of target bin b is b + offset - shift.
    const double j_lo = static_cast<double>(first) + static_cast<double>(offset_) - shift_bins;
    const double j_hi = static_cast<double>(last) + static_cast<double>(offset_) - shift_bins;
    if (j_hi + 1.0 < 0.0) return;
    const auto top = static_cast<std::int64_t>(std::floor(j_hi)) + 1;

    const double x = width_ / tau_ps;
    const double one_minus_r = -std::expm1(-x);
    const double r = 1.0 - one_minus_r;
    const double k0 = (1.0 - one_minus_r / x) / x;
    const double k1 = (one_minus_r / x) * (one_minus_r / x);
    const double k2 = k1 * r;
    const double c_m1 = -k0 / 12.0;
    const double c_0 = k0 - (k1 - 2.0 * k0) / 12.0;
    const double c_1 = k1 - (k2 - 2.0 * k1 + k0) / 12.0;
    const double c_2 = k2 - (k2 * r - 2.0 * k2 + k1) / 12.0;  // K[m >= 2] = c_2 * r^(m-2)

    thread_local std::vector<double> y_;
    y_.assign(static_cast<std::size_t>(top) + 1, 0.0);
    const auto p_at = [&](std::int64_t i) {
      return i >= 0 && i < static_cast<std::int64_t>(irf_.size()) ? irf_[static_cast<std::size_t>(i)] : 0.0;
    };
    double s_lag2 = 0.0;  // S[i-2], with S[i] = r S[i-1] + p[i]
    for (std::int64_t i = 0; i <= top; ++i) {
      const double v = c_m1 * p_at(i + 1) + c_0 * p_at(i) + c_1 * p_at(i - 1) + c_2 * s_lag2;
      y_[static_cast<std::size_t>(i)] = std::max(0.0, v);
      s_lag2 = r * s_lag2 + p_at(i - 1);
    }
    const auto y_at = [&](std::int64_t i) {
      return i < 0 ? 0.0 : y_[static_cast<std::size_t>(i)];
    };
    for (std::size_t b = first; b <= last; ++b) {
      const double j = j_lo + static_cast<double>(b - first);
      const double jf = std::floor(j);
      const double frac = j - jf;
      const auto i = static_cast<std::int64_t>(jf);
      out[b - first] = (1.0 - frac) * y_at(i) + frac * y_at(i + 1);
    }
  }

 private:
  double width_;
  std::size_t n_target_;
  std::int64_t offset_ = 0;
  std::vector<double> irf_;
};

// Expected counts per bin of `model` on the `target` axis.
template <class Count>
std::vector<double> convolve_model(const DecayModel& model, const tcspc::BasicHistogram<Count>& irf,
                                   const BinAxis& target) {
  model.validate();
  std::vector<double> e(target.n_bins, model.background);
  if (target.n_bins == 0) return e;
  const Convolver conv(irf, target);
  std::vector<double> y;
  const double shift = model.t_shift_ps / static_cast<double>(target.bin_width_ps);
  for (const auto& c : model.components) {
    conv.response(c.lifetime_ns * 1000.0, shift, 0, target.n_bins - 1, y);
    for (std::size_t b = 0; b < e.size(); ++b) e[b] += c.amplitude * y[b];
  }
  return e;
}

// Expected counts on the IRF's own bin axis.
template <class Count>
std::vector<double> convolve_model(const DecayModel& model, const tcspc::BasicHistogram<Count>& irf) {
  return convolve_model(model, irf, axis_of(irf));
}

// Poisson deviance 2 * sum(e - n + n ln(n / e)); +inf when e <= 0 where n > 0.
inline double poisson_deviance(std::span<const double> n, std::span<const double> e) {
  double d = 0.0;
  for (std::size_t b = 0; b < n.size(); ++b) {
    if (n[b] > 0.0) {
      if (!(e[b] > 0.0)) return std::numeric_limits<double>::infinity();
      d += e[b] - n[b] + n[b] * std::log(n[b] / e[b]);
    } else {
      d += e[b];
    }
  }
  return 2.0 * d;
}

struct FitOptions {
  std::uint64_t seed = 0;
  std::size_t n_starts = 4;              // multistart initializations per component count
  std::size_t max_evaluations = 6000;    // simplex budget per start
  bool fit_shift = true;
  bool merge_components = true;
  double merge_threshold = 0.10;         // relative lifetime difference that triggers a merge
  std::optional<std::size_t> first_bin;  // fit range overrides (inclusive)
  std::optional<std::size_t> last_bin;
  std::optional<double> irf_fwhm_ps;     // measured from the IRF when absent
};

struct FitResult {
  DecayModel model;
  // Parameter order: a_1, tau_1 [ns], ..., a_n, tau_n [ns], background, t_shift [ps]
  // (the shift row is absent when it is not fitted).
  Eigen::MatrixXd covariance;
  std::vector<std::string> parameter_names;
  double deviance = 0.0;
  double reduced_chi2 = 0.0;  // Pearson
  std::size_t n_bins_used = 0;
  std::size_t first_bin = 0;
  std::size_t last_bin = 0;
  double irf_fwhm_ps = 0.0;
  std::size_t evaluations = 0;
  std::size_t requested_components = 0;
  bool merged = false;

  double lifetime_error_ns(std::size_t k) const {
    return std::sqrt(std::max(0.0, covariance(2 * k + 1, 2 * k + 1)));
  }
  double amplitude_error(std::size_t k) const {
    return std::sqrt(std::max(0.0, covariance(2 * k, 2 * k)));
  }
  double background_error() const {
    const auto i = 2 * model.components.size();
    return std::sqrt(std::max(0.0, covariance(i, i)));
  }
  std::vector<double> amplitude_fractions() const {
    double s = 0.0;
    for (const auto& c : model.components) s += c.amplitude;
    std::vector<double> f;
    for (const auto& c : model.components) f.push_back(s > 0.0 ? c.amplitude / s : 0.0);
    return f;
  }
};

// Raised when no multistart candidate converged. Carries the best candidate.
class FitFailedError : public FitError {
 public:
  FitFailedError(const std::string& what, DecayModel best, double deviance)
      : FitError(what), best_(std::move(best)), deviance_(deviance) {}
  const DecayModel& best_so_far() const { return best_; }
  double best_deviance() const { return deviance_; }

 private:
  DecayModel best_;
  double deviance_;
};

namespace detail {

// Minimizes the deviance over nonnegative linear coefficients c (component
// amplitudes then background) for fixed basis columns by projected Newton
// steps. `c` is used as the starting point and holds the result.
inline double solve_linear(const std::vector<std::vector<double>>& basis, std::span<const double> n,
                           std::vector<double>& c, std::vector<double>& e) {
  const std::size_t m = basis.size();
  const std::size_t nb = n.size();
  const auto expected = [&](const std::vector<double>& coef, std::vector<double>& out) {
    out.assign(nb, 0.0);
    for (std::size_t k = 0; k < m; ++k)
      if (coef[k] != 0.0)
        for (std::size_t b = 0; b < nb; ++b) out[b] += coef[k] * basis[k][b];
  };

  expected(c, e);
  double dev = poisson_deviance(n, e);
  if (!std::isfinite(dev)) {
    // Restart from a weighted least-squares solution with a positive floor.
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    double n_mean = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      const double w = 1.0 / std::max(n[b], 1.0);
      n_mean += n[b] / static_cast<double>(nb);
      for (std::size_t i = 0; i < m; ++i) {
        rhs(static_cast<Eigen::Index>(i)) += w * basis[i][b] * n[b];
        for (std::size_t j = 0; j < m; ++j)
          a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += w * basis[i][b] * basis[j][b];
      }
    }
    a.diagonal().array() += 1e-12 * (a.diagonal().maxCoeff() + 1e-300);
    const Eigen::VectorXd sol = a.ldlt().solve(rhs);
    for (std::size_t i = 0; i < m; ++i) c[i] = std::max(0.0, sol(static_cast<Eigen::Index>(i)));
    c[m - 1] = std::max(c[m - 1], 1e-3 * n_mean + 1e-12);
    expected(c, e);
    dev = poisson_deviance(n, e);
    if (!std::isfinite(dev)) return dev;
  }

  // Rounding floor of the deviance sum.
  double tiny = 0.0;
  for (const double v : n) tiny += v;
  tiny = 1e-15 * tiny + 1e-300;

  std::vector<double> trial(m), trial_e;
  Eigen::VectorXd g(static_cast<Eigen::Index>(m));
  Eigen::MatrixXd h(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (int it = 0; it < 100; ++it) {
    g.setZero();
    h.setZero();
    for (std::size_t b = 0; b < nb; ++b) {
      const double ratio = n[b] > 0.0 ? n[b] / e[b] : 0.0;
      const double curv = n[b] > 0.0 ? ratio / e[b] : 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double bi = basis[i][b];
        if (bi == 0.0) continue;
        g(static_cast<Eigen::Index>(i)) += bi * (1.0 - ratio);
        for (std::size_t j = 0; j <= i; ++j)
          h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += curv * bi * basis[j][b];
      }
    }
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < i; ++j)
        h(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
            h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));

    // Free set: coefficients off the bound or with a descent direction into the interior.
    std::vector<Eigen::Index> free;
    for (std::size_t i = 0; i < m; ++i)
      if (c[i] > 0.0 || g(static_cast<Eigen::Index>(i)) < 0.0) free.push_back(static_cast<Eigen::Index>(i));
    if (free.empty()) break;
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd hf(nf, nf);
    Eigen::VectorXd gf(nf);
    for (Eigen::Index i = 0; i < nf; ++i) {
      gf(i) = g(free[static_cast<std::size_t>(i)]);
      for (Eigen::Index j = 0; j < nf; ++j) hf(i, j) = h(free[static_cast<std::size_t>(i)], free[static_cast<std::size_t>(j)]);
    }
    // Jacobi scaling keeps the step scale-free when basis norms differ by decades.
    Eigen::VectorXd sc(nf);
    for (Eigen::Index i = 0; i < nf; ++i) sc(i) = hf(i, i) > 0.0 ? 1.0 / std::sqrt(hf(i, i)) : 1.0;
    Eigen::MatrixXd hs = sc.asDiagonal() * hf * sc.asDiagonal();
    hs.diagonal().array() += 1e-12;
    const Eigen::VectorXd d = sc.asDiagonal() * hs.ldlt().solve(-sc.cwiseProduct(gf));
    // Newton decrement: predicted deviance reduction of the full step.
    if (-gf.dot(d) <= 1e-13 * dev + tiny) break;

    double alpha = 1.0;
    double new_dev = dev;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls, alpha *= 0.5) {
      trial = c;
      for (Eigen::Index i = 0; i < nf; ++i) {
        const auto k = static_cast<std::size_t>(free[static_cast<std::size_t>(i)]);
        trial[k] = std::max(0.0, c[k] + alpha * d(i));
      }
      expected(trial, trial_e);
      new_dev = poisson_deviance(n, trial_e);
      if (new_dev <= dev) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    double step = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      step = std::max(step, std::abs(trial[i] - c[i]));
      scale = std::max(scale, std::abs(c[i]));
    }
    const double gain = dev - new_dev;
    c = trial;
    e.swap(trial_e);
    dev = new_dev;
    if (step <= 1e-15 * scale || gain <= 1e-15 * std::max(1.0, dev)) break;
  }
  return dev;
}

// Fit problem for a fixed number of components on a fixed bin range.
class Problem {
 public:
  Problem(const Convolver& conv, std::vector<double> data, std::size_t first, std::size_t last,
          std::size_t n_comp, bool fit_shift)
      : conv_(conv), n_(std::move(data)), first_(first), last_(last), k_(n_comp), fit_shift_(fit_shift) {
    basis_.assign(k_ + 1, {});
    basis_[k_].assign(n_.size(), 1.0);
    coef_.assign(k_ + 1, 0.0);
  }

  std::size_t n_components() const { return k_; }

  // x = (ln tau_1 [ps], ..., ln tau_k [ps], shift [bins]).
  double deviance(const std::vector<double>& x) {
    for (std::size_t k = 0; k < k_; ++k) {
      if (!(x[k] > -5.0 && x[k] < 15.0)) return std::numeric_limits<double>::infinity();
    }
    const double shift = fit_shift_ ? x[k_] : 0.0;
    if (std::abs(shift) > 0.25 * static_cast<double>(conv_.size()))
      return std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < k_; ++k) conv_.response(std::exp(x[k]), shift, first_, last_, basis_[k]);
    // Each evaluation starts from the previous coefficients; the first
    // starts from the weighted least-squares solution.
    return solve_linear(basis_, n_, coef_, e_);
  }

  const std::vector<double>& coefficients() const { return coef_; }
  void set_coefficients(std::vector<double> c) { coef_ = std::move(c); }
  const std::vector<double>& data() const { return n_; }

  DecayModel model_at(const std::vector<double>& x) {
    deviance(x);
    DecayModel m;
    for (std::size_t k = 0; k < k_; ++k) m.components.push_back({coef_[k], std::exp(x[k]) / 1000.0});
    m.background = coef_[k_];
    m.t_shift_ps = fit_shift_ ? x[k_] * conv_.bin_width_ps() : 0.0;
    return m;
  }

 private:
  const Convolver& conv_;
  std::vector<double> n_;
  std::size_t first_, last_, k_;
  bool fit_shift_;
  std::vector<std::vector<double>> basis_;
  std::vector<double> coef_;
  std::vector<double> e_;
};

struct Candidate {
  std::vector<double> x;
  double deviance = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
  bool converged = false;
};

// Sorted by lifetime so that runs are comparable and merges are adjacent.
inline void sort_components(DecayModel& m) {
  std::sort(m.components.begin(), m.components.end(),
            [](const auto& a, const auto& b) { return a.lifetime_ns > b.lifetime_ns; });
}

}  // namespace detail

// Fit range [first, last] inclusive: from 2 IRF FWHM before the histogram
// peak to the last bin holding at least one count.
template <class Count>
std::pair<std::size_t, std::size_t> fit_range(const tcspc::BasicHistogram<Count>& hist,
                                              double irf_fwhm_ps) {
  const auto y = tcspc::smooth(hist.as_double(), 1);
  const std::size_t peak = argmax(y);
  const auto back = static_cast<std::size_t>(
      std::ceil(2.0 * irf_fwhm_ps / static_cast<double>(hist.bin_width_ps)));
  const std::size_t first = peak > back ? peak - back : 0;
  std::size_t last = hist.size() - 1;
  while (last > first && static_cast<double>(hist.counts[last]) < 1.0) --last;
  return {first, last};
}

namespace detail {

template <class Count, class IrfCount>
FitResult fit_fixed(const tcspc::BasicHistogram<Count>& hist, const tcspc::BasicHistogram<IrfCount>& irf,
                    std::size_t n_components, const FitOptions& opt) {
  const Convolver conv(irf, axis_of(hist));
  const double width = static_cast<double>(hist.bin_width_ps);

  double irf_fwhm = opt.irf_fwhm_ps.value_or(tcspc::fwhm_ps(irf, 1));
  if (!std::isfinite(irf_fwhm)) irf_fwhm = 10.0 * width;
  auto [first, last] = fit_range(hist, irf_fwhm);
  if (opt.first_bin) first = *opt.first_bin;
  if (opt.last_bin) last = std::min(*opt.last_bin, hist.size() - 1);
  if (first >= last) throw FitError("fit: empty fit range");

  std::vector<double> data(hist.counts.begin() + static_cast<std::ptrdiff_t>(first),
                           hist.counts.begin() + static_cast<std::ptrdiff_t>(last) + 1);
  std::size_t populated = 0;
  for (const double v : data) populated += v > 0.0 ? 1 : 0;
  if (populated < 30 * n_components)
    throw FitError("fit: " + std::to_string(populated) + " populated bins in the fit range, need >= " +
                   std::to_string(30 * n_components) + " for " + std::to_string(n_components) +
                   " component(s)");

  // Moment estimate: mean delay of the background-subtracted data relative to the IRF.
  double tau0 = 0.0;
  {
    const std::size_t tail = std::max<std::size_t>(1, data.size() / 20);
    double bg = 0.0;
    for (std::size_t i = 0; i < tail; ++i) bg += data[i] / static_cast<double>(tail);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double v = std::max(0.0, data[i] - bg);
      num += v * hist.bin_center_ps(first + i);
      den += v;
    }
    double inum = 0.0, iden = 0.0;
    for (std::size_t i = 0; i < irf.size(); ++i) {
      inum += static_cast<double>(irf.counts[i]) * irf.bin_center_ps(i);
      iden += static_cast<double>(irf.counts[i]);
    }
    if (den > 0.0 && iden > 0.0) tau0 = num / den - inum / iden;
    const double span = width * static_cast<double>(data.size());
    tau0 = std::clamp(tau0, 2.0 * width, 0.5 * span);
  }

  const std::size_t dim = n_components + (opt.fit_shift ? 1 : 0);
  const std::size_t n_starts = std::max<std::size_t>(1, opt.n_starts);
  std::vector<Candidate> cands(n_starts);
  NelderMead nm;
  nm.max_evaluations = opt.max_evaluations;

  parallel_for(n_starts, [&](std::size_t s) {
    Problem prob(conv, data, first, last, n_components, opt.fit_shift);
    Rng rng = make_rng(opt.seed, 0xF17, (n_components << 16) + s);
    std::normal_distribution<double> jitter(0.0, 0.35);
    std::vector<double> x0(dim, 0.0), step(dim, 0.3);
    // Start s: lifetimes spread geometrically (factor 3) around the moment
    // estimate, the whole ladder displaced by a log-spaced factor per start.
    const auto si = static_cast<double>(s);
    const double ladder = std::pow(2.0, 0.5 * (s % 2 == 0 ? si / 2.0 : -(si + 1.0) / 2.0));
    for (std::size_t k = 0; k < n_components; ++k) {
      const double spread = std::pow(3.0, static_cast<double>(k) - 0.5 * static_cast<double>(n_components - 1));
      x0[k] = std::log(tau0 * ladder / spread) + (s == 0 ? 0.0 : 0.25 * jitter(rng));
    }
    if (opt.fit_shift) step[n_components] = 0.5;
    const auto f = [&](const std::vector<double>& x) { return prob.deviance(x); };
    const auto r = nm.minimize(f, x0, step);
    cands[s] = {r.x, r.f, r.evaluations, r.converged};
  });

  std::size_t best = 0;
  std::size_t evals = 0;
  bool any_converged = false;
  for (std::size_t s = 0; s < cands.size(); ++s) {
    evals += cands[s].evaluations;
    any_converged = any_converged || cands[s].converged;
    if (cands[s].deviance < cands[best].deviance) best = s;
  }

  Problem prob(conv, data, first, last, n_components, opt.fit_shift);
  DecayModel model = prob.model_at(cands[best].x);
  const double dev = prob.deviance(cands[best].x);
  if (!any_converged || !std::isfinite(dev)) {
    std::string lts;
    for (const auto& c : model.components) lts += " " + std::to_string(c.lifetime_ns);
    throw FitFailedError("fit: no multistart candidate converged (best deviance " + std::to_string(dev) +
                             ", lifetimes ns:" + lts + ")",
                         model, dev);
  }

  FitResult res;
  res.first_bin = first;
  res.last_bin = last;
  res.n_bins_used = data.size();
  res.irf_fwhm_ps = irf_fwhm;
  res.deviance = dev;
  res.evaluations = evals;
  res.requested_components = n_components;

  // Expected counts and Jacobian columns over the fit range.
  const auto expected_for = [&](const DecayModel& m) {
    std::vector<double> e(data.size(), m.background), y;
    for (const auto& c : m.components) {
      conv.response(c.lifetime_ns * 1000.0, m.t_shift_ps / width, first, last, y);
      for (std::size_t b = 0; b < e.size(); ++b) e[b] += c.amplitude * y[b];
    }
    return e;
  };
  const std::vector<double> e = expected_for(model);

  double pearson = 0.0;
  for (std::size_t b = 0; b < e.size(); ++b)
    if (e[b] > 0.0) pearson += (data[b] - e[b]) * (data[b] - e[b]) / e[b];
  const std::size_t n_par = 2 * n_components + 1 + (opt.fit_shift ? 1 : 0);
  res.reduced_chi2 = data.size() > n_par ? pearson / static_cast<double>(data.size() - n_par) : 0.0;

  std::vector<std::vector<double>> jac;
  for (std::size_t k = 0; k < n_components; ++k) {
    const auto& c = model.components[k];
    std::vector<double> y;
    conv.response(c.lifetime_ns * 1000.0, model.t_shift_ps / width, first, last, y);
    jac.push_back(y);
    const double h_ps = 1e-4 * c.lifetime_ns * 1000.0;
    std::vector<double> yp, ym;
    conv.response(c.lifetime_ns * 1000.0 + h_ps, model.t_shift_ps / width, first, last, yp);
    conv.response(c.lifetime_ns * 1000.0 - h_ps, model.t_shift_ps / width, first, last, ym);
    std::vector<double> dtau(y.size());
    for (std::size_t b = 0; b < y.size(); ++b) dtau[b] = c.amplitude * (yp[b] - ym[b]) / (2.0 * h_ps) * 1000.0;
    jac.push_back(dtau);
    res.parameter_names.push_back("amplitude_" + std::to_string(k + 1));
    res.parameter_names.push_back("lifetime_ns_" + std::to_string(k + 1));
  }
  jac.emplace_back(data.size(), 1.0);
  res.parameter_names.push_back("background");
  if (opt.fit_shift) {
    const double hs = 0.01;  // bins
    DecayModel mp = model, mm = model;
    mp.t_shift_ps += hs * width;
    mm.t_shift_ps -= hs * width;
    const auto ep = expected_for(mp), em = expected_for(mm);
    std::vector<double> ds(data.size());
    for (std::size_t b = 0; b < ds.size(); ++b) ds[b] = (ep[b] - em[b]) / (2.0 * hs * width);
    jac.push_back(ds);
    res.parameter_names.push_back("t_shift_ps");
  }

  const auto np = static_cast<Eigen::Index>(jac.size());
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(np, np);
  for (std::size_t b = 0; b < data.size(); ++b) {
    if (!(e[b] > 0.0) || !(data[b] > 0.0)) continue;
    const double w = data[b] / (e[b] * e[b]);
    for (Eigen::Index i = 0; i < np; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) info(i, j) += w * jac[static_cast<std::size_t>(i)][b] * jac[static_cast<std::size_t>(j)][b];
  }
  info = info.selfadjointView<Eigen::Lower>();
  Eigen::VectorXd d(np);
  for (Eigen::Index i = 0; i < np; ++i) d(i) = info(i, i) > 0.0 ? 1.0 / std::sqrt(info(i, i)) : 1.0;
  const Eigen::MatrixXd scaled = d.asDiagonal() * info * d.asDiagonal();
  const Eigen::MatrixXd inv = scaled.completeOrthogonalDecomposition().pseudoInverse();
  Eigen::MatrixXd cov = d.asDiagonal() * inv * d.asDiagonal();
  res.covariance = 0.5 * (cov + cov.transpose());

  // Report components longest-lived first, permuting the covariance to match.
  std::vector<std::size_t> order(n_components);
  for (std::size_t k = 0; k < n_components; ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return model.components[a].lifetime_ns > model.components[b].lifetime_ns;
  });
  Eigen::VectorXi perm(np);
  for (std::size_t k = 0; k < n_components; ++k) {
    perm(static_cast<Eigen::Index>(2 * k)) = static_cast<int>(2 * order[k]);
    perm(static_cast<Eigen::Index>(2 * k + 1)) = static_cast<int>(2 * order[k] + 1);
  }
  for (Eigen::Index i = static_cast<Eigen::Index>(2 * n_components); i < np; ++i) perm(i) = static_cast<int>(i);
  Eigen::MatrixXd pc(np, np);
  for (Eigen::Index i = 0; i < np; ++i)
    for (Eigen::Index j = 0; j < np; ++j) pc(i, j) = res.covariance(perm(i), perm(j));
  res.covariance = pc;
  sort_components(model);
  res.model = model;
  return res;
}

}  // namespace detail

// Poisson maximum-likelihood fit of an n-component decay convolved with the
// IRF. Components whose lifetimes end up within merge_threshold of each
// other are merged by refitting with one component fewer.
template <class Count, class IrfCount>
FitResult fit_decay(const tcspc::BasicHistogram<Count>& hist, const tcspc::BasicHistogram<IrfCount>& irf,
                    std::size_t n_components, const FitOptions& options = {}) {
  if (n_components == 0) throw DomainError("fit: n_components must be >= 1");
  if (hist.size() == 0) throw FitError("fit: histogram has no bins");
  bool any = false;
  for (const auto c : hist.counts) {
    if (!(static_cast<double>(c) >= 0.0)) throw DomainError("fit: histogram counts must be >= 0");
    any = any || static_cast<double>(c) > 0.0;
  }
  if (!any) throw FitError("fit: histogram is all zeros");

  std::size_t n = n_components;
  for (;;) {
    FitResult r = detail::fit_fixed(hist, irf, n, options);
    r.requested_components = n_components;
    r.merged = n != n_components;
    bool close = false;
    for (std::size_t k = 0; k + 1 < r.model.components.size(); ++k) {
      const double a = r.model.components[k].lifetime_ns, b = r.model.components[k + 1].lifetime_ns;
      if (std::abs(a - b) < options.merge_threshold * std::max(a, b)) close = true;
    }
    if (!options.merge_components || !close || n == 1) return r;
    --n;
  }
}

enum class SliceAxis { wavelength, time };

struct Profile {
  SliceAxis cut = SliceAxis::wavelength;  // axis the band was taken on
  std::vector<double> axis;               // the orthogonal axis
  std::vector<double> values;
};

// Integrates the map over a band of `width` centred on `at` along `cut`.
// Each grid point contributes its intensity times its local grid spacing.
inline Profile slice_map(const twins::TimeFrequencyMap& map, SliceAxis cut, double at, double width) {
  const auto& grid = cut == SliceAxis::wavelength ? map.wavelength_nm : map.time_ps;
  if (grid.empty()) throw DomainError("fit: map is empty");
  if (!(width > 0.0)) throw DomainError("fit: slice width must be > 0");
  if (!(at >= grid.front() && at <= grid.back()))
    throw DomainError("fit: slice position " + std::to_string(at) + " outside axis range [" +
                      std::to_string(grid.front()) + ", " + std::to_string(grid.back()) + "]");
  const double lo = at - 0.5 * width, hi = at + 0.5 * width;
  const auto spacing = [&](std::size_t i) {
    if (grid.size() == 1) return 1.0;
    if (i == 0) return grid[1] - grid[0];
    if (i + 1 == grid.size()) return grid[i] - grid[i - 1];
    return 0.5 * (grid[i + 1] - grid[i - 1]);
  };

  Profile p;
  p.cut = cut;
  p.axis = cut == SliceAxis::wavelength ? map.time_ps : map.wavelength_nm;
  p.values.assign(p.axis.size(), 0.0);
  std::size_t used = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < lo || grid[i] > hi) continue;
    ++used;
    const double w = spacing(i);
    for (std::size_t j = 0; j < p.axis.size(); ++j)
      p.values[j] += w * (cut == SliceAxis::wavelength ? map.at(i, j) : map.at(j, i));
  }
  if (used == 0) throw DomainError("fit: slice band contains no grid points");
  return p;
}

// A decay profile (cut along wavelength) as a real-valued histogram for fitting.
inline tcspc::BasicHistogram<double> profile_histogram(const Profile& p) {
  if (p.cut != SliceAxis::wavelength) throw DomainError("fit: profile is a spectrum, not a decay");
  if (p.axis.size() < 2) throw DomainError("fit: decay profile needs at least two bins");
  tcspc::BasicHistogram<double> h;
  h.bin_width_ps = std::llround(p.axis[1] - p.axis[0]);
  h.t0_ps = std::llround(p.axis[0]);
  h.counts.reserve(p.values.size());
  for (const double v : p.values) h.counts.push_back(std::max(0.0, v));
  return h;
}

}  // namespace epps::fit
