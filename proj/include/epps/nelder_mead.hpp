#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace epps {

struct SimplexResult {
  std::vector<double> x;
  double f = 0.0;
  std::size_t evaluations = 0;
  bool converged = false;
};

// Derivative-free Nelder-Mead minimizer with restarts from the best vertex
// until a restart no longer improves the minimum.
//
// Convergence: spread of function values <= f_tol_abs + f_tol_rel * |f_best|
// and simplex diameter (max-norm) <= x_tol.
struct NelderMead {
  double f_tol_abs = 1e-9;
  double f_tol_rel = 1e-10;
  double x_tol = 1e-7;
  std::size_t max_evaluations = 4000;
  std::size_t max_restarts = 4;

  SimplexResult minimize(const std::function<double(const std::vector<double>&)>& f,
                         std::vector<double> x0, const std::vector<double>& step) const {
    SimplexResult best{x0, f(x0), 1, false};
    std::vector<double> s = step;
    for (std::size_t r = 0; r <= max_restarts; ++r) {
      auto res = run(f, best.x, s, max_evaluations - std::min(max_evaluations, best.evaluations));
      res.evaluations += best.evaluations;
      const bool improved = res.f < best.f - (f_tol_abs + f_tol_rel * std::abs(best.f));
      if (res.f <= best.f) {
        best.x = res.x;
        best.f = res.f;
      }
      best.evaluations = res.evaluations;
      best.converged = res.converged;
      if (!res.converged || !improved || best.evaluations >= max_evaluations) break;
      for (auto& v : s) v *= 0.5;
    }
    return best;
  }

 private:
  SimplexResult run(const std::function<double(const std::vector<double>&)>& f,
                    const std::vector<double>& x0, const std::vector<double>& step,
                    std::size_t budget) const {
    const std::size_t n = x0.size();
    std::vector<std::vector<double>> pts(n + 1, x0);
    std::vector<double> fv(n + 1);
    std::size_t evals = 0;
    const auto eval = [&](const std::vector<double>& x) {
      ++evals;
      const double v = f(x);
      return std::isfinite(v) ? v : std::numeric_limits<double>::max();
    };
    for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step[i];
    for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(pts[i]);

    std::vector<std::size_t> order(n + 1);
    std::vector<double> centroid(n), xr(n), xe(n), xc(n);
    bool converged = false;
    while (evals < budget) {
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
      const std::size_t ib = order.front(), iw = order.back(), isw = order[n - 1];

      double diam = 0.0;
      for (std::size_t i = 0; i <= n; ++i)
        for (std::size_t k = 0; k < n; ++k) diam = std::max(diam, std::abs(pts[i][k] - pts[ib][k]));
      if (fv[iw] - fv[ib] <= f_tol_abs + f_tol_rel * std::abs(fv[ib]) && diam <= x_tol) {
        converged = true;
        break;
      }

      std::fill(centroid.begin(), centroid.end(), 0.0);
      for (std::size_t i = 0; i <= n; ++i)
        if (i != iw)
          for (std::size_t k = 0; k < n; ++k) centroid[k] += pts[i][k] / static_cast<double>(n);

      for (std::size_t k = 0; k < n; ++k) xr[k] = centroid[k] + (centroid[k] - pts[iw][k]);
      const double fr = eval(xr);
      if (fr < fv[ib]) {
        for (std::size_t k = 0; k < n; ++k) xe[k] = centroid[k] + 2.0 * (centroid[k] - pts[iw][k]);
        const double fe = eval(xe);
        if (fe < fr) {
          pts[iw] = xe;
          fv[iw] = fe;
        } else {
          pts[iw] = xr;
          fv[iw] = fr;
        }
        continue;
      }
      if (fr < fv[isw]) {
        pts[iw] = xr;
        fv[iw] = fr;
        continue;
      }
      const bool outside = fr < fv[iw];
      for (std::size_t k = 0; k < n; ++k)
        xc[k] = outside ? centroid[k] + 0.5 * (xr[k] - centroid[k])
                        : centroid[k] + 0.5 * (pts[iw][k] - centroid[k]);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fv[iw])) {
        pts[iw] = xc;
        fv[iw] = fc;
        continue;
      }
      for (std::size_t i = 0; i <= n; ++i) {
        if (i == ib) continue;
        for (std::size_t k = 0; k < n; ++k) pts[i][k] = pts[ib][k] + 0.5 * (pts[i][k] - pts[ib][k]);
        fv[i] = eval(pts[i]);
      }
    }
    const std::size_t ib = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    return {pts[ib], fv[ib], evals, converged};
  }
};

}  // namespace epps
