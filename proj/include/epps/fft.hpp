#pragma once

// Thin RAII layer over FFTW for the transforms used by the
// Fourier-transform spectrometer: real-to-complex forward and complex
// in-place forward/backward.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <cstddef>
#include <mutex>
#include <span>
#include <vector>

namespace epps {

namespace detail {
// FFTW's planner is not thread-safe.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
}  // namespace detail

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Forward real-to-complex transform of fixed size n; output has n/2+1 bins.
class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }

  // Zero-pads `x` to the transform size. Returns |X_k| for k = 0..n/2.
  std::vector<double> magnitude(std::span<const double> x) {
    run(x);
    std::vector<double> m(n_ / 2 + 1);
    for (std::size_t k = 0; k < m.size(); ++k)
      m[k] = std::hypot(out_.get()[k][0], out_.get()[k][1]);
    return m;
  }

  std::vector<std::complex<double>> transform(std::span<const double> x) {
    run(x);
    std::vector<std::complex<double>> c(n_ / 2 + 1);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = {out_.get()[k][0], out_.get()[k][1]};
    return c;
  }

 private:
  void run(std::span<const double> x) {
    const std::size_t m = std::min(x.size(), n_);
    for (std::size_t i = 0; i < m; ++i) in_.get()[i] = x[i];
    for (std::size_t i = m; i < n_; ++i) in_.get()[i] = 0.0;
    fftw_execute(plan_);
  }

  std::size_t n_;
  std::unique_ptr<double, detail::FftwFree> in_;
  std::unique_ptr<fftw_complex, detail::FftwFree> out_;
  fftw_plan plan_;
};

// Unnormalized complex DFT, in place. sign = FFTW_FORWARD or FFTW_BACKWARD.
inline void complex_fft(std::vector<std::complex<double>>& x, int sign) {
  auto* p = reinterpret_cast<fftw_complex*>(x.data());
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_1d(static_cast<int>(x.size()), p, p, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(detail::fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace epps
