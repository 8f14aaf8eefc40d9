#pragma once

#include <complex>
#include <mutex>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

namespace ppkit::detail {

// FFTW planning is not thread-safe; execution of distinct plans is.
inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

// Unnormalized 2D DFT, in place. Array is row-major with `rows` as the
// slow dimension; sign -1 is the forward (e^{-2pi i}) transform.
inline void fft2_inplace(std::vector<std::complex<double>>& a, int rows,
                         int cols, int sign) {
  if (a.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("fft2_inplace: size mismatch");
  auto* data = reinterpret_cast<fftw_complex*>(a.data());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    plan = fftw_plan_dft_2d(rows, cols, data, data,
                            sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD,
                            FFTW_ESTIMATE);
  }
  if (!plan) throw std::runtime_error("fft2_inplace: planning failed");
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    fftw_destroy_plan(plan);
  }
}

}  // namespace ppkit::detail
