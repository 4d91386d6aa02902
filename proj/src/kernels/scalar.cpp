#include <algorithm>
#include <cmath>
#include <limits>

#include "hpo/kernels.hpp"

namespace hpo::kernels {
namespace {

double sum_scalar(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double max_scalar(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void shift_divide_scalar(const double* x, double shift, double divisor, double* out,
                         std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - shift) / divisor;
}

double centered_sq_sum_scalar(const double* x, double center, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - center;
    s += d * d;
  }
  return s;
}

double exp_shifted_scalar(const double* x, double shift, double* out, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - shift);
    s += out[i];
  }
  return s;
}

SurrogateTotals clipped_surrogate_scalar(const double* new_lp, const double* old_lp, double adv,
                                         double eps, double* ratio_out, double* coeff_out,
                                         std::size_t n) {
  SurrogateTotals t;
  const double lo = 1.0 - eps;
  const double hi = 1.0 + eps;
  for (std::size_t i = 0; i < n; ++i) {
    const double ratio = std::exp(new_lp[i] - old_lp[i]);
    const double unclipped = ratio * adv;
    const double clipped = std::clamp(ratio, lo, hi) * adv;
    const bool is_clipped = clipped < unclipped;
    const double l = is_clipped ? clipped : unclipped;
    ratio_out[i] = ratio;
    coeff_out[i] = is_clipped ? 0.0 : unclipped;
    t.sum += l;
    t.abs_sum += std::abs(l);
    t.clipped += is_clipped ? 1 : 0;
  }
  return t;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      "scalar",
      sum_scalar,
      dot_scalar,
      max_scalar,
      axpy_scalar,
      shift_divide_scalar,
      centered_sq_sum_scalar,
      exp_shifted_scalar,
      clipped_surrogate_scalar,
  };
  return table;
}

}  // namespace hpo::kernels
