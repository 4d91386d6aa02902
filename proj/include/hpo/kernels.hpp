#pragma once

// Data-parallel inner loops.
//
// Every kernel has a scalar reference implementation and, on x86-64 hosts
// with AVX2+FMA, a vectorized variant. The variant is picked once at first
// use from cpuid; setting HPO_LAB_SIMD=scalar in the environment forces the
// reference table. Vector reductions sum in a different order than the
// reference loops, so results agree to rounding, not bitwise; a given
// process always uses one table, which keeps runs reproducible on one host.

#include <cstddef>
#include <span>
#include <string_view>

namespace hpo::kernels {

struct SurrogateTotals {
  double sum = 0.0;      // sum of clipped surrogates
  double abs_sum = 0.0;  // sum of their absolute values
  std::size_t clipped = 0;
};

struct KernelTable {
  std::string_view name;
  double (*sum)(const double* x, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*max)(const double* x, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // out = (x - shift) / divisor, lane-wise IEEE division
  void (*shift_divide)(const double* x, double shift, double divisor, double* out, std::size_t n);
  // sum of (x - center)^2
  double (*centered_sq_sum)(const double* x, double center, std::size_t n);
  // out = exp(x - shift); returns the sum of out
  double (*exp_shifted)(const double* x, double shift, double* out, std::size_t n);
  // For each token: ratio = exp(new_lp - old_lp), surrogate
  // l = min(ratio*adv, clip(ratio, 1-eps, 1+eps)*adv), and
  // coeff = dl/d(new_lp), which is ratio*adv on the unclipped branch and 0
  // when the clipped branch is strictly smaller.
  SurrogateTotals (*clipped_surrogate)(const double* new_lp, const double* old_lp, double adv,
                                       double eps, double* ratio_out, double* coeff_out,
                                       std::size_t n);
};

const KernelTable& scalar_table();
/// nullptr when the AVX2 variant is not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();
/// Table used by the span wrappers below.
const KernelTable& active();

inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }
inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}
inline double max(std::span<const double> x) { return active().max(x.data(), x.size()); }
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline void shift_divide(std::span<const double> x, double shift, double divisor,
                         std::span<double> out) {
  active().shift_divide(x.data(), shift, divisor, out.data(), x.size());
}
inline double centered_sq_sum(std::span<const double> x, double center) {
  return active().centered_sq_sum(x.data(), center, x.size());
}
inline double exp_shifted(std::span<const double> x, double shift, std::span<double> out) {
  return active().exp_shifted(x.data(), shift, out.data(), x.size());
}
inline SurrogateTotals clipped_surrogate(std::span<const double> new_lp,
                                         std::span<const double> old_lp, double adv, double eps,
                                         std::span<double> ratio_out,
                                         std::span<double> coeff_out) {
  return active().clipped_surrogate(new_lp.data(), old_lp.data(), adv, eps, ratio_out.data(),
                                    coeff_out.data(), new_lp.size());
}

}  // namespace hpo::kernels
