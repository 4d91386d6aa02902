// AVX2+FMA variants of the kernel table. This translation unit is the only
// one compiled with -mavx2 -mfma; it is entered only after a cpuid check.

#include <immintrin.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

#include "hpo/kernels.hpp"

namespace hpo::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double hmax(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d m = _mm_max_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_max_sd(m, _mm_unpackhi_pd(m, m)));
}

// exp(x) with the Cephes range reduction x = n ln2 + r, |r| <= ln2/2, and a
// (3,4) rational approximation of exp(r). Relative error is within a couple of
// ulp of std::exp over the normal range. Inputs below ln(DBL_MIN) flush to 0.
inline __m256d exp_pd(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125E-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212E-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878E-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300E-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910E-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042E-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192E-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766E-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000009E0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d lo_limit = _mm256_set1_pd(-708.3964185322641);
  const __m256d hi_limit = _mm256_set1_pd(709.782712893384);
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);  // 2^52 + 2^51

  const __m256d nan_mask = _mm256_cmp_pd(x, x, _CMP_UNORD_Q);
  const __m256d under = _mm256_cmp_pd(x, lo_limit, _CMP_LT_OQ);
  const __m256d over = _mm256_cmp_pd(x, hi_limit, _CMP_GT_OQ);
  const __m256d xc = _mm256_min_pd(_mm256_max_pd(x, lo_limit), hi_limit);

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(xc, log2e),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, c1, xc);
  r = _mm256_fnmadd_pd(n, c2, r);
  const __m256d rr = _mm256_mul_pd(r, r);
  const __m256d px = _mm256_mul_pd(r, _mm256_fmadd_pd(_mm256_fmadd_pd(p0, rr, p1), rr, p2));
  const __m256d qx =
      _mm256_fmadd_pd(_mm256_fmadd_pd(_mm256_fmadd_pd(q0, rr, q1), rr, q2), rr, q3);
  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  e = _mm256_fmadd_pd(two, e, one);

  // 2^n assembled directly in the exponent field.
  const __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)),
                                      _mm256_castpd_si256(magic));
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52);
  __m256d result = _mm256_mul_pd(e, _mm256_castsi256_pd(bits));

  result = _mm256_andnot_pd(under, result);
  result = _mm256_blendv_pd(result, _mm256_set1_pd(std::numeric_limits<double>::infinity()), over);
  result = _mm256_blendv_pd(result, x, nan_mask);
  return result;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double max_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
  double m = hmax(acc);
  for (; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void shift_divide_avx2(const double* x, double shift, double divisor, double* out,
                       std::size_t n) {
  const __m256d sv = _mm256_set1_pd(shift);
  const __m256d dv = _mm256_set1_pd(divisor);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), sv), dv));
  }
  for (; i < n; ++i) out[i] = (x[i] - shift) / divisor;
}

double centered_sq_sum_avx2(const double* x, double center, std::size_t n) {
  const __m256d cv = _mm256_set1_pd(center);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), cv);
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = x[i] - center;
    s += d * d;
  }
  return s;
}

double exp_shifted_avx2(const double* x, double shift, double* out, std::size_t n) {
  const __m256d sv = _mm256_set1_pd(shift);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), sv));
    _mm256_storeu_pd(out + i, e);
    acc = _mm256_add_pd(acc, e);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    out[i] = std::exp(x[i] - shift);
    s += out[i];
  }
  return s;
}

SurrogateTotals clipped_surrogate_avx2(const double* new_lp, const double* old_lp, double adv,
                                       double eps, double* ratio_out, double* coeff_out,
                                       std::size_t n) {
  const __m256d av = _mm256_set1_pd(adv);
  const __m256d lo = _mm256_set1_pd(1.0 - eps);
  const __m256d hi = _mm256_set1_pd(1.0 + eps);
  const __m256d sign = _mm256_set1_pd(-0.0);
  __m256d sum = _mm256_setzero_pd();
  __m256d abs_sum = _mm256_setzero_pd();
  SurrogateTotals t;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d ratio =
        exp_pd(_mm256_sub_pd(_mm256_loadu_pd(new_lp + i), _mm256_loadu_pd(old_lp + i)));
    const __m256d unclipped = _mm256_mul_pd(ratio, av);
    const __m256d clipped = _mm256_mul_pd(_mm256_min_pd(_mm256_max_pd(ratio, lo), hi), av);
    const __m256d mask = _mm256_cmp_pd(clipped, unclipped, _CMP_LT_OQ);
    const __m256d l = _mm256_blendv_pd(unclipped, clipped, mask);
    _mm256_storeu_pd(ratio_out + i, ratio);
    _mm256_storeu_pd(coeff_out + i, _mm256_andnot_pd(mask, unclipped));
    sum = _mm256_add_pd(sum, l);
    abs_sum = _mm256_add_pd(abs_sum, _mm256_andnot_pd(sign, l));
    t.clipped += static_cast<std::size_t>(std::popcount(
        static_cast<unsigned>(_mm256_movemask_pd(mask))));
  }
  t.sum = hsum(sum);
  t.abs_sum = hsum(abs_sum);
  for (; i < n; ++i) {
    const double ratio = std::exp(new_lp[i] - old_lp[i]);
    const double unclipped = ratio * adv;
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
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

const KernelTable* avx2_table() {
  static const KernelTable table{
      "avx2",
      sum_avx2,
      dot_avx2,
      max_avx2,
      axpy_avx2,
      shift_divide_avx2,
      centered_sq_sum_avx2,
      exp_shifted_avx2,
      clipped_surrogate_avx2,
  };
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &table : nullptr;
}

}  // namespace hpo::kernels
