#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <vector>

#include "hpo/kernels.hpp"
#include "hpo/rng.hpp"

using namespace hpo;
namespace k = hpo::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo, double hi) {
  RngStream rng(seed, RngDomain::test, n);
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

bool close(double a, double b, double rel) {
  if (a == b) return true;
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-300});
}

const std::size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 100, 1027};

}  // namespace

TEST_CASE("scalar kernels against direct loops") {
  const auto& s = k::scalar_table();
  const std::vector<double> x{1.0, -2.0, 3.5};
  const std::vector<double> y{0.5, 0.25, 2.0};
  CHECK(s.sum(x.data(), 3) == 2.5);
  CHECK(s.dot(x.data(), y.data(), 3) == 0.5 - 0.5 + 7.0);
  CHECK(s.max(x.data(), 3) == 3.5);
  std::vector<double> z = y;
  s.axpy(2.0, x.data(), z.data(), 3);
  CHECK(z == std::vector<double>{2.5, -3.75, 9.0});
  std::vector<double> out(3);
  s.shift_divide(x.data(), 1.0, 2.0, out.data(), 3);
  CHECK(out == std::vector<double>{0.0, -1.5, 1.25});
  CHECK(s.centered_sq_sum(x.data(), 1.0, 3) == 0.0 + 9.0 + 6.25);
  const double total = s.exp_shifted(x.data(), 3.5, out.data(), 3);
  CHECK(out[2] == 1.0);
  CHECK(out[0] == doctest::Approx(std::exp(-2.5)).epsilon(1e-15));
  CHECK(total == doctest::Approx(std::exp(-2.5) + std::exp(-5.5) + 1.0).epsilon(1e-15));
}

TEST_CASE("scalar clipped surrogate matches the two-branch definition") {
  const auto& s = k::scalar_table();
  const std::vector<double> old_lp{-1.0, -1.0, -1.0, -1.0};
  const std::vector<double> new_lp{-1.0, -0.5, -2.0, -1.1};
  std::vector<double> ratio(4), coeff(4);
  for (double adv : {1.0, -1.0, 0.0}) {
    const auto t = s.clipped_surrogate(new_lp.data(), old_lp.data(), adv, 0.2, ratio.data(),
                                       coeff.data(), 4);
    double sum = 0.0;
    std::size_t clipped = 0;
    for (int j = 0; j < 4; ++j) {
      const double r = std::exp(new_lp[j] - old_lp[j]);
      CHECK(ratio[j] == doctest::Approx(r).epsilon(1e-15));
      const double a = r * adv;
      const double b = std::clamp(r, 0.8, 1.2) * adv;
      sum += std::min(a, b);
      if (b < a) {
        ++clipped;
        CHECK(coeff[j] == 0.0);
      } else {
        CHECK(coeff[j] == doctest::Approx(a).epsilon(1e-15));
      }
    }
    CHECK(t.sum == doctest::Approx(sum).epsilon(1e-14));
    CHECK(t.clipped == clipped);
  }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const auto* v = k::avx2_table();
  if (!v) {
    MESSAGE("AVX2 variant unavailable on this host; equivalence not exercised");
    return;
  }
  const auto& s = k::scalar_table();
  for (std::size_t n : kSizes) {
    CAPTURE(n);
    auto x = random_vec(n, 1, -3.0, 3.0);
    auto y = random_vec(n, 2, -3.0, 3.0);
    CHECK(close(s.sum(x.data(), n), v->sum(x.data(), n), 1e-12 * (n + 1)));
    CHECK(close(s.dot(x.data(), y.data(), n), v->dot(x.data(), y.data(), n), 1e-12 * (n + 1)));
    if (n > 0) CHECK(s.max(x.data(), n) == v->max(x.data(), n));
    auto ys = y, yv = y;
    s.axpy(0.7, x.data(), ys.data(), n);
    v->axpy(0.7, x.data(), yv.data(), n);
    // FMA rounds once where the reference rounds twice.
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(std::abs(ys[j] - yv[j]) <= 2.3e-16 * (std::abs(0.7 * x[j]) + std::abs(y[j])));
    }
    std::vector<double> os(n), ov(n);
    s.shift_divide(x.data(), 0.3, 1.7, os.data(), n);
    v->shift_divide(x.data(), 0.3, 1.7, ov.data(), n);
    CHECK(os == ov);
    CHECK(close(s.centered_sq_sum(x.data(), 0.2, n), v->centered_sq_sum(x.data(), 0.2, n),
                1e-12 * (n + 1)));
    const double ts = s.exp_shifted(x.data(), 3.0, os.data(), n);
    const double tv = v->exp_shifted(x.data(), 3.0, ov.data(), n);
    CHECK(close(ts, tv, 1e-13 * (n + 1)));
    for (std::size_t j = 0; j < n; ++j) CHECK(close(os[j], ov[j], 4e-16 * 8));

    auto new_lp = random_vec(n, 3, -3.0, -0.01);
    auto old_lp = random_vec(n, 4, -3.0, -0.01);
    for (std::size_t j = 0; j < n; ++j) new_lp[j] = old_lp[j] + 0.4 * (new_lp[j] + 1.5) / 1.5;
    for (double adv : {0.8, -0.6, 0.0}) {
      std::vector<double> rs(n), cs(n), rv(n), cv(n);
      const auto a = s.clipped_surrogate(new_lp.data(), old_lp.data(), adv, 0.2, rs.data(),
                                         cs.data(), n);
      const auto b = v->clipped_surrogate(new_lp.data(), old_lp.data(), adv, 0.2, rv.data(),
                                          cv.data(), n);
      CHECK(close(a.sum, b.sum, 1e-12 * (n + 1)));
      CHECK(close(a.abs_sum, b.abs_sum, 1e-12 * (n + 1)));
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(close(rs[j], rv[j], 4e-15));
        CHECK(close(cs[j], cv[j], 4e-15));
      }
      // Branch decisions can differ only for ratios within rounding of 1 +/- eps.
      CHECK(a.clipped == b.clipped);
    }
  }
}

TEST_CASE("avx2 exp edge cases") {
  const auto* v = k::avx2_table();
  if (!v) return;
  const auto& s = k::scalar_table();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> x{0.0, -1e-300, -700.0, -708.3, -745.0, -746.0, -1000.0, -inf,
                        1e-10, -0.5, -1e6, -20.0};
  std::vector<double> os(x.size()), ov(x.size());
  s.exp_shifted(x.data(), 0.0, os.data(), x.size());
  v->exp_shifted(x.data(), 0.0, ov.data(), x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    CAPTURE(x[j]);
    if (os[j] < std::numeric_limits<double>::min()) {
      CHECK(ov[j] <= std::numeric_limits<double>::min());
      CHECK(ov[j] >= 0.0);
    } else {
      CHECK(close(os[j], ov[j], 4e-15));
    }
  }
  CHECK(ov[7] == 0.0);
}

TEST_CASE("dispatch honours the scalar override") {
  const char* env = std::getenv("HPO_LAB_SIMD");
  if (env && std::string(env) == "scalar") {
    CHECK(k::active().name == k::scalar_table().name);
  } else if (k::avx2_table()) {
    CHECK(k::active().name == k::avx2_table()->name);
  } else {
    CHECK(k::active().name == k::scalar_table().name);
  }
}
