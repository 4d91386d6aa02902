#pragma once

// Advantage-sign statistics: the closed-form group model, its Monte Carlo
// check, the surrogate contribution-balance diagnostic, and the exact
// gradient-norm ratio available for tabular policies.

#include <cstdint>
#include <limits>

#include "hpo/core.hpp"
#include "hpo/objective.hpp"
#include "hpo/policy.hpp"
#include "hpo/rng.hpp"

namespace hpo {

inline constexpr double kInfinitySentinel = std::numeric_limits<double>::infinity();

struct SignProbabilities {
  double p_pos = 0.0;
  double p_neg = 0.0;
  double ratio = 0.0;  // p_neg / p_pos
};

/// p_pos = p(1 - p^(N-1)), p_neg = (1-p)(1 - (1-p)^(N-1)) for N i.i.d.
/// Bernoulli(p) rewards with centered advantages. Requires 0 < p < 1, N >= 2.
SignProbabilities closed_form_sign_probs(double p, std::uint32_t n);

struct MonteCarloSignEstimate {
  std::uint64_t groups = 0;
  std::uint64_t n_pos = 0;
  std::uint64_t n_neg = 0;
  double p_pos_hat = 0.0;
  double p_neg_hat = 0.0;
  // Standard errors from the between-group variance of the per-group counts,
  // which accounts for responses of one group sharing a mean.
  double stderr_pos = 0.0;
  double stderr_neg = 0.0;
  double ratio_hat = 0.0;     // p_neg_hat / p_pos_hat (inf when no positives)
  double stderr_ratio = 0.0;  // delta method
};

/// Simulates groups of N Bernoulli(p) rewards, centers each group and counts
/// strict advantage signs per response. Group g of chunk c (65536 groups per
/// chunk) draws from RngStream(seed, monte_carlo, c), so the estimate is a
/// pure function of (p, N, num_groups, seed).
MonteCarloSignEstimate monte_carlo_sign_probs(double p, std::uint32_t n, std::uint64_t num_groups,
                                              std::uint64_t seed);

/// Sign counts, sign frequencies, adaptive alpha, sign-conditional mean
/// |surrogate| per token and the balance ratio
/// rho = (p_pos * m_pos) / (p_neg * m_neg), or +inf with rho_sentinel set when
/// the denominator vanishes. Zero-advantage responses are excluded.
BatchStats surrogate_balance(const Batch& batch, const std::vector<AdvantageSet>& sets,
                             const BatchTokenValues& token_surrogates, double alpha_min,
                             double sign_eps);

/// ||G_pos||_2 / ||G_neg||_2 from the unweighted gradient components; +inf
/// when G_neg is zero.
double exact_gradient_norm_ratio(const Batch& batch, const std::vector<AdvantageSet>& sets,
                                 const TabularPolicy& policy, const TrainConfig& config);

}  // namespace hpo
