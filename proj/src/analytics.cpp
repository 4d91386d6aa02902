#include "hpo/analytics.hpp"

#include <algorithm>
#include <cmath>

#include "hpo/advantage.hpp"

namespace hpo {

SignProbabilities closed_form_sign_probs(double p, std::uint32_t n) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error("closed-form sign probabilities: p must lie strictly inside (0,1)");
  }
  if (n < 2) throw Error("group too small for relative advantage");
  SignProbabilities out;
  const double others = static_cast<double>(n - 1);
  out.p_pos = p * (1.0 - std::pow(p, others));
  out.p_neg = (1.0 - p) * (1.0 - std::pow(1.0 - p, others));
  out.ratio = out.p_neg / out.p_pos;
  return out;
}

MonteCarloSignEstimate monte_carlo_sign_probs(double p, std::uint32_t n, std::uint64_t num_groups,
                                              std::uint64_t seed) {
  if (n < 2) throw Error("group too small for relative advantage");
  if (num_groups < 1) throw Error("monte carlo: num_groups must be at least 1");
  if (!(p >= 0.0 && p <= 1.0)) throw Error("monte carlo: p outside [0,1]");
  constexpr std::uint64_t kChunk = 65536;
  MonteCarloSignEstimate est;
  est.groups = num_groups;
  // Integer moments of the per-group counts (x = positives, y = negatives).
  std::uint64_t sxx = 0;
  std::uint64_t syy = 0;
  std::uint64_t sxy = 0;
  std::vector<double> rewards(n);
  for (std::uint64_t chunk = 0; chunk * kChunk < num_groups; ++chunk) {
    RngStream rng(seed, RngDomain::monte_carlo, chunk);
    const std::uint64_t end = std::min(num_groups, (chunk + 1) * kChunk);
    for (std::uint64_t g = chunk * kChunk; g < end; ++g) {
      for (auto& r : rewards) r = rng.bernoulli(p) ? 1.0 : 0.0;
      const auto counts = sign_counts(centered_advantage(rewards));
      est.n_pos += counts.n_pos;
      est.n_neg += counts.n_neg;
      sxx += counts.n_pos * counts.n_pos;
      syy += counts.n_neg * counts.n_neg;
      sxy += counts.n_pos * counts.n_neg;
    }
  }
  const double g = static_cast<double>(num_groups);
  const double responses = g * static_cast<double>(n);
  est.p_pos_hat = static_cast<double>(est.n_pos) / responses;
  est.p_neg_hat = static_cast<double>(est.n_neg) / responses;
  const double mx = static_cast<double>(est.n_pos) / g;
  const double my = static_cast<double>(est.n_neg) / g;
  const double vx = std::max(0.0, static_cast<double>(sxx) / g - mx * mx);
  const double vy = std::max(0.0, static_cast<double>(syy) / g - my * my);
  const double cxy = static_cast<double>(sxy) / g - mx * my;
  est.stderr_pos = std::sqrt(vx / g) / static_cast<double>(n);
  est.stderr_neg = std::sqrt(vy / g) / static_cast<double>(n);
  if (est.n_pos == 0) {
    est.ratio_hat = kInfinitySentinel;
    est.stderr_ratio = kInfinitySentinel;
  } else {
    est.ratio_hat = my / mx;
    const double r = est.ratio_hat;
    const double var = std::max(0.0, (vy - 2.0 * r * cxy + r * r * vx) / (g * mx * mx));
    est.stderr_ratio = std::sqrt(var);
  }
  return est;
}

BatchStats surrogate_balance(const Batch& batch, const std::vector<AdvantageSet>& sets,
                             const BatchTokenValues& token_surrogates, double alpha_min,
                             double sign_eps) {
  if (sets.size() != batch.groups().size() || token_surrogates.size() != batch.groups().size()) {
    throw Error("surrogate balance: shape mismatch");
  }
  SignCounts counts;
  double abs_pos = 0.0;
  double abs_neg = 0.0;
  std::size_t tokens_pos = 0;
  std::size_t tokens_neg = 0;
  for (std::size_t g = 0; g < sets.size(); ++g) {
    const auto& adv = sets[g].advantages();
    counts += sign_counts(adv);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      if (adv[i] == 0.0) continue;
      double s = 0.0;
      for (double l : token_surrogates[g].at(i)) s += std::abs(l);
      if (adv[i] > 0.0) {
        abs_pos += s;
        tokens_pos += token_surrogates[g][i].size();
      } else {
        abs_neg += s;
        tokens_neg += token_surrogates[g][i].size();
      }
    }
  }
  BatchStats stats = stats_from_counts(counts.n_pos, counts.n_neg, counts.n_zero);
  stats.alpha_adaptive = adaptive_alpha(counts.n_pos, counts.n_neg, alpha_min, sign_eps);
  stats.m_pos = tokens_pos ? abs_pos / static_cast<double>(tokens_pos) : 0.0;
  stats.m_neg = tokens_neg ? abs_neg / static_cast<double>(tokens_neg) : 0.0;
  const double denom = stats.p_neg * stats.m_neg;
  if (denom == 0.0) {
    stats.rho = kInfinitySentinel;
    stats.rho_sentinel = true;
  } else {
    stats.rho = (stats.p_pos * stats.m_pos) / denom;
  }
  stats.validate();
  return stats;
}

double exact_gradient_norm_ratio(const Batch& batch, const std::vector<AdvantageSet>& sets,
                                 const TabularPolicy& policy, const TrainConfig& config) {
  const auto parts = split_gradient_components(batch, sets, policy, config);
  const double neg = l2_norm(parts.negative);
  if (neg == 0.0) return kInfinitySentinel;
  return l2_norm(parts.positive) / neg;
}

}  // namespace hpo
