#include "hpo/advantage.hpp"

#include <algorithm>
#include <cmath>

#include "hpo/kernels.hpp"

namespace hpo {

namespace {

void require_group_size(std::size_t n) {
  if (n < 2) throw Error("group too small for relative advantage");
}

double mean_of(std::span<const double> x) {
  return kernels::sum(x) / static_cast<double>(x.size());
}

double population_std(std::span<const double> x, double mean) {
  return std::sqrt(kernels::centered_sq_sum(x, mean) / static_cast<double>(x.size()));
}

}  // namespace

std::vector<double> grpo_advantage(std::span<const double> rewards, double std_eps) {
  require_group_size(rewards.size());
  const double mean = mean_of(rewards);
  const double sd = population_std(rewards, mean);
  std::vector<double> out(rewards.size());
  const double denom = sd + std_eps;
  if (denom == 0.0) {
    // All-equal group with std_eps = 0: every numerator is exactly zero.
    std::fill(out.begin(), out.end(), 0.0);
    return out;
  }
  kernels::shift_divide(rewards, mean, denom, out);
  return out;
}

std::vector<double> centered_advantage(std::span<const double> rewards) {
  require_group_size(rewards.size());
  const double mean = mean_of(rewards);
  std::vector<double> out(rewards.size());
  kernels::shift_divide(rewards, mean, 1.0, out);
  return out;
}

std::vector<double> hysteretic_weights(std::span<const double> advantages, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error("hysteretic weight alpha " + format_real(alpha) + " outside [0,1]");
  }
  std::vector<double> w(advantages.size());
  std::transform(advantages.begin(), advantages.end(), w.begin(),
                 [alpha](double a) { return a >= 0.0 ? 1.0 : alpha; });
  return w;
}

SignCounts sign_counts(std::span<const double> advantages) {
  SignCounts c;
  for (double a : advantages) {
    if (a > 0.0) {
      ++c.n_pos;
    } else if (a < 0.0) {
      ++c.n_neg;
    } else {
      ++c.n_zero;
    }
  }
  return c;
}

double adaptive_alpha(std::size_t n_pos, std::size_t n_neg, double alpha_min, double sign_eps) {
  const std::size_t signed_count = n_pos + n_neg;
  if (signed_count == 0) return 1.0;
  const double p_pos = static_cast<double>(n_pos) / static_cast<double>(signed_count);
  const double p_neg = static_cast<double>(n_neg) / static_cast<double>(signed_count);
  return std::clamp(p_pos / (p_neg + sign_eps), alpha_min, 1.0);
}

double variance_alpha(std::span<const double> rewards, double alpha0, double alpha1,
                      double v_eps) {
  require_group_size(rewards.size());
  const double sd = population_std(rewards, mean_of(rewards));
  const double delta = 0.5 - sd;
  return alpha0 * (1.0 - std::exp(-alpha1 / (delta * delta + v_eps)));
}

std::vector<double> raw_advantages(const Group& group, const TrainConfig& config) {
  if (config.estimator_variant == EstimatorVariant::grpo) {
    return grpo_advantage(group.rewards(), config.std_eps);
  }
  return centered_advantage(group.rewards());
}

SignCounts batch_sign_counts(const Batch& batch, const TrainConfig& config) {
  SignCounts total;
  for (const auto& g : batch.groups()) total += sign_counts(raw_advantages(g, config));
  return total;
}

AdvantageSet compute_advantage_set(const Group& group, const TrainConfig& config,
                                   const BatchStats& batch_stats) {
  auto adv = raw_advantages(group, config);
  double alpha = 1.0;
  switch (config.estimator_variant) {
    case EstimatorVariant::grpo:
      return AdvantageSet(std::move(adv), std::vector<double>(group.size(), 1.0), 1.0,
                          AdvantageEstimator::grpo_standardized);
    case EstimatorVariant::hpo_fixed:
      if (!config.alpha_fixed) {
        throw ConfigError("alpha_fixed: required when estimator_variant=hpo_fixed");
      }
      alpha = *config.alpha_fixed;
      break;
    case EstimatorVariant::a_hpo:
    case EstimatorVariant::n_hpo:
      alpha = adaptive_alpha(batch_stats.n_pos, batch_stats.n_neg, config.alpha_min,
                             config.sign_eps);
      break;
    case EstimatorVariant::v_hpo:
      alpha = variance_alpha(group.rewards(), config.v_hpo_alpha0, config.v_hpo_alpha1,
                             config.v_hpo_eps);
      break;
  }
  auto w = hysteretic_weights(adv, alpha);
  return AdvantageSet(std::move(adv), std::move(w), alpha, AdvantageEstimator::centered);
}

std::vector<AdvantageSet> compute_advantage_sets(const Batch& batch, const TrainConfig& config) {
  const SignCounts counts = batch_sign_counts(batch, config);
  const BatchStats stats = stats_from_counts(counts.n_pos, counts.n_neg, counts.n_zero);
  std::vector<AdvantageSet> sets;
  sets.reserve(batch.groups().size());
  for (const auto& g : batch.groups()) sets.push_back(compute_advantage_set(g, config, stats));
  return sets;
}

double mean_alpha(const std::vector<AdvantageSet>& sets) {
  if (sets.empty()) return 1.0;
  double total = 0.0;
  bool shared = true;
  for (const auto& s : sets) {
    total += s.alpha_used();
    shared = shared && s.alpha_used() == sets.front().alpha_used();
  }
  return shared ? sets.front().alpha_used() : total / static_cast<double>(sets.size());
}

}  // namespace hpo
