#pragma once

// Response-level advantage estimators and hysteretic weighting rules.

#include <cstddef>
#include <span>
#include <vector>

#include "hpo/core.hpp"

namespace hpo {

/// (R_i - mean) / (std + std_eps) with the population standard deviation.
std::vector<double> grpo_advantage(std::span<const double> rewards, double std_eps);

/// R_i - mean. The result sums to zero up to rounding.
std::vector<double> centered_advantage(std::span<const double> rewards);

/// 1 where the advantage is >= 0, alpha elsewhere.
std::vector<double> hysteretic_weights(std::span<const double> advantages, double alpha);

struct SignCounts {
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::size_t n_zero = 0;

  SignCounts& operator+=(const SignCounts& o) {
    n_pos += o.n_pos;
    n_neg += o.n_neg;
    n_zero += o.n_zero;
    return *this;
  }
  friend bool operator==(const SignCounts&, const SignCounts&) = default;
};

/// Strict-sign counts; exact zeros are tallied separately.
SignCounts sign_counts(std::span<const double> advantages);

/// clip(p_pos / (p_neg + sign_eps), alpha_min, 1), or 1 when no response has a
/// nonzero advantage.
double adaptive_alpha(std::size_t n_pos, std::size_t n_neg, double alpha_min, double sign_eps);

/// alpha0 * (1 - exp(-alpha1 / (delta^2 + v_eps))) with delta = 0.5 - std(R).
double variance_alpha(std::span<const double> rewards, double alpha0, double alpha1,
                      double v_eps);

/// Advantages of the estimator a variant uses, before any weighting.
std::vector<double> raw_advantages(const Group& group, const TrainConfig& config);

/// Pooled strict-sign counts of the raw advantages over every group.
SignCounts batch_sign_counts(const Batch& batch, const TrainConfig& config);

/// Dispatches on config.estimator_variant. For a_hpo and n_hpo the weight is
/// derived from batch_stats' pooled sign counts, so every group in a batch
/// shares one alpha; v_hpo derives alpha from the group's own reward spread.
AdvantageSet compute_advantage_set(const Group& group, const TrainConfig& config,
                                   const BatchStats& batch_stats);

/// The alpha shared by every set, or the mean over sets when they differ (v_hpo).
double mean_alpha(const std::vector<AdvantageSet>& sets);

/// compute_advantage_set for every group, with batch statistics from the batch itself.
std::vector<AdvantageSet> compute_advantage_sets(const Batch& batch, const TrainConfig& config);

}  // namespace hpo
