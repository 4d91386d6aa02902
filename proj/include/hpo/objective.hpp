#pragma once

// PPO clipped surrogate, batch aggregation under per-response or mean-length
// normalization, and the exact gradient of the aggregate with respect to the
// tabular policy logits.
//
// Sign convention: the objective is maximized. Gradients point uphill and the
// trainer ascends them.

#include <cstddef>
#include <span>
#include <vector>

#include "hpo/core.hpp"
#include "hpo/policy.hpp"

namespace hpo {

struct TokenLossTerm {
  double ratio = 1.0;
  double advantage = 0.0;
  double surrogate = 0.0;
  bool clipped = false;  // clip branch strictly smaller than the unclipped one
};

/// exp(new_logprob - old_logprob); throws on non-finite input.
double prob_ratio(double new_logprob, double old_logprob);

/// min(ratio*A, clip(ratio, 1-eps, 1+eps)*A).
TokenLossTerm ppo_token_surrogate(double ratio, double advantage, double clip_eps);

/// Per group, per response, per token.
using BatchTokenValues = std::vector<std::vector<std::vector<double>>>;

/// Temperature-1 log-probabilities of every batch token under `policy`.
BatchTokenValues batch_logprobs(const TabularPolicy& policy, const Batch& batch);

/// Token surrogates l_{i,j} given new log-probabilities (hysteretic weights not applied).
BatchTokenValues token_surrogates(const Batch& batch, const std::vector<AdvantageSet>& sets,
                                  const BatchTokenValues& new_logprobs, double clip_eps);

/// Multiplier applied to a response's weighted token-surrogate sum:
/// 1/(responses * length) per-response, 1/(responses * mean_length) otherwise.
double response_scale(const Batch& batch, const Trajectory& trajectory,
                      Normalization normalization);

double aggregate_objective(const Batch& batch, const std::vector<AdvantageSet>& sets,
                           const BatchTokenValues& new_logprobs, const TrainConfig& config);

struct ObjectiveEvaluation {
  double value = 0.0;
  std::vector<double> gradient;  // same layout as policy.params()
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;
};

/// Objective value, exact gradient and clip statistics at the policy's
/// current parameters, in one pass. Groups are reduced in index order.
ObjectiveEvaluation evaluate_objective(const Batch& batch, const std::vector<AdvantageSet>& sets,
                                       const TabularPolicy& policy, const TrainConfig& config);

std::vector<double> objective_gradient(const Batch& batch, const std::vector<AdvantageSet>& sets,
                                       const TabularPolicy& policy, const TrainConfig& config);

struct GradientComponents {
  std::vector<double> positive;  // responses with advantage > 0, unweighted
  std::vector<double> negative;  // responses with advantage < 0, unweighted
  // Negative terms scaled by their group's alpha. Equals alpha * negative
  // whenever all groups share one alpha (every variant except v_hpo).
  std::vector<double> weighted_negative;
};

GradientComponents split_gradient_components(const Batch& batch,
                                             const std::vector<AdvantageSet>& sets,
                                             const TabularPolicy& policy,
                                             const TrainConfig& config);

double l2_norm(std::span<const double> v);

}  // namespace hpo
