#pragma once

// Helpers shared by the unit tests and the acceptance binary: randomized
// small batches over random tabular policies, and independent reference
// implementations used as oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "hpo/advantage.hpp"
#include "hpo/core.hpp"
#include "hpo/objective.hpp"
#include "hpo/policy.hpp"
#include "hpo/rng.hpp"

namespace hpo::testing {

struct RandomProblem {
  TabularPolicy policy;  // pi_old, the sampling policy
  Batch batch;
  TrainConfig config;
};

inline TabularPolicy random_policy(PolicyShape shape, RngStream& rng, double scale = 1.0) {
  TabularPolicy policy(shape);
  for (double& v : policy.params()) v = scale * (2.0 * rng.uniform() - 1.0);
  return policy;
}

/// B <= 4 groups of N <= 4 responses of length <= 6 over a random policy, with
/// random binary rewards. Groups are built so that at least one batch in a
/// few has mixed rewards; all-equal groups are kept as they occur.
inline RandomProblem random_problem(std::uint64_t seed, EstimatorVariant variant,
                                    Normalization normalization) {
  RngStream rng(seed, RngDomain::test, 1);
  PolicyShape shape;
  shape.num_prompts = 1 + static_cast<std::uint32_t>(rng.below(4));
  shape.vocab_size = 2 + static_cast<std::uint32_t>(rng.below(4));
  shape.max_tokens = 1 + static_cast<std::uint32_t>(rng.below(6));
  shape.conditioning =
      rng.bernoulli(0.5) ? PolicyConditioning::position : PolicyConditioning::prefix_bigram;
  TabularPolicy policy = random_policy(shape, rng);

  const auto b_count = 1 + rng.below(4);
  const auto n = 2 + static_cast<std::uint32_t>(rng.below(3));
  std::vector<Group> groups;
  for (std::uint64_t b = 0; b < b_count; ++b) {
    const auto prompt = static_cast<PromptId>(rng.below(shape.num_prompts));
    std::vector<Trajectory> trajs;
    std::vector<double> rewards;
    for (std::uint32_t i = 0; i < n; ++i) {
      RngStream srng(seed, RngDomain::test, 2, b, i);
      trajs.push_back(sample_trajectory(policy, prompt, {1.0, 1.0}, srng));
      rewards.push_back(rng.bernoulli(0.4) ? 1.0 : 0.0);
    }
    groups.emplace_back(prompt, "x", std::move(trajs), std::move(rewards));
  }

  TrainConfig config;
  config.estimator_variant = variant;
  config.normalization = normalization;
  config.max_tokens = shape.max_tokens;
  config.conditioning = shape.conditioning;
  if (variant == EstimatorVariant::hpo_fixed) config.alpha_fixed = rng.uniform();
  config.alpha_min = 0.4;
  return {std::move(policy), Batch(std::move(groups)), config};
}

/// Moves every logit by up to `scale`, so ratios leave 1 and clipping can engage.
inline TabularPolicy perturbed(const TabularPolicy& base, std::uint64_t seed, double scale) {
  TabularPolicy out = base;
  RngStream rng(seed, RngDomain::test, 3);
  for (double& v : out.params()) v += scale * (2.0 * rng.uniform() - 1.0);
  return out;
}

/// Reference log-softmax of one position, computed directly from the logits.
inline double reference_logprob(const TabularPolicy& policy, PromptId prompt,
                                const std::vector<Token>& tokens, std::size_t position) {
  const auto ctx = policy.context_index(std::span<const Token>(tokens.data(), position), position);
  const auto row = policy.row(prompt, ctx);
  long double z = 0.0L;
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  for (double v : row) z += std::exp(static_cast<long double>(v - mx));
  return row[tokens[position].id] - mx - static_cast<double>(std::log(z));
}

/// Objective evaluated from first principles: surrogate per token by
/// brute-force min over both branches, aggregation written out per the two
/// normalization formulas.
inline double reference_objective(const Batch& batch, const std::vector<AdvantageSet>& sets,
                                  const TabularPolicy& policy, const TrainConfig& config) {
  const double eps = config.clip_epsilon;
  const double bn = static_cast<double>(batch.num_responses());
  const bool per_response = config.resolved_normalization() == Normalization::per_response;
  double total = 0.0;
  for (std::size_t g = 0; g < batch.groups().size(); ++g) {
    const auto& group = batch.groups()[g];
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto& traj = group.trajectories()[i];
      const double adv = sets[g].advantages()[i];
      const double w = sets[g].weights()[i];
      double response = 0.0;
      for (std::size_t j = 0; j < traj.length(); ++j) {
        const double lp = reference_logprob(policy, traj.prompt_id(), traj.tokens(), j);
        const double ratio = std::exp(lp - traj.old_logprobs()[j]);
        const double a = ratio * adv;
        const double b = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
        response += w * std::min(a, b);
      }
      const double len = per_response ? static_cast<double>(traj.length()) : batch.mean_length();
      total += response / (bn * len);
    }
  }
  return total;
}

/// ||a - b||_2 / max(||b||_2, floor). Central differences at h = 1e-5 carry
/// about 1e-11 of rounding noise per coordinate, so gradients smaller than
/// the 1e-6 floor are held to an absolute 1e-11 instead.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-6) {
  double diff = 0.0;
  double ref = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    ref += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

/// Smallest |ratio - (1 +/- eps)| over every token of the batch.
inline double distance_to_clip_boundary(const Batch& batch, const TabularPolicy& policy,
                                        double eps) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& group : batch.groups()) {
    for (const auto& traj : group.trajectories()) {
      for (std::size_t j = 0; j < traj.length(); ++j) {
        const double lp = reference_logprob(policy, traj.prompt_id(), traj.tokens(), j);
        const double ratio = std::exp(lp - traj.old_logprobs()[j]);
        best = std::min({best, std::abs(ratio - (1.0 + eps)), std::abs(ratio - (1.0 - eps))});
      }
    }
  }
  return best;
}

/// Group-relative objective written from rewards, independent of the
/// advantage module. standardized: (R - mean)/(std + std_eps) with
/// per-response length normalization (the textbook GRPO form). Otherwise
/// R - mean with every weight 1 and batch mean-length normalization (the
/// symmetric mean-centered form).
inline double textbook_objective(const Batch& batch, const TabularPolicy& policy, double clip_eps,
                                 bool standardized, double std_eps) {
  const double bn = static_cast<double>(batch.num_responses());
  double total = 0.0;
  for (const auto& group : batch.groups()) {
    const auto& r = group.rewards();
    double mean = 0.0;
    for (double x : r) mean += x;
    mean /= static_cast<double>(r.size());
    double var = 0.0;
    for (double x : r) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(r.size()));
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double adv = standardized ? (r[i] - mean) / (sd + std_eps) : r[i] - mean;
      const auto& traj = group.trajectories()[i];
      double sum = 0.0;
      for (std::size_t j = 0; j < traj.length(); ++j) {
        const double ratio =
            std::exp(reference_logprob(policy, traj.prompt_id(), traj.tokens(), j) -
                     traj.old_logprobs()[j]);
        sum += std::min(ratio * adv, std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv);
      }
      const double len = standardized ? static_cast<double>(traj.length()) : batch.mean_length();
      total += sum / (bn * len);
    }
  }
  return total;
}

/// Central finite differences of any objective of the policy.
template <typename F>
std::vector<double> finite_difference(const TabularPolicy& policy, F&& objective, double h) {
  TabularPolicy work = policy;
  std::vector<double> grad(work.params().size());
  for (std::size_t k = 0; k < grad.size(); ++k) {
    const double x = work.params()[k];
    work.params()[k] = x + h;
    const double up = objective(work);
    work.params()[k] = x - h;
    const double down = objective(work);
    work.params()[k] = x;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Central finite differences of the reference objective, step h.
inline std::vector<double> finite_difference_gradient(const Batch& batch,
                                                      const std::vector<AdvantageSet>& sets,
                                                      const TabularPolicy& policy,
                                                      const TrainConfig& config, double h) {
  return finite_difference(
      policy, [&](const TabularPolicy& p) { return reference_objective(batch, sets, p, config); },
      h);
}

/// Response of `length` filler tokens ending in end-of-sequence, logged under
/// the uniform policy of `policy`'s shape.
inline Trajectory filler_response(const TabularPolicy& policy, PromptId prompt,
                                  std::uint32_t length) {
  std::vector<Token> toks(length, Token{1});
  toks.back() = Token{0};
  Trajectory probe(prompt, toks, std::vector<double>(length, 0.0), policy.limits());
  return Trajectory(prompt, toks, logprob(policy, probe), policy.limits());
}

struct LengthBiasExhibit {
  double per_response_short = 0.0;
  double per_response_long = 0.0;
  double mean_length_short = 0.0;
  double mean_length_long = 0.0;
};

/// A response with every token surrogate equal to c and length L, against the
/// same values concatenated to length 2L. A zero-advantage companion response
/// pads each batch so the batch mean length is 2L in both cases.
inline LengthBiasExhibit length_bias_exhibit(std::uint32_t length, double c) {
  PolicyShape shape;
  shape.vocab_size = 3;
  shape.max_tokens = 3 * length;
  const TabularPolicy policy(shape);
  const AdvantageSet set({c, 0.0}, {1.0, 1.0}, 1.0, AdvantageEstimator::grpo_standardized);
  auto contribution = [&](std::uint32_t target_len, std::uint32_t pad_len, Normalization norm) {
    Batch batch({Group(0, "x",
                       {filler_response(policy, 0, target_len), filler_response(policy, 0, pad_len)},
                       {1.0, 0.0})});
    TrainConfig config;
    config.normalization = norm;
    config.max_tokens = shape.max_tokens;
    // Two responses share the 1/(BN) factor; report the target's own share.
    return 2.0 * evaluate_objective(batch, {set}, policy, config).value;
  };
  LengthBiasExhibit out;
  out.per_response_short = contribution(length, 3 * length, Normalization::per_response);
  out.per_response_long = contribution(2 * length, 2 * length, Normalization::per_response);
  out.mean_length_short = contribution(length, 3 * length, Normalization::mean_length);
  out.mean_length_long = contribution(2 * length, 2 * length, Normalization::mean_length);
  return out;
}

inline constexpr EstimatorVariant kAllVariants[] = {
    EstimatorVariant::grpo, EstimatorVariant::hpo_fixed, EstimatorVariant::a_hpo,
    EstimatorVariant::n_hpo, EstimatorVariant::v_hpo};

}  // namespace hpo::testing
