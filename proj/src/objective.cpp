#include "hpo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hpo/kernels.hpp"

namespace hpo {

namespace {

void check_shapes(const Batch& batch, const std::vector<AdvantageSet>& sets) {
  if (sets.size() != batch.groups().size()) {
    throw Error("objective: " + std::to_string(sets.size()) + " advantage sets for " +
                std::to_string(batch.groups().size()) + " groups");
  }
  for (std::size_t g = 0; g < sets.size(); ++g) {
    if (sets[g].size() != batch.groups()[g].size()) {
      throw Error("objective: advantage set " + std::to_string(g) + " has " +
                  std::to_string(sets[g].size()) + " entries for " +
                  std::to_string(batch.groups()[g].size()) + " responses");
    }
  }
}

void check_logprob_shapes(const Batch& batch, const BatchTokenValues& lp) {
  if (lp.size() != batch.groups().size()) throw Error("objective: logprob group count mismatch");
  for (std::size_t g = 0; g < lp.size(); ++g) {
    const auto& trajs = batch.groups()[g].trajectories();
    if (lp[g].size() != trajs.size()) {
      throw Error("objective: logprob response count mismatch in group " + std::to_string(g));
    }
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      if (lp[g][i].size() != trajs[i].length()) {
        throw Error("objective: " + std::to_string(lp[g][i].size()) + " logprobs for " +
                    std::to_string(trajs[i].length()) + " tokens (group " + std::to_string(g) +
                    ", response " + std::to_string(i) + ")");
      }
    }
  }
}

// Everything the gradient of one response needs: the softmax row behind each
// token and dl/dlogpi per token.
struct ResponseEval {
  std::vector<std::size_t> rows;
  std::vector<double> probs;  // length * vocab, row j is the softmax at position j
  std::vector<double> ratio;
  std::vector<double> coeff;
  kernels::SurrogateTotals totals;
};

void eval_response(const TabularPolicy& policy, const Trajectory& traj, double advantage,
                   double clip_eps, std::size_t group, std::size_t response, ResponseEval& out) {
  const std::size_t len = traj.length();
  const std::size_t vocab = policy.shape().vocab_size;
  const auto& tokens = traj.tokens();
  out.rows.resize(len);
  out.probs.resize(len * vocab);
  out.ratio.resize(len);
  out.coeff.resize(len);
  std::vector<double> new_lp(len);
  for (std::size_t j = 0; j < len; ++j) {
    const auto ctx = policy.context_index(tokens, j);
    out.rows[j] = policy.row_offset(traj.prompt_id(), ctx);
    std::span<double> probs(out.probs.data() + j * vocab, vocab);
    const double log_norm = policy.softmax_row(traj.prompt_id(), ctx, probs);
    new_lp[j] = std::min(0.0, policy.params()[out.rows[j] + tokens[j].id] - log_norm);
  }
  out.totals = kernels::clipped_surrogate(new_lp, traj.old_logprobs(), advantage, clip_eps,
                                          out.ratio, out.coeff);
  for (std::size_t j = 0; j < len; ++j) {
    if (!std::isfinite(out.coeff[j]) || !std::isfinite(new_lp[j])) {
      throw Error("objective: non-finite surrogate derivative at group " + std::to_string(group) +
                  ", response " + std::to_string(response) + ", token " + std::to_string(j));
    }
  }
}

// target += scale * sum_j coeff_j * d log pi(token_j) / d logits
void add_response_gradient(const ResponseEval& ev, const Trajectory& traj, std::size_t vocab,
                           double scale, std::span<double> target) {
  const auto& tokens = traj.tokens();
  for (std::size_t j = 0; j < ev.rows.size(); ++j) {
    const double a = scale * ev.coeff[j];
    if (a == 0.0) continue;
    std::span<double> row = target.subspan(ev.rows[j], vocab);
    kernels::axpy(-a, std::span<const double>(ev.probs.data() + j * vocab, vocab), row);
    row[tokens[j].id] += a;
  }
}

}  // namespace

double prob_ratio(double new_logprob, double old_logprob) {
  if (!std::isfinite(new_logprob) || !std::isfinite(old_logprob)) {
    throw Error("prob_ratio: non-finite log-probability");
  }
  return std::exp(new_logprob - old_logprob);
}

TokenLossTerm ppo_token_surrogate(double ratio, double advantage, double clip_eps) {
  TokenLossTerm t;
  t.ratio = ratio;
  t.advantage = advantage;
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
  t.clipped = clipped < unclipped;
  t.surrogate = t.clipped ? clipped : unclipped;
  return t;
}

BatchTokenValues batch_logprobs(const TabularPolicy& policy, const Batch& batch) {
  BatchTokenValues out;
  out.reserve(batch.groups().size());
  for (const auto& g : batch.groups()) {
    auto& per_group = out.emplace_back();
    for (const auto& t : g.trajectories()) per_group.push_back(logprob(policy, t));
  }
  return out;
}

BatchTokenValues token_surrogates(const Batch& batch, const std::vector<AdvantageSet>& sets,
                                  const BatchTokenValues& new_logprobs, double clip_eps) {
  check_shapes(batch, sets);
  check_logprob_shapes(batch, new_logprobs);
  BatchTokenValues out(batch.groups().size());
  for (std::size_t g = 0; g < batch.groups().size(); ++g) {
    const auto& trajs = batch.groups()[g].trajectories();
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      auto& vals = out[g].emplace_back();
      const auto& old_lp = trajs[i].old_logprobs();
      for (std::size_t j = 0; j < old_lp.size(); ++j) {
        vals.push_back(ppo_token_surrogate(prob_ratio(new_logprobs[g][i][j], old_lp[j]),
                                           sets[g].advantages()[i], clip_eps)
                           .surrogate);
      }
    }
  }
  return out;
}

double response_scale(const Batch& batch, const Trajectory& trajectory,
                      Normalization normalization) {
  const double responses = static_cast<double>(batch.num_responses());
  const double length = normalization == Normalization::per_response
                            ? static_cast<double>(trajectory.length())
                            : batch.mean_length();
  return 1.0 / (responses * length);
}

double aggregate_objective(const Batch& batch, const std::vector<AdvantageSet>& sets,
                           const BatchTokenValues& new_logprobs, const TrainConfig& config) {
  check_shapes(batch, sets);
  check_logprob_shapes(batch, new_logprobs);
  const auto norm = config.resolved_normalization();
  double total = 0.0;
  std::vector<double> ratio;
  std::vector<double> coeff;
  for (std::size_t g = 0; g < batch.groups().size(); ++g) {
    const auto& trajs = batch.groups()[g].trajectories();
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      ratio.resize(trajs[i].length());
      coeff.resize(trajs[i].length());
      const auto t = kernels::clipped_surrogate(new_logprobs[g][i], trajs[i].old_logprobs(),
                                                sets[g].advantages()[i], config.clip_epsilon,
                                                ratio, coeff);
      total += sets[g].weights()[i] * t.sum * response_scale(batch, trajs[i], norm);
    }
  }
  return total;
}

ObjectiveEvaluation evaluate_objective(const Batch& batch, const std::vector<AdvantageSet>& sets,
                                       const TabularPolicy& policy, const TrainConfig& config) {
  check_shapes(batch, sets);
  const auto norm = config.resolved_normalization();
  const std::size_t vocab = policy.shape().vocab_size;
  ObjectiveEvaluation out;
  out.gradient.assign(policy.params().size(), 0.0);
  ResponseEval ev;
  for (std::size_t g = 0; g < batch.groups().size(); ++g) {
    const auto& trajs = batch.groups()[g].trajectories();
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      eval_response(policy, trajs[i], sets[g].advantages()[i], config.clip_epsilon, g, i, ev);
      const double scale = sets[g].weights()[i] * response_scale(batch, trajs[i], norm);
      out.value += scale * ev.totals.sum;
      out.tokens += trajs[i].length();
      out.clipped_tokens += ev.totals.clipped;
      add_response_gradient(ev, trajs[i], vocab, scale, out.gradient);
    }
  }
  return out;
}

std::vector<double> objective_gradient(const Batch& batch, const std::vector<AdvantageSet>& sets,
                                       const TabularPolicy& policy, const TrainConfig& config) {
  return evaluate_objective(batch, sets, policy, config).gradient;
}

GradientComponents split_gradient_components(const Batch& batch,
                                             const std::vector<AdvantageSet>& sets,
                                             const TabularPolicy& policy,
                                             const TrainConfig& config) {
  check_shapes(batch, sets);
  const auto norm = config.resolved_normalization();
  const std::size_t vocab = policy.shape().vocab_size;
  GradientComponents out;
  out.positive.assign(policy.params().size(), 0.0);
  out.negative.assign(policy.params().size(), 0.0);
  out.weighted_negative.assign(policy.params().size(), 0.0);
  ResponseEval ev;
  for (std::size_t g = 0; g < batch.groups().size(); ++g) {
    const auto& trajs = batch.groups()[g].trajectories();
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      const double adv = sets[g].advantages()[i];
      if (adv == 0.0) continue;
      eval_response(policy, trajs[i], adv, config.clip_epsilon, g, i, ev);
      const double scale = response_scale(batch, trajs[i], norm);
      if (adv > 0.0) {
        add_response_gradient(ev, trajs[i], vocab, scale, out.positive);
      } else {
        add_response_gradient(ev, trajs[i], vocab, scale, out.negative);
        add_response_gradient(ev, trajs[i], vocab, sets[g].alpha_used() * scale,
                              out.weighted_negative);
      }
    }
  }
  return out;
}

double l2_norm(std::span<const double> v) { return std::sqrt(kernels::dot(v, v)); }

}  // namespace hpo
