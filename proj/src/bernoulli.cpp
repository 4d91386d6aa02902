#include <algorithm>
#include <cmath>

#include "hpo/tasks.hpp"

namespace hpo {

Group bernoulli_rollout_group(const BernoulliTask& task, std::uint32_t n, RngStream& rng,
                              SequenceLimits limits) {
  if (n < 2) throw Error("group too small for relative advantage");
  if (!(task.success_prob >= 0.0 && task.success_prob <= 1.0)) {
    throw Error("bernoulli task: success probability outside [0,1]");
  }
  const auto& law = task.length_law;
  if (law.min_length < 1 || law.min_length > law.max_length || law.max_length > limits.max_tokens) {
    throw Error("bernoulli task: length law outside [1, max_tokens]");
  }
  if (limits.vocab_size < 2) throw Error("bernoulli task: vocabulary needs a filler and an eos");
  const double uniform_lp = -std::log(static_cast<double>(limits.vocab_size));
  std::vector<Trajectory> trajs;
  std::vector<double> rewards;
  for (std::uint32_t i = 0; i < n; ++i) {
    rewards.push_back(rng.bernoulli(task.success_prob) ? 1.0 : 0.0);
    const auto len = law.min_length +
                     static_cast<std::uint32_t>(rng.below(law.max_length - law.min_length + 1));
    std::vector<Token> tokens(len, Token{1});
    tokens.back() = Token{0};
    trajs.emplace_back(task.prompt_id, std::move(tokens), std::vector<double>(len, uniform_lp),
                       limits);
  }
  return Group(task.prompt_id, "1", std::move(trajs), std::move(rewards));
}

BernoulliScheduleTask::BernoulliScheduleTask(std::uint32_t num_prompts, double p_start,
                                             double p_end, std::uint32_t ramp_steps)
    : num_prompts_(num_prompts), p_start_(p_start), p_end_(p_end), ramp_steps_(ramp_steps) {
  if (num_prompts_ < 1) throw Error("bernoulli task: at least one prompt required");
  if (!(p_start_ > 0.0 && p_start_ < 1.0 && p_end_ > 0.0 && p_end_ < 1.0)) {
    throw Error("bernoulli task: schedule endpoints must lie in (0,1)");
  }
}

double BernoulliScheduleTask::success_prob(std::uint64_t step) const {
  if (ramp_steps_ == 0 || step >= ramp_steps_) return p_end_;
  const double t = static_cast<double>(step) / static_cast<double>(ramp_steps_);
  return p_start_ + (p_end_ - p_start_) * t;
}

void BernoulliScheduleTask::init_policy(TabularPolicy& policy, double) const {
  std::fill(policy.params().begin(), policy.params().end(), 0.0);
}

double BernoulliScheduleTask::reward(PromptId, const Trajectory&, std::uint64_t step,
                                     RngStream& rng) const {
  return rng.bernoulli(success_prob(step)) ? 1.0 : 0.0;
}

}  // namespace hpo
