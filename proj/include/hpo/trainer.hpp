#pragma once

// Rollout collection, advantage computation, objective ascent, evaluation and
// checkpointing.
//
// Randomness is keyed, never sequential: the response i of group b at update
// s samples from RngStream(seed, rollout, s, b, i) and draws its reward noise
// from RngStream(seed, reward, s, b, i); evaluation rollouts use
// RngStream(seed, eval, s, prompt, r); the prompt order of epoch e is a
// Fisher-Yates shuffle driven by RngStream(seed, shuffle, e). A run is
// therefore a pure function of (config, task).

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hpo/core.hpp"
#include "hpo/policy.hpp"
#include "hpo/tasks.hpp"

namespace hpo {

struct StepRecord {
  std::uint64_t step = 0;
  EstimatorVariant estimator = EstimatorVariant::grpo;
  double mean_train_reward = 0.0;
  double eval_reward = 0.0;  // NaN when the step was not evaluated
  double mean_length = 0.0;
  double alpha_used = 1.0;  // mean over groups for v_hpo
  double p_pos = 0.0;
  double p_neg = 0.0;
  double rho = 0.0;
  double grad_norm = 0.0;        // at the start of the update (pi = pi_old)
  double objective_value = 0.0;  // likewise
  double clip_fraction = 0.0;    // clipped tokens over all inner epochs
};

struct OptimizerState {
  std::uint64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;
};

struct TrainState {
  TabularPolicy policy;
  std::uint64_t step = 0;
  OptimizerState optimizer;
  std::uint64_t seed = 0;
  std::vector<StepRecord> history;
};

/// Raised when an update produces a non-finite gradient or parameter.
/// Carries the serialized offending batch for a diagnostic dump.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::string batch_dump)
      : Error(what), batch_dump_(std::move(batch_dump)) {}
  const std::string& batch_dump() const { return batch_dump_; }

 private:
  std::string batch_dump_;
};

PolicyShape policy_shape_for(const Task& task, const TrainConfig& config);

/// Policy initialized from the task prior, step 0, empty history.
TrainState init_state(const TrainConfig& config, const Task& task);

/// Training task described by the config: a Countdown dataset (loaded or
/// generated from dataset_seed) or the scripted Bernoulli task.
std::unique_ptr<Task> make_train_task(const TrainConfig& config);
/// Evaluation task: the eval_dataset when set, otherwise the training prompts.
std::unique_ptr<Task> make_eval_task(const TrainConfig& config, const Task& train_task);

/// Prompt id of slot `slot` (0-based over the whole run) in the shuffled,
/// epoch-cycled prompt order.
PromptId scheduled_prompt(std::uint64_t slot, std::uint32_t num_prompts, std::uint64_t seed);

/// B groups of N trajectories sampled under the current policy at
/// (temperature_train, top_p), with rewards from the task.
Batch collect_batch(const TrainState& state, const Task& task, const TrainConfig& config);

/// One optimization update (inner_epochs passes over the same batch, with
/// pi_old frozen at collection). Appends the record to state.history and
/// advances state.step. eval_reward is left NaN.
StepRecord train_step(TrainState& state, const Batch& batch, const TrainConfig& config);

/// Mean binary reward over every eval prompt x rollouts_eval samples at
/// temperature_eval.
double evaluate(const TrainState& state, const Task& eval_task, const TrainConfig& config);

inline constexpr const char* kMetricsHeader =
    "step,estimator,alpha_used,train_reward,eval_reward,mean_length,p_pos,p_neg,rho,grad_norm,"
    "objective";

std::string format_metrics_row(const StepRecord& r);

struct RunOutputs {
  std::string metrics_csv;     // empty: do not write
  std::string checkpoint_dir;  // empty: do not write checkpoints
};

/// Runs config.steps updates, evaluating every eval_interval steps (and at
/// the final step). Writes one CSV row per update and a final checkpoint
/// (the initialization when steps = 0), plus one every checkpoint_interval.
TrainState run_training(const TrainConfig& config, const Task& train_task, const Task& eval_task,
                        const RunOutputs& outputs);

}  // namespace hpo
