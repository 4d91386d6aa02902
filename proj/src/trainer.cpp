#include "hpo/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "hpo/advantage.hpp"
#include "hpo/analytics.hpp"
#include "hpo/objective.hpp"

namespace hpo {

PolicyShape policy_shape_for(const Task& task, const TrainConfig& config) {
  PolicyShape shape;
  shape.num_prompts = task.num_prompts();
  shape.vocab_size = task.vocab_size();
  shape.max_tokens = config.max_tokens;
  shape.conditioning = config.conditioning;
  shape.eos_id = 0;
  return shape;
}

TrainState init_state(const TrainConfig& config, const Task& task) {
  config.validate();
  TrainState state{TabularPolicy(policy_shape_for(task, config)), 0, {}, config.seed, {}};
  task.init_policy(state.policy, config.prior_strength);
  state.policy.check_finite();
  return state;
}

std::unique_ptr<Task> make_train_task(const TrainConfig& config) {
  if (config.task == TaskKind::bernoulli) {
    return std::make_unique<BernoulliScheduleTask>(config.bernoulli_prompts,
                                                   config.bernoulli_p_start, config.bernoulli_p_end,
                                                   config.bernoulli_ramp_steps);
  }
  std::vector<CountdownInstance> data;
  if (!config.train_dataset.empty()) {
    data = load_countdown_dataset(config.train_dataset);
  } else {
    CountdownGenerator gen;
    gen.num_numbers = config.num_numbers;
    gen.number_max = config.number_max;
    gen.target_max = config.target_max;
    gen.integer_division_only = config.integer_division_only;
    data = generate_countdown_dataset(config.dataset_size, gen, config.dataset_seed);
  }
  return std::make_unique<CountdownTask>(std::move(data), config.integer_division_only);
}

std::unique_ptr<Task> make_eval_task(const TrainConfig& config, const Task& train_task) {
  if (config.task == TaskKind::countdown && !config.eval_dataset.empty()) {
    auto task = std::make_unique<CountdownTask>(load_countdown_dataset(config.eval_dataset),
                                                config.integer_division_only);
    if (task->num_prompts() > train_task.num_prompts()) {
      throw Error(config.eval_dataset +
                  ": eval dataset has more prompts than the policy has prompt rows");
    }
    return task;
  }
  return make_train_task(config);
}

PromptId scheduled_prompt(std::uint64_t slot, std::uint32_t num_prompts, std::uint64_t seed) {
  const std::uint64_t epoch = slot / num_prompts;
  const std::uint64_t index = slot % num_prompts;
  std::vector<PromptId> order(num_prompts);
  std::iota(order.begin(), order.end(), PromptId{0});
  RngStream rng(seed, RngDomain::shuffle, epoch);
  for (std::size_t k = order.size(); k > 1; --k) {
    std::swap(order[k - 1], order[rng.below(k)]);
  }
  return order[index];
}

Batch collect_batch(const TrainState& state, const Task& task, const TrainConfig& config) {
  if (task.num_prompts() == 0) throw Error("collect_batch: empty dataset");
  const DecodingParams decoding{config.temperature_train, config.top_p};
  std::vector<Group> groups;
  groups.reserve(config.batch_prompts);
  for (std::uint32_t b = 0; b < config.batch_prompts; ++b) {
    const std::uint64_t slot = state.step * config.batch_prompts + b;
    const PromptId prompt = scheduled_prompt(slot, task.num_prompts(), state.seed);
    std::vector<Trajectory> trajs;
    std::vector<double> rewards;
    for (std::uint32_t i = 0; i < config.rollouts_train; ++i) {
      RngStream sample_rng(state.seed, RngDomain::rollout, state.step, b, i);
      RngStream reward_rng(state.seed, RngDomain::reward, state.step, b, i);
      trajs.push_back(sample_trajectory(state.policy, prompt, decoding, sample_rng));
      rewards.push_back(task.reward(prompt, trajs.back(), state.step, reward_rng));
    }
    groups.emplace_back(prompt, task.answer(prompt), std::move(trajs), std::move(rewards));
  }
  return Batch(std::move(groups));
}

namespace {

void apply_update(TrainState& state, const std::vector<double>& grad, const TrainConfig& config) {
  auto params = state.policy.params();
  const double lr = config.effective_learning_rate();
  if (config.optimizer == OptimizerKind::sgd) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k] += lr * grad[k];
    return;
  }
  auto& opt = state.optimizer;
  if (opt.m.empty()) {
    opt.m.assign(params.size(), 0.0);
    opt.v.assign(params.size(), 0.0);
  }
  ++opt.t;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    opt.m[k] = b1 * opt.m[k] + (1.0 - b1) * grad[k];
    opt.v[k] = b2 * opt.v[k] + (1.0 - b2) * grad[k] * grad[k];
    params[k] += lr * (opt.m[k] / c1) / (std::sqrt(opt.v[k] / c2) + config.adam_eps);
  }
}

double batch_mean_reward(const Batch& batch) {
  double total = 0.0;
  for (const auto& g : batch.groups()) {
    for (double r : g.rewards()) total += r;
  }
  return total / static_cast<double>(batch.num_responses());
}

}  // namespace

StepRecord train_step(TrainState& state, const Batch& batch, const TrainConfig& config) {
  const auto sets = compute_advantage_sets(batch, config);

  StepRecord rec;
  rec.step = state.step + 1;
  rec.estimator = config.estimator_variant;
  rec.mean_train_reward = batch_mean_reward(batch);
  rec.eval_reward = std::numeric_limits<double>::quiet_NaN();
  rec.mean_length = batch.mean_length();
  rec.alpha_used = mean_alpha(sets);

  // Diagnostics at pi = pi_old, where every ratio is exactly one.
  const auto old_lp = batch_logprobs(state.policy, batch);
  const auto stats = surrogate_balance(batch, sets,
                                       token_surrogates(batch, sets, old_lp, config.clip_epsilon),
                                       config.alpha_min, config.sign_eps);
  rec.p_pos = stats.p_pos;
  rec.p_neg = stats.p_neg;
  rec.rho = stats.rho;

  std::size_t tokens = 0;
  std::size_t clipped = 0;
  for (std::uint32_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
    ObjectiveEvaluation eval;
    try {
      eval = evaluate_objective(batch, sets, state.policy, config);
    } catch (const Error& e) {
      throw NonFiniteError(std::string("update ") + std::to_string(rec.step) + ": " + e.what(),
                           serialize(batch));
    }
    for (std::size_t k = 0; k < eval.gradient.size(); ++k) {
      if (!std::isfinite(eval.gradient[k])) {
        throw NonFiniteError("update " + std::to_string(rec.step) +
                                 ": non-finite gradient at parameter " + std::to_string(k),
                             serialize(batch));
      }
    }
    if (epoch == 0) {
      rec.objective_value = eval.value;
      rec.grad_norm = l2_norm(eval.gradient);
    }
    tokens += eval.tokens;
    clipped += eval.clipped_tokens;
    apply_update(state, eval.gradient, config);
    try {
      state.policy.check_finite();
    } catch (const Error& e) {
      throw NonFiniteError("update " + std::to_string(rec.step) + ": " + e.what(),
                           serialize(batch));
    }
  }
  rec.clip_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
  ++state.step;
  state.history.push_back(rec);
  return rec;
}

double evaluate(const TrainState& state, const Task& eval_task, const TrainConfig& config) {
  const DecodingParams decoding{config.temperature_eval, config.top_p};
  double total = 0.0;
  std::uint64_t count = 0;
  for (std::uint32_t p = 0; p < eval_task.num_prompts(); ++p) {
    for (std::uint32_t r = 0; r < config.rollouts_eval; ++r) {
      RngStream sample_rng(state.seed, RngDomain::eval, state.step, p, r);
      RngStream reward_rng(state.seed, RngDomain::eval, state.step, p, r + config.rollouts_eval);
      const auto traj = sample_trajectory(state.policy, p, decoding, sample_rng);
      total += eval_task.reward(p, traj, state.step, reward_rng);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::string format_metrics_row(const StepRecord& r) {
  std::ostringstream os;
  os << r.step << ',' << to_string(r.estimator) << ',' << format_real(r.alpha_used) << ','
     << format_real(r.mean_train_reward) << ',' << format_real(r.eval_reward) << ','
     << format_real(r.mean_length) << ',' << format_real(r.p_pos) << ',' << format_real(r.p_neg)
     << ',' << format_real(r.rho) << ',' << format_real(r.grad_norm) << ','
     << format_real(r.objective_value);
  return os.str();
}

TrainState run_training(const TrainConfig& config, const Task& train_task, const Task& eval_task,
                        const RunOutputs& outputs) {
  TrainState state = init_state(config, train_task);
  std::ofstream csv;
  if (!outputs.metrics_csv.empty()) {
    csv.open(outputs.metrics_csv, std::ios::binary | std::ios::trunc);
    if (!csv) throw Error("cannot open metrics file: " + outputs.metrics_csv);
    csv << kMetricsHeader << '\n';
  }
  auto checkpoint = [&](const std::string& name) {
    if (outputs.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(outputs.checkpoint_dir);
    save_checkpoint((std::filesystem::path(outputs.checkpoint_dir) / name).string(),
                    state.policy);
  };
  for (std::uint32_t s = 0; s < config.steps; ++s) {
    const Batch batch = collect_batch(state, train_task, config);
    StepRecord rec = train_step(state, batch, config);
    if (state.step % config.eval_interval == 0 || state.step == config.steps) {
      rec.eval_reward = evaluate(state, eval_task, config);
      state.history.back().eval_reward = rec.eval_reward;
    }
    if (csv.is_open()) {
      csv << format_metrics_row(rec) << '\n';
      if (!csv) throw Error("failed writing metrics file: " + outputs.metrics_csv);
    }
    if (config.checkpoint_interval != 0 && state.step % config.checkpoint_interval == 0) {
      std::ostringstream name;
      name << "policy_step_" << state.step << ".ckpt";
      checkpoint(name.str());
    }
  }
  checkpoint("policy_final.ckpt");
  return state;
}

}  // namespace hpo
