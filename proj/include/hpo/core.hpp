#pragma once

// Domain model shared by every module: trajectories, groups, advantage sets,
// batches, batch statistics and the training configuration.
//
// Objects are validated on construction and immutable afterwards, so they can
// be shared across threads without synchronization.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hpo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed or inconsistent configuration (unknown keys, bad values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

using PromptId = std::int64_t;

struct Token {
  std::uint32_t id = 0;
  friend bool operator==(Token, Token) = default;
};

/// Vocabulary size and maximum response length a trajectory is checked against.
struct SequenceLimits {
  std::uint32_t vocab_size = 0;
  std::uint32_t max_tokens = 0;
};

class Trajectory {
 public:
  Trajectory(PromptId prompt_id, std::vector<Token> tokens, std::vector<double> old_logprobs,
             SequenceLimits limits);

  PromptId prompt_id() const { return prompt_id_; }
  const std::vector<Token>& tokens() const { return tokens_; }
  const std::vector<double>& old_logprobs() const { return old_logprobs_; }
  /// Number of generated tokens, counting a terminating end-of-sequence token.
  std::size_t length() const { return tokens_.size(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

 private:
  PromptId prompt_id_;
  std::vector<Token> tokens_;
  std::vector<double> old_logprobs_;
};

class Group {
 public:
  Group(PromptId prompt_id, std::string answer, std::vector<Trajectory> trajectories,
        std::vector<double> rewards);

  PromptId prompt_id() const { return prompt_id_; }
  const std::string& answer() const { return answer_; }
  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  const std::vector<double>& rewards() const { return rewards_; }
  std::size_t size() const { return rewards_.size(); }

  friend bool operator==(const Group&, const Group&) = default;

 private:
  PromptId prompt_id_;
  std::string answer_;
  std::vector<Trajectory> trajectories_;
  std::vector<double> rewards_;
};

enum class AdvantageEstimator { grpo_standardized, centered };

class AdvantageSet {
 public:
  AdvantageSet(std::vector<double> advantages, std::vector<double> weights, double alpha_used,
               AdvantageEstimator estimator);

  const std::vector<double>& advantages() const { return advantages_; }
  const std::vector<double>& weights() const { return weights_; }
  double alpha_used() const { return alpha_used_; }
  AdvantageEstimator estimator() const { return estimator_; }
  std::size_t size() const { return advantages_.size(); }

  friend bool operator==(const AdvantageSet&, const AdvantageSet&) = default;

 private:
  std::vector<double> advantages_;
  std::vector<double> weights_;
  double alpha_used_;
  AdvantageEstimator estimator_;
};

class Batch {
 public:
  explicit Batch(std::vector<Group> groups);

  const std::vector<Group>& groups() const { return groups_; }
  /// Arithmetic mean of all response lengths in the batch.
  double mean_length() const { return mean_length_; }
  std::size_t num_responses() const { return num_responses_; }

  friend bool operator==(const Batch&, const Batch&) = default;

 private:
  std::vector<Group> groups_;
  double mean_length_ = 0.0;
  std::size_t num_responses_ = 0;
};

struct BatchStats {
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::size_t n_zero = 0;
  double p_pos = 0.0;
  double p_neg = 0.0;
  double alpha_adaptive = 1.0;
  double m_pos = 0.0;
  double m_neg = 0.0;
  double rho = 0.0;
  // Set when p_neg * m_neg == 0; rho then holds +infinity.
  bool rho_sentinel = false;

  /// Throws Error when the sign-frequency invariants do not hold.
  void validate() const;

  friend bool operator==(const BatchStats&, const BatchStats&) = default;
};

/// Fills counts and the derived sign frequencies; magnitudes and rho stay zero.
BatchStats stats_from_counts(std::size_t n_pos, std::size_t n_neg, std::size_t n_zero);

enum class EstimatorVariant { grpo, hpo_fixed, a_hpo, n_hpo, v_hpo };
enum class Normalization { per_response, mean_length };
enum class OptimizerKind { sgd, adam };
enum class TaskKind { countdown, bernoulli };
enum class PolicyConditioning { position, prefix_bigram };
enum class LrProfile { desk, paper };

std::string_view to_string(AdvantageEstimator e);
std::string_view to_string(EstimatorVariant v);
std::string_view to_string(Normalization n);
std::string_view to_string(OptimizerKind o);
std::string_view to_string(TaskKind t);
std::string_view to_string(PolicyConditioning c);
std::string_view to_string(LrProfile p);

EstimatorVariant parse_estimator_variant(std::string_view s);
Normalization parse_normalization(std::string_view s);

struct TrainConfig {
  // Objective and estimator hyperparameters.
  double learning_rate = 1e-6;  // LLM-scale value; see lr_profile
  double desk_learning_rate = 0.1;
  LrProfile lr_profile = LrProfile::desk;
  double clip_epsilon = 0.2;
  std::uint32_t rollouts_train = 8;
  std::uint32_t rollouts_eval = 4;
  std::uint32_t batch_prompts = 16;
  double temperature_train = 1.0;
  double temperature_eval = 0.6;
  double top_p = 0.95;
  std::uint32_t max_tokens = 32;
  double alpha_min = 0.4;
  std::optional<double> alpha_fixed;
  double sign_eps = 1e-8;
  double std_eps = 1e-6;
  EstimatorVariant estimator_variant = EstimatorVariant::a_hpo;
  // Unset means the variant's natural normalization (per_response for grpo
  // and n_hpo, mean_length otherwise).
  std::optional<Normalization> normalization;
  double v_hpo_alpha0 = 0.4;
  double v_hpo_alpha1 = 1e-2;
  double v_hpo_eps = 1e-8;
  std::uint64_t seed = 0;

  // Trainer.
  std::uint32_t steps = 100;
  std::uint32_t inner_epochs = 1;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint32_t eval_interval = 1;
  std::uint32_t checkpoint_interval = 0;  // 0 disables periodic checkpoints

  // Policy.
  PolicyConditioning conditioning = PolicyConditioning::position;
  double prior_strength = 6.0;

  // Task.
  TaskKind task = TaskKind::countdown;
  std::uint32_t dataset_size = 50;
  std::uint32_t num_numbers = 3;
  std::uint32_t number_max = 9;
  std::uint32_t target_max = 30;
  bool integer_division_only = false;
  std::uint64_t dataset_seed = 2024;
  std::string train_dataset;  // empty: generate from dataset_seed
  std::string eval_dataset;   // empty: evaluate on the training prompts
  // Bernoulli task: success probability ramps linearly from p_start to p_end
  // over bernoulli_ramp_steps updates.
  double bernoulli_p_start = 0.05;
  double bernoulli_p_end = 0.6;
  std::uint32_t bernoulli_ramp_steps = 100;
  std::uint32_t bernoulli_prompts = 8;

  /// Effective normalization after resolving the variant default.
  Normalization resolved_normalization() const;
  /// Learning rate the trainer applies under the selected profile.
  double effective_learning_rate() const;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Shortest round-trip text form of a double ("inf", "-inf", "nan" for
// non-finite values). parse_real accepts exactly what format_real emits.
std::string format_real(double v);
double parse_real(std::string_view s);

// Canonical line-oriented serialization: one record per line, each record a
// leading tag followed by space-separated field=value pairs.
std::string serialize(const Batch& batch);
Batch deserialize_batch(std::string_view text, SequenceLimits limits);
std::string serialize(const BatchStats& stats);
BatchStats deserialize_batch_stats(std::string_view text);

}  // namespace hpo
