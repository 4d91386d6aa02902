#pragma once

// Verifiable sparse-reward environments: a miniature Countdown arithmetic task
// with an exact rational verifier, and a synthetic Bernoulli-reward task whose
// sign statistics follow the closed-form group model exactly.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hpo/core.hpp"
#include "hpo/policy.hpp"
#include "hpo/rng.hpp"

namespace hpo {

// ---------------------------------------------------------------------------
// Exact arithmetic

class Rational {
 public:
  Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  bool is_integer() const { return den_ == 1; }

  // nullopt on overflow or division by zero.
  friend std::optional<Rational> add(Rational a, Rational b);
  friend std::optional<Rational> sub(Rational a, Rational b);
  friend std::optional<Rational> mul(Rational a, Rational b);
  friend std::optional<Rational> div(Rational a, Rational b);

  friend bool operator==(const Rational&, const Rational&) = default;

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

/// Contents of the last "\boxed{" occurrence, matched with balanced braces.
/// nullopt when there is no occurrence or the last one never closes.
std::optional<std::string> parse_boxed(std::string_view text);

struct ParsedExpression {
  Rational value;
  std::vector<std::int64_t> numbers;  // literals in order of appearance
};

/// Parses and evaluates +, -, *, / over non-negative integer literals with
/// parentheses and the usual precedence. nullopt for syntax errors, division
/// by zero, overflow, or (with integer_division_only) an inexact division.
std::optional<ParsedExpression> evaluate_expression(std::string_view text,
                                                    bool integer_division_only = false);

// ---------------------------------------------------------------------------
// Countdown

struct CountdownInstance {
  PromptId prompt_id = 0;
  std::vector<std::int64_t> numbers;
  std::int64_t target = 0;
  friend bool operator==(const CountdownInstance&, const CountdownInstance&) = default;
};

/// Token vocabulary for Countdown responses. Every symbol is atomic, including
/// the multi-character "\boxed{" opener and each number 1..20.
namespace countdown_vocab {
inline constexpr std::uint32_t kEos = 0;
inline constexpr std::uint32_t kBoxOpen = 1;
inline constexpr std::uint32_t kBoxClose = 2;
inline constexpr std::uint32_t kLParen = 3;
inline constexpr std::uint32_t kRParen = 4;
inline constexpr std::uint32_t kPlus = 5;
inline constexpr std::uint32_t kMinus = 6;
inline constexpr std::uint32_t kTimes = 7;
inline constexpr std::uint32_t kDivide = 8;
inline constexpr std::uint32_t kFirstNumber = 9;  // token for the number 1
inline constexpr std::uint32_t kMaxNumber = 20;
inline constexpr std::uint32_t kSize = kFirstNumber + kMaxNumber;

inline constexpr std::uint32_t number_token(std::int64_t n) {
  return kFirstNumber + static_cast<std::uint32_t>(n - 1);
}
std::string_view symbol(std::uint32_t token);
}  // namespace countdown_vocab

/// Concatenated symbols, stopping at the first end-of-sequence token.
std::string render_countdown(const std::vector<Token>& tokens);

/// 1 iff the boxed expression uses exactly the instance's numbers (as a
/// multiset) and evaluates exactly to the target; 0 otherwise.
double countdown_reward(const CountdownInstance& instance, std::string_view response_text,
                        bool integer_division_only = false);

/// Every expression tree over the numbers (each used once) that evaluates to
/// the target, as fully parenthesized strings, sorted and deduplicated.
std::vector<std::string> solve_countdown(const std::vector<std::int64_t>& numbers,
                                         std::int64_t target, bool integer_division_only = false);
bool countdown_solvable(const std::vector<std::int64_t>& numbers, std::int64_t target,
                        bool integer_division_only = false);

struct CountdownGenerator {
  std::uint32_t num_numbers = 3;  // 3 or 4
  std::int64_t number_max = 20;
  std::int64_t target_max = 100;
  bool integer_division_only = false;
};

/// Numbers uniform in [1, number_max], target uniform in [1, target_max],
/// rejection-sampled until the brute-force solver finds a solution. Instance k
/// draws from its own stream, so the dataset is a pure function of the seed.
std::vector<CountdownInstance> generate_countdown_dataset(std::uint32_t count,
                                                          const CountdownGenerator& gen,
                                                          std::uint64_t seed);

// "prompt_id<TAB>n1,n2,...<TAB>target\n" per instance.
void write_countdown_dataset(std::ostream& os, const std::vector<CountdownInstance>& data);
std::vector<CountdownInstance> read_countdown_dataset(std::istream& is);
void save_countdown_dataset(const std::string& path, const std::vector<CountdownInstance>& data);
std::vector<CountdownInstance> load_countdown_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// Bernoulli

struct LengthLaw {
  std::uint32_t min_length = 1;
  std::uint32_t max_length = 1;  // uniform over [min_length, max_length]
};

struct BernoulliTask {
  PromptId prompt_id = 0;
  double success_prob = 0.5;
  LengthLaw length_law;
};

/// N i.i.d. Bernoulli(p) rewards; trajectory lengths from the length law;
/// tokens are filler symbols ending in end-of-sequence (token 0), with the
/// log-probabilities of a uniform reference policy over `limits.vocab_size`.
/// p must lie in [0, 1]; the endpoints give constant rewards.
Group bernoulli_rollout_group(const BernoulliTask& task, std::uint32_t n, RngStream& rng,
                              SequenceLimits limits);

// ---------------------------------------------------------------------------
// Environment interface used by the trainer.

class Task {
 public:
  virtual ~Task() = default;

  virtual std::string_view name() const = 0;
  virtual std::uint32_t num_prompts() const = 0;
  virtual std::uint32_t vocab_size() const = 0;
  virtual std::string answer(PromptId prompt) const = 0;
  /// Writes the initial logits (the policy's starting prior).
  virtual void init_policy(TabularPolicy& policy, double prior_strength) const = 0;
  /// Binary reward of a response sampled at `step`; `rng` is the response's
  /// dedicated reward stream.
  virtual double reward(PromptId prompt, const Trajectory& response, std::uint64_t step,
                        RngStream& rng) const = 0;
};

class CountdownTask final : public Task {
 public:
  CountdownTask(std::vector<CountdownInstance> instances, bool integer_division_only);

  std::string_view name() const override { return "countdown"; }
  std::uint32_t num_prompts() const override;
  std::uint32_t vocab_size() const override { return countdown_vocab::kSize; }
  std::string answer(PromptId prompt) const override;
  void init_policy(TabularPolicy& policy, double prior_strength) const override;
  double reward(PromptId prompt, const Trajectory& response, std::uint64_t step,
                RngStream& rng) const override;

  const std::vector<CountdownInstance>& instances() const { return instances_; }
  const CountdownInstance& instance(PromptId prompt) const;

 private:
  std::vector<CountdownInstance> instances_;
  bool integer_division_only_;
};

/// Rewards are Bernoulli(p(step)) independent of the response, with p ramping
/// linearly from p_start to p_end over ramp_steps updates and then holding.
class BernoulliScheduleTask final : public Task {
 public:
  BernoulliScheduleTask(std::uint32_t num_prompts, double p_start, double p_end,
                        std::uint32_t ramp_steps);

  std::string_view name() const override { return "bernoulli"; }
  std::uint32_t num_prompts() const override { return num_prompts_; }
  std::uint32_t vocab_size() const override { return 4; }
  std::string answer(PromptId) const override { return "1"; }
  void init_policy(TabularPolicy& policy, double prior_strength) const override;
  double reward(PromptId prompt, const Trajectory& response, std::uint64_t step,
                RngStream& rng) const override;

  double success_prob(std::uint64_t step) const;

 private:
  std::uint32_t num_prompts_;
  double p_start_;
  double p_end_;
  std::uint32_t ramp_steps_;
};

}  // namespace hpo
