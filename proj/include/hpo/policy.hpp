#pragma once

// Tabular softmax policy over a small vocabulary.
//
// The next-token distribution depends on the prompt and on a context index:
// the position in the response (position conditioning) or the previous token
// (prefix-bigram conditioning, with a dedicated begin-of-sequence context).
// Parameters are one logit per (prompt, context, token), which makes
// log-probability gradients available in closed form.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hpo/core.hpp"
#include "hpo/rng.hpp"

namespace hpo {

struct PolicyShape {
  std::uint32_t num_prompts = 1;
  std::uint32_t vocab_size = 2;  // includes end-of-sequence
  std::uint32_t max_tokens = 1;
  PolicyConditioning conditioning = PolicyConditioning::position;
  std::uint32_t eos_id = 0;

  std::uint32_t num_contexts() const {
    return conditioning == PolicyConditioning::position ? max_tokens : vocab_size + 1;
  }
  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

class TabularPolicy {
 public:
  /// All logits zero (uniform policy).
  explicit TabularPolicy(PolicyShape shape);

  const PolicyShape& shape() const { return shape_; }
  SequenceLimits limits() const { return {shape_.vocab_size, shape_.max_tokens}; }

  std::span<const double> params() const { return logits_; }
  std::span<double> params() { return logits_; }

  /// Context used to emit the token at `position` given the preceding tokens.
  std::uint32_t context_index(std::span<const Token> prefix, std::size_t position) const;
  /// Flat offset of the first logit of a (prompt, context) row.
  std::size_t row_offset(PromptId prompt, std::uint32_t context) const;
  std::span<const double> row(PromptId prompt, std::uint32_t context) const;
  std::span<double> row(PromptId prompt, std::uint32_t context);

  /// Temperature-1 softmax of one row into `probs`; returns log of the
  /// normalizer, so log pi(v) = logit[v] - log_normalizer.
  double softmax_row(PromptId prompt, std::uint32_t context, std::span<double> probs) const;

  /// Throws Error if any logit is not finite.
  void check_finite() const;

  friend bool operator==(const TabularPolicy&, const TabularPolicy&) = default;

 private:
  PolicyShape shape_;
  std::vector<double> logits_;
};

struct DecodingParams {
  double temperature = 1.0;
  double top_p = 1.0;
};

/// Samples autoregressively from the temperature-scaled, top-p-truncated
/// distribution until end-of-sequence or max_tokens. The recorded
/// old_logprobs are the untruncated temperature-1 policy log-probabilities.
Trajectory sample_trajectory(const TabularPolicy& policy, PromptId prompt,
                             DecodingParams decoding, RngStream& rng);

/// Index of the sampled token given per-token sampling probabilities
/// (temperature already applied) after top-p truncation. Exposed for tests.
std::uint32_t sample_top_p(std::span<const double> probs, double top_p, RngStream& rng);

/// Temperature-1 log-probability of every token of the trajectory.
std::vector<double> logprob(const TabularPolicy& policy, const Trajectory& trajectory);

/// Gradient of log pi(token_j) for one position, restricted to the only row it
/// touches: values[v] = 1{v == token} - softmax(row)[v].
struct RowGradient {
  std::size_t row_offset = 0;
  std::vector<double> values;
};

/// One RowGradient per trajectory position; every other logit has zero gradient.
std::vector<RowGradient> logprob_grad(const TabularPolicy& policy, const Trajectory& trajectory);

// Checkpoints: a header line
//   # hpo-tabular-policy vocab_size=V max_tokens=T num_prompts=P conditioning=C eos_id=E
// followed by one "prompt_id<TAB>context<TAB>token_id<TAB>logit" record per
// logit in row-major order. Logits use the shortest round-trip decimal form.
void write_checkpoint(std::ostream& os, const TabularPolicy& policy);
TabularPolicy read_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const TabularPolicy& policy);
TabularPolicy load_checkpoint(const std::string& path);

}  // namespace hpo
