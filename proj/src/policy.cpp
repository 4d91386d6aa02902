#include "hpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "hpo/kernels.hpp"

namespace hpo {

TabularPolicy::TabularPolicy(PolicyShape shape) : shape_(shape) {
  if (shape_.vocab_size < 2) throw Error("policy: vocab_size must be at least 2");
  if (shape_.max_tokens < 1) throw Error("policy: max_tokens must be at least 1");
  if (shape_.num_prompts < 1) throw Error("policy: num_prompts must be at least 1");
  if (shape_.eos_id >= shape_.vocab_size) throw Error("policy: eos_id outside vocabulary");
  logits_.assign(static_cast<std::size_t>(shape_.num_prompts) * shape_.num_contexts() *
                     shape_.vocab_size,
                 0.0);
}

std::uint32_t TabularPolicy::context_index(std::span<const Token> prefix,
                                           std::size_t position) const {
  if (shape_.conditioning == PolicyConditioning::position) {
    return static_cast<std::uint32_t>(position);
  }
  return position == 0 ? shape_.vocab_size : prefix[position - 1].id;
}

std::size_t TabularPolicy::row_offset(PromptId prompt, std::uint32_t context) const {
  if (prompt < 0 || prompt >= static_cast<PromptId>(shape_.num_prompts)) {
    throw Error("policy: prompt id " + std::to_string(prompt) + " outside [0, " +
                std::to_string(shape_.num_prompts) + ")");
  }
  if (context >= shape_.num_contexts()) {
    throw Error("policy: context " + std::to_string(context) + " out of range");
  }
  return (static_cast<std::size_t>(prompt) * shape_.num_contexts() + context) * shape_.vocab_size;
}

std::span<const double> TabularPolicy::row(PromptId prompt, std::uint32_t context) const {
  return std::span<const double>(logits_).subspan(row_offset(prompt, context), shape_.vocab_size);
}

std::span<double> TabularPolicy::row(PromptId prompt, std::uint32_t context) {
  return std::span<double>(logits_).subspan(row_offset(prompt, context), shape_.vocab_size);
}

double TabularPolicy::softmax_row(PromptId prompt, std::uint32_t context,
                                  std::span<double> probs) const {
  const auto logits = row(prompt, context);
  const double m = kernels::max(logits);
  const double z = kernels::exp_shifted(logits, m, probs);
  for (double& p : probs) p /= z;
  return m + std::log(z);
}

void TabularPolicy::check_finite() const {
  for (std::size_t k = 0; k < logits_.size(); ++k) {
    if (!std::isfinite(logits_[k])) {
      throw Error("policy: non-finite logit at flat index " + std::to_string(k));
    }
  }
}

std::uint32_t sample_top_p(std::span<const double> probs, double top_p, RngStream& rng) {
  std::vector<std::uint32_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return probs[a] > probs[b]; });
  // Smallest head of the sorted distribution whose mass reaches top_p.
  std::size_t keep = 0;
  double mass = 0.0;
  while (keep < order.size()) {
    mass += probs[order[keep]];
    ++keep;
    if (mass >= top_p) break;
  }
  const double u = rng.uniform() * mass;
  double acc = 0.0;
  for (std::size_t k = 0; k < keep; ++k) {
    acc += probs[order[k]];
    if (u < acc) return order[k];
  }
  // Rounding can leave u marginally above the accumulated mass.
  for (std::size_t k = keep; k-- > 0;) {
    if (probs[order[k]] > 0.0) return order[k];
  }
  return order.front();
}

Trajectory sample_trajectory(const TabularPolicy& policy, PromptId prompt,
                             DecodingParams decoding, RngStream& rng) {
  if (!(decoding.temperature > 0.0)) throw Error("sampling: temperature must be positive");
  if (!(decoding.top_p > 0.0 && decoding.top_p <= 1.0)) {
    throw Error("sampling: top_p must lie in (0,1]");
  }
  const auto& shape = policy.shape();
  std::vector<Token> tokens;
  std::vector<double> logprobs;
  std::vector<double> probs(shape.vocab_size);
  std::vector<double> scaled(shape.vocab_size);
  for (std::size_t pos = 0; pos < shape.max_tokens; ++pos) {
    const auto ctx = policy.context_index(tokens, pos);
    const auto logits = policy.row(prompt, ctx);
    std::uint32_t tok = 0;
    if (decoding.temperature == 1.0) {
      policy.softmax_row(prompt, ctx, probs);
      tok = sample_top_p(probs, decoding.top_p, rng);
    } else {
      for (std::size_t v = 0; v < logits.size(); ++v) scaled[v] = logits[v] / decoding.temperature;
      const double z = kernels::exp_shifted(scaled, kernels::max(scaled), probs);
      for (double& p : probs) p /= z;
      tok = sample_top_p(probs, decoding.top_p, rng);
    }
    const double log_norm = policy.softmax_row(prompt, ctx, probs);
    tokens.push_back({tok});
    logprobs.push_back(std::min(0.0, logits[tok] - log_norm));
    if (tok == shape.eos_id) break;
  }
  return Trajectory(prompt, std::move(tokens), std::move(logprobs), policy.limits());
}

std::vector<double> logprob(const TabularPolicy& policy, const Trajectory& trajectory) {
  const auto& shape = policy.shape();
  const auto& tokens = trajectory.tokens();
  if (tokens.size() > shape.max_tokens) throw Error("logprob: trajectory longer than max_tokens");
  std::vector<double> probs(shape.vocab_size);
  std::vector<double> out(tokens.size());
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    if (tokens[pos].id >= shape.vocab_size) {
      throw Error("logprob: token id " + std::to_string(tokens[pos].id) + " at position " +
                  std::to_string(pos) + " outside vocabulary");
    }
    const auto ctx = policy.context_index(tokens, pos);
    const double log_norm = policy.softmax_row(trajectory.prompt_id(), ctx, probs);
    out[pos] = std::min(0.0, policy.row(trajectory.prompt_id(), ctx)[tokens[pos].id] - log_norm);
  }
  return out;
}

std::vector<RowGradient> logprob_grad(const TabularPolicy& policy, const Trajectory& trajectory) {
  const auto& shape = policy.shape();
  const auto& tokens = trajectory.tokens();
  std::vector<RowGradient> out;
  out.reserve(tokens.size());
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    if (tokens[pos].id >= shape.vocab_size) {
      throw Error("logprob_grad: token id outside vocabulary");
    }
    const auto ctx = policy.context_index(tokens, pos);
    RowGradient g;
    g.row_offset = policy.row_offset(trajectory.prompt_id(), ctx);
    g.values.resize(shape.vocab_size);
    policy.softmax_row(trajectory.prompt_id(), ctx, g.values);
    for (double& v : g.values) v = -v;
    g.values[tokens[pos].id] += 1.0;
    out.push_back(std::move(g));
  }
  return out;
}

void write_checkpoint(std::ostream& os, const TabularPolicy& policy) {
  const auto& s = policy.shape();
  os << "# hpo-tabular-policy vocab_size=" << s.vocab_size << " max_tokens=" << s.max_tokens
     << " num_prompts=" << s.num_prompts << " conditioning=" << to_string(s.conditioning)
     << " eos_id=" << s.eos_id << '\n';
  const auto params = policy.params();
  std::size_t k = 0;
  for (std::uint32_t p = 0; p < s.num_prompts; ++p) {
    for (std::uint32_t c = 0; c < s.num_contexts(); ++c) {
      for (std::uint32_t v = 0; v < s.vocab_size; ++v, ++k) {
        os << p << '\t' << c << '\t' << v << '\t' << format_real(params[k]) << '\n';
      }
    }
  }
}

TabularPolicy read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("checkpoint: empty input");
  std::istringstream header(line);
  std::string hash;
  std::string magic;
  header >> hash >> magic;
  if (hash != "#" || magic != "hpo-tabular-policy") throw Error("checkpoint: bad header");
  std::map<std::string, std::string> fields;
  std::string kv;
  while (header >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("checkpoint: malformed header field '" + kv + "'");
    fields[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw Error("checkpoint: header lacks '" + key + "'");
    return it->second;
  };
  PolicyShape shape;
  try {
    shape.vocab_size = static_cast<std::uint32_t>(std::stoul(field("vocab_size")));
    shape.max_tokens = static_cast<std::uint32_t>(std::stoul(field("max_tokens")));
    shape.num_prompts = static_cast<std::uint32_t>(std::stoul(field("num_prompts")));
    shape.eos_id = static_cast<std::uint32_t>(std::stoul(field("eos_id")));
  } catch (const std::logic_error&) {
    throw Error("checkpoint: non-numeric header value");
  }
  const auto& cond = field("conditioning");
  if (cond == "position") {
    shape.conditioning = PolicyConditioning::position;
  } else if (cond == "prefix_bigram") {
    shape.conditioning = PolicyConditioning::prefix_bigram;
  } else {
    throw Error("checkpoint: unknown conditioning '" + cond + "'");
  }
  TabularPolicy policy(shape);
  auto params = policy.params();
  std::size_t k = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream rec(line);
    long long p = -1;
    long long c = -1;
    long long v = -1;
    std::string value;
    if (!(rec >> p >> c >> v >> value)) {
      throw Error("checkpoint: malformed record at line " + std::to_string(k + 2));
    }
    if (v < 0 || v >= static_cast<long long>(shape.vocab_size) || c < 0 ||
        c >= static_cast<long long>(shape.num_contexts())) {
      throw Error("checkpoint: record index out of range at line " + std::to_string(k + 2));
    }
    params[policy.row_offset(p, static_cast<std::uint32_t>(c)) + static_cast<std::size_t>(v)] =
        parse_real(value);
    ++k;
  }
  if (k != params.size()) {
    throw Error("checkpoint: expected " + std::to_string(params.size()) + " records, found " +
                std::to_string(k));
  }
  policy.check_finite();
  return policy;
}

void save_checkpoint(const std::string& path, const TabularPolicy& policy) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, policy);
  if (!os) throw Error("failed writing checkpoint: " + path);
}

TabularPolicy load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  try {
    return read_checkpoint(is);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace hpo
