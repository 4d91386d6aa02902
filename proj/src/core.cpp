#include "hpo/core.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace hpo {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(message);
}

}  // namespace

Trajectory::Trajectory(PromptId prompt_id, std::vector<Token> tokens,
                       std::vector<double> old_logprobs, SequenceLimits limits)
    : prompt_id_(prompt_id), tokens_(std::move(tokens)), old_logprobs_(std::move(old_logprobs)) {
  require(tokens_.size() == old_logprobs_.size(),
          "trajectory: " + std::to_string(tokens_.size()) + " tokens but " +
              std::to_string(old_logprobs_.size()) + " old logprobs");
  require(!tokens_.empty(), "trajectory: length must be at least 1");
  require(tokens_.size() <= limits.max_tokens,
          "trajectory: length " + std::to_string(tokens_.size()) + " exceeds max_tokens " +
              std::to_string(limits.max_tokens));
  for (std::size_t j = 0; j < tokens_.size(); ++j) {
    require(tokens_[j].id < limits.vocab_size,
            "trajectory: token id " + std::to_string(tokens_[j].id) + " at position " +
                std::to_string(j) + " outside vocabulary of size " +
                std::to_string(limits.vocab_size));
    require(old_logprobs_[j] <= 0.0, "trajectory: old logprob at position " + std::to_string(j) +
                                         " is not a log-probability (" +
                                         format_real(old_logprobs_[j]) + ")");
  }
}

Group::Group(PromptId prompt_id, std::string answer, std::vector<Trajectory> trajectories,
             std::vector<double> rewards)
    : prompt_id_(prompt_id),
      answer_(std::move(answer)),
      trajectories_(std::move(trajectories)),
      rewards_(std::move(rewards)) {
  require(trajectories_.size() == rewards_.size(),
          "group: " + std::to_string(trajectories_.size()) + " trajectories but " +
              std::to_string(rewards_.size()) + " rewards");
  require(rewards_.size() >= 2, "group too small for relative advantage");
  for (double r : rewards_) {
    require(r == 0.0 || r == 1.0, "group: reward " + format_real(r) + " is not binary");
  }
  for (const auto& t : trajectories_) {
    require(t.prompt_id() == prompt_id_, "group: trajectory prompt id " +
                                             std::to_string(t.prompt_id()) +
                                             " differs from group prompt id " +
                                             std::to_string(prompt_id_));
  }
  for (char c : answer_) {
    require(c != ' ' && c != '\n' && c != '\t' && c != '=', "group: answer contains whitespace or '='");
  }
}

AdvantageSet::AdvantageSet(std::vector<double> advantages, std::vector<double> weights,
                           double alpha_used, AdvantageEstimator estimator)
    : advantages_(std::move(advantages)),
      weights_(std::move(weights)),
      alpha_used_(alpha_used),
      estimator_(estimator) {
  require(advantages_.size() == weights_.size(), "advantage set: size mismatch");
  require(alpha_used_ >= 0.0 && alpha_used_ <= 1.0,
          "advantage set: alpha " + format_real(alpha_used_) + " outside [0,1]");
  if (estimator_ == AdvantageEstimator::centered) {
    double total = 0.0;
    for (double a : advantages_) total += a;
    require(std::abs(total) <= 1e-12 * static_cast<double>(advantages_.size()),
            "advantage set: centered advantages sum to " + format_real(total));
  }
  for (std::size_t i = 0; i < advantages_.size(); ++i) {
    const double expected = advantages_[i] >= 0.0 ? 1.0 : alpha_used_;
    require(weights_[i] == expected, "advantage set: weight " + format_real(weights_[i]) +
                                         " at response " + std::to_string(i) +
                                         " inconsistent with alpha " + format_real(alpha_used_));
  }
}

Batch::Batch(std::vector<Group> groups) : groups_(std::move(groups)) {
  require(!groups_.empty(), "batch: no groups");
  std::size_t total = 0;
  for (const auto& g : groups_) {
    for (const auto& t : g.trajectories()) {
      total += t.length();
      ++num_responses_;
    }
  }
  mean_length_ = static_cast<double>(total) / static_cast<double>(num_responses_);
}

void BatchStats::validate() const {
  const std::size_t signed_count = n_pos + n_neg;
  if (signed_count > 0) {
    require(p_pos == static_cast<double>(n_pos) / static_cast<double>(signed_count),
            "batch stats: p_pos inconsistent with counts");
    require(std::abs(p_pos + p_neg - 1.0) <= 1e-15, "batch stats: p_pos + p_neg != 1");
  }
  require(p_pos >= 0.0 && p_pos <= 1.0 && p_neg >= 0.0 && p_neg <= 1.0,
          "batch stats: sign frequency outside [0,1]");
  require(alpha_adaptive >= 0.0 && alpha_adaptive <= 1.0, "batch stats: alpha outside [0,1]");
  require(m_pos >= 0.0 && m_neg >= 0.0, "batch stats: negative magnitude");
  require(rho >= 0.0, "batch stats: negative rho");
  require(!rho_sentinel || std::isinf(rho), "batch stats: sentinel flag without infinite rho");
}

BatchStats stats_from_counts(std::size_t n_pos, std::size_t n_neg, std::size_t n_zero) {
  BatchStats s;
  s.n_pos = n_pos;
  s.n_neg = n_neg;
  s.n_zero = n_zero;
  const std::size_t signed_count = n_pos + n_neg;
  if (signed_count > 0) {
    s.p_pos = static_cast<double>(n_pos) / static_cast<double>(signed_count);
    s.p_neg = static_cast<double>(n_neg) / static_cast<double>(signed_count);
  }
  return s;
}

std::string_view to_string(AdvantageEstimator e) {
  switch (e) {
    case AdvantageEstimator::grpo_standardized: return "grpo_standardized";
    case AdvantageEstimator::centered: return "centered";
  }
  return "?";
}

std::string_view to_string(EstimatorVariant v) {
  switch (v) {
    case EstimatorVariant::grpo: return "grpo";
    case EstimatorVariant::hpo_fixed: return "hpo_fixed";
    case EstimatorVariant::a_hpo: return "a_hpo";
    case EstimatorVariant::n_hpo: return "n_hpo";
    case EstimatorVariant::v_hpo: return "v_hpo";
  }
  return "?";
}

std::string_view to_string(Normalization n) {
  return n == Normalization::per_response ? "per_response" : "mean_length";
}
std::string_view to_string(OptimizerKind o) { return o == OptimizerKind::sgd ? "sgd" : "adam"; }
std::string_view to_string(TaskKind t) {
  return t == TaskKind::countdown ? "countdown" : "bernoulli";
}
std::string_view to_string(PolicyConditioning c) {
  return c == PolicyConditioning::position ? "position" : "prefix_bigram";
}
std::string_view to_string(LrProfile p) { return p == LrProfile::desk ? "desk" : "paper"; }

EstimatorVariant parse_estimator_variant(std::string_view s) {
  for (auto v : {EstimatorVariant::grpo, EstimatorVariant::hpo_fixed, EstimatorVariant::a_hpo,
                 EstimatorVariant::n_hpo, EstimatorVariant::v_hpo}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown estimator_variant '" + std::string(s) + "'");
}

Normalization parse_normalization(std::string_view s) {
  if (s == "per_response") return Normalization::per_response;
  if (s == "mean_length") return Normalization::mean_length;
  throw ConfigError("unknown normalization '" + std::string(s) + "'");
}

Normalization TrainConfig::resolved_normalization() const {
  if (normalization) return *normalization;
  switch (estimator_variant) {
    case EstimatorVariant::grpo:
    case EstimatorVariant::n_hpo: return Normalization::per_response;
    default: return Normalization::mean_length;
  }
}

double TrainConfig::effective_learning_rate() const {
  return lr_profile == LrProfile::desk ? desk_learning_rate : learning_rate;
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const char* field, const std::string& why) {
    if (!ok) throw ConfigError(std::string(field) + ": " + why);
  };
  check(learning_rate > 0.0, "learning_rate", "must be positive");
  check(desk_learning_rate > 0.0, "desk_learning_rate", "must be positive");
  check(clip_epsilon > 0.0 && clip_epsilon < 1.0, "clip_epsilon", "must lie in (0,1)");
  check(rollouts_train >= 2, "rollouts_train", "must be at least 2");
  check(rollouts_eval >= 1, "rollouts_eval", "must be at least 1");
  check(batch_prompts >= 1, "batch_prompts", "must be at least 1");
  check(temperature_train > 0.0, "temperature_train", "must be positive");
  check(temperature_eval > 0.0, "temperature_eval", "must be positive");
  check(top_p > 0.0 && top_p <= 1.0, "top_p", "must lie in (0,1]");
  check(max_tokens >= 1, "max_tokens", "must be at least 1");
  check(alpha_min >= 0.0 && alpha_min <= 1.0, "alpha_min", "must lie in [0,1]");
  check(!alpha_fixed || (*alpha_fixed >= 0.0 && *alpha_fixed <= 1.0), "alpha_fixed",
        "must lie in [0,1]");
  check(sign_eps > 0.0, "sign_eps", "must be positive");
  check(std_eps >= 0.0, "std_eps", "must be non-negative");
  check(v_hpo_alpha0 >= 0.0 && v_hpo_alpha0 <= 1.0, "v_hpo_alpha0", "must lie in [0,1]");
  check(v_hpo_alpha1 > 0.0, "v_hpo_alpha1", "must be positive");
  check(v_hpo_eps > 0.0, "v_hpo_eps", "must be positive");
  check(inner_epochs >= 1, "inner_epochs", "must be at least 1");
  check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must lie in [0,1)");
  check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must lie in [0,1)");
  check(adam_eps > 0.0, "adam_eps", "must be positive");
  check(eval_interval >= 1, "eval_interval", "must be at least 1");
  check(std::isfinite(prior_strength), "prior_strength", "must be finite");
  check(num_numbers == 3 || num_numbers == 4, "num_numbers", "must be 3 or 4");
  check(number_max >= 1 && number_max <= 20, "number_max", "must lie in [1,20]");
  check(target_max >= 1, "target_max", "must be at least 1");
  check(dataset_size >= 1, "dataset_size", "must be at least 1");
  check(bernoulli_p_start > 0.0 && bernoulli_p_start < 1.0, "bernoulli_p_start",
        "must lie in (0,1)");
  check(bernoulli_p_end > 0.0 && bernoulli_p_end < 1.0, "bernoulli_p_end", "must lie in (0,1)");
  check(bernoulli_prompts >= 1, "bernoulli_prompts", "must be at least 1");
  if (estimator_variant == EstimatorVariant::hpo_fixed && !alpha_fixed) {
    throw ConfigError("alpha_fixed: required when estimator_variant=hpo_fixed");
  }
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_real(std::string_view s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw Error("not a real number: '" + std::string(s) + "'");
  }
  return v;
}

namespace {

template <typename Int>
Int parse_int(std::string_view s) {
  Int v{};
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw Error("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// One parsed "tag k=v k=v" line.
struct Record {
  std::string_view tag;
  std::map<std::string_view, std::string_view> fields;

  std::string_view at(std::string_view key) const {
    auto it = fields.find(key);
    if (it == fields.end()) {
      throw Error("record '" + std::string(tag) + "' missing field '" + std::string(key) + "'");
    }
    return it->second;
  }
};

Record parse_record(std::string_view line) {
  Record rec;
  auto parts = split(line, ' ');
  rec.tag = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const auto eq = parts[k].find('=');
    if (eq == std::string_view::npos) {
      throw Error("malformed field '" + std::string(parts[k]) + "'");
    }
    rec.fields.emplace(parts[k].substr(0, eq), parts[k].substr(eq + 1));
  }
  return rec;
}

std::vector<Record> parse_records(std::string_view text) {
  std::vector<Record> out;
  for (auto line : split(text, '\n')) {
    if (line.empty()) continue;
    out.push_back(parse_record(line));
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& values, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += fmt(values[i]);
  }
  return out;
}

}  // namespace

std::string serialize(const Batch& batch) {
  std::ostringstream os;
  os << "batch groups=" << batch.groups().size()
     << " mean_length=" << format_real(batch.mean_length()) << '\n';
  for (const auto& g : batch.groups()) {
    os << "group prompt_id=" << g.prompt_id() << " answer=" << g.answer() << " n=" << g.size()
       << " rewards=" << join(g.rewards(), format_real) << '\n';
    for (const auto& t : g.trajectories()) {
      os << "trajectory prompt_id=" << t.prompt_id() << " length=" << t.length()
         << " tokens=" << join(t.tokens(), [](Token tok) { return std::to_string(tok.id); })
         << " old_logprobs=" << join(t.old_logprobs(), format_real) << '\n';
    }
  }
  return os.str();
}

Batch deserialize_batch(std::string_view text, SequenceLimits limits) {
  auto records = parse_records(text);
  if (records.empty() || records.front().tag != "batch") throw Error("batch: missing header");
  const auto n_groups = parse_int<std::size_t>(records.front().at("groups"));
  const double mean_length = parse_real(records.front().at("mean_length"));
  std::vector<Group> groups;
  std::size_t r = 1;
  for (std::size_t gi = 0; gi < n_groups; ++gi) {
    if (r >= records.size() || records[r].tag != "group") throw Error("batch: expected group");
    const auto& gr = records[r++];
    const auto prompt = parse_int<PromptId>(gr.at("prompt_id"));
    const auto n = parse_int<std::size_t>(gr.at("n"));
    std::vector<double> rewards;
    for (auto v : split(gr.at("rewards"), ',')) rewards.push_back(parse_real(v));
    std::vector<Trajectory> trajs;
    for (std::size_t i = 0; i < n; ++i) {
      if (r >= records.size() || records[r].tag != "trajectory") {
        throw Error("batch: expected trajectory");
      }
      const auto& tr = records[r++];
      std::vector<Token> tokens;
      for (auto v : split(tr.at("tokens"), ',')) tokens.push_back({parse_int<std::uint32_t>(v)});
      std::vector<double> lps;
      for (auto v : split(tr.at("old_logprobs"), ',')) lps.push_back(parse_real(v));
      if (parse_int<std::size_t>(tr.at("length")) != tokens.size()) {
        throw Error("batch: trajectory length field disagrees with token count");
      }
      trajs.emplace_back(parse_int<PromptId>(tr.at("prompt_id")), std::move(tokens),
                         std::move(lps), limits);
    }
    groups.emplace_back(prompt, std::string(gr.at("answer")), std::move(trajs),
                        std::move(rewards));
  }
  if (r != records.size()) throw Error("batch: trailing records");
  Batch batch(std::move(groups));
  if (batch.mean_length() != mean_length) throw Error("batch: mean_length field inconsistent");
  return batch;
}

std::string serialize(const BatchStats& s) {
  std::ostringstream os;
  os << "batch_stats n_pos=" << s.n_pos << " n_neg=" << s.n_neg << " n_zero=" << s.n_zero
     << " p_pos=" << format_real(s.p_pos) << " p_neg=" << format_real(s.p_neg)
     << " alpha_adaptive=" << format_real(s.alpha_adaptive) << " m_pos=" << format_real(s.m_pos)
     << " m_neg=" << format_real(s.m_neg) << " rho=" << format_real(s.rho)
     << " rho_sentinel=" << (s.rho_sentinel ? 1 : 0) << '\n';
  return os.str();
}

BatchStats deserialize_batch_stats(std::string_view text) {
  auto records = parse_records(text);
  if (records.size() != 1 || records.front().tag != "batch_stats") {
    throw Error("batch_stats: expected exactly one record");
  }
  const auto& r = records.front();
  BatchStats s;
  s.n_pos = parse_int<std::size_t>(r.at("n_pos"));
  s.n_neg = parse_int<std::size_t>(r.at("n_neg"));
  s.n_zero = parse_int<std::size_t>(r.at("n_zero"));
  s.p_pos = parse_real(r.at("p_pos"));
  s.p_neg = parse_real(r.at("p_neg"));
  s.alpha_adaptive = parse_real(r.at("alpha_adaptive"));
  s.m_pos = parse_real(r.at("m_pos"));
  s.m_neg = parse_real(r.at("m_neg"));
  s.rho = parse_real(r.at("rho"));
  s.rho_sentinel = parse_int<int>(r.at("rho_sentinel")) != 0;
  s.validate();
  return s;
}

}  // namespace hpo
