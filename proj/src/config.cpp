#include "hpo/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace hpo {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError(std::string(key) + ": expected " + expected + ", got '" + std::string(value) +
                    "'");
}

double to_real(std::string_view key, std::string_view v) {
  try {
    return parse_real(v);
  } catch (const Error&) {
    bad_value(key, v, "a real number");
  }
}

template <typename Int>
Int to_int(std::string_view key, std::string_view v) {
  Int out{};
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

struct Field {
  std::string key;
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define HPO_REAL(name)                                                                     \
  Field {                                                                                  \
    #name, [](TrainConfig& c, std::string_view v) { c.name = to_real(#name, v); },         \
        [](const TrainConfig& c) { return format_real(c.name); }                           \
  }
#define HPO_UINT(name, type)                                                               \
  Field {                                                                                  \
    #name, [](TrainConfig& c, std::string_view v) { c.name = to_int<type>(#name, v); },    \
        [](const TrainConfig& c) { return std::to_string(c.name); }                        \
  }
#define HPO_STRING(name)                                                                   \
  Field {                                                                                  \
    #name, [](TrainConfig& c, std::string_view v) { c.name = std::string(v); },            \
        [](const TrainConfig& c) { return c.name; }                                        \
  }

template <typename Enum>
Field enum_field(const char* key, Enum TrainConfig::*member, std::initializer_list<Enum> values) {
  std::vector<Enum> options(values);
  return Field{
      key,
      [key, member, options](TrainConfig& c, std::string_view v) {
        for (Enum e : options) {
          if (to_string(e) == v) {
            c.*member = e;
            return;
          }
        }
        std::string expected = "one of";
        for (Enum e : options) expected += " " + std::string(to_string(e));
        bad_value(key, v, expected.c_str());
      },
      [member](const TrainConfig& c) { return std::string(to_string(c.*member)); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      HPO_REAL(learning_rate),
      HPO_REAL(desk_learning_rate),
      enum_field("lr_profile", &TrainConfig::lr_profile, {LrProfile::desk, LrProfile::paper}),
      HPO_REAL(clip_epsilon),
      HPO_UINT(rollouts_train, std::uint32_t),
      HPO_UINT(rollouts_eval, std::uint32_t),
      HPO_UINT(batch_prompts, std::uint32_t),
      HPO_REAL(temperature_train),
      HPO_REAL(temperature_eval),
      HPO_REAL(top_p),
      HPO_UINT(max_tokens, std::uint32_t),
      HPO_REAL(alpha_min),
      Field{"alpha_fixed",
            [](TrainConfig& c, std::string_view v) {
              if (v == "unset") {
                c.alpha_fixed.reset();
              } else {
                c.alpha_fixed = to_real("alpha_fixed", v);
              }
            },
            [](const TrainConfig& c) {
              return c.alpha_fixed ? format_real(*c.alpha_fixed) : std::string("unset");
            }},
      HPO_REAL(sign_eps),
      HPO_REAL(std_eps),
      enum_field("estimator_variant", &TrainConfig::estimator_variant,
                 {EstimatorVariant::grpo, EstimatorVariant::hpo_fixed, EstimatorVariant::a_hpo,
                  EstimatorVariant::n_hpo, EstimatorVariant::v_hpo}),
      Field{"normalization",
            [](TrainConfig& c, std::string_view v) {
              if (v == "unset") {
                c.normalization.reset();
                return;
              }
              try {
                c.normalization = parse_normalization(v);
              } catch (const ConfigError&) {
                bad_value("normalization", v, "per_response, mean_length or unset");
              }
            },
            [](const TrainConfig& c) {
              return c.normalization ? std::string(to_string(*c.normalization))
                                     : std::string("unset");
            }},
      HPO_REAL(v_hpo_alpha0),
      HPO_REAL(v_hpo_alpha1),
      HPO_REAL(v_hpo_eps),
      HPO_UINT(seed, std::uint64_t),
      HPO_UINT(steps, std::uint32_t),
      HPO_UINT(inner_epochs, std::uint32_t),
      enum_field("optimizer", &TrainConfig::optimizer, {OptimizerKind::sgd, OptimizerKind::adam}),
      HPO_REAL(adam_beta1),
      HPO_REAL(adam_beta2),
      HPO_REAL(adam_eps),
      HPO_UINT(eval_interval, std::uint32_t),
      HPO_UINT(checkpoint_interval, std::uint32_t),
      enum_field("conditioning", &TrainConfig::conditioning,
                 {PolicyConditioning::position, PolicyConditioning::prefix_bigram}),
      HPO_REAL(prior_strength),
      enum_field("task", &TrainConfig::task, {TaskKind::countdown, TaskKind::bernoulli}),
      HPO_UINT(dataset_size, std::uint32_t),
      HPO_UINT(num_numbers, std::uint32_t),
      HPO_UINT(number_max, std::uint32_t),
      HPO_UINT(target_max, std::uint32_t),
      Field{"integer_division_only",
            [](TrainConfig& c, std::string_view v) {
              c.integer_division_only = to_bool("integer_division_only", v);
            },
            [](const TrainConfig& c) {
              return std::string(c.integer_division_only ? "true" : "false");
            }},
      HPO_UINT(dataset_seed, std::uint64_t),
      HPO_STRING(train_dataset),
      HPO_STRING(eval_dataset),
      HPO_REAL(bernoulli_p_start),
      HPO_REAL(bernoulli_p_end),
      HPO_UINT(bernoulli_ramp_steps, std::uint32_t),
      HPO_UINT(bernoulli_prompts, std::uint32_t),
  };
  return table;
}

#undef HPO_REAL
#undef HPO_UINT
#undef HPO_STRING

}  // namespace

void apply_setting(TrainConfig& config, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::pair<std::string, std::string> split_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  }
  return {std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1)))};
}

TrainConfig parse_config_text(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    try {
      const auto [k, v] = split_assignment(line);
      apply_setting(base, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

TrainConfig load_config_file(const std::string& path, TrainConfig base) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config_text(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(config));
  return out;
}

std::string format_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_entries(config)) out += k + " = " + v + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

}  // namespace hpo
