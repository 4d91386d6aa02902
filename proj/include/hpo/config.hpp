#pragma once

// Flat key=value configuration files.
//
//   # comment
//   estimator_variant = a_hpo
//   alpha_min = 0.4
//
// Keys are TrainConfig field names. Blank lines and '#' comments are ignored;
// whitespace around keys and values is trimmed. Unknown keys and unparsable
// values raise ConfigError naming the key.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hpo/core.hpp"

namespace hpo {

/// Sets one field from its textual value.
void apply_setting(TrainConfig& config, std::string_view key, std::string_view value);

/// Splits "key=value"; throws ConfigError when there is no '='.
std::pair<std::string, std::string> split_assignment(std::string_view text);

TrainConfig parse_config_text(std::string_view text, TrainConfig base = {});
/// Throws ConfigError naming the path when the file cannot be read.
TrainConfig load_config_file(const std::string& path, TrainConfig base = {});

/// Every key with its current value, in a fixed order. alpha_fixed and
/// normalization read "unset" when empty. Re-parsing the pairs reproduces the
/// config exactly.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config);
std::string format_config(const TrainConfig& config);

const std::vector<std::string>& config_keys();

}  // namespace hpo
