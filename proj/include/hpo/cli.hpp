#pragma once

// The hpo_lab command line: run, sweep-alpha, oracle, diagnose, gen-dataset.
//
// Exit codes: 0 success, 1 run or check failure, 2 usage, configuration or
// load error.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hpo/analytics.hpp"
#include "hpo/core.hpp"
#include "hpo/policy.hpp"
#include "hpo/tasks.hpp"

namespace hpo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Config file (when non-empty), then each KEY=VALUE override in order, then
/// the seed. Validates the result.
TrainConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides,
                           std::optional<std::uint64_t> seed);

/// Sorted distinct values; `duplicates` receives each value dropped.
std::vector<double> dedupe_alphas(const std::vector<double>& alphas,
                                  std::vector<double>* duplicates = nullptr);

struct OracleCell {
  double p = 0.0;
  std::uint32_t n = 0;
  SignProbabilities closed;
  MonteCarloSignEstimate mc;
  double z_pos = 0.0;
  double z_neg = 0.0;
  double z_ratio = 0.0;
  bool pass = false;  // every |z| <= 4
};

OracleCell oracle_cell(double p, std::uint32_t n, std::uint64_t num_groups, std::uint64_t seed);
inline constexpr const char* kOracleHeader =
    "p,N,p_pos,p_pos_mc,se_pos,p_neg,p_neg_mc,se_neg,ratio,ratio_mc,se_ratio,status";
std::string format_oracle_row(const OracleCell& cell);

struct DiagnosticReport {
  BatchStats stats;
  double alpha_used = 1.0;
  double norm_pos = 0.0;
  double norm_neg = 0.0;
  double norm_ratio = 0.0;  // +inf when norm_neg is zero
  double decomposition_residual = 0.0;
  double objective = 0.0;
};

/// Collects one batch under `policy` at the config's seed and measures the
/// sign balance and the gradient decomposition.
DiagnosticReport diagnose(const TabularPolicy& policy, const Task& task, const TrainConfig& config);
std::string format_diagnostic(const DiagnosticReport& report);

}  // namespace hpo
