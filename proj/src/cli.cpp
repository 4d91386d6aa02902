#include "hpo/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hpo/advantage.hpp"
#include "hpo/config.hpp"
#include "hpo/objective.hpp"
#include "hpo/trainer.hpp"

#ifndef HPO_BUILD_ID
#define HPO_BUILD_ID "unknown"
#endif

namespace hpo {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

TrainConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides,
                           std::optional<std::uint64_t> seed) {
  TrainConfig config = config_path.empty() ? TrainConfig{} : load_config_file(config_path);
  for (const auto& o : overrides) {
    const auto [k, v] = split_assignment(o);
    apply_setting(config, k, v);
  }
  if (seed) config.seed = *seed;
  config.validate();
  return config;
}

std::vector<double> dedupe_alphas(const std::vector<double>& alphas,
                                  std::vector<double>* duplicates) {
  std::vector<double> sorted = alphas;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  for (double a : sorted) {
    if (!out.empty() && out.back() == a) {
      if (duplicates) duplicates->push_back(a);
    } else {
      out.push_back(a);
    }
  }
  return out;
}

OracleCell oracle_cell(double p, std::uint32_t n, std::uint64_t num_groups, std::uint64_t seed) {
  OracleCell cell;
  cell.p = p;
  cell.n = n;
  cell.closed = closed_form_sign_probs(p, n);
  cell.mc = monte_carlo_sign_probs(p, n, num_groups, seed);
  const auto z = [](double est, double truth, double se) {
    if (se > 0.0) return (est - truth) / se;
    return est == truth ? 0.0 : std::numeric_limits<double>::infinity();
  };
  cell.z_pos = z(cell.mc.p_pos_hat, cell.closed.p_pos, cell.mc.stderr_pos);
  cell.z_neg = z(cell.mc.p_neg_hat, cell.closed.p_neg, cell.mc.stderr_neg);
  cell.z_ratio = z(cell.mc.ratio_hat, cell.closed.ratio, cell.mc.stderr_ratio);
  cell.pass = std::abs(cell.z_pos) <= 4.0 && std::abs(cell.z_neg) <= 4.0 &&
              std::abs(cell.z_ratio) <= 4.0;
  return cell;
}

std::string format_oracle_row(const OracleCell& c) {
  std::ostringstream os;
  os << format_real(c.p) << ',' << c.n << ',' << format_real(c.closed.p_pos) << ','
     << format_real(c.mc.p_pos_hat) << ',' << format_real(c.mc.stderr_pos) << ','
     << format_real(c.closed.p_neg) << ',' << format_real(c.mc.p_neg_hat) << ','
     << format_real(c.mc.stderr_neg) << ',' << format_real(c.closed.ratio) << ','
     << format_real(c.mc.ratio_hat) << ',' << format_real(c.mc.stderr_ratio) << ','
     << (c.pass ? "ok" : "FAIL");
  return os.str();
}

DiagnosticReport diagnose(const TabularPolicy& policy, const Task& task, const TrainConfig& config) {
  TrainState state{policy, 0, {}, config.seed, {}};
  const Batch batch = collect_batch(state, task, config);
  const auto sets = compute_advantage_sets(batch, config);

  DiagnosticReport r;
  const auto old_lp = batch_logprobs(policy, batch);
  r.stats = surrogate_balance(batch, sets, token_surrogates(batch, sets, old_lp, config.clip_epsilon),
                              config.alpha_min, config.sign_eps);
  r.alpha_used = mean_alpha(sets);

  const auto eval = evaluate_objective(batch, sets, policy, config);
  const auto parts = split_gradient_components(batch, sets, policy, config);
  r.objective = eval.value;
  r.norm_pos = l2_norm(parts.positive);
  r.norm_neg = l2_norm(parts.negative);
  r.norm_ratio = r.norm_neg > 0.0 ? r.norm_pos / r.norm_neg : kInfinitySentinel;
  std::vector<double> residual(eval.gradient.size());
  for (std::size_t k = 0; k < residual.size(); ++k) {
    residual[k] = eval.gradient[k] - (parts.positive[k] + parts.weighted_negative[k]);
  }
  r.decomposition_residual = l2_norm(residual);
  return r;
}

std::string format_diagnostic(const DiagnosticReport& r) {
  std::ostringstream os;
  os << "n_pos=" << r.stats.n_pos << '\n'
     << "n_neg=" << r.stats.n_neg << '\n'
     << "n_zero=" << r.stats.n_zero << '\n'
     << "p_pos=" << format_real(r.stats.p_pos) << '\n'
     << "p_neg=" << format_real(r.stats.p_neg) << '\n'
     << "alpha_adaptive=" << format_real(r.stats.alpha_adaptive) << '\n'
     << "alpha_used=" << format_real(r.alpha_used) << '\n'
     << "rho=" << format_real(r.stats.rho) << (r.stats.rho_sentinel ? " (sentinel)" : "") << '\n'
     << "grad_norm_pos=" << format_real(r.norm_pos) << '\n'
     << "grad_norm_neg=" << format_real(r.norm_neg) << '\n'
     << "grad_norm_ratio=" << format_real(r.norm_ratio)
     << (std::isinf(r.norm_ratio) ? " (sentinel)" : "") << '\n'
     << "decomposition_residual=" << format_real(r.decomposition_residual) << '\n'
     << "objective=" << format_real(r.objective) << '\n';
  return os.str();
}

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--config", a.config_path, "key=value config file");
  sub->add_option("--set", a.overrides, "override KEY=VALUE (repeatable)")->take_all();
  sub->add_option("--seed", a.seed, "training seed");
  sub->add_option("--out", a.out, "output directory");
  sub->add_flag("--force", a.force, "overwrite existing outputs");
}

std::string output_root() {
  const char* env = std::getenv("HPO_LAB_OUT");
  return env && *env ? std::string(env) : std::string("runs");
}

std::string timestamp_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Thrown for usage problems detected after parsing; maps to exit 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

void prepare_output_dir(const fs::path& dir, bool force, const std::vector<std::string>& products) {
  if (!force) {
    for (const auto& name : products) {
      if (fs::exists(dir / name)) {
        throw UsageError((dir / name).string() + " exists; pass --force to overwrite");
      }
    }
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
  if (!os) throw Error("failed writing " + path.string());
}

ordered_json config_json(const TrainConfig& config) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : config_entries(config)) j[k] = v;
  return j;
}

void write_manifest(const fs::path& dir, const TrainConfig& config, const std::string& command) {
  ordered_json m;
  m["command"] = command;
  m["build"] = HPO_BUILD_ID;
  m["seed"] = config.seed;
  m["started_at"] = timestamp_now();
  m["learning_rate_applied"] = config.effective_learning_rate();
  m["learning_rate_paper"] = config.learning_rate;
  m["learning_rate_desk"] = config.desk_learning_rate;
  m["outputs"] = {{"metrics", "metrics.csv"},
                  {"checkpoints", "checkpoints"},
                  {"summary", "summary.json"}};
  m["config"] = config_json(config);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

ordered_json record_json(const StepRecord& r) {
  const auto num = [](double v) -> ordered_json {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  ordered_json j;
  j["step"] = r.step;
  j["estimator"] = std::string(to_string(r.estimator));
  j["alpha_used"] = num(r.alpha_used);
  j["train_reward"] = num(r.mean_train_reward);
  j["eval_reward"] = num(r.eval_reward);
  j["mean_length"] = num(r.mean_length);
  j["p_pos"] = num(r.p_pos);
  j["p_neg"] = num(r.p_neg);
  j["rho"] = num(r.rho);
  j["grad_norm"] = num(r.grad_norm);
  j["objective"] = num(r.objective_value);
  return j;
}

/// Runs one training job into `dir`. Returns the final state's history.
std::vector<StepRecord> execute_run(const TrainConfig& config, const fs::path& dir, bool force,
                                    std::ostream& err) {
  prepare_output_dir(dir, force, {"manifest.json", "metrics.csv", "summary.json"});
  write_manifest(dir, config, "run");
  const auto train_task = make_train_task(config);
  const auto eval_task = make_eval_task(config, *train_task);
  const auto t0 = std::chrono::steady_clock::now();
  TrainState state = [&] {
    try {
      return run_training(config, *train_task, *eval_task,
                          {(dir / "metrics.csv").string(), (dir / "checkpoints").string()});
    } catch (const NonFiniteError& e) {
      write_text(dir / "nonfinite_batch.txt", e.batch_dump());
      err << "non-finite update; offending batch written to "
          << (dir / "nonfinite_batch.txt").string() << '\n';
      throw;
    }
  }();
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ordered_json s;
  s["total_steps"] = state.step;
  if (state.history.empty()) {
    s["final_eval_reward"] = nullptr;
    s["final_mean_length"] = nullptr;
    s["final"] = nullptr;
  } else {
    const auto row = record_json(state.history.back());
    s["final_eval_reward"] = row["eval_reward"];
    s["final_mean_length"] = row["mean_length"];
    s["final"] = row;
  }
  s["wall_clock_seconds"] = seconds;
  s["finished_at"] = timestamp_now();
  write_text(dir / "summary.json", s.dump(2) + "\n");
  return state.history;
}

fs::path default_dir(const CommonArgs& a, const std::string& leaf) {
  return a.out.empty() ? fs::path(output_root()) / leaf : fs::path(a.out);
}

int cmd_run(const CommonArgs& a, std::ostream& out, std::ostream& err) {
  const TrainConfig config = resolve_config(a.config_path, a.overrides, a.seed);
  const fs::path dir = default_dir(
      a, std::string(to_string(config.estimator_variant)) + "_seed" + std::to_string(config.seed));
  const auto history = execute_run(config, dir, a.force, err);
  out << "run complete: " << history.size() << " steps, outputs in " << dir.string() << '\n';
  if (!history.empty()) out << kMetricsHeader << '\n' << format_metrics_row(history.back()) << '\n';
  return kExitOk;
}

int cmd_sweep_alpha(const CommonArgs& a, const std::vector<double>& raw_alphas, std::ostream& out,
                    std::ostream& err) {
  for (double alpha : raw_alphas) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw UsageError("--alphas: " + format_real(alpha) + " is outside [0, 1]");
    }
  }
  std::vector<double> dups;
  const auto alphas = dedupe_alphas(raw_alphas, &dups);
  for (double d : dups) err << "warning: duplicate alpha " << format_real(d) << " ignored\n";

  const TrainConfig base = resolve_config(a.config_path, a.overrides, a.seed);
  const fs::path root = default_dir(a, "sweep_seed" + std::to_string(base.seed));
  prepare_output_dir(root, a.force, {"sweep.csv"});

  struct Job {
    std::string label;
    TrainConfig config;
  };
  std::vector<Job> jobs;
  for (double alpha : alphas) {
    TrainConfig c = base;
    c.estimator_variant = EstimatorVariant::hpo_fixed;
    c.alpha_fixed = alpha;
    c.validate();
    jobs.push_back({"hpo_fixed_alpha" + format_real(alpha), c});
  }
  for (EstimatorVariant v : {EstimatorVariant::a_hpo, EstimatorVariant::grpo}) {
    TrainConfig c = base;
    c.estimator_variant = v;
    c.alpha_fixed.reset();
    c.validate();
    jobs.push_back({std::string(to_string(v)), c});
  }

  std::ostringstream table;
  table << "run,alpha,step,eval_reward,mean_length\n";
  for (const auto& job : jobs) {
    const auto history = execute_run(job.config, root / job.label, a.force, err);
    for (const auto& r : history) {
      table << job.label << ',' << format_real(r.alpha_used) << ',' << r.step << ','
            << format_real(r.eval_reward) << ',' << format_real(r.mean_length) << '\n';
    }
    out << job.label << ": " << history.size() << " steps";
    if (!history.empty()) out << ", final eval_reward " << format_real(history.back().eval_reward);
    out << '\n';
  }
  write_text(root / "sweep.csv", table.str());
  out << "sweep table: " << (root / "sweep.csv").string() << '\n';
  return kExitOk;
}

int cmd_oracle(const std::vector<double>& p_grid, const std::vector<std::uint32_t>& n_grid,
               std::uint64_t num_groups, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  if (p_grid.empty() || n_grid.empty()) throw UsageError("oracle: --p and --n must be non-empty");
  if (num_groups == 0) throw UsageError("oracle: --groups must be positive");
  for (double p : p_grid) {
    if (!(p > 0.0 && p < 1.0)) throw UsageError("oracle: p=" + format_real(p) + " outside (0, 1)");
  }
  for (auto n : n_grid) {
    if (n < 2) throw UsageError("oracle: N=" + std::to_string(n) + " must be at least 2");
  }
  out << kOracleHeader << '\n';
  std::vector<OracleCell> failing;
  for (double p : p_grid) {
    for (auto n : n_grid) {
      const auto cell = oracle_cell(p, n, num_groups, seed);
      out << format_oracle_row(cell) << '\n';
      if (!cell.pass) failing.push_back(cell);
    }
  }
  for (const auto& c : failing) {
    err << "outside 4 sigma: p=" << format_real(c.p) << " N=" << c.n
        << " z_pos=" << format_real(c.z_pos) << " z_neg=" << format_real(c.z_neg)
        << " z_ratio=" << format_real(c.z_ratio) << '\n';
  }
  return failing.empty() ? kExitOk : kExitFailure;
}

int cmd_diagnose(const CommonArgs& a, const std::string& checkpoint, const std::string& dataset,
                 std::ostream& out) {
  TrainConfig config = resolve_config(a.config_path, a.overrides, a.seed);
  if (!dataset.empty()) config.train_dataset = dataset;
  TabularPolicy policy = [&] {
    try {
      return load_checkpoint(checkpoint);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }();
  std::unique_ptr<Task> task;
  try {
    task = make_train_task(config);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto& shape = policy.shape();
  if (shape.vocab_size != task->vocab_size() || shape.num_prompts < task->num_prompts()) {
    throw UsageError(checkpoint + ": policy shape does not match the task (vocab " +
                     std::to_string(shape.vocab_size) + " vs " +
                     std::to_string(task->vocab_size()) + ", prompts " +
                     std::to_string(shape.num_prompts) + " vs " +
                     std::to_string(task->num_prompts()) + ")");
  }
  config.max_tokens = shape.max_tokens;
  config.conditioning = shape.conditioning;
  out << format_diagnostic(diagnose(policy, *task, config));
  return kExitOk;
}

int cmd_gen_dataset(const CommonArgs& a, std::ostream& out) {
  const TrainConfig config = resolve_config(a.config_path, a.overrides, a.seed);
  const fs::path path = a.out.empty() ? fs::path(output_root()) / "countdown.tsv" : fs::path(a.out);
  if (fs::exists(path) && !a.force) {
    throw UsageError(path.string() + " exists; pass --force to overwrite");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  CountdownGenerator gen;
  gen.num_numbers = config.num_numbers;
  gen.number_max = config.number_max;
  gen.target_max = config.target_max;
  gen.integer_division_only = config.integer_division_only;
  save_countdown_dataset(path.string(),
                         generate_countdown_dataset(config.dataset_size, gen, config.dataset_seed));
  out << "wrote " << config.dataset_size << " instances to " << path.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"hysteretic policy optimization lab"};
  app.require_subcommand(1);

  CommonArgs run_args, sweep_args, diag_args, gen_args;
  auto* run = app.add_subcommand("run", "train one configuration");
  add_common(run, run_args);

  auto* sweep = app.add_subcommand("sweep-alpha", "fixed-alpha sweep plus a_hpo and grpo baselines");
  add_common(sweep, sweep_args);
  std::vector<double> alphas;
  sweep->add_option("--alphas", alphas, "comma-separated alpha values")->delimiter(',');

  auto* oracle = app.add_subcommand("oracle", "closed-form vs Monte Carlo sign frequencies");
  std::vector<double> p_grid{0.05, 0.1, 0.3, 0.5};
  std::vector<std::uint32_t> n_grid{2, 4, 8};
  std::uint64_t groups = 1000000;
  std::uint64_t oracle_seed = 0;
  oracle->add_option("--p", p_grid, "success probabilities")->delimiter(',');
  oracle->add_option("--n", n_grid, "group sizes")->delimiter(',');
  oracle->add_option("--groups", groups, "simulated groups per cell");
  oracle->add_option("--seed", oracle_seed, "Monte Carlo seed");

  auto* diag = app.add_subcommand("diagnose", "sign balance and gradient decomposition of one batch");
  add_common(diag, diag_args);
  std::string checkpoint, dataset;
  diag->add_option("--checkpoint", checkpoint, "policy checkpoint")->required();
  diag->add_option("--dataset", dataset, "Countdown dataset file");

  auto* gen = app.add_subcommand("gen-dataset", "write a generated Countdown dataset");
  add_common(gen, gen_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_args, out, err);
    if (*sweep) return cmd_sweep_alpha(sweep_args, alphas, out, err);
    if (*oracle) return cmd_oracle(p_grid, n_grid, groups, oracle_seed, out, err);
    if (*diag) return cmd_diagnose(diag_args, checkpoint, dataset, out);
    if (*gen) return cmd_gen_dataset(gen_args, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace hpo
