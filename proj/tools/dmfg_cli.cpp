// dmfg: command-line entry point.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical
// non-convergence or failed verification, 3 internal error.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dmfg/harness.hpp"
#include "dmfg/instances.hpp"
#include "dmfg/tabular.hpp"
#include "dmfg/text.hpp"

namespace fs = std::filesystem;
using namespace dmfg;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumerical = 2;
constexpr int kInternal = 3;

fs::path default_out() {
  if (const char* env = std::getenv("DMFG_OUT"); env && *env) return env;
  return "dmfg-out";
}

harness::RunConfig run_config(const std::string& path, const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& s : sets) overrides.push_back(harness::parse_override(s));
  if (path.empty()) return harness::resolve_config({}, overrides);
  return harness::load_config(path, overrides);
}

void print_report(const tabular::FixedPointResult& result, const tabular::DmfeReport& check) {
  const auto last = result.residual_history.empty() ? tabular::Residual{} : result.residual_history.back();
  std::cout << "status " << (result.converged() ? "converged" : "max_iterations") << " iterations "
            << result.iterations << " q_delta " << text::format_double(last.q_delta) << " mu_delta "
            << text::format_double(last.mu_delta) << '\n'
            << "best_response_residual " << text::format_double(check.best_response_residual)
            << " consistency_residual " << text::format_double(check.consistency_residual) << " dmfe "
            << (check.passed() ? "pass" : "fail") << '\n';
}

harness::ProgressFn stderr_progress() {
  return [](const std::string& line) { std::cerr << line << '\n'; };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized mean field games: tabular solver and multi-agent training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", harness::code_version());

  std::string out_dir;
  std::string config_path;
  std::vector<std::string> overrides;

  auto* solve = app.add_subcommand("solve", "Fixed-point iteration on a tabular instance");
  std::string instance_path;
  double tol = 1e-10;
  double verify_tol = 1e-8;
  int max_iters = 500;
  solve->add_option("instance", instance_path, "Instance file")->required();
  solve->add_option("--tol", tol, "Joint stopping tolerance")->check(CLI::PositiveNumber);
  solve->add_option("--verify-tol", verify_tol, "Equilibrium verification tolerance")->check(CLI::PositiveNumber);
  solve->add_option("--max-iters", max_iters, "Iteration cap")->check(CLI::PositiveNumber);
  solve->add_option("--out", out_dir, "Output directory (default $DMFG_OUT or ./dmfg-out)");

  auto* verify = app.add_subcommand("verify", "Check a solve report against its instance");
  std::string report_path;
  verify->add_option("instance", instance_path, "Instance file")->required();
  verify->add_option("--report", report_path, "Report written by solve")->required();
  verify->add_option("--tol", verify_tol, "Verification tolerance")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Self-play training");
  std::optional<std::uint64_t> seed;
  for (auto* sub : {train}) {
    sub->add_option("--config", config_path, "INI config file (defaults when omitted)");
    sub->add_option("--seed", seed, "Single master seed, replaces run.seeds");
  }

  auto* execute = app.add_subcommand("execute", "Frozen-policy tournament between checkpoint sets");
  std::vector<std::string> checkpoints;
  std::optional<int> games;
  execute->add_option("--config", config_path, "INI config file (defaults when omitted)");
  execute->add_option("--checkpoints", checkpoints, "Run directory or scripted:<action>|scripted:random")
      ->required();
  execute->add_option("--games", games, "Number of games")->check(CLI::PositiveNumber);

  auto* probe = app.add_subcommand("probe", "Estimator MSE trend against scripted opponents");
  probe->add_option("--config", config_path, "INI config file (defaults when omitted)");
  probe->add_option("--seed", seed, "Master seed");

  for (auto* sub : {train, execute, probe}) {
    sub->add_option("--out", out_dir, "Output directory (default $DMFG_OUT or ./dmfg-out)");
    sub->add_option("--set", overrides, "Override section.key=value (repeatable)");
  }

  auto* info = app.add_subcommand("info", "Version and configuration schema");
  bool dump = false;
  std::string env_name = "gather";
  info->add_flag("--dump-defaults", dump, "Print every config key with its default");
  info->add_option("--env", env_name, "Environment whose defaults to dump");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const fs::path out = out_dir.empty() ? default_out() : fs::path(out_dir);
  try {
    if (solve->parsed()) {
      const auto inst = tabular::load_instance(instance_path);
      const auto result = tabular::solve_fixed_point(inst, tol, max_iters);
      const auto check = tabular::verify_dmfe(inst, result.policy_star, result.mu_star, verify_tol);
      fs::create_directories(out);
      const fs::path report = out / (fs::path(instance_path).stem().string() + ".report.txt");
      std::ofstream f(report);
      tabular::write_report(f, inst, result, check);
      if (!f) throw std::runtime_error("cannot write " + report.string());
      print_report(result, check);
      std::cout << "report " << report.string() << '\n';
      return result.converged() && check.passed() ? kOk : kNumerical;
    }
    if (verify->parsed()) {
      const auto inst = tabular::load_instance(instance_path);
      std::ifstream in(report_path);
      if (!in) throw ConfigError("cannot open report " + report_path);
      const auto sol = tabular::read_report(in);
      const auto check = tabular::verify_dmfe(inst, sol.policy, sol.mean_field, verify_tol);
      std::cout << "best_response_residual " << text::format_double(check.best_response_residual)
                << " consistency_residual " << text::format_double(check.consistency_residual) << " dmfe "
                << (check.passed() ? "pass" : "fail") << '\n';
      return check.passed() ? kOk : kNumerical;
    }
    if (train->parsed()) {
      if (seed) overrides.push_back("run.seeds=" + std::to_string(*seed));
      const auto cfg = run_config(config_path, overrides);
      const auto result = harness::train_selfplay(cfg, out, stderr_progress());
      for (const auto& r : result.runs) {
        std::cout << r.run_id << ' ' << (r.error ? "failed: " + *r.error : "complete") << ' ' << r.dir.string()
                  << '\n';
      }
      if (result.ok()) return kOk;
      const bool diverged = std::ranges::any_of(result.runs, [](const auto& r) { return r.numerical_failure; });
      return diverged ? kNumerical : kInternal;
    }
    if (execute->parsed()) {
      if (games) overrides.push_back("execute.games=" + std::to_string(*games));
      const auto cfg = run_config(config_path, overrides);
      std::vector<harness::CheckpointSet> sets;
      for (const auto& c : checkpoints) sets.push_back(harness::CheckpointSet::parse(c));
      const auto result = harness::tournament(cfg, sets, out, stderr_progress());
      for (const auto& s : result.scores) {
        std::cout << s.label << ' ' << s.algorithm << " wins " << s.wins << " draws " << s.draws << " losses "
                  << s.losses << " win_rate " << text::format_double(s.win_rate()) << '\n';
      }
      if (!result.weights_unchanged) {
        std::cerr << "error: network weights changed during execution\n";
        return kInternal;
      }
      return kOk;
    }
    if (probe->parsed()) {
      if (seed) overrides.push_back("run.seeds=" + std::to_string(*seed));
      const auto cfg = run_config(config_path, overrides);
      const auto result = harness::run_estimator_probe(cfg, out, stderr_progress());
      const std::size_t w = std::max<std::size_t>(1, result.mse.size() / 10);
      std::cout << "episodes " << result.mse.size() << " initial_window_mse "
                << text::format_double(harness::window_mean(result.mse, 0, w)) << " final_window_mse "
                << text::format_double(harness::window_mean(result.mse, result.mse.size() - w, result.mse.size()))
                << '\n';
      return kOk;
    }
    if (info->parsed()) {
      if (dump) {
        harness::dump_defaults(std::cout, envs::parse_env_name(env_name));
      } else {
        std::cout << "dmfg " << harness::code_version() << '\n';
      }
      return kOk;
    }
  } catch (const tabular::InstanceParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}
