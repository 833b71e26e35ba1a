// Co-evolution engine CLI: run and resume experiments, evaluate strategies on
// the growing archive, solve payoff matrices, and summarize run directories.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>

#include "coevo/coevolve.hpp"
#include "coevo/config.hpp"

namespace fs = std::filesystem;
using namespace coevo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitAborted = 3;

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::config_error, "cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, path + ": " + e.what());
  }
  return j;
}

RunConfig load_run_config(const std::string& path) {
  auto j = load_json_file(path);
  // a manifest embeds the resolved config under "config"
  if (j.contains("config") && j.contains("format_version")) j = j.at("config");
  return parse_run_config(j);
}

struct LlmClients {
  std::unique_ptr<LlmClient> policy;
  std::unique_ptr<LlmClient> level;
};

// Clients are created before any iteration so a missing API key fails fast.
LlmClients make_llm_clients(const CoevolutionConfig& config, const fs::path& out) {
  LlmClients clients;
  if (config.policy_designer.mode == "llm")
    clients.policy =
        std::make_unique<LlmClient>(config.policy_designer.llm, (out / "llm_policy").string());
  if (config.environment_designer.mode == "llm")
    clients.level = std::make_unique<LlmClient>(config.environment_designer.llm,
                                                (out / "llm_level").string());
  return clients;
}

void print_iteration(const RunState& state) {
  const auto& nash = state.nash_history.back();
  std::cout << "iter " << state.iteration - 1 << ": policy " << state.policies.back().id
            << " level " << state.levels.back().id << " nash_value " << std::setprecision(12)
            << nash.value << "\n";
}

int cmd_run(const std::string& config_path, const std::string& out_override,
            std::optional<std::uint64_t> seed_override, std::optional<int> iter_override) {
  RunConfig rc = load_run_config(config_path);
  if (!out_override.empty()) rc.out_dir = out_override;
  if (seed_override) rc.coevolution.run_seed = *seed_override;
  if (iter_override) rc.coevolution.iterations = *iter_override;
  if (rc.out_dir.empty()) raise(Errc::config_error, "no output directory (--out or out_dir)");

  const fs::path out(rc.out_dir);
  rundir::Lock lock(out);
  auto clients = make_llm_clients(rc.coevolution, out);
  rundir::Writer writer{out};
  const auto config_json = resolved_config_json(rc);
  try {
    auto state = run(rc.coevolution, &writer, config_json, clients.policy.get(),
                     clients.level.get(), print_iteration);
    std::cout << "completed " << state.iteration << " iterations, " << state.policies.size()
              << " policies, " << state.levels.size() << " levels\n";
  } catch (const Error& e) {
    std::cerr << "run aborted: " << e.what() << "\n";
    return kExitAborted;
  }
  return 0;
}

int cmd_resume(const std::string& run_dir, std::optional<int> iter_override) {
  const fs::path out(run_dir);
  RunConfig rc = load_run_config((out / "manifest.json").string());
  rc.out_dir = run_dir;
  if (iter_override) rc.coevolution.iterations = *iter_override;

  rundir::Lock lock(out);
  auto clients = make_llm_clients(rc.coevolution, out);
  rundir::Writer writer{out};
  try {
    auto state = resume(out, rc.coevolution, &writer, resolved_config_json(rc),
                        clients.policy.get(), clients.level.get());
    std::cout << "resumed to " << state.iteration << " iterations\n";
  } catch (const Error& e) {
    std::cerr << "run aborted: " << e.what() << "\n";
    return kExitAborted;
  }
  return 0;
}

std::vector<StrategyKind> parse_kinds(const std::string& strategy) {
  if (strategy == "greedy") return {StrategyKind::greedy};
  if (strategy == "uniform") return {StrategyKind::uniform};
  if (strategy == "msne") return {StrategyKind::msne};
  if (strategy == "all")
    return {StrategyKind::greedy, StrategyKind::uniform, StrategyKind::msne};
  raise(Errc::config_error, "strategy must be greedy, uniform, msne or all");
}

int cmd_eval(const std::string& run_dir, const std::string& strategy,
             const std::string& held_out_path, int episodes) {
  const fs::path out(run_dir);
  auto state = load_run_state(out);
  const auto kinds = parse_kinds(strategy);

  {
    std::ofstream csv(out / "strategy_eval.csv");
    write_strategy_eval_csv(state, csv, kinds);
  }
  std::cout << "wrote " << (out / "strategy_eval.csv").string() << "\n";

  bool dominance_ok = true;
  for (int k = 0; k < static_cast<int>(state.nash_history.size()); ++k) {
    const auto msne = evaluate_strategy(state, StrategyKind::msne, k);
    const auto greedy = evaluate_strategy(state, StrategyKind::greedy, k);
    const double mmin = *std::min_element(msne.per_level.begin(), msne.per_level.end());
    const double gmin = *std::min_element(greedy.per_level.begin(), greedy.per_level.end());
    dominance_ok = dominance_ok && mmin >= gmin - 1e-9;
    std::cout << "iter " << k << std::setprecision(12);
    for (auto kind : kinds) {
      const auto eval = evaluate_strategy(state, kind, k);
      std::cout << "  " << strategy_kind_name(kind) << " mean " << eval.mean;
    }
    std::cout << "\n";
  }
  std::cout << "msne_min>=greedy_min per iteration: " << (dominance_ok ? "OK" : "VIOLATED")
            << "\n";

  if (!held_out_path.empty()) {
    std::vector<Level> held_out;
    for (const auto& j : load_json_file(held_out_path)) held_out.push_back(level_from_json(j));
    std::cout << "held-out evaluation (" << episodes << " episodes per level):\n";
    for (auto kind : kinds) {
      const auto results = generalization_eval(state, kind, held_out, episodes);
      std::cout << "  " << strategy_kind_name(kind) << ":";
      for (std::size_t i = 0; i < results.size(); ++i)
        std::cout << " " << held_out[i].id << "=" << std::setprecision(6) << results[i];
      std::cout << "\n";
    }
  }
  return dominance_ok ? 0 : 1;
}

int cmd_solve(const std::string& matrix_path) {
  std::ifstream in(matrix_path);
  if (!in) raise(Errc::parse_error, "cannot read " + matrix_path);
  const auto matrix = read_matrix_csv(in);
  const auto solution = solve_nash(matrix);
  std::cout << std::setprecision(17);
  std::cout << "value " << solution.value << "\n";
  for (std::size_t i = 0; i < solution.strategy.weights.size(); ++i)
    std::cout << matrix.row_ids()[i] << " " << solution.strategy.weights[i] << "\n";
  std::cout << "support";
  for (auto i : solution.support) std::cout << " " << i;
  std::cout << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  const fs::path out(run_dir);
  const auto manifest = load_json_file((out / "manifest.json").string());
  auto state = load_run_state(out);
  std::cout << "status: " << manifest.value("status", "?") << "\n"
            << "family: " << state.levels.front().family << "\n"
            << "iterations: " << state.iteration << "\n"
            << "policies: " << state.policies.size() << ", levels: " << state.levels.size()
            << "\n";
  if (manifest.contains("dangling_level_id"))
    std::cout << "dangling level: " << manifest["dangling_level_id"].get<std::string>() << "\n";
  std::cout << std::setprecision(12);
  for (std::size_t t = 0; t < state.nash_history.size(); ++t)
    std::cout << "iter " << t << ": nash_value " << state.nash_history[t].value
              << " support size " << state.nash_history[t].support.size() << "\n";
  for (const auto& rec : state.level_records)
    std::cout << rec.child_id << ": " << rec.description << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"agent/environment co-evolution engine"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_dir, matrix_path, held_out, strategy = "all";
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  int episodes = kDefaultEpisodes;

  auto* run_cmd = app.add_subcommand("run", "execute a co-evolution run");
  run_cmd->add_option("--config", config_path, "run configuration file")->required();
  run_cmd->add_option("--out", out_dir, "output run directory (overrides config)");
  run_cmd->add_option("--seed", seed, "run seed override");
  run_cmd->add_option("--iterations", iterations, "iteration count override");

  auto* resume_cmd = app.add_subcommand("resume", "continue a checkpointed run");
  resume_cmd->add_option("--out", run_dir, "run directory")->required();
  resume_cmd->add_option("--iterations", iterations, "total iterations to reach");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate strategies on the archive");
  eval_cmd->add_option("--out", run_dir, "run directory")->required();
  eval_cmd->add_option("--strategy", strategy, "greedy|uniform|msne|all");
  eval_cmd->add_option("--held-out", held_out, "held-out levels file (JSON array)");
  eval_cmd->add_option("--episodes", episodes, "episodes per held-out level");

  auto* solve_cmd = app.add_subcommand("solve", "solve a payoff matrix CSV");
  solve_cmd->add_option("--matrix", matrix_path, "payoff matrix CSV")->required();

  auto* report_cmd = app.add_subcommand("report", "summarize a run directory");
  report_cmd->add_option("--out", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return cmd_run(config_path, out_dir, seed, iterations);
    if (resume_cmd->parsed()) return cmd_resume(run_dir, iterations);
    if (eval_cmd->parsed()) return cmd_eval(run_dir, strategy, held_out, episodes);
    if (solve_cmd->parsed()) return cmd_solve(matrix_path);
    if (report_cmd->parsed()) return cmd_report(run_dir);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    switch (e.code()) {
      case Errc::config_error:
      case Errc::parse_error:
      case Errc::run_locked:
        return kExitConfig;
      default:
        return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
