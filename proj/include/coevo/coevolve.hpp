#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coevo/designers.hpp"
#include "coevo/matrix_game.hpp"
#include "coevo/rollout.hpp"

namespace coevo {

struct InitialLevelConfig {
  std::string source = "generate";  // generate | file
  std::string path;
  int grid_size = 9;
  int grid_doors = 1;
  double nav_width = 400.0;
  double nav_height = 300.0;
  int nav_obstacles = 3;
};

struct CoevolutionConfig {
  std::string family = "gridworld";
  int iterations = 4;       // T
  int candidates = 5;       // K, inherited by designers unless they override
  int n_episodes = kDefaultEpisodes;
  int selection_episodes = 0;  // 0 = n_episodes
  std::uint64_t run_seed = 0;
  double gamma = 1.0;  // utility discount; success-rate payoffs fix it at 1
  int workers = 1;
  bool full_reevaluation = false;  // literal re-evaluation instead of the entry cache
  std::string policy_init = "nash_best";  // nash_best | latest
  InitialLevelConfig initial_level;
  DesignerConfig policy_designer;
  DesignerConfig environment_designer;

  int designer_candidates(const DesignerConfig& d) const {
    return d.candidates > 0 ? d.candidates : candidates;
  }
  int selection_n() const { return selection_episodes > 0 ? selection_episodes : n_episodes; }
};

struct RunState {
  std::vector<Level> levels;           // L: theta_0 ... theta_t
  std::vector<PolicyHandle> policies;  // P: pi_0 ... pi_{t-1}
  std::vector<MutationRecord> level_records;   // aligned with levels[1..]
  std::vector<MutationRecord> policy_records;  // aligned with policies
  PayoffMatrix matrix;
  std::vector<GameSolution> nash_history;  // one per completed iteration
  std::uint64_t run_seed = 0;
  int iteration = 0;  // completed iterations
};

// --- payoff matrix update -------------------------------------------------------------
//
// Fills exactly the missing row/column entries; existing entries are reused,
// which seed-deterministic evaluation makes exact. Returns the number of
// fresh estimate_payoff calls (the cache contract is tested on this).

inline int update_matrix(RunState& state, const CoevolutionConfig& config) {
  int evaluations = 0;
  const EvalOptions opts{config.workers};
  auto entry = [&](const PolicyHandle& p, const Level& l) {
    ++evaluations;
    return estimate_payoff(p, l, config.n_episodes, state.run_seed, opts).mean_success;
  };

  if (config.full_reevaluation) {
    std::vector<std::string> row_ids, col_ids;
    std::vector<double> entries;
    for (const auto& p : state.policies) row_ids.push_back(p.id);
    for (const auto& l : state.levels) col_ids.push_back(l.id);
    for (const auto& p : state.policies)
      for (const auto& l : state.levels) entries.push_back(entry(p, l));
    state.matrix = PayoffMatrix(row_ids, col_ids, entries);
    return evaluations;
  }

  // append missing columns (new levels) for existing rows
  for (std::size_t j = state.matrix.cols(); j < state.levels.size(); ++j) {
    if (state.matrix.rows() == 0) break;
    std::vector<double> col;
    for (std::size_t i = 0; i < state.matrix.rows(); ++i)
      col.push_back(entry(state.policies[i], state.levels[j]));
    state.matrix = append_column(state.matrix, state.levels[j].id, col);
  }
  // append missing rows (new policies) across all levels
  for (std::size_t i = state.matrix.rows(); i < state.policies.size(); ++i) {
    if (state.matrix.rows() == 0 && state.matrix.cols() == 0) {
      std::vector<std::string> col_ids;
      std::vector<double> entries;
      for (const auto& l : state.levels) {
        col_ids.push_back(l.id);
        entries.push_back(entry(state.policies[i], l));
      }
      state.matrix = PayoffMatrix({state.policies[i].id}, col_ids, entries);
      continue;
    }
    std::vector<double> row;
    for (const auto& l : state.levels) row.push_back(entry(state.policies[i], l));
    state.matrix = append_row(state.matrix, state.policies[i].id, row);
  }
  return evaluations;
}

// --- run directory ---------------------------------------------------------------------

namespace rundir {

namespace fs = std::filesystem;

class Lock {
 public:
  explicit Lock(const fs::path& dir) {
    fs::create_directories(dir);
    fd_ = ::open((dir / "run.lock").c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX | LOCK_NB) != 0)
      raise(Errc::run_locked, "run directory is locked by another writer: " + dir.string());
  }
  ~Lock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  Lock(const Lock&) = delete;
  Lock& operator=(const Lock&) = delete;

 private:
  int fd_ = -1;
};

inline void write_text(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) raise(Errc::config_error, "cannot write " + p.string());
  out << content;
}

inline void write_nash_csv(const fs::path& p, const std::vector<GameSolution>& history) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "iteration,value,weights...\n";
  for (std::size_t t = 0; t < history.size(); ++t) {
    os << t << ',' << history[t].value;
    for (double w : history[t].strategy.weights) os << ',' << w;
    os << '\n';
  }
  write_text(p, os.str());
}

inline std::vector<GameSolution> read_nash_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) raise(Errc::missing_checkpoint, "missing " + p.string());
  std::vector<GameSolution> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() < 3) raise(Errc::parse_error, "short nash.csv row");
    GameSolution g;
    g.value = std::stod(cells[1]);
    for (std::size_t i = 2; i < cells.size(); ++i)
      g.strategy.weights.push_back(std::stod(cells[i]));
    for (std::size_t i = 0; i < g.strategy.weights.size(); ++i)
      if (g.strategy.weights[i] > kSupportEpsilon) g.support.push_back(i);
    out.push_back(std::move(g));
  }
  return out;
}

struct Writer {
  fs::path root;

  void write_manifest(const nlohmann::json& config_json, const RunState& state,
                      const std::string& status) const {
    nlohmann::json m{
        {"format_version", 1},
        {"config", config_json},
        {"run_seed", state.run_seed},
        {"completed_iterations", state.iteration},
        {"status", status},
        {"policies", state.policies.size()},
        {"levels", state.levels.size()},
    };
    // the final appended level has no responding policy yet
    if (state.levels.size() == state.policies.size() + 1 && !state.levels.empty())
      m["dangling_level_id"] = state.levels.back().id;
    write_text(root / "manifest.json", m.dump(2) + "\n");
  }

  void write_archives(const RunState& state) const {
    for (std::size_t i = 0; i < state.levels.size(); ++i) {
      auto j = to_json(state.levels[i]);
      if (i > 0 && i - 1 < state.level_records.size())
        j["record"] = state.level_records[i - 1].to_json();
      write_text(root / "levels" / (state.levels[i].id + ".json"), j.dump(2) + "\n");
    }
    for (std::size_t i = 0; i < state.policies.size(); ++i) {
      auto j = to_json(state.policies[i]);
      if (i < state.policy_records.size()) j["record"] = state.policy_records[i].to_json();
      write_text(root / "policies" / (state.policies[i].id + ".json"), j.dump(2) + "\n");
    }
  }

  void checkpoint(const RunState& state, const nlohmann::json& config_json,
                  const std::string& status) const {
    write_archives(state);
    if (!state.matrix.empty()) {
      std::ostringstream os;
      write_matrix_csv(state.matrix, os);
      write_text(root / "payoff.csv", os.str());
      char iter_name[32];
      std::snprintf(iter_name, sizeof(iter_name), "iter_%04d", state.iteration);
      write_text(root / "checkpoints" / iter_name / "payoff.csv", os.str());
    }
    write_nash_csv(root / "nash.csv", state.nash_history);
    write_manifest(config_json, state, status);
  }
};

}  // namespace rundir

// --- the co-evolution loop --------------------------------------------------------------

inline Level make_initial_level(const CoevolutionConfig& config) {
  const auto& init = config.initial_level;
  if (init.source == "file") {
    std::ifstream in(init.path);
    if (!in) raise(Errc::config_error, "cannot read initial level " + init.path);
    nlohmann::json j;
    in >> j;
    auto level = level_from_json(j);
    level.id = "level_0000";
    if (level.family != config.family)
      raise(Errc::family_mismatch, "initial level family " + level.family);
    if (!level.feasible) raise(Errc::malformed_level, "initial level is not feasible");
    return level;
  }
  if (config.family == "gridworld")
    return make_grid_level("level_0000",
                           grid::generate_grid_level(
                               {.size = init.grid_size, .num_doors = init.grid_doors},
                               config.run_seed));
  return make_nav_level(
      "level_0000",
      nav::generate_nav_level({.bounds = {init.nav_width, init.nav_height},
                               .num_obstacles = init.nav_obstacles},
                              config.run_seed));
}

namespace detail {

inline std::string policy_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "policy_%04d", t);
  return buf;
}
inline std::string level_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "level_%04d", t);
  return buf;
}

inline const PolicyHandle& mutation_base(const RunState& state,
                                         const CoevolutionConfig& config,
                                         const PolicyHandle& bootstrap) {
  if (state.policies.empty()) return bootstrap;
  if (config.policy_init == "latest") return state.policies.back();
  // highest-weighted policy under the last Nash distribution, ties low
  const auto& w = state.nash_history.back().strategy.weights;
  std::size_t best = 0;
  for (std::size_t i = 1; i < w.size(); ++i)
    if (w[i] > w[best]) best = i;
  return state.policies[best];
}

}  // namespace detail

namespace detail {

// Iterations state.iteration .. T-1 of the loop: policy design on the newest
// level, payoff update, equilibrium recompute, best-response level append.
// `sink`, when given, persists a checkpoint after every iteration; on
// GenerationExhausted the state written so far is preserved.
inline void advance(RunState& state, const CoevolutionConfig& config,
                    const rundir::Writer* sink, const nlohmann::json& config_json,
                    LlmClient* policy_llm, LlmClient* level_llm,
                    const std::function<void(const RunState&)>& on_iteration) {
  const PolicyHandle bootstrap{"policy_init", PolicyKind::builtin,
                               default_builtin(config.family), {}};
  const EvalOptions opts{config.workers};
  auto flush = [&](const std::string& status) {
    if (sink) sink->checkpoint(state, config_json, status);
  };
  flush("running");

  try {
    for (int t = state.iteration; t < config.iterations; ++t) {
      const Level& conditioning = state.levels.back();

      // 1. policy design: structural mutation + selection on the newest level
      const std::uint64_t policy_round_seed =
          derive_seed(state.run_seed, "policy_round", conditioning.id, t);
      auto base = mutation_base(state, config, bootstrap);
      auto candidates = propose_policies(
          base, conditioning, config.designer_candidates(config.policy_designer),
          config.policy_designer, policy_round_seed, policy_llm,
          sink ? (sink->root / "generated").string() : "");
      auto chosen = select_best_policy(candidates, conditioning, config.selection_n(),
                                       state.run_seed, opts);
      PolicyHandle policy = candidates[chosen.index].handle;
      policy.id = policy_name(t);
      MutationRecord record = candidates[chosen.index].record;
      record.child_id = policy.id;
      state.policies.push_back(std::move(policy));
      state.policy_records.push_back(std::move(record));

      // 2. payoff matrix update over the full archives
      update_matrix(state, config);

      // 3. recompute the mixed-strategy equilibrium
      state.nash_history.push_back(solve_nash(state.matrix));

      // 4. best-response environment design against the mixture
      const std::uint64_t level_round_seed =
          derive_seed(state.run_seed, "level_round", conditioning.id, t);
      auto level_candidates = propose_levels(
          state.levels.back(), state.nash_history.back(),
          config.designer_candidates(config.environment_designer),
          config.environment_designer, level_round_seed, level_llm);
      auto level_chosen =
          select_best_level(level_candidates, state.policies, state.nash_history.back(),
                            config.selection_n(), state.run_seed, opts);
      Level level = level_candidates[level_chosen.index].level;
      level.id = level_name(t + 1);
      MutationRecord level_record = level_candidates[level_chosen.index].record;
      level_record.child_id = level.id;
      state.levels.push_back(std::move(level));
      state.level_records.push_back(std::move(level_record));

      state.iteration = t + 1;
      flush("running");
      if (on_iteration) on_iteration(state);
    }
  } catch (const Error&) {
    flush("aborted");
    throw;
  }
  flush("completed");
}

}  // namespace detail

inline RunState run(const CoevolutionConfig& config, const rundir::Writer* sink = nullptr,
                    const nlohmann::json& config_json = {},
                    LlmClient* policy_llm = nullptr, LlmClient* level_llm = nullptr,
                    std::function<void(const RunState&)> on_iteration = {}) {
  RunState state;
  state.run_seed = config.run_seed;
  state.levels.push_back(make_initial_level(config));
  detail::advance(state, config, sink, config_json, policy_llm, level_llm, on_iteration);
  return state;
}

// --- strategy evaluation -----------------------------------------------------------------

enum class StrategyKind { greedy, uniform, msne };

inline const char* strategy_kind_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::greedy: return "greedy";
    case StrategyKind::uniform: return "uniform";
    case StrategyKind::msne: return "msne";
  }
  return "?";
}

struct StrategyEval {
  std::vector<double> per_level;  // over theta_0 .. theta_k
  double mean = 0.0;
};

// Archive evaluation at iteration k, straight from the payoff matrix:
// greedy uses only row k, uniform averages rows 0..k, msne applies the
// iteration-k Nash mixture.
inline StrategyEval evaluate_strategy(const RunState& state, StrategyKind kind, int k) {
  if (k < 0 || k >= static_cast<int>(state.nash_history.size()) ||
      k >= static_cast<int>(state.matrix.rows()))
    raise(Errc::iteration_out_of_range, "iteration " + std::to_string(k));
  const int cols = k + 1;
  StrategyEval eval;
  eval.per_level.assign(cols, 0.0);
  for (int j = 0; j < cols; ++j) {
    if (kind == StrategyKind::greedy) {
      eval.per_level[j] = state.matrix.at(k, j);
    } else if (kind == StrategyKind::uniform) {
      double sum = 0.0;
      for (int i = 0; i <= k; ++i) sum += state.matrix.at(i, j);
      eval.per_level[j] = sum / (k + 1);
    } else {
      const auto& w = state.nash_history[k].strategy.weights;
      double sum = 0.0;
      for (int i = 0; i <= k; ++i) sum += w[i] * state.matrix.at(i, j);
      eval.per_level[j] = sum;
    }
  }
  for (double v : eval.per_level) eval.mean += v;
  eval.mean /= cols;
  return eval;
}

// Held-out evaluation with per-episode policy sampling from the mixture, the
// way mixtures are rolled out rather than matrix algebra.
inline std::vector<double> generalization_eval(const RunState& state, StrategyKind kind,
                                               const std::vector<Level>& held_out,
                                               int n_episodes, const EvalOptions& opts = {}) {
  std::vector<double> weights(state.policies.size(), 0.0);
  if (state.policies.empty()) raise(Errc::iteration_out_of_range, "no policies in the run");
  if (kind == StrategyKind::greedy) {
    weights.back() = 1.0;
  } else if (kind == StrategyKind::uniform) {
    weights.assign(state.policies.size(), 1.0 / state.policies.size());
  } else {
    weights = state.nash_history.back().strategy.weights;
  }

  std::vector<double> out;
  for (const auto& level : held_out) {
    if (level.family != state.levels.front().family)
      raise(Errc::family_mismatch, "held-out level " + level.id);
    if (!level.feasible)
      raise(Errc::malformed_level, "held-out level " + level.id + " is not feasible");
    std::vector<int> success(n_episodes, 0);
    auto run_one = [&](int e) {
      const std::uint64_t seed =
          derive_seed(state.run_seed, "mixture_eval", level.id, static_cast<std::uint64_t>(e));
      // sample a policy at episode start according to the mixture weights
      double u = Rng(mix64(seed ^ fnv1a64("policy_sample"))).next_double();
      std::size_t pick = 0;
      for (; pick + 1 < weights.size(); ++pick) {
        if (u < weights[pick]) break;
        u -= weights[pick];
      }
      return run_episode(state.policies[pick], level, seed).success;
    };
    if (opts.workers > 1) {
      std::atomic<int> next{0};
      std::vector<std::thread> pool;
      for (int w = 0; w < std::min(opts.workers, n_episodes); ++w)
        pool.emplace_back([&] {
          for (;;) {
            const int e = next.fetch_add(1);
            if (e >= n_episodes) return;
            success[e] = run_one(e);
          }
        });
      for (auto& th : pool) th.join();
    } else {
      for (int e = 0; e < n_episodes; ++e) success[e] = run_one(e);
    }
    int total = 0;
    for (int s : success) total += s;
    out.push_back(static_cast<double>(total) / n_episodes);
  }
  return out;
}

// Curriculum ablation: mutate directly against the hardest level, with a total
// candidate budget of k_mutations, and return the best payoff ever seen.
inline double zero_shot_ablation(const CoevolutionConfig& config, const Level& hardest_level,
                                 int k_mutations, LlmClient* llm = nullptr) {
  if (!hardest_level.feasible)
    raise(Errc::malformed_level, "hardest level lacks a feasibility certificate");
  const EvalOptions opts{config.workers};
  PolicyHandle current{"policy_zs_init", PolicyKind::builtin, default_builtin(config.family),
                       {}};
  double best = estimate_payoff(current, hardest_level, config.selection_n(), config.run_seed,
                                opts)
                    .mean_success;
  const int K = config.designer_candidates(config.policy_designer);
  const int rounds = k_mutations / K;
  for (int r = 0; r < rounds; ++r) {
    const std::uint64_t seed = derive_seed(config.run_seed, "zero_shot", hardest_level.id, r);
    auto candidates = propose_policies(current, hardest_level, K, config.policy_designer,
                                       seed, llm);
    auto chosen = select_best_policy(candidates, hardest_level, config.selection_n(),
                                     config.run_seed, opts);
    best = std::max(best, chosen.scores[chosen.index]);
    current = candidates[chosen.index].handle;
    current.id = "policy_zs_" + std::to_string(r);
  }
  return best;
}

// --- strategy_eval.csv --------------------------------------------------------------------

inline void write_strategy_eval_csv(const RunState& state, std::ostream& os,
                                    const std::vector<StrategyKind>& kinds) {
  os << std::setprecision(17);
  os << "iteration,kind,mean,per_level...\n";
  for (int k = 0; k < static_cast<int>(state.nash_history.size()); ++k) {
    for (auto kind : kinds) {
      const auto eval = evaluate_strategy(state, kind, k);
      os << k << ',' << strategy_kind_name(kind) << ',' << eval.mean;
      for (double v : eval.per_level) os << ',' << v;
      os << '\n';
    }
  }
}

// --- resume ---------------------------------------------------------------------------------

inline RunState load_run_state(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const auto manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) raise(Errc::missing_checkpoint, "missing " + manifest_path.string());
  nlohmann::json manifest;
  in >> manifest;

  RunState state;
  state.run_seed = manifest.at("run_seed").get<std::uint64_t>();
  state.iteration = manifest.at("completed_iterations").get<int>();

  const std::size_t n_levels = manifest.at("levels").get<std::size_t>();
  const std::size_t n_policies = manifest.at("policies").get<std::size_t>();
  for (std::size_t i = 0; i < n_levels; ++i) {
    const auto p = root / "levels" / (detail::level_name(static_cast<int>(i)) + ".json");
    std::ifstream lf(p);
    if (!lf) raise(Errc::missing_checkpoint, "missing " + p.string());
    nlohmann::json j;
    lf >> j;
    state.levels.push_back(level_from_json(j));
    if (j.contains("record"))
      state.level_records.push_back({j["record"]["parent_id"], j["record"]["child_id"],
                                     j["record"]["kind"], j["record"]["description"],
                                     j["record"]["mode"]});
  }
  for (std::size_t i = 0; i < n_policies; ++i) {
    const auto p = root / "policies" / (detail::policy_name(static_cast<int>(i)) + ".json");
    std::ifstream pf(p);
    if (!pf) raise(Errc::missing_checkpoint, "missing " + p.string());
    nlohmann::json j;
    pf >> j;
    state.policies.push_back(policy_from_json(j));
    if (j.contains("record"))
      state.policy_records.push_back({j["record"]["parent_id"], j["record"]["child_id"],
                                      j["record"]["kind"], j["record"]["description"],
                                      j["record"]["mode"]});
  }
  if (!state.policies.empty()) {
    std::ifstream mf(root / "payoff.csv");
    if (!mf) raise(Errc::missing_checkpoint, "missing payoff.csv");
    state.matrix = read_matrix_csv(mf);
  }
  state.nash_history = rundir::read_nash_csv(root / "nash.csv");
  return state;
}

// Continue a persisted run up to config.iterations; cached matrix entries
// carry over, so a resumed run reproduces a straight-through run bitwise.
inline RunState resume(const std::filesystem::path& root, const CoevolutionConfig& config,
                       const rundir::Writer* sink = nullptr,
                       const nlohmann::json& config_json = {},
                       LlmClient* policy_llm = nullptr, LlmClient* level_llm = nullptr) {
  RunState state = load_run_state(root);
  detail::advance(state, config, sink, config_json, policy_llm, level_llm, {});
  return state;
}

}  // namespace coevo
