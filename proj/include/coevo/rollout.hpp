#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "coevo/error.hpp"
#include "coevo/gridworld.hpp"
#include "coevo/nav2d.hpp"
#include "coevo/policies.hpp"
#include "coevo/rng.hpp"
#include "coevo/subprocess.hpp"

namespace coevo {

inline constexpr int kProtocolVersion = 1;
inline constexpr int kDefaultStepTimeoutMs = 1000;
inline constexpr int kDefaultEpisodes = 100;

struct ExternalSpec {
  std::vector<std::string> command;  // launch command + arguments
  int step_timeout_ms = kDefaultStepTimeoutMs;
  std::string source_text;  // generated program, stored for provenance
};

enum class PolicyKind { builtin, external };

struct PolicyHandle {
  std::string id;
  PolicyKind kind = PolicyKind::builtin;
  BuiltinDescriptor builtin;
  ExternalSpec external;
};

struct Level {
  std::string id;
  std::string family;  // "gridworld" | "nav2d"
  std::variant<grid::GridLevel, nav::NavLevel> params;
  bool feasible = false;  // certificate from the family oracle
};

inline Level make_grid_level(std::string id, grid::GridLevel params) {
  Level l{std::move(id), "gridworld", std::move(params), false};
  l.feasible = grid::check_solvable(std::get<grid::GridLevel>(l.params));
  return l;
}

inline Level make_nav_level(std::string id, nav::NavLevel params) {
  Level l{std::move(id), "nav2d", std::move(params), false};
  l.feasible = nav::reachable(std::get<nav::NavLevel>(l.params));
  return l;
}

enum class FailureKind { none, crash, timeout, protocol_violation };

inline const char* failure_kind_name(FailureKind k) {
  switch (k) {
    case FailureKind::none: return "none";
    case FailureKind::crash: return "crash";
    case FailureKind::timeout: return "timeout";
    case FailureKind::protocol_violation: return "protocol_violation";
  }
  return "?";
}

struct RolloutResult {
  int success = 0;  // 1 iff the episode reached the goal
  int steps_used = 0;
  double shaped_return = 0.0;  // logged only, never the payoff
  std::uint64_t seed = 0;
  FailureKind failure_kind = FailureKind::none;
};

struct PayoffEstimate {
  double mean_success = 0.0;
  int n_episodes = 0;
  std::vector<std::uint64_t> seeds;
};

// --- family adapters ----------------------------------------------------------------
//
// An Environment exposes seeded episode reset, pure-step dynamics, policy- and
// wire-facing observation views, and protocol metadata. The concrete families
// below are deterministic; the seed parameter exists for environments whose
// episodes vary by seed.

struct GridEnv {
  grid::GridLevel level;
  using State = grid::GridState;
  using Action = int;
  using PolicyView = grid::GridState;

  static constexpr const char* family() { return "gridworld"; }
  State reset(std::uint64_t) const { return grid::grid_reset(level); }
  State step(const State& s, Action a) const { return grid::grid_step(s, a); }
  bool terminated(const State& s) const { return s.terminated; }
  bool succeeded(const State& s) const { return s.outcome == grid::Outcome::goal; }
  int steps_used(const State& s) const { return s.steps_elapsed; }
  int max_steps() const { return level.max_steps; }
  const PolicyView& policy_view(const State& s) const { return s; }

  // Appendix-style shaped score, logged alongside the binary payoff.
  double shaped_return(const State& s) const {
    if (s.outcome != grid::Outcome::goal) return 0.0;
    return 1.0 - 0.9 * static_cast<double>(s.steps_elapsed) / level.max_steps;
  }

  nlohmann::json observation_json(const State& s) const {
    nlohmann::json tiles = nlohmann::json::array();
    for (const auto& t : s.tiles)
      tiles.push_back({static_cast<int>(t.object), static_cast<int>(t.color),
                       static_cast<int>(t.state)});
    return nlohmann::json{{"size", s.size},
                          {"tiles", std::move(tiles)},
                          {"agent_pos", {s.agent.x, s.agent.y}},
                          {"agent_dir", s.dir},
                          {"carried_key", s.carried_key}};
  }

  nlohmann::json observation_spec() const {
    return nlohmann::json{
        {"type", "grid"},
        {"size", level.size},
        {"layout", "tiles row-major as (object,color,state); agent_pos, agent_dir, "
                   "carried_key alongside"}};
  }

  nlohmann::json action_spec() const {
    return nlohmann::json{{"type", "discrete"},
                          {"n", 6},
                          {"meaning", "0 turn left, 1 turn right, 2 forward, 3 pick up, "
                                      "4 drop, 5 toggle"}};
  }

  std::string task_description() const {
    return "Symbolic maze on a " + std::to_string(level.size) + "x" +
           std::to_string(level.size) +
           " grid. Reach the goal tile (object 8). Locked doors (state 2) need the "
           "matching color key; closed doors (state 1) open with toggle. One key "
           "fits in hand at a time.";
  }

  Action parse_action(const nlohmann::json& j) const {
    if (!j.is_number_integer()) raise(Errc::parse_error, "grid action must be an integer");
    const int a = j.get<int>();
    if (a < 0 || a > 5) raise(Errc::parse_error, "grid action out of range");
    return a;
  }

  Action act_builtin(const BuiltinDescriptor& d, const PolicyView& v) const {
    return builtin_policy_act(d, v);
  }
};

struct NavEnv {
  nav::NavLevel level;
  using State = nav::NavState;
  using Action = nav::Vec2;
  using PolicyView = nav::NavObservation;

  static constexpr const char* family() { return "nav2d"; }
  State reset(std::uint64_t) const { return nav::nav_reset(level); }
  State step(const State& s, Action a) const { return nav::nav_step(s, level, a); }
  bool terminated(const State& s) const { return s.terminated; }
  bool succeeded(const State& s) const { return s.outcome == nav::Outcome::goal; }
  int steps_used(const State& s) const { return s.steps_elapsed; }
  int max_steps() const { return level.max_steps; }
  PolicyView policy_view(const State& s) const { return nav::nav_observe(s, level); }

  double shaped_return(const State& s) const {
    return (s.outcome == nav::Outcome::goal ? 1.0 : 0.0) - 0.01 * s.steps_elapsed;
  }

  nlohmann::json observation_json(const State& s) const {
    return nav::observation_to_json(nav::nav_observe(s, level));
  }

  nlohmann::json observation_spec() const {
    return nlohmann::json{
        {"type", "dict"},
        {"fields", {"agent_pos", "agent_radius", "objects", "bounds", "step_count",
                    "max_steps"}}};
  }

  nlohmann::json action_spec() const {
    return nlohmann::json{{"type", "continuous"},
                          {"shape", 2},
                          {"range", {-1.0, 1.0}},
                          {"speed", level.speed}};
  }

  std::string task_description() const {
    return "Continuous 2D navigation in a " + std::to_string(level.bounds.x) + "x" +
           std::to_string(level.bounds.y) +
           " pixel arena. Move the circular agent (radius " +
           std::to_string(level.agent_radius) +
           ") fully into the goal zone while avoiding rectangular obstacles. Actions "
           "are [dx,dy] in [-1,1]^2, scaled by speed " +
           std::to_string(level.speed) + ".";
  }

  Action parse_action(const nlohmann::json& j) const {
    if (!j.is_array() || j.size() != 2) raise(Errc::parse_error, "nav action must be [dx,dy]");
    if (!j.at(0).is_number() || !j.at(1).is_number())
      raise(Errc::parse_error, "nav action components must be numbers");
    const double dx = j.at(0).get<double>(), dy = j.at(1).get<double>();
    if (!std::isfinite(dx) || !std::isfinite(dy))
      raise(Errc::parse_error, "nav action components must be finite");
    if (std::abs(dx) > 1.0 + 1e-9 || std::abs(dy) > 1.0 + 1e-9)
      raise(Errc::parse_error, "nav action outside [-1,1]");
    return {dx, dy};
  }

  Action act_builtin(const BuiltinDescriptor& d, const PolicyView& v) const {
    return builtin_policy_act(d, v);
  }
};

// --- episode runner -----------------------------------------------------------------

template <typename Env, typename PolicyFn>
RolloutResult run_episode_builtin(const Env& env, PolicyFn&& policy, std::uint64_t seed) {
  auto state = env.reset(seed);
  while (!env.terminated(state)) state = env.step(state, policy(env.policy_view(state)));
  RolloutResult r;
  r.success = env.succeeded(state) ? 1 : 0;
  r.steps_used = env.steps_used(state);
  r.shaped_return = env.shaped_return(state);
  r.seed = seed;
  return r;
}

// External policies speak the line protocol over the child's standard streams:
// init -> ready -> per-step observation/action -> done. Any crash, timeout or
// malformed reply ends the episode with success 0 and the matching
// failure_kind; only a process that cannot start at all raises LaunchFailure.
template <typename Env>
RolloutResult run_episode_external(const Env& env, const ExternalSpec& spec,
                                   std::uint64_t seed) {
  RolloutResult r;
  r.seed = seed;
  auto state = env.reset(seed);
  auto finish = [&](FailureKind kind) {
    r.success = 0;
    r.failure_kind = kind;
    r.steps_used = env.steps_used(state);
    r.shaped_return = env.shaped_return(state);
    return r;
  };

  proc::LineProcess child(spec.command);  // LaunchFailure propagates
  const int timeout = spec.step_timeout_ms;

  const nlohmann::json init{{"protocol_version", kProtocolVersion},
                            {"family", env.family()},
                            {"task_description", env.task_description()},
                            {"observation_spec", env.observation_spec()},
                            {"action_spec", env.action_spec()},
                            {"max_steps", env.max_steps()}};
  if (!child.write_line(init.dump(), timeout)) return finish(FailureKind::crash);

  std::string line;
  switch (child.read_line(line, timeout)) {
    case proc::LineProcess::ReadResult::eof:
      return finish(FailureKind::crash);
    case proc::LineProcess::ReadResult::timeout:
      return finish(FailureKind::timeout);
    case proc::LineProcess::ReadResult::ok:
      break;
  }
  {
    const auto ready = nlohmann::json::parse(line, nullptr, false);
    if (ready.is_discarded() || !ready.is_object() || !ready.contains("ready"))
      return finish(FailureKind::protocol_violation);
  }

  int step = 0;
  while (!env.terminated(state)) {
    const nlohmann::json msg{{"step", step}, {"observation", env.observation_json(state)}};
    if (!child.write_line(msg.dump(), timeout)) return finish(FailureKind::crash);

    switch (child.read_line(line, timeout)) {
      case proc::LineProcess::ReadResult::eof:
        return finish(FailureKind::crash);
      case proc::LineProcess::ReadResult::timeout:
        return finish(FailureKind::timeout);
      case proc::LineProcess::ReadResult::ok:
        break;
    }
    const auto reply = nlohmann::json::parse(line, nullptr, false);
    if (reply.is_discarded() || !reply.is_object() || !reply.contains("action"))
      return finish(FailureKind::protocol_violation);
    typename Env::Action action;
    try {
      action = env.parse_action(reply.at("action"));
    } catch (const Error&) {
      return finish(FailureKind::protocol_violation);
    }
    state = env.step(state, action);
    ++step;
  }

  r.success = env.succeeded(state) ? 1 : 0;
  r.steps_used = env.steps_used(state);
  r.shaped_return = env.shaped_return(state);
  const nlohmann::json done{{"done", true}, {"success", r.success}};
  child.write_line(done.dump(), 50);  // best effort; the child may already be gone
  return r;
}

template <typename Env>
RolloutResult run_episode_env(const Env& env, const PolicyHandle& policy, std::uint64_t seed) {
  if (policy.kind == PolicyKind::external)
    return run_episode_external(env, policy.external, seed);
  return run_episode_builtin(
      env, [&](const auto& view) { return env.act_builtin(policy.builtin, view); }, seed);
}

inline RolloutResult run_episode(const PolicyHandle& policy, const Level& level,
                                 std::uint64_t seed) {
  if (!level.feasible)
    raise(Errc::malformed_level, "level " + level.id + " has no feasibility certificate");
  if (policy.kind == PolicyKind::builtin && policy.builtin.family != level.family)
    raise(Errc::family_mismatch,
          "policy " + policy.id + " family does not match level " + level.id);
  if (level.family == "gridworld")
    return run_episode_env(GridEnv{std::get<grid::GridLevel>(level.params)}, policy, seed);
  return run_episode_env(NavEnv{std::get<nav::NavLevel>(level.params)}, policy, seed);
}

// --- payoff estimation ----------------------------------------------------------------

struct EvalOptions {
  int workers = 1;  // per-episode fan-out; results reduce by index
};

namespace detail {

template <typename RunFn>
PayoffEstimate estimate_payoff_impl(RunFn&& run_one, int n, std::uint64_t run_seed,
                                    const std::string& policy_id, const std::string& level_id,
                                    const EvalOptions& opts) {
  if (n < 1) raise(Errc::config_error, "n_episodes must be >= 1");
  PayoffEstimate est;
  est.n_episodes = n;
  est.seeds.resize(n);
  for (int i = 0; i < n; ++i)
    est.seeds[i] = derive_seed(run_seed, policy_id, level_id, static_cast<std::uint64_t>(i));

  std::vector<int> success(n, 0);
  std::exception_ptr first_error;
  std::mutex error_mu;
  const int workers = std::max(1, std::min(opts.workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) success[i] = run_one(est.seeds[i]).success;
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const int i = next.fetch_add(1);
          if (i >= n) return;
          try {
            success[i] = run_one(est.seeds[i]).success;
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  int total = 0;
  for (int s : success) total += s;
  est.mean_success = static_cast<double>(total) / n;
  return est;
}

}  // namespace detail

template <typename Env>
PayoffEstimate estimate_payoff_env(const Env& env, const PolicyHandle& policy,
                                   const std::string& level_id, int n, std::uint64_t run_seed,
                                   const EvalOptions& opts = {}) {
  return detail::estimate_payoff_impl(
      [&](std::uint64_t seed) { return run_episode_env(env, policy, seed); }, n, run_seed,
      policy.id, level_id, opts);
}

inline PayoffEstimate estimate_payoff(const PolicyHandle& policy, const Level& level, int n,
                                      std::uint64_t run_seed, const EvalOptions& opts = {}) {
  return detail::estimate_payoff_impl(
      [&](std::uint64_t seed) { return run_episode(policy, level, seed); }, n, run_seed,
      policy.id, level.id, opts);
}

// --- serialization ---------------------------------------------------------------------

inline nlohmann::json to_json(const PolicyHandle& p) {
  nlohmann::json j{{"id", p.id},
                   {"kind", p.kind == PolicyKind::builtin ? "builtin" : "external"}};
  if (p.kind == PolicyKind::builtin) {
    j["family"] = p.builtin.family;
    j["params"] = p.builtin.params;
  } else {
    j["command"] = p.external.command;
    j["step_timeout_ms"] = p.external.step_timeout_ms;
    j["source_text"] = p.external.source_text;
  }
  return j;
}

inline PolicyHandle policy_from_json(const nlohmann::json& j) {
  PolicyHandle p;
  try {
    p.id = j.at("id").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "builtin") {
      p.kind = PolicyKind::builtin;
      p.builtin.family = j.at("family").get<std::string>();
      p.builtin.params = j.at("params").get<std::map<std::string, std::string>>();
    } else if (kind == "external") {
      p.kind = PolicyKind::external;
      p.external.command = j.at("command").get<std::vector<std::string>>();
      p.external.step_timeout_ms = j.value("step_timeout_ms", kDefaultStepTimeoutMs);
      p.external.source_text = j.value("source_text", "");
    } else {
      raise(Errc::parse_error, "unknown policy kind " + kind);
    }
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, std::string("policy: ") + e.what());
  }
  return p;
}

inline nlohmann::json to_json(const Level& l) {
  nlohmann::json params = l.family == "gridworld"
                              ? grid::to_json(std::get<grid::GridLevel>(l.params))
                              : nav::to_json(std::get<nav::NavLevel>(l.params));
  return nlohmann::json{
      {"id", l.id}, {"family", l.family}, {"feasible", l.feasible}, {"params", params}};
}

inline Level level_from_json(const nlohmann::json& j) {
  Level l;
  try {
    l.id = j.at("id").get<std::string>();
    l.family = j.at("family").get<std::string>();
    if (l.family == "gridworld") l.params = grid::grid_level_from_json(j.at("params"));
    else if (l.family == "nav2d") l.params = nav::nav_level_from_json(j.at("params"));
    else raise(Errc::parse_error, "unknown level family " + l.family);
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, std::string("level: ") + e.what());
  }
  l.feasible = l.family == "gridworld"
                   ? grid::check_solvable(std::get<grid::GridLevel>(l.params))
                   : nav::reachable(std::get<nav::NavLevel>(l.params));
  return l;
}

inline std::uint64_t level_signature(const Level& l) {
  if (l.family == "gridworld") return grid::level_signature(std::get<grid::GridLevel>(l.params));
  return nav::level_signature(std::get<nav::NavLevel>(l.params));
}

}  // namespace coevo
