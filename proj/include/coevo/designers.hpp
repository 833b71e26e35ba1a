#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "coevo/error.hpp"
#include "coevo/matrix_game.hpp"
#include "coevo/rollout.hpp"

namespace coevo {

struct LlmConfig {
  std::string endpoint;  // chat-completions style, e.g. http://host:1234/v1/chat/completions
  std::string model;
  double temperature = 0.7;
  std::string prompt_template;  // template file path
  std::string api_key_env = "LLM_API_KEY";
  std::vector<std::string> runner_command{"python3"};  // interpreter for generated programs
  int transport_attempts = 3;
  int backoff_base_ms = 1000;
};

struct DesignerConfig {
  std::string mode = "scripted";  // scripted | llm
  int candidates = 0;             // K for this designer; 0 inherits the run-level K
  int max_retries = 20;           // generation retries on invalid candidates
  LlmConfig llm;
  // Scripted designers draw single structural changes from this pool; an empty
  // list means the family default set in its default order. A non-empty list
  // fixes both membership and priority order, which test fixtures rely on.
  std::vector<std::string> mutation_kinds;
  int signature_capacity = 0;  // cap for specialize_add; 0 = unlimited
};

struct MutationRecord {
  std::string parent_id;
  std::string child_id;
  std::string kind;  // "policy" | "level"
  std::string description;
  std::string mode;  // scripted | llm

  nlohmann::json to_json() const {
    return {{"parent_id", parent_id},
            {"child_id", child_id},
            {"kind", kind},
            {"description", description},
            {"mode", mode}};
  }
};

struct PolicyCandidate {
  PolicyHandle handle;
  MutationRecord record;
};

struct LevelCandidate {
  Level level;
  MutationRecord record;
};

// --- prompt templates and extraction ----------------------------------------------

inline std::string load_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::config_error, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string fill_placeholders(
    std::string text, const std::vector<std::pair<std::string, std::string>>& values) {
  for (const auto& [key, value] : values) {
    const std::string needle = "{" + key + "}";
    for (std::size_t pos = 0; (pos = text.find(needle, pos)) != std::string::npos;) {
      text.replace(pos, needle.size(), value);
      pos += value.size();
    }
  }
  return text;
}

// First fenced code block, if any; otherwise the whole trimmed reply when it
// plausibly is bare code.
inline std::optional<std::string> extract_program(const std::string& reply) {
  const auto fence = reply.find("```");
  if (fence != std::string::npos) {
    auto body_start = reply.find('\n', fence);
    if (body_start == std::string::npos) return std::nullopt;
    ++body_start;
    const auto end = reply.find("```", body_start);
    if (end == std::string::npos) return std::nullopt;
    std::string code = reply.substr(body_start, end - body_start);
    while (!code.empty() && (code.back() == '\n' || code.back() == '\r')) code.pop_back();
    if (code.empty()) return std::nullopt;
    return code;
  }
  std::string trimmed = reply;
  trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
  if (trimmed.rfind("def ", 0) == 0 || trimmed.rfind("import ", 0) == 0 ||
      trimmed.rfind("#!", 0) == 0 || trimmed.rfind("{", 0) == 0)
    return trimmed;
  return std::nullopt;
}

// Chat-completions client with exponential backoff on transport errors and an
// on-disk audit trail of raw requests and replies.
class LlmClient {
 public:
  LlmClient(LlmConfig config, std::string audit_dir = "")
      : config_(std::move(config)), audit_dir_(std::move(audit_dir)) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key)
      raise(Errc::config_error,
            "environment variable " + config_.api_key_env + " is not set");
    api_key_ = key;
    const auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos)
      raise(Errc::config_error, "endpoint must be a http(s) URL");
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    host_ = config_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
  }

  std::string complete(const std::string& prompt) {
    const nlohmann::json body{{"model", config_.model},
                              {"temperature", config_.temperature},
                              {"messages", {{{"role", "user"}, {"content", prompt}}}}};
    audit("request", body.dump(2));
    std::string last_error;
    for (int attempt = 0; attempt < config_.transport_attempts; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(
            std::chrono::milliseconds(config_.backoff_base_ms << (attempt - 1)));
      httplib::Client client(host_);
      client.set_read_timeout(120, 0);
      httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
      auto res = client.Post(path_, headers, body.dump(), "application/json");
      if (!res) {
        last_error = "transport error " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "server status " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        raise(Errc::config_error, "llm endpoint returned status " +
                                      std::to_string(res->status) + ": " + res->body);
      audit("response", res->body);
      const auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
        raise(Errc::parse_error, "malformed completion response");
      return j["choices"][0]["message"]["content"].get<std::string>();
    }
    raise(Errc::config_error, "llm transport failed after " +
                                  std::to_string(config_.transport_attempts) +
                                  " attempts: " + last_error);
  }

 private:
  void audit(const std::string& what, const std::string& content) {
    if (audit_dir_.empty()) return;
    std::filesystem::create_directories(audit_dir_);
    char name[64];
    std::snprintf(name, sizeof(name), "%04d_%s.txt", counter_++, what.c_str());
    std::ofstream(std::filesystem::path(audit_dir_) / name) << content;
  }

  LlmConfig config_;
  std::string audit_dir_;
  std::string api_key_;
  std::string host_;
  std::string path_;
  int counter_ = 0;
};

// --- scripted policy mutations ------------------------------------------------------

namespace designers_detail {

inline std::vector<std::string> split_sigs(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

inline std::string join_sigs(const std::vector<std::string>& sigs) {
  std::string out;
  for (const auto& s : sigs) {
    if (!out.empty()) out.push_back(',');
    out += s;
  }
  return out;
}

inline std::string sig_hex(std::uint64_t sig) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(sig));
  return buf;
}

struct PolicyMutation {
  std::string kind;
  std::string description;
  BuiltinDescriptor result;
};

inline void toggle_mutations(const BuiltinDescriptor& base, const std::string& knob,
                             bool fallback, std::vector<PolicyMutation>& out) {
  const bool cur = policies::param_bool(base, knob, fallback);
  BuiltinDescriptor next = base;
  next.params[knob] = cur ? "false" : "true";
  out.push_back({std::string(cur ? "disable_" : "enable_") + knob,
                 std::string(cur ? "disable " : "enable ") + knob, std::move(next)});
}

inline void value_mutations(const BuiltinDescriptor& base, const std::string& knob,
                            const std::vector<std::string>& values,
                            const std::string& fallback, std::vector<PolicyMutation>& out) {
  const std::string cur = policies::param_str(base, knob, fallback);
  for (const auto& v : values) {
    if (v == cur) continue;
    BuiltinDescriptor next = base;
    next.params[knob] = v;
    out.push_back({"set_" + knob + "_" + v, "set " + knob + " to " + v, std::move(next)});
  }
}

inline void signature_mutations(const BuiltinDescriptor& base, std::uint64_t level_sig,
                                int capacity, std::vector<PolicyMutation>& out) {
  const std::string hex = sig_hex(level_sig);
  auto sigs = split_sigs(policies::param_str(base, "signatures", ""));
  const bool present = std::find(sigs.begin(), sigs.end(), hex) != sigs.end();

  if (!present && (capacity <= 0 || static_cast<int>(sigs.size()) < capacity)) {
    BuiltinDescriptor next = base;
    auto grown = sigs;
    grown.push_back(hex);
    next.params["signatures"] = join_sigs(grown);
    out.push_back({"specialize_add", "add level signature " + hex, std::move(next)});
  }
  if (sigs.size() != 1 || !present) {
    BuiltinDescriptor next = base;
    next.params["signatures"] = hex;
    out.push_back({"specialize_reset", "reset signatures to " + hex, std::move(next)});
  }
  if (!sigs.empty()) {
    BuiltinDescriptor next = base;
    next.params.erase("signatures");
    out.push_back({"generalize", "clear signature gate", std::move(next)});
  }
}

// All applicable single-change mutations of a builtin descriptor, in canonical
// order. level_sig conditions the specialization kinds on the current level.
inline std::vector<PolicyMutation> enumerate_policy_mutations(const BuiltinDescriptor& base,
                                                              std::uint64_t level_sig,
                                                              int capacity) {
  std::vector<PolicyMutation> out;
  if (base.family == "gridworld") {
    signature_mutations(base, level_sig, capacity, out);
    toggle_mutations(base, "open_doors", true, out);
    toggle_mutations(base, "use_keys", true, out);
    toggle_mutations(base, "swap_keys", true, out);
    value_mutations(base, "drop_site", {"behind", "left", "right"}, "behind", out);
  } else if (base.family == "nav2d") {
    signature_mutations(base, level_sig, capacity, out);
    toggle_mutations(base, "plan", true, out);
    toggle_mutations(base, "scoring", true, out);
    value_mutations(base, "lookahead", {"1", "2", "3"}, "1", out);
  } else {
    raise(Errc::family_mismatch, "unknown policy family " + base.family);
  }
  return out;
}

inline std::uint64_t context_signature(const Level& level) {
  if (level.family == "gridworld")
    return grid::level_signature(std::get<grid::GridLevel>(level.params));
  const auto& nav_level = std::get<nav::NavLevel>(level.params);
  return observation_signature(nav::nav_observe(nav::nav_reset(nav_level), nav_level));
}

}  // namespace designers_detail

// K candidate policies, each one recorded structural change from the base.
// Scripted mode is a pure function of (base, level_context, round_seed).
inline std::vector<PolicyCandidate> propose_policies(const PolicyHandle& base,
                                                     const Level& level_context, int K,
                                                     const DesignerConfig& config,
                                                     std::uint64_t round_seed,
                                                     LlmClient* llm = nullptr,
                                                     const std::string& artifacts_dir = "");

// K candidate levels, each one structural change from the base, each carrying
// a passing feasibility certificate. Infeasible drafts consume retries.
inline std::vector<LevelCandidate> propose_levels(const Level& base, const GameSolution& nash,
                                                  int K, const DesignerConfig& config,
                                                  std::uint64_t round_seed,
                                                  LlmClient* llm = nullptr,
                                                  const std::string& prompt_context = "");

struct SelectionResult {
  std::size_t index = 0;
  std::vector<double> scores;
};

// argmax of estimate_payoff on the level; ties break toward the lowest index.
inline SelectionResult select_best_policy(const std::vector<PolicyCandidate>& candidates,
                                          const Level& level, int n_episodes,
                                          std::uint64_t run_seed,
                                          const EvalOptions& opts = {}) {
  if (candidates.empty()) raise(Errc::empty_candidates, "no policy candidates");
  SelectionResult sel;
  for (const auto& c : candidates)
    sel.scores.push_back(
        estimate_payoff(c.handle, level, n_episodes, run_seed, opts).mean_success);
  for (std::size_t i = 1; i < sel.scores.size(); ++i)
    if (sel.scores[i] > sel.scores[sel.index]) sel.index = i;
  return sel;
}

// argmin over candidates of the mixture-expected payoff under the Nash
// weights; zero-weight policies are skipped entirely.
inline SelectionResult select_best_level(const std::vector<LevelCandidate>& candidates,
                                         const std::vector<PolicyHandle>& policy_archive,
                                         const GameSolution& nash, int n_episodes,
                                         std::uint64_t run_seed,
                                         const EvalOptions& opts = {}) {
  if (candidates.empty()) raise(Errc::empty_candidates, "no level candidates");
  if (nash.strategy.weights.size() != policy_archive.size())
    raise(Errc::dimension_mismatch, "nash weights do not match the policy archive");
  SelectionResult sel;
  for (const auto& c : candidates) {
    double expected = 0.0;
    for (std::size_t i : nash.support) {
      const double payoff =
          estimate_payoff(policy_archive[i], c.level, n_episodes, run_seed, opts).mean_success;
      expected += nash.strategy.weights[i] * payoff;
    }
    sel.scores.push_back(expected);
  }
  for (std::size_t i = 1; i < sel.scores.size(); ++i)
    if (sel.scores[i] < sel.scores[sel.index]) sel.index = i;
  return sel;
}

// --- implementation: policy proposal --------------------------------------------------

inline std::vector<PolicyCandidate> propose_policies(const PolicyHandle& base,
                                                     const Level& level_context, int K,
                                                     const DesignerConfig& config,
                                                     std::uint64_t round_seed, LlmClient* llm,
                                                     const std::string& artifacts_dir) {
  if (K < 1) raise(Errc::config_error, "K must be >= 1");

  if (config.mode == "llm") {
    if (!llm) raise(Errc::config_error, "llm designer mode without a client");
    std::vector<PolicyCandidate> out;
    const std::string tmpl = load_text_file(config.llm.prompt_template);
    int retries = config.max_retries;
    const std::string base_source = base.kind == PolicyKind::external
                                        ? base.external.source_text
                                        : to_json(base).dump(2);
    const nlohmann::json obs_spec =
        level_context.family == "gridworld"
            ? GridEnv{std::get<grid::GridLevel>(level_context.params)}.observation_spec()
            : NavEnv{std::get<nav::NavLevel>(level_context.params)}.observation_spec();
    while (static_cast<int>(out.size()) < K) {
      const std::string prompt = fill_placeholders(
          tmpl, {{"ActualScore", "unknown"},
                 {"Policy", base_source},
                 {"obs_dict", obs_spec.dump(2)}});
      const auto program = extract_program(llm->complete(prompt));
      if (!program) {
        if (retries-- <= 0)
          raise(Errc::generation_exhausted, "no extractable program after retries");
        continue;
      }
      PolicyCandidate cand;
      cand.handle.id = base.id + ".c" + std::to_string(out.size());
      cand.handle.kind = PolicyKind::external;
      cand.handle.external.source_text = *program;
      cand.handle.external.command = config.llm.runner_command;
      if (!artifacts_dir.empty()) {
        std::filesystem::create_directories(artifacts_dir);
        const auto path =
            std::filesystem::path(artifacts_dir) / (cand.handle.id + ".py");
        std::ofstream(path) << *program;
        cand.handle.external.command.push_back(path.string());
      }
      cand.record = {base.id, cand.handle.id, "policy", "llm program mutation", "llm"};
      out.push_back(std::move(cand));
    }
    return out;
  }

  if (base.kind != PolicyKind::builtin)
    raise(Errc::config_error, "scripted policy designer needs a builtin base");
  if (base.builtin.family != level_context.family)
    raise(Errc::family_mismatch, "base policy family does not match the level");

  auto pool = designers_detail::enumerate_policy_mutations(
      base.builtin, designers_detail::context_signature(level_context),
      config.signature_capacity);

  if (!config.mutation_kinds.empty()) {
    // Explicit kind list: filter and impose its priority order.
    std::vector<designers_detail::PolicyMutation> filtered;
    for (const auto& kind : config.mutation_kinds)
      for (auto& m : pool)
        if (m.kind == kind) filtered.push_back(m);
    pool = std::move(filtered);
  } else {
    Rng rng(mix64(round_seed ^ fnv1a64("policy_designer")));
    rng.shuffle(pool);
  }

  // Drop mutations that collapse to an identical descriptor.
  std::vector<PolicyCandidate> out;
  std::vector<std::uint64_t> seen;
  for (auto& m : pool) {
    if (static_cast<int>(out.size()) >= K) break;
    const auto h = policies::descriptor_hash(m.result);
    if (std::find(seen.begin(), seen.end(), h) != seen.end()) continue;
    seen.push_back(h);
    PolicyCandidate cand;
    cand.handle.id = base.id + ".c" + std::to_string(out.size());
    cand.handle.kind = PolicyKind::builtin;
    cand.handle.builtin = std::move(m.result);
    cand.record = {base.id, cand.handle.id, "policy", m.description, "scripted"};
    out.push_back(std::move(cand));
  }
  if (static_cast<int>(out.size()) < K)
    raise(Errc::generation_exhausted,
          "only " + std::to_string(out.size()) + " distinct policy mutations, K=" +
              std::to_string(K));
  return out;
}

// --- implementation: level proposal ----------------------------------------------------

namespace designers_detail {

struct LevelDraft {
  std::optional<Level> level;
  std::string description;
};

inline std::vector<grid::Pos> empty_cells(const grid::GridLevel& g, grid::Pos exclude) {
  std::vector<grid::Pos> out;
  for (int y = 1; y < g.size - 1; ++y)
    for (int x = 1; x < g.size - 1; ++x)
      if (g.at(x, y).object == grid::kEmpty && !(grid::Pos{x, y} == exclude))
        out.push_back({x, y});
  return out;
}

inline LevelDraft mutate_grid(const grid::GridLevel& base, const std::string& kind, Rng& rng) {
  grid::GridLevel g = base;
  if (kind == "grow_size") {
    const int n = base.size, m = n + 2;
    grid::GridLevel big;
    big.size = m;
    big.num_doors = base.num_doors;
    big.max_steps = base.max_steps * (m * m) / (n * n);
    big.tiles.assign(static_cast<std::size_t>(m) * m, grid::Tile{grid::kEmpty, 0, 0});
    for (int i = 0; i < m; ++i) {
      big.at(i, 0) = big.at(i, m - 1) = grid::Tile{grid::kWall, 0, 0};
      big.at(0, i) = big.at(m - 1, i) = grid::Tile{grid::kWall, 0, 0};
    }
    for (int y = 1; y < n - 1; ++y)
      for (int x = 1; x < n - 1; ++x) big.at(x, y) = base.at(x, y);
    big.agent_start = base.agent_start;
    big.agent_dir = base.agent_dir;
    big.goal = base.goal;
    return {Level{"", "gridworld", std::move(big), false},
            "grow size " + std::to_string(n) + "->" + std::to_string(m)};
  }
  if (kind == "add_wall_segment") {
    auto cells = empty_cells(g, g.agent_start);
    if (cells.empty()) return {};
    const grid::Pos start = cells[rng.below(cells.size())];
    const bool horizontal = rng.chance(0.5);
    const int len = 2 + static_cast<int>(rng.below(std::max(2, g.size / 3)));
    int placed = 0;
    for (int i = 0; i < len; ++i) {
      const int x = start.x + (horizontal ? i : 0), y = start.y + (horizontal ? 0 : i);
      if (x <= 0 || y <= 0 || x >= g.size - 1 || y >= g.size - 1) break;
      if (g.at(x, y).object != grid::kEmpty) break;
      if (grid::Pos{x, y} == g.agent_start) break;
      g.at(x, y) = grid::Tile{grid::kWall, 0, 0};
      ++placed;
    }
    if (placed == 0) return {};
    return {Level{"", "gridworld", std::move(g), false},
            "add wall segment of " + std::to_string(placed) + " at (" +
                std::to_string(start.x) + "," + std::to_string(start.y) + ")"};
  }
  if (kind == "add_key_door_pair") {
    if (g.num_doors >= grid::kMaxDoors) return {};
    std::array<bool, grid::kNumColors> used{};
    for (const auto& t : g.tiles)
      if (t.object == grid::kDoor) used[t.color] = true;
    int color = -1;
    for (int c = 0; c < grid::kNumColors; ++c)
      if (!used[c]) {
        color = c;
        break;
      }
    if (color < 0) return {};
    auto cells = empty_cells(g, g.agent_start);
    if (cells.size() < 2) return {};
    const grid::Pos door = cells[rng.below(cells.size())];
    g.at(door.x, door.y) = grid::Tile{grid::kDoor, static_cast<std::uint8_t>(color),
                                      grid::kLocked};
    auto key_cells = empty_cells(g, g.agent_start);
    if (key_cells.empty()) return {};
    const grid::Pos key = key_cells[rng.below(key_cells.size())];
    g.at(key.x, key.y) = grid::Tile{grid::kKey, static_cast<std::uint8_t>(color), 0};
    ++g.num_doors;
    return {Level{"", "gridworld", std::move(g), false},
            "add key-door pair color " + std::to_string(color)};
  }
  if (kind == "relocate_goal") {
    g.at(g.goal.x, g.goal.y) = grid::Tile{grid::kEmpty, 0, 0};
    auto cells = empty_cells(g, g.agent_start);
    if (cells.empty()) return {};
    const grid::Pos goal = cells[rng.below(cells.size())];
    g.at(goal.x, goal.y) = grid::Tile{grid::kGoal, 0, 0};
    g.goal = goal;
    return {Level{"", "gridworld", std::move(g), false},
            "relocate goal to (" + std::to_string(goal.x) + "," + std::to_string(goal.y) + ")"};
  }
  raise(Errc::config_error, "unknown grid level mutation " + kind);
}

inline LevelDraft mutate_nav(const nav::NavLevel& base, const std::string& kind, Rng& rng) {
  nav::NavLevel g = base;
  const double r = g.agent_radius;
  if (kind == "add_obstacle") {
    nav::Rect rect;
    rect.width = rng.uniform(15.0, std::min(100.0, g.bounds.x / 4.0));
    rect.height = rng.uniform(15.0, std::min(100.0, g.bounds.y / 4.0));
    rect.center = {rng.uniform(rect.width / 2, g.bounds.x - rect.width / 2),
                   rng.uniform(rect.height / 2, g.bounds.y - rect.height / 2)};
    if (nav::rects_overlap(rect, g.goal_zone)) return {};
    if (nav::circle_rect_collision(g.agent_start, r, rect)) return {};
    for (const auto& o : g.obstacles)
      if (nav::rect_rect_distance(rect, o) < r) return {};
    g.obstacles.push_back(rect);
    return {Level{"", "nav2d", std::move(g), false}, "add obstacle"};
  }
  if (kind == "grow_bounds") {
    g.bounds = {base.bounds.x * 1.25, base.bounds.y * 1.25};
    g.max_steps = static_cast<int>(base.max_steps * 1.25);
    return {Level{"", "nav2d", std::move(g), false}, "grow bounds x1.25"};
  }
  if (kind == "raise_min_distance") {
    const double current = nav::distance(g.agent_start, g.goal_zone.center);
    // cap at what the arena corners can actually provide
    double corner_max = 0.0;
    for (const nav::Vec2 corner : {nav::Vec2{r, r}, nav::Vec2{g.bounds.x - r, r},
                                   nav::Vec2{r, g.bounds.y - r},
                                   nav::Vec2{g.bounds.x - r, g.bounds.y - r}})
      corner_max = std::max(corner_max, nav::distance(corner, g.goal_zone.center));
    const double next =
        std::min(std::max(g.min_start_goal_distance, current) * 1.25, 0.95 * corner_max);
    if (next <= g.min_start_goal_distance + 1e-9) return {};
    bool placed = false;
    for (int tries = 0; tries < 60; ++tries) {
      const nav::Vec2 cand{rng.uniform(r, g.bounds.x - r), rng.uniform(r, g.bounds.y - r)};
      if (nav::distance(cand, g.goal_zone.center) < next) continue;
      if (!nav::position_free(cand, g)) continue;
      g.agent_start = cand;
      placed = true;
      break;
    }
    if (!placed) return {};
    g.min_start_goal_distance = next;
    const auto path = nav::plan_waypoints(g);
    if (path.empty()) return {};
    g.max_steps = static_cast<int>(2 * path.size()) + 50;
    return {Level{"", "nav2d", std::move(g), false},
            "raise min start-goal distance to " + std::to_string(next) +
                " (start re-sampled)"};
  }
  if (kind == "narrow_passage") {
    // One new rect placed a tight gap away from a wall or an existing
    // obstacle, oriented along the thing it pinches.
    const double gap = rng.uniform(2 * r + 6.0, 2 * r + 24.0);
    nav::Rect rect;
    const int mode = static_cast<int>(rng.below(g.obstacles.empty() ? 4 : 5));
    const double thin_lo = 15.0, thin_hi = 40.0;
    const double long_lo = 40.0;
    if (mode == 0 || mode == 1) {  // pinch against the top/bottom wall
      rect.width = rng.uniform(long_lo, std::max(long_lo + 1.0, g.bounds.x / 2.5));
      rect.height = rng.uniform(thin_lo, thin_hi);
      const double cy = mode == 0 ? gap + rect.height / 2.0
                                  : g.bounds.y - gap - rect.height / 2.0;
      rect.center = {rng.uniform(rect.width / 2, g.bounds.x - rect.width / 2), cy};
    } else if (mode == 2 || mode == 3) {  // left/right wall
      rect.width = rng.uniform(thin_lo, thin_hi);
      rect.height = rng.uniform(long_lo, std::max(long_lo + 1.0, g.bounds.y / 2.5));
      const double cx = mode == 2 ? gap + rect.width / 2.0
                                  : g.bounds.x - gap - rect.width / 2.0;
      rect.center = {cx, rng.uniform(rect.height / 2, g.bounds.y - rect.height / 2)};
    } else {  // next to an existing obstacle, on its roomier vertical side
      const auto& anchor = g.obstacles[rng.below(g.obstacles.size())];
      rect.width = rng.uniform(thin_lo, thin_hi);
      rect.height = rng.uniform(long_lo, std::max(long_lo + 1.0, g.bounds.y / 2.5));
      if (g.bounds.y - anchor.bottom() >= anchor.top())
        rect.center = {anchor.center.x, anchor.bottom() + gap + rect.height / 2.0};
      else
        rect.center = {anchor.center.x, anchor.top() - gap - rect.height / 2.0};
    }
    if (rect.bottom() > g.bounds.y || rect.top() < 0 || rect.right() > g.bounds.x ||
        rect.left() < 0)
      return {};
    if (nav::rects_overlap(rect, g.goal_zone)) return {};
    if (nav::circle_rect_collision(g.agent_start, r, rect)) return {};
    for (const auto& o : g.obstacles)
      if (nav::rect_rect_distance(rect, o) < r) return {};
    g.obstacles.push_back(rect);
    return {Level{"", "nav2d", std::move(g), false},
            "narrow passage, gap " + std::to_string(gap)};
  }
  raise(Errc::config_error, "unknown nav level mutation " + kind);
}

inline std::vector<std::string> default_level_kinds(const std::string& family) {
  if (family == "gridworld")
    return {"add_wall_segment", "grow_size", "add_key_door_pair", "relocate_goal"};
  return {"add_obstacle", "narrow_passage", "grow_bounds", "raise_min_distance"};
}

}  // namespace designers_detail

inline std::vector<LevelCandidate> propose_levels(const Level& base, const GameSolution& nash,
                                                  int K, const DesignerConfig& config,
                                                  std::uint64_t round_seed, LlmClient* llm,
                                                  const std::string& prompt_context) {
  if (K < 1) raise(Errc::config_error, "K must be >= 1");
  if (!base.feasible) raise(Errc::malformed_level, "base level lacks a feasibility certificate");

  if (config.mode == "llm") {
    if (!llm) raise(Errc::config_error, "llm designer mode without a client");
    const std::string tmpl = load_text_file(config.llm.prompt_template);
    std::string weights;
    for (double w : nash.strategy.weights) weights += std::to_string(w) + " ";
    std::vector<LevelCandidate> out;
    int retries = config.max_retries;
    while (static_cast<int>(out.size()) < K) {
      const std::string prompt =
          fill_placeholders(tmpl, {{"Weights", weights},
                                   {"Policies", prompt_context},
                                   {"Level", to_json(base).dump(2)}});
      const auto body = extract_program(llm->complete(prompt));
      bool ok = false;
      if (body) {
        try {
          const auto parsed = nlohmann::json::parse(*body);
          Level cand;
          cand.family = base.family;
          if (base.family == "gridworld") {
            auto g = grid::grid_level_from_json(parsed);
            cand.feasible = grid::check_solvable(g);
            cand.params = std::move(g);
          } else {
            auto nl = nav::nav_level_from_json(parsed);
            cand.feasible = nav::reachable(nl);
            cand.params = std::move(nl);
          }
          if (cand.feasible) {
            cand.id = base.id + ".c" + std::to_string(out.size());
            MutationRecord rec{base.id, cand.id, "level", "llm level mutation", "llm"};
            out.push_back({std::move(cand), std::move(rec)});
            ok = true;
          }
        } catch (const std::exception&) {
        }
      }
      if (!ok && retries-- <= 0)
        raise(Errc::generation_exhausted, "no feasible llm level after retries");
    }
    return out;
  }

  auto kinds = config.mutation_kinds.empty()
                   ? designers_detail::default_level_kinds(base.family)
                   : config.mutation_kinds;
  Rng rng(mix64(round_seed ^ fnv1a64("level_designer")));
  if (config.mutation_kinds.empty()) rng.shuffle(kinds);

  std::vector<LevelCandidate> out;
  std::vector<std::uint64_t> seen{coevo::level_signature(base)};
  int retries = config.max_retries;
  std::size_t kind_cursor = 0;
  while (static_cast<int>(out.size()) < K) {
    const std::string kind = kinds[kind_cursor % kinds.size()];
    ++kind_cursor;
    designers_detail::LevelDraft draft =
        base.family == "gridworld"
            ? designers_detail::mutate_grid(std::get<grid::GridLevel>(base.params), kind, rng)
            : designers_detail::mutate_nav(std::get<nav::NavLevel>(base.params), kind, rng);

    bool ok = false;
    if (draft.level) {
      try {
        Level cand = std::move(*draft.level);
        cand.feasible = cand.family == "gridworld"
                            ? grid::check_solvable(std::get<grid::GridLevel>(cand.params))
                            : nav::reachable(std::get<nav::NavLevel>(cand.params));
        const auto sig = coevo::level_signature(cand);
        if (cand.feasible && std::find(seen.begin(), seen.end(), sig) == seen.end()) {
          seen.push_back(sig);
          cand.id = base.id + ".c" + std::to_string(out.size());
          out.push_back(
              {std::move(cand),
               MutationRecord{base.id, "", "level", draft.description, "scripted"}});
          out.back().record.child_id = out.back().level.id;
          ok = true;
        }
      } catch (const Error&) {
        // malformed draft: counts as an infeasible attempt
      }
    }
    if (!ok && retries-- <= 0)
      raise(Errc::generation_exhausted,
            "only " + std::to_string(out.size()) + " feasible level mutations, K=" +
                std::to_string(K));
  }
  return out;
}

}  // namespace coevo
