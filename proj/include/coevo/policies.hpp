#pragma once

#include <algorithm>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "coevo/error.hpp"
#include "coevo/gridworld.hpp"
#include "coevo/nav2d.hpp"
#include "coevo/rng.hpp"

namespace coevo {

// Deterministic stand-in for a generated program: a family tag plus a flat
// parameter map interpreted by that family's planner.
struct BuiltinDescriptor {
  std::string family;  // "gridworld" | "nav2d"
  std::map<std::string, std::string> params;
};

namespace policies {

inline bool param_bool(const BuiltinDescriptor& d, const std::string& key, bool fallback) {
  auto it = d.params.find(key);
  if (it == d.params.end()) return fallback;
  return it->second == "true" || it->second == "1";
}

inline int param_int(const BuiltinDescriptor& d, const std::string& key, int fallback) {
  auto it = d.params.find(key);
  if (it == d.params.end()) return fallback;
  return std::stoi(it->second);
}

inline std::string param_str(const BuiltinDescriptor& d, const std::string& key,
                             const std::string& fallback) {
  auto it = d.params.find(key);
  return it == d.params.end() ? fallback : it->second;
}

// Signature gate shared by both families: a policy restricted to a set of
// level signatures spins in place anywhere else.
inline bool signature_gate_passes(const BuiltinDescriptor& d, std::uint64_t sig) {
  const std::string sigs = param_str(d, "signatures", "");
  if (sigs.empty()) return true;
  std::stringstream ss(sigs);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty() && std::stoull(tok, nullptr, 16) == sig) return true;
  }
  return false;
}

inline std::uint64_t descriptor_hash(const BuiltinDescriptor& d) {
  std::uint64_t h = fnv1a64(d.family);
  for (const auto& [k, v] : d.params) h = mix64(h ^ fnv1a64(k)) ^ mix64(fnv1a64(v));
  return h;
}

// --- grid planner ---------------------------------------------------------------
//
// Product-state BFS over (cell, carried key, locked doors, taken keys), gated
// by capability knobs:
//   open_doors - may toggle closed doors
//   use_keys   - may pick up keys and unlock locked doors
//   swap_keys  - may drop the carried key to free its hand
// Only the first abstract step of the plan is concretized; the next call
// replans from the observed state, so the policy stays a pure function of
// (descriptor, observation).

namespace grid_detail {

using grid::GridState;
using grid::Pos;
using grid::Tile;

struct PlanOp {
  enum Kind { move, pickup, unlock, drop } kind = move;
  int dir = 0;      // for move
  Pos target{};     // cell acted upon (move destination / key / door)
};

struct PlanModel {
  std::vector<Pos> key_pos;      // grid keys; the virtual carried key has none
  std::vector<int> key_color;
  std::vector<Pos> door_pos;
  std::vector<int> door_color;
  std::vector<int> door_state;
  int n = 0;
  int goal_cell = -1;
  int start_cell = 0;
  int start_carried = 0;  // key index or none == key count
  std::uint32_t start_locked = 0;
  std::uint32_t start_taken = 0;
};

inline PlanModel build_model(const GridState& s) {
  PlanModel m;
  m.n = s.size;
  for (int y = 0; y < s.size; ++y) {
    for (int x = 0; x < s.size; ++x) {
      const Tile& t = s.at(x, y);
      if (t.object == grid::kKey) {
        m.key_pos.push_back({x, y});
        m.key_color.push_back(t.color);
      } else if (t.object == grid::kDoor) {
        if (t.state == grid::kLocked) m.start_locked |= 1u << m.door_pos.size();
        m.door_pos.push_back({x, y});
        m.door_color.push_back(t.color);
        m.door_state.push_back(t.state);
      } else if (t.object == grid::kGoal) {
        m.goal_cell = y * s.size + x;
      }
    }
  }
  if (s.carried_key >= 0) {
    m.key_pos.push_back({-1, -1});
    m.key_color.push_back(s.carried_key);
    m.start_carried = static_cast<int>(m.key_pos.size()) - 1;
    m.start_taken |= 1u << m.start_carried;
  } else {
    m.start_carried = static_cast<int>(m.key_pos.size());
  }
  m.start_cell = s.agent.y * s.size + s.agent.x;
  return m;
}

// BFS in the abstract product space; returns the op sequence or empty.
inline std::vector<PlanOp> plan(const GridState& s, bool open_doors, bool use_keys,
                                bool swap_keys) {
  const PlanModel m = build_model(s);
  if (m.goal_cell < 0) return {};
  const int n = m.n;
  const std::size_t num_keys = m.key_pos.size();
  const std::size_t none = num_keys;

  auto encode = [&](int cell, int carried, std::uint32_t locked, std::uint32_t taken) {
    std::uint64_t code = static_cast<std::uint64_t>(cell);
    code = code * (num_keys + 1) + carried;
    code = (code << m.door_pos.size()) | locked;
    code = (code << num_keys) | taken;
    return code;
  };

  auto key_at = [&](int x, int y) {
    for (std::size_t k = 0; k < num_keys; ++k)
      if (m.key_pos[k].x == x && m.key_pos[k].y == y) return static_cast<int>(k);
    return -1;
  };
  auto door_at = [&](int x, int y) {
    for (std::size_t d = 0; d < m.door_pos.size(); ++d)
      if (m.door_pos[d].x == x && m.door_pos[d].y == y) return static_cast<int>(d);
    return -1;
  };

  struct Node {
    int cell;
    int carried;
    std::uint32_t locked, taken;
  };
  struct Edge {
    std::uint64_t parent;
    PlanOp op;
  };
  std::unordered_map<std::uint64_t, Edge> visited;
  std::deque<Node> queue;
  const std::uint64_t start_code = encode(m.start_cell, m.start_carried, m.start_locked,
                                          m.start_taken);
  visited.emplace(start_code, Edge{start_code, {}});
  queue.push_back({m.start_cell, m.start_carried, m.start_locked, m.start_taken});

  std::uint64_t goal_code = 0;
  bool found = false;
  while (!queue.empty() && !found) {
    const Node cur = queue.front();
    queue.pop_front();
    const std::uint64_t cur_code = encode(cur.cell, cur.carried, cur.locked, cur.taken);
    const int cx = cur.cell % n, cy = cur.cell / n;

    auto try_visit = [&](Node nxt, PlanOp op) {
      const std::uint64_t code = encode(nxt.cell, nxt.carried, nxt.locked, nxt.taken);
      if (visited.emplace(code, Edge{cur_code, op}).second) {
        if (nxt.cell == m.goal_cell) {
          goal_code = code;
          found = true;
        }
        queue.push_back(nxt);
      }
    };

    for (int dir = 0; dir < 4 && !found; ++dir) {
      const int x = cx + grid::kDirVec[dir].x, y = cy + grid::kDirVec[dir].y;
      if (x < 0 || y < 0 || x >= n || y >= n) continue;
      const Tile& t = s.at(x, y);
      bool free_cell = false;
      if (t.object == grid::kEmpty || t.object == grid::kFloor || t.object == grid::kGoal) {
        free_cell = true;
      } else if (t.object == grid::kDoor) {
        const int d = door_at(x, y);
        if ((cur.locked & (1u << d)) == 0)
          free_cell = m.door_state[d] != grid::kClosed || open_doors;
      } else if (t.object == grid::kKey) {
        const int k = key_at(x, y);
        free_cell = (cur.taken & (1u << k)) != 0;
      }
      if (free_cell)
        try_visit({y * n + x, cur.carried, cur.locked, cur.taken},
                  {PlanOp::move, dir, {x, y}});

      if (found || !use_keys) continue;
      if (t.object == grid::kKey) {
        const int k = key_at(x, y);
        if (cur.carried == static_cast<int>(none) && (cur.taken & (1u << k)) == 0)
          try_visit({cur.cell, k, cur.locked, cur.taken | (1u << k)},
                    {PlanOp::pickup, dir, {x, y}});
      } else if (t.object == grid::kDoor) {
        const int d = door_at(x, y);
        if ((cur.locked & (1u << d)) != 0 && cur.carried != static_cast<int>(none) &&
            m.key_color[cur.carried] == m.door_color[d])
          try_visit({cur.cell, cur.carried, cur.locked & ~(1u << d), cur.taken},
                    {PlanOp::unlock, dir, {x, y}});
      }
    }
    if (!found && swap_keys && cur.carried != static_cast<int>(none))
      try_visit({cur.cell, static_cast<int>(none), cur.locked, cur.taken},
                {PlanOp::drop, 0, {cx, cy}});
  }
  if (!found) return {};

  std::vector<PlanOp> ops;
  for (std::uint64_t code = goal_code; code != start_code;) {
    const Edge& e = visited.at(code);
    ops.push_back(e.op);
    code = e.parent;
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

inline int dir_toward(Pos from, Pos to) {
  for (int d = 0; d < 4; ++d)
    if (from.x + grid::kDirVec[d].x == to.x && from.y + grid::kDirVec[d].y == to.y) return d;
  return -1;
}

inline int turn_toward(int cur, int want) {
  const int diff = (want - cur + 4) % 4;
  return diff == 3 ? grid::kTurnLeft : grid::kTurnRight;
}

inline int concretize(const GridState& s, const std::vector<PlanOp>& ops,
                      const std::string& drop_site) {
  if (ops.empty()) return grid::kTurnLeft;  // no plan: spin until timeout
  const PlanOp& op = ops.front();

  if (op.kind == PlanOp::drop) {
    // Adjacent empty cell, keeping the next move target clear. Preference
    // order rotates with the drop_site knob.
    Pos avoid{-1, -1};
    for (std::size_t i = 1; i < ops.size(); ++i) {
      if (ops[i].kind == PlanOp::move) {
        avoid = ops[i].target;
        break;
      }
      if (ops[i].kind != PlanOp::drop) break;
    }
    int order[4];  // relative: 0 front, 1 right, 2 back, 3 left
    if (drop_site == "left") {
      order[0] = 3; order[1] = 2; order[2] = 1; order[3] = 0;
    } else if (drop_site == "right") {
      order[0] = 1; order[1] = 2; order[2] = 3; order[3] = 0;
    } else {  // behind
      order[0] = 2; order[1] = 3; order[2] = 1; order[3] = 0;
    }
    for (int rel : order) {
      const int d = (s.dir + rel) % 4;
      const Pos c{s.agent.x + grid::kDirVec[d].x, s.agent.y + grid::kDirVec[d].y};
      if (!s.in_bounds(c.x, c.y)) continue;
      if (c == avoid) continue;
      if (s.at(c.x, c.y).object != grid::kEmpty) continue;
      if (s.dir != d) return turn_toward(s.dir, d);
      return grid::kDrop;
    }
    return grid::kTurnLeft;
  }

  const int want =
      op.kind == PlanOp::move ? op.dir : dir_toward(s.agent, op.target);
  if (want < 0) return grid::kTurnLeft;
  if (s.dir != want) return turn_toward(s.dir, want);

  switch (op.kind) {
    case PlanOp::pickup:
      return grid::kPickUp;
    case PlanOp::unlock:
      return grid::kToggle;
    case PlanOp::move: {
      const Tile& front = s.at(op.target.x, op.target.y);
      if (front.object == grid::kDoor && front.state == grid::kClosed) return grid::kToggle;
      return grid::kMoveForward;
    }
    default:
      return grid::kTurnLeft;
  }
}

inline std::uint64_t state_hash(const GridState& s) {
  std::uint64_t h = fnv1a64("gridstate");
  for (const auto& t : s.tiles)
    h = mix64(h ^ (static_cast<std::uint64_t>(t.object) |
                   (static_cast<std::uint64_t>(t.color) << 8) |
                   (static_cast<std::uint64_t>(t.state) << 16)));
  h = mix64(h ^ static_cast<std::uint64_t>(s.agent.y * s.size + s.agent.x));
  h = mix64(h ^ static_cast<std::uint64_t>(s.dir));
  h = mix64(h ^ static_cast<std::uint64_t>(s.carried_key + 1));
  return h;
}

}  // namespace grid_detail

// Pure function of (descriptor, observation); results are memoized globally,
// which cannot change behavior because the memoized value is itself a pure
// function of the key.
inline int builtin_policy_act(const BuiltinDescriptor& d, const grid::GridState& s) {
  if (d.family != "gridworld") raise(Errc::family_mismatch, "descriptor family " + d.family);
  if (!policies::signature_gate_passes(d, grid::state_signature(s))) return grid::kTurnLeft;

  static std::mutex mu;
  static std::unordered_map<std::uint64_t, int> memo;
  const std::uint64_t key =
      mix64(policies::descriptor_hash(d) ^ grid_detail::state_hash(s));
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
  }
  const auto ops = grid_detail::plan(s, policies::param_bool(d, "open_doors", true),
                                     policies::param_bool(d, "use_keys", true),
                                     policies::param_bool(d, "swap_keys", true));
  const int action =
      grid_detail::concretize(s, ops, policies::param_str(d, "drop_site", "behind"));
  {
    std::lock_guard<std::mutex> lock(mu);
    if (memo.size() > 4'000'000) memo.clear();
    memo.emplace(key, action);
  }
  return action;
}

// --- nav planner ------------------------------------------------------------------

namespace nav_detail {

inline std::uint64_t obs_hash(const nav::NavObservation& o, bool with_agent) {
  std::uint64_t h = fnv1a64("navobs");
  auto mixd = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    h = mix64(h ^ bits);
  };
  mixd(o.bounds.x);
  mixd(o.bounds.y);
  mixd(o.agent_radius);
  mixd(o.speed);
  mixd(o.goal_zone.center.x);
  mixd(o.goal_zone.center.y);
  mixd(o.goal_zone.width);
  mixd(o.goal_zone.height);
  for (const auto& r : o.obstacles) {
    mixd(r.center.x);
    mixd(r.center.y);
    mixd(r.width);
    mixd(r.height);
  }
  if (with_agent) {
    mixd(o.agent_pos.x);
    mixd(o.agent_pos.y);
  }
  return h;
}

inline nav::NavLevel level_view(const nav::NavObservation& o) {
  nav::NavLevel level;
  level.bounds = o.bounds;
  level.agent_radius = o.agent_radius;
  level.agent_start = o.agent_pos;
  level.goal_zone = o.goal_zone;
  level.obstacles = o.obstacles;
  level.speed = o.speed;
  level.max_steps = std::max(1, o.max_steps);
  return level;
}

inline nav::Vec2 toward(nav::Vec2 from, nav::Vec2 to, double speed) {
  const double dx = to.x - from.x, dy = to.y - from.y;
  if (std::abs(dx) <= speed && std::abs(dy) <= speed)
    return {dx / speed, dy / speed};  // exact arrival
  const double norm = std::hypot(dx, dy);
  if (norm < 1e-12) return {0.0, 0.0};
  return {dx / norm, dy / norm};
}

}  // namespace nav_detail

// Stable hash of the level geometry visible in an observation (agent position
// and step counter excluded), used by signature-gated policies.
inline std::uint64_t observation_signature(const nav::NavObservation& o) {
  return nav_detail::obs_hash(o, /*with_agent=*/false);
}

inline nav::Vec2 builtin_policy_act(const BuiltinDescriptor& d, const nav::NavObservation& o) {
  if (d.family != "nav2d") raise(Errc::family_mismatch, "descriptor family " + d.family);
  if (!policies::signature_gate_passes(d, observation_signature(o))) return {0.0, 0.0};

  const bool use_plan = policies::param_bool(d, "plan", true);
  const bool scoring = policies::param_bool(d, "scoring", true);

  static std::mutex mu;
  static std::unordered_map<std::uint64_t, nav::Vec2> memo;
  const std::uint64_t key =
      mix64(policies::descriptor_hash(d) ^ nav_detail::obs_hash(o, /*with_agent=*/true));
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
  }

  const auto level = nav_detail::level_view(o);
  nav::Vec2 target = o.goal_zone.center;
  if (use_plan) {
    const auto path = nav::plan_waypoints(level);
    for (const auto& wp : path) {
      if (nav::distance(o.agent_pos, wp) > 1e-9) {
        target = wp;
        break;
      }
    }
  }

  nav::Vec2 action = nav_detail::toward(o.agent_pos, target, o.speed);
  if (scoring) {
    // One-step feasibility check with angular fallbacks, nearest-to-target
    // first. Keeps the policy moving along obstacle faces.
    const double base = std::atan2(action.y, action.x);
    const bool base_moves = std::hypot(action.x, action.y) > 1e-12;
    double best_score = std::numeric_limits<double>::infinity();
    nav::Vec2 best{0.0, 0.0};
    const double offsets[] = {0.0, 0.3927, -0.3927, 0.7854, -0.7854, 1.1781, -1.1781,
                              1.5708, -1.5708, 2.3562, -2.3562, 3.1416};
    for (double off : offsets) {
      nav::Vec2 cand = action;
      if (off != 0.0 || !base_moves) {
        if (!base_moves) break;
        cand = {std::cos(base + off), std::sin(base + off)};
      }
      const nav::Vec2 dest{o.agent_pos.x + o.speed * std::clamp(cand.x, -1.0, 1.0),
                           o.agent_pos.y + o.speed * std::clamp(cand.y, -1.0, 1.0)};
      if (!nav::position_free(dest, level)) continue;
      const double score = nav::distance(dest, target);
      if (score < best_score - 1e-12) {
        best_score = score;
        best = cand;
      }
      if (off == 0.0) break;  // the direct step is free; take it
    }
    if (std::isfinite(best_score)) action = best;
    else action = {0.0, 0.0};
  }

  {
    std::lock_guard<std::mutex> lock(mu);
    if (memo.size() > 4'000'000) memo.clear();
    memo.emplace(key, action);
  }
  return action;
}

}  // namespace policies

using policies::builtin_policy_act;
using policies::observation_signature;

// Family-default bootstrap descriptors for iteration -1 of the loop.
inline BuiltinDescriptor default_builtin(const std::string& family) {
  if (family == "gridworld")
    return {"gridworld",
            {{"open_doors", "false"}, {"use_keys", "false"}, {"swap_keys", "false"}}};
  if (family == "nav2d") return {"nav2d", {{"plan", "false"}, {"scoring", "false"}}};
  raise(Errc::family_mismatch, "unknown family " + family);
}

}  // namespace coevo
