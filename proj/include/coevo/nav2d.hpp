#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include <json.hpp>

#include "coevo/error.hpp"
#include "coevo/rng.hpp"

namespace coevo::nav {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Axis-aligned rectangle given by center and extents.
struct Rect {
  Vec2 center;
  double width = 0.0;
  double height = 0.0;

  double left() const { return center.x - width / 2.0; }
  double right() const { return center.x + width / 2.0; }
  double top() const { return center.y - height / 2.0; }
  double bottom() const { return center.y + height / 2.0; }
};

constexpr double kAgentRadius = 15.0;
constexpr double kGoalMargin = 10.0;  // over the 2*radius minimum
constexpr double kDefaultSpeed = 5.0;

struct NavLevel {
  Vec2 bounds;  // W, H in pixels
  double agent_radius = kAgentRadius;
  Vec2 agent_start;
  Rect goal_zone;
  std::vector<Rect> obstacles;
  double speed = kDefaultSpeed;
  int max_steps = 0;
  double min_start_goal_distance = 0.0;

  double grid_resolution() const { return agent_radius / 3.0; }
};

enum class Outcome { none, goal, timeout };

struct NavState {
  Vec2 agent;
  int steps_elapsed = 0;
  bool terminated = false;
  Outcome outcome = Outcome::none;
};

// Distance from a point to the closest point of a rect; 0 inside.
inline double point_rect_distance(Vec2 p, const Rect& r) {
  const double dx = std::max({r.left() - p.x, 0.0, p.x - r.right()});
  const double dy = std::max({r.top() - p.y, 0.0, p.y - r.bottom()});
  return std::hypot(dx, dy);
}

// Boundary contact is non-colliding: strict inequality.
inline bool circle_rect_collision(Vec2 center, double radius, const Rect& rect) {
  return point_rect_distance(center, rect) < radius;
}

inline bool circle_inside_rect(Vec2 center, double radius, const Rect& rect) {
  return center.x - radius >= rect.left() && center.x + radius <= rect.right() &&
         center.y - radius >= rect.top() && center.y + radius <= rect.bottom();
}

inline bool rects_overlap(const Rect& a, const Rect& b) {
  return a.left() < b.right() && b.left() < a.right() && a.top() < b.bottom() &&
         b.top() < a.bottom();
}

inline double rect_rect_distance(const Rect& a, const Rect& b) {
  const double dx = std::max({b.left() - a.right(), 0.0, a.left() - b.right()});
  const double dy = std::max({b.top() - a.bottom(), 0.0, a.top() - b.bottom()});
  return std::hypot(dx, dy);
}

// Circle fully inside the arena; touching the boundary is allowed.
inline bool circle_in_bounds(Vec2 center, double radius, Vec2 bounds) {
  return center.x >= radius && center.x <= bounds.x - radius && center.y >= radius &&
         center.y <= bounds.y - radius;
}

inline bool position_free(Vec2 center, const NavLevel& level) {
  if (!circle_in_bounds(center, level.agent_radius, level.bounds)) return false;
  for (const auto& o : level.obstacles)
    if (circle_rect_collision(center, level.agent_radius, o)) return false;
  return true;
}

inline void validate_level(const NavLevel& level) {
  if (level.bounds.x <= 0 || level.bounds.y <= 0)
    raise(Errc::malformed_level, "bounds must be positive");
  if (level.agent_radius <= 0) raise(Errc::malformed_level, "agent radius must be positive");
  if (level.speed <= 0) raise(Errc::malformed_level, "speed must be positive");
  if (level.max_steps <= 0) raise(Errc::malformed_level, "max_steps must be positive");
  const double min_side = 2.0 * level.agent_radius + kGoalMargin;
  if (level.goal_zone.width < min_side - 1e-9 || level.goal_zone.height < min_side - 1e-9)
    raise(Errc::malformed_level, "goal zone smaller than 2*radius + margin");
  for (const auto& o : level.obstacles) {
    if (o.width <= 0 || o.height <= 0) raise(Errc::malformed_level, "degenerate obstacle");
    if (rects_overlap(o, level.goal_zone))
      raise(Errc::malformed_level, "obstacle overlaps the goal zone");
  }
  for (std::size_t i = 0; i < level.obstacles.size(); ++i)
    for (std::size_t j = i + 1; j < level.obstacles.size(); ++j)
      if (rect_rect_distance(level.obstacles[i], level.obstacles[j]) <
          level.agent_radius - 1e-9)
        raise(Errc::malformed_level, "obstacles violate the inflated non-overlap rule");
  if (!position_free(level.agent_start, level))
    raise(Errc::malformed_level, "agent start is not collision-free in bounds");
  if (level.min_start_goal_distance > 0 &&
      distance(level.agent_start, level.goal_zone.center) <
          level.min_start_goal_distance - 1e-9)
    raise(Errc::malformed_level, "start closer to goal than min_start_goal_distance");
}

// --- dynamics -------------------------------------------------------------------

inline bool goal_reached(const NavState& s, const NavLevel& level) {
  return circle_inside_rect(s.agent, level.agent_radius, level.goal_zone);
}

inline NavState nav_reset(const NavLevel& level) {
  NavState s;
  s.agent = level.agent_start;
  if (goal_reached(s, level)) {
    s.terminated = true;
    s.outcome = Outcome::goal;
  }
  return s;
}

// Rejection is all-or-nothing: a move that would collide or leave the arena
// leaves the agent stationary. Non-finite action components count as 0.
inline NavState nav_step(const NavState& prev, const NavLevel& level, Vec2 action) {
  if (prev.terminated) throw std::logic_error("nav_step on terminated state");
  NavState s = prev;
  auto clamp_component = [](double v) {
    if (!std::isfinite(v)) return 0.0;
    return std::clamp(v, -1.0, 1.0);
  };
  const Vec2 a{clamp_component(action.x), clamp_component(action.y)};
  const Vec2 dest{s.agent.x + level.speed * a.x, s.agent.y + level.speed * a.y};
  if (position_free(dest, level)) s.agent = dest;
  ++s.steps_elapsed;
  if (goal_reached(s, level)) {
    s.terminated = true;
    s.outcome = Outcome::goal;
  } else if (s.steps_elapsed >= level.max_steps) {
    s.terminated = true;
    s.outcome = Outcome::timeout;
  }
  return s;
}

// --- occupancy grid reachability ---------------------------------------------------

struct OccupancyGrid {
  int nx = 0, ny = 0;
  double res = 0.0;
  std::vector<char> blocked;

  bool is_blocked(int i, int j) const { return blocked[static_cast<std::size_t>(j) * nx + i]; }
  Vec2 cell_center(int i, int j) const { return {(i + 0.5) * res, (j + 0.5) * res}; }
  int cell_x(double v) const { return std::clamp(static_cast<int>(v / res), 0, nx - 1); }
  int cell_y(double v) const { return std::clamp(static_cast<int>(v / res), 0, ny - 1); }
};

inline OccupancyGrid build_occupancy_grid(const NavLevel& level) {
  OccupancyGrid g;
  g.res = level.grid_resolution();
  g.nx = std::max(1, static_cast<int>(std::floor(level.bounds.x / g.res)));
  g.ny = std::max(1, static_cast<int>(std::floor(level.bounds.y / g.res)));
  g.blocked.assign(static_cast<std::size_t>(g.nx) * g.ny, 0);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const Vec2 c = g.cell_center(i, j);
      g.blocked[static_cast<std::size_t>(j) * g.nx + i] = !position_free(c, level);
    }
  }
  return g;
}

namespace detail {

inline std::vector<int> goal_cells(const OccupancyGrid& g, const NavLevel& level) {
  std::vector<int> out;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (!g.is_blocked(i, j) &&
          circle_inside_rect(g.cell_center(i, j), level.agent_radius, level.goal_zone))
        out.push_back(j * g.nx + i);
  return out;
}

// BFS from the start cell; returns parent array (-2 unreachable, -1 root) and
// the first goal-containment cell reached, or -1.
inline int grid_bfs(const OccupancyGrid& g, const NavLevel& level, std::vector<int>& parent) {
  parent.assign(static_cast<std::size_t>(g.nx) * g.ny, -2);
  const int si = g.cell_x(level.agent_start.x);
  const int sj = g.cell_y(level.agent_start.y);
  if (g.is_blocked(si, sj)) return -1;
  auto goals = goal_cells(g, level);
  std::vector<char> is_goal(parent.size(), 0);
  for (int c : goals) is_goal[c] = 1;

  std::deque<int> queue{sj * g.nx + si};
  parent[sj * g.nx + si] = -1;
  constexpr int dx[4] = {1, 0, -1, 0};
  constexpr int dy[4] = {0, 1, 0, -1};
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    if (is_goal[cur]) return cur;
    const int ci = cur % g.nx, cj = cur / g.nx;
    for (int d = 0; d < 4; ++d) {
      const int ni = ci + dx[d], nj = cj + dy[d];
      if (ni < 0 || nj < 0 || ni >= g.nx || nj >= g.ny) continue;
      const int idx = nj * g.nx + ni;
      if (parent[idx] != -2 || g.is_blocked(ni, nj)) continue;
      parent[idx] = cur;
      queue.push_back(idx);
    }
  }
  return -1;
}

}  // namespace detail

// True iff 4-connected BFS over the radius-inflated occupancy grid connects
// the start cell to a cell whose center permits full goal containment.
inline bool reachable(const NavLevel& level) {
  validate_level(level);
  const auto g = build_occupancy_grid(level);
  std::vector<int> parent;
  return detail::grid_bfs(g, level, parent) >= 0;
}

// Cell-center waypoint path from the agent start, empty when unreachable.
inline std::vector<Vec2> plan_waypoints(const NavLevel& level) {
  const auto g = build_occupancy_grid(level);
  std::vector<int> parent;
  const int goal = detail::grid_bfs(g, level, parent);
  std::vector<Vec2> path;
  for (int cur = goal; cur >= 0; cur = parent[cur])
    path.push_back(g.cell_center(cur % g.nx, cur / g.nx));
  std::reverse(path.begin(), path.end());
  return path;
}

// --- observation ---------------------------------------------------------------------

struct NavObservation {
  Vec2 agent_pos;
  double agent_radius = 0.0;
  Rect goal_zone;
  std::vector<Rect> obstacles;
  Vec2 bounds;
  int step_count = 0;
  int max_steps = 0;
  double speed = 0.0;  // engine-side extra, not part of the wire schema
};

inline NavObservation nav_observe(const NavState& s, const NavLevel& level) {
  NavObservation o;
  o.agent_pos = s.agent;
  o.agent_radius = level.agent_radius;
  o.goal_zone = level.goal_zone;
  o.obstacles = level.obstacles;
  o.bounds = level.bounds;
  o.step_count = s.steps_elapsed;
  o.max_steps = level.max_steps;
  o.speed = level.speed;
  return o;
}

// Wire schema: one "zone" object carrying purpose "goal", then the obstacles.
inline nlohmann::json observation_to_json(const NavObservation& o) {
  nlohmann::json objects = nlohmann::json::array();
  objects.push_back({{"type", "zone"},
                     {"pos", {o.goal_zone.center.x, o.goal_zone.center.y}},
                     {"size", {o.goal_zone.width, o.goal_zone.height}},
                     {"purpose", "goal"}});
  for (const auto& r : o.obstacles)
    objects.push_back({{"type", "obstacle"},
                       {"shape", "rect"},
                       {"pos", {r.center.x, r.center.y}},
                       {"size", {r.width, r.height}}});
  return nlohmann::json{
      {"agent_pos", {o.agent_pos.x, o.agent_pos.y}},
      {"agent_radius", o.agent_radius},
      {"objects", std::move(objects)},
      {"bounds", {o.bounds.x, o.bounds.y}},
      {"step_count", o.step_count},
      {"max_steps", o.max_steps},
  };
}

// --- serialization -------------------------------------------------------------------

inline nlohmann::json rect_to_json(const Rect& r) {
  return nlohmann::json{{"center", {r.center.x, r.center.y}},
                        {"width", r.width},
                        {"height", r.height}};
}

inline Rect rect_from_json(const nlohmann::json& j) {
  return Rect{{j.at("center").at(0).get<double>(), j.at("center").at(1).get<double>()},
              j.at("width").get<double>(),
              j.at("height").get<double>()};
}

inline nlohmann::json to_json(const NavLevel& level) {
  nlohmann::json obstacles = nlohmann::json::array();
  for (const auto& o : level.obstacles) obstacles.push_back(rect_to_json(o));
  return nlohmann::json{
      {"bounds", {level.bounds.x, level.bounds.y}},
      {"agent_radius", level.agent_radius},
      {"agent_start", {level.agent_start.x, level.agent_start.y}},
      {"goal_zone", rect_to_json(level.goal_zone)},
      {"obstacles", std::move(obstacles)},
      {"speed", level.speed},
      {"max_steps", level.max_steps},
      {"min_start_goal_distance", level.min_start_goal_distance},
  };
}

inline NavLevel nav_level_from_json(const nlohmann::json& j) {
  NavLevel level;
  try {
    level.bounds = {j.at("bounds").at(0).get<double>(), j.at("bounds").at(1).get<double>()};
    level.agent_radius = j.at("agent_radius").get<double>();
    level.agent_start = {j.at("agent_start").at(0).get<double>(),
                         j.at("agent_start").at(1).get<double>()};
    level.goal_zone = rect_from_json(j.at("goal_zone"));
    for (const auto& o : j.at("obstacles")) level.obstacles.push_back(rect_from_json(o));
    level.speed = j.at("speed").get<double>();
    level.max_steps = j.at("max_steps").get<int>();
    level.min_start_goal_distance = j.at("min_start_goal_distance").get<double>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, std::string("nav level: ") + e.what());
  }
  validate_level(level);
  return level;
}

inline std::uint64_t level_signature(const NavLevel& level) {
  return fnv1a64(to_json(level).dump());
}

// --- generation ----------------------------------------------------------------------

struct NavGenParams {
  Vec2 bounds{400.0, 300.0};
  int num_obstacles = 3;
  double min_start_goal_distance = 150.0;
  int max_attempts = 1000;
};

// Random rectangular clutter under the inflated non-overlap placement rule,
// goal zone clear of obstacles, start collision-free and far enough from the
// goal. max_steps is sized from the planned waypoint path so a path-following
// policy always has budget.
inline NavLevel generate_nav_level(const NavGenParams& params, std::uint64_t seed) {
  Rng rng(mix64(seed ^ fnv1a64("nav_gen")));
  for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
    NavLevel level;
    level.bounds = params.bounds;
    level.min_start_goal_distance = params.min_start_goal_distance;
    const double r = level.agent_radius;
    const double min_side = 2.0 * r + kGoalMargin;

    level.goal_zone.width = rng.uniform(min_side, min_side + 40.0);
    level.goal_zone.height = rng.uniform(min_side, min_side + 40.0);
    level.goal_zone.center = {
        rng.uniform(level.goal_zone.width / 2, level.bounds.x - level.goal_zone.width / 2),
        rng.uniform(level.goal_zone.height / 2, level.bounds.y - level.goal_zone.height / 2)};

    bool ok = false;
    for (int tries = 0; tries < 100; ++tries) {
      level.agent_start = {rng.uniform(r, level.bounds.x - r),
                           rng.uniform(r, level.bounds.y - r)};
      if (distance(level.agent_start, level.goal_zone.center) >=
          params.min_start_goal_distance) {
        ok = true;
        break;
      }
    }
    if (!ok) continue;

    for (int o = 0; o < params.num_obstacles; ++o) {
      for (int tries = 0; tries < 50; ++tries) {
        Rect rect;
        rect.width = rng.uniform(20.0, 120.0);
        rect.height = rng.uniform(20.0, 120.0);
        rect.center = {rng.uniform(rect.width / 2, level.bounds.x - rect.width / 2),
                       rng.uniform(rect.height / 2, level.bounds.y - rect.height / 2)};
        if (rects_overlap(rect, level.goal_zone)) continue;
        bool clear = !circle_rect_collision(level.agent_start, r, rect);
        for (const auto& other : level.obstacles)
          clear = clear && rect_rect_distance(rect, other) >= r;
        if (clear) {
          level.obstacles.push_back(rect);
          break;
        }
      }
    }

    level.max_steps = 1;  // placeholder so validation passes before sizing
    try {
      validate_level(level);
    } catch (const Error&) {
      continue;
    }
    if (distance(level.agent_start, level.goal_zone.center) <
        params.min_start_goal_distance)
      continue;

    const auto path = plan_waypoints(level);
    if (path.empty()) continue;
    level.max_steps = static_cast<int>(2 * path.size()) + 50;
    return level;
  }
  raise(Errc::generation_exhausted,
        "no reachable nav level after " + std::to_string(params.max_attempts) + " attempts");
}

}  // namespace coevo::nav
