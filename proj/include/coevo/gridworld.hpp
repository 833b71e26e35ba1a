#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include <json.hpp>

#include "coevo/error.hpp"
#include "coevo/rng.hpp"

namespace coevo::grid {

// Tile object indices, MiniGrid-compatible.
enum Object : std::uint8_t {
  kUnseen = 0,
  kEmpty = 1,
  kWall = 2,
  kFloor = 3,
  kDoor = 4,
  kKey = 5,
  kBall = 6,
  kBox = 7,
  kGoal = 8,
  kLava = 9,
  kAgent = 10,
};

// Door states: 0 open, 1 closed, 2 locked.
enum DoorState : std::uint8_t { kOpen = 0, kClosed = 1, kLocked = 2 };

enum Action : int {
  kTurnLeft = 0,
  kTurnRight = 1,
  kMoveForward = 2,
  kPickUp = 3,
  kDrop = 4,
  kToggle = 5,
};

struct Tile {
  std::uint8_t object = kEmpty;
  std::uint8_t color = 0;
  std::uint8_t state = 0;

  bool operator==(const Tile&) const = default;
};

struct Pos {
  int x = 0;
  int y = 0;
  bool operator==(const Pos&) const = default;
};

// Direction encoding: 0 east (+x), 1 south (+y), 2 west, 3 north.
inline constexpr std::array<Pos, 4> kDirVec{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};

constexpr int kMaxDoors = 6;
constexpr int kMaxKeys = 8;
constexpr int kNumColors = 6;

struct GridLevel {
  int size = 0;  // grid is size x size, perimeter walled
  std::vector<Tile> tiles;  // row-major: tiles[y * size + x]
  Pos agent_start{};
  int agent_dir = 0;
  Pos goal{};
  int max_steps = 0;
  int num_doors = 0;

  const Tile& at(int x, int y) const { return tiles[static_cast<std::size_t>(y) * size + x]; }
  Tile& at(int x, int y) { return tiles[static_cast<std::size_t>(y) * size + x]; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < size && y < size; }
};

enum class Outcome { none, goal, timeout };

struct GridState {
  int size = 0;
  std::vector<Tile> tiles;
  Pos agent{};
  int dir = 0;
  int carried_key = -1;  // color index, -1 when hands are free
  int steps_elapsed = 0;
  int max_steps = 0;
  bool terminated = false;
  Outcome outcome = Outcome::none;

  const Tile& at(int x, int y) const { return tiles[static_cast<std::size_t>(y) * size + x]; }
  Tile& at(int x, int y) { return tiles[static_cast<std::size_t>(y) * size + x]; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < size && y < size; }
};

// Flat observation vector: n*n*3 tile channels normalized by per-channel
// maxima (object 10, color 5, state 2), then agent x, y, direction.
struct GridObservation {
  int size = 0;
  std::vector<double> values;
};

// --- validation ---------------------------------------------------------------

inline void validate_level(const GridLevel& level) {
  const int n = level.size;
  if (n < 3 || level.tiles.size() != static_cast<std::size_t>(n) * n)
    raise(Errc::malformed_level, "tile array does not match size");
  for (int i = 0; i < n; ++i) {
    if (level.at(i, 0).object != kWall || level.at(i, n - 1).object != kWall ||
        level.at(0, i).object != kWall || level.at(n - 1, i).object != kWall)
      raise(Errc::malformed_level, "perimeter must be walls");
  }
  int goals = 0, doors = 0, keys = 0;
  std::array<int, kNumColors> keys_by_color{};
  for (const auto& t : level.tiles) {
    if (t.object == kGoal) ++goals;
    if (t.object == kDoor) ++doors;
    if (t.object == kKey) {
      ++keys;
      if (t.color >= kNumColors) raise(Errc::malformed_level, "key color out of range");
      ++keys_by_color[t.color];
    }
  }
  if (goals != 1) raise(Errc::malformed_level, "level must have exactly one goal tile");
  if (doors > kMaxDoors) raise(Errc::malformed_level, "more than 6 doors");
  if (keys > kMaxKeys) raise(Errc::malformed_level, "too many keys");
  for (const auto& t : level.tiles) {
    if (t.object == kDoor && t.state == kLocked && keys_by_color[t.color] == 0)
      raise(Errc::malformed_level, "locked door has no matching key");
  }
  if (level.at(level.goal.x, level.goal.y).object != kGoal)
    raise(Errc::malformed_level, "goal position does not point at the goal tile");
  const auto& start = level.at(level.agent_start.x, level.agent_start.y);
  if (start.object != kEmpty && start.object != kFloor)
    raise(Errc::malformed_level, "agent start must be a free cell");
  if (level.agent_dir < 0 || level.agent_dir > 3)
    raise(Errc::malformed_level, "agent direction out of range");
  if (level.max_steps <= 0) raise(Errc::malformed_level, "max_steps must be positive");
}

// --- dynamics -------------------------------------------------------------------

inline GridState grid_reset(const GridLevel& level) {
  GridState s;
  s.size = level.size;
  s.tiles = level.tiles;
  s.agent = level.agent_start;
  s.dir = level.agent_dir;
  s.max_steps = level.max_steps;
  return s;
}

namespace detail {

inline bool passable(const Tile& t) {
  return t.object == kEmpty || t.object == kFloor || t.object == kGoal ||
         (t.object == kDoor && t.state == kOpen);
}

}  // namespace detail

// MiniGrid semantics; invalid actions are no-ops that still consume a step.
inline GridState grid_step(const GridState& prev, int action) {
  if (prev.terminated) throw std::logic_error("grid_step on terminated state");
  if (action < 0 || action > 5) throw std::logic_error("grid action out of range");
  GridState s = prev;
  const Pos front{s.agent.x + kDirVec[s.dir].x, s.agent.y + kDirVec[s.dir].y};
  const bool front_ok = s.in_bounds(front.x, front.y);

  switch (action) {
    case kTurnLeft:
      s.dir = (s.dir + 3) % 4;
      break;
    case kTurnRight:
      s.dir = (s.dir + 1) % 4;
      break;
    case kMoveForward:
      if (front_ok && detail::passable(s.at(front.x, front.y))) {
        s.agent = front;
        if (s.at(front.x, front.y).object == kGoal) {
          s.terminated = true;
          s.outcome = Outcome::goal;
        }
      }
      break;
    case kPickUp:
      if (front_ok && s.carried_key < 0 && s.at(front.x, front.y).object == kKey) {
        s.carried_key = s.at(front.x, front.y).color;
        s.at(front.x, front.y) = Tile{kEmpty, 0, 0};
      }
      break;
    case kDrop:
      if (front_ok && s.carried_key >= 0 && s.at(front.x, front.y).object == kEmpty) {
        s.at(front.x, front.y) = Tile{kKey, static_cast<std::uint8_t>(s.carried_key), 0};
        s.carried_key = -1;
      }
      break;
    case kToggle:
      if (front_ok && s.at(front.x, front.y).object == kDoor) {
        Tile& door = s.at(front.x, front.y);
        if (door.state == kClosed) {
          door.state = kOpen;
        } else if (door.state == kLocked && s.carried_key == door.color) {
          door.state = kOpen;  // the key stays in hand
        }
      }
      break;
  }

  ++s.steps_elapsed;
  if (!s.terminated && s.steps_elapsed >= s.max_steps) {
    s.terminated = true;
    s.outcome = Outcome::timeout;
  }
  return s;
}

inline GridObservation grid_observe(const GridState& s) {
  GridObservation obs;
  obs.size = s.size;
  obs.values.reserve(static_cast<std::size_t>(s.size) * s.size * 3 + 3);
  for (const auto& t : s.tiles) {
    obs.values.push_back(t.object / 10.0);
    obs.values.push_back(t.color / 5.0);
    obs.values.push_back(t.state / 2.0);
  }
  obs.values.push_back(static_cast<double>(s.agent.x));
  obs.values.push_back(static_cast<double>(s.agent.y));
  obs.values.push_back(static_cast<double>(s.dir));
  return obs;
}

// --- reachability helpers --------------------------------------------------------

namespace detail {

inline void check_coords(const GridLevel& level, Pos p, const char* what) {
  if (!level.in_bounds(p.x, p.y)) raise(Errc::out_of_bounds, what);
}

// Plain 4-connected reachability between coordinates. Walls and lava always
// block; doors per mode; other objects are treated as free so the helpers
// answer coarse structural questions about the layout.
inline bool bfs_doors(const GridLevel& level, Pos from, Pos to, bool locked_block) {
  check_coords(level, from, "from out of bounds");
  check_coords(level, to, "to out of bounds");
  const int n = level.size;
  std::vector<char> seen(static_cast<std::size_t>(n) * n, 0);
  std::deque<Pos> queue{from};
  seen[static_cast<std::size_t>(from.y) * n + from.x] = 1;
  while (!queue.empty()) {
    const Pos p = queue.front();
    queue.pop_front();
    if (p == to) return true;
    for (const auto& d : kDirVec) {
      const int x = p.x + d.x, y = p.y + d.y;
      if (!level.in_bounds(x, y)) continue;
      auto& mark = seen[static_cast<std::size_t>(y) * n + x];
      if (mark) continue;
      const Tile& t = level.at(x, y);
      if (t.object == kWall || t.object == kLava) continue;
      if (t.object == kDoor && locked_block && t.state == kLocked) continue;
      mark = 1;
      queue.push_back({x, y});
    }
  }
  return false;
}

}  // namespace detail

inline bool bfs_block_locked(const GridLevel& level, Pos from, Pos to) {
  return detail::bfs_doors(level, from, to, /*locked_block=*/true);
}

inline bool bfs_ignore_doors(const GridLevel& level, Pos from, Pos to) {
  return detail::bfs_doors(level, from, to, /*locked_block=*/false);
}

// Solvability under full key-door semantics: BFS over the product state
// (position x carried key x door-state vector), with picked keys tracked as a
// taken set. A dropped key is released from the hand and assumed to land on a
// harmless cell; this is the one relaxation relative to exhaustive search over
// raw game states.
inline bool check_solvable(const GridLevel& level) {
  validate_level(level);
  const int n = level.size;

  struct DoorInfo {
    Pos pos;
    int color;
  };
  struct KeyInfo {
    Pos pos;
    int color;
  };
  std::vector<DoorInfo> doors;
  std::vector<KeyInfo> keys;
  std::uint32_t init_locked = 0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const Tile& t = level.at(x, y);
      if (t.object == kDoor) {
        if (t.state == kLocked) init_locked |= 1u << doors.size();
        doors.push_back({{x, y}, t.color});
      } else if (t.object == kKey) {
        keys.push_back({{x, y}, t.color});
      }
    }
  }
  const std::size_t num_doors = doors.size();
  const std::size_t num_keys = keys.size();
  const std::size_t carried_states = num_keys + 1;  // carried key index or none

  const std::size_t cells = static_cast<std::size_t>(n) * n;
  const std::size_t door_masks = 1u << num_doors;
  const std::size_t key_masks = 1u << num_keys;
  const std::size_t total = cells * carried_states * door_masks * key_masks;

  auto encode = [&](int cell, std::size_t carried, std::uint32_t locked, std::uint32_t taken) {
    return ((static_cast<std::size_t>(cell) * carried_states + carried) * door_masks + locked) *
               key_masks +
           taken;
  };

  auto key_at = [&](int x, int y) -> int {
    for (std::size_t k = 0; k < num_keys; ++k)
      if (keys[k].pos.x == x && keys[k].pos.y == y) return static_cast<int>(k);
    return -1;
  };
  auto door_at = [&](int x, int y) -> int {
    for (std::size_t d = 0; d < num_doors; ++d)
      if (doors[d].pos.x == x && doors[d].pos.y == y) return static_cast<int>(d);
    return -1;
  };

  std::vector<char> seen(total, 0);
  struct Node {
    int cell;
    std::uint8_t carried;  // num_keys == none
    std::uint32_t locked;
    std::uint32_t taken;
  };
  std::deque<Node> queue;
  const int start_cell = level.agent_start.y * n + level.agent_start.x;
  const int goal_cell = level.goal.y * n + level.goal.x;
  queue.push_back({start_cell, static_cast<std::uint8_t>(num_keys), init_locked, 0});
  seen[encode(start_cell, num_keys, init_locked, 0)] = 1;

  auto visit = [&](Node node) {
    const std::size_t idx = encode(node.cell, node.carried, node.locked, node.taken);
    if (!seen[idx]) {
      seen[idx] = 1;
      queue.push_back(node);
    }
  };

  while (!queue.empty()) {
    const Node cur = queue.front();
    queue.pop_front();
    if (cur.cell == goal_cell) return true;
    const int cx = cur.cell % n, cy = cur.cell / n;

    for (const auto& d : kDirVec) {
      const int x = cx + d.x, y = cy + d.y;
      if (!level.in_bounds(x, y)) continue;
      const Tile& t = level.at(x, y);
      const int nb = y * n + x;

      bool free_cell = false;
      if (t.object == kEmpty || t.object == kFloor || t.object == kGoal) {
        free_cell = true;
      } else if (t.object == kDoor) {
        const int di = door_at(x, y);
        free_cell = (cur.locked & (1u << di)) == 0;
      } else if (t.object == kKey) {
        const int ki = key_at(x, y);
        free_cell = (cur.taken & (1u << ki)) != 0;  // vacated by pickup
      }
      if (free_cell) visit({nb, cur.carried, cur.locked, cur.taken});

      // Adjacent-cell interactions: turning to face a neighbor is always free.
      if (t.object == kKey) {
        const int ki = key_at(x, y);
        if (cur.carried == num_keys && (cur.taken & (1u << ki)) == 0)
          visit({cur.cell, static_cast<std::uint8_t>(ki), cur.locked,
                 cur.taken | (1u << ki)});
      } else if (t.object == kDoor) {
        const int di = door_at(x, y);
        if ((cur.locked & (1u << di)) != 0 && cur.carried < num_keys &&
            keys[cur.carried].color == doors[di].color)
          visit({cur.cell, cur.carried, cur.locked & ~(1u << di), cur.taken});
      }
    }

    if (cur.carried < carried_states - 1)
      visit({cur.cell, static_cast<std::uint8_t>(num_keys), cur.locked, cur.taken});
  }
  return false;
}

// --- signature ---------------------------------------------------------------------
//
// Hash over the static structure (walls, lava, doors with colors, goal, size).
// Stable across an episode: door states, key positions and the agent do not
// contribute.

namespace detail {

template <typename TileAt>
inline std::uint64_t static_signature(int n, Pos goal, TileAt&& at) {
  std::uint64_t h = fnv1a64("grid");
  h = mix64(h ^ static_cast<std::uint64_t>(n));
  h = mix64(h ^ (static_cast<std::uint64_t>(goal.y) * n + goal.x));
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const Tile& t = at(x, y);
      std::uint64_t code = 0;
      if (t.object == kWall || t.object == kLava) code = t.object;
      else if (t.object == kDoor) code = 100 + t.color;
      if (code != 0) h = mix64(h ^ (static_cast<std::uint64_t>(y) * n + x) ^ (code << 32));
    }
  }
  return h;
}

}  // namespace detail

inline std::uint64_t level_signature(const GridLevel& level) {
  return detail::static_signature(level.size, level.goal,
                                  [&](int x, int y) -> const Tile& { return level.at(x, y); });
}

inline std::uint64_t state_signature(const GridState& s) {
  Pos goal{0, 0};
  for (int y = 0; y < s.size; ++y)
    for (int x = 0; x < s.size; ++x)
      if (s.at(x, y).object == kGoal) goal = {x, y};
  return detail::static_signature(s.size, goal,
                                  [&](int x, int y) -> const Tile& { return s.at(x, y); });
}

// --- serialization -------------------------------------------------------------------

inline nlohmann::json to_json(const GridLevel& level) {
  nlohmann::json tiles = nlohmann::json::array();
  for (const auto& t : level.tiles)
    tiles.push_back({static_cast<int>(t.object), static_cast<int>(t.color),
                     static_cast<int>(t.state)});
  return nlohmann::json{
      {"size", level.size},
      {"max_steps", level.max_steps},
      {"tiles", std::move(tiles)},
      {"agent_start", {level.agent_start.x, level.agent_start.y}},
      {"agent_dir", level.agent_dir},
      {"goal", {level.goal.x, level.goal.y}},
  };
}

inline GridLevel grid_level_from_json(const nlohmann::json& j) {
  GridLevel level;
  try {
    level.size = j.at("size").get<int>();
    level.max_steps = j.at("max_steps").get<int>();
    for (const auto& t : j.at("tiles"))
      level.tiles.push_back(Tile{t.at(0).get<std::uint8_t>(), t.at(1).get<std::uint8_t>(),
                                 t.at(2).get<std::uint8_t>()});
    level.agent_start = {j.at("agent_start").at(0).get<int>(), j.at("agent_start").at(1).get<int>()};
    level.agent_dir = j.at("agent_dir").get<int>();
    level.goal = {j.at("goal").at(0).get<int>(), j.at("goal").at(1).get<int>()};
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, std::string("grid level: ") + e.what());
  }
  for (const auto& t : level.tiles)
    if (t.object == kDoor) ++level.num_doors;
  validate_level(level);
  return level;
}

// --- generation ----------------------------------------------------------------------

struct GridGenParams {
  int size = 7;
  int num_doors = 0;
  int extra_walls = 2;
  int max_attempts = 1000;
};

// Structured placement: perimeter, vertical partition walls with a door on
// each, keys placed in chambers before their door, goal in the final chamber,
// then decorative wall stubs. Retries until check_solvable accepts, up to
// max_attempts.
inline GridLevel generate_grid_level(const GridGenParams& params, std::uint64_t seed) {
  const int n = params.size;
  const int doors = params.num_doors;
  if (n < 5) raise(Errc::malformed_level, "generator needs size >= 5");
  if (doors > kMaxDoors) raise(Errc::malformed_level, "generator supports at most 6 doors");
  if (doors > 0 && n < 2 * doors + 3)
    raise(Errc::malformed_level, "grid too small for requested door count");

  Rng rng(mix64(seed ^ fnv1a64("grid_gen")));
  for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
    GridLevel level;
    level.size = n;
    level.num_doors = doors;
    level.max_steps = 4 * n * n;
    level.tiles.assign(static_cast<std::size_t>(n) * n, Tile{kEmpty, 0, 0});
    for (int i = 0; i < n; ++i) {
      level.at(i, 0) = level.at(i, n - 1) = Tile{kWall, 0, 0};
      level.at(0, i) = level.at(n - 1, i) = Tile{kWall, 0, 0};
    }

    // Partition columns, strictly increasing with one-cell-wide chambers at least.
    std::vector<int> cols;
    {
      int prev = 0;
      for (int d = 0; d < doors; ++d) {
        const int remaining_needed = 2 * (doors - d - 1);
        const int lo = prev + 2;
        const int hi = n - 3 - remaining_needed;
        cols.push_back(rng.range(lo, hi));
        prev = cols.back();
      }
    }
    for (int d = 0; d < doors; ++d) {
      const int cx = cols[d];
      for (int y = 1; y < n - 1; ++y) level.at(cx, y) = Tile{kWall, 0, 0};
      const int dy = rng.range(1, n - 2);
      level.at(cx, dy) = Tile{kDoor, static_cast<std::uint8_t>(d), kLocked};
    }

    auto chamber_of = [&](int x) {
      int c = 0;
      for (int d = 0; d < doors; ++d)
        if (x > cols[d]) c = d + 1;
      return c;
    };
    auto random_free_in_chamber = [&](int chamber) -> Pos {
      for (int tries = 0; tries < 200; ++tries) {
        const int x = rng.range(1, n - 2), y = rng.range(1, n - 2);
        if (level.at(x, y).object == kEmpty && chamber_of(x) == chamber) return {x, y};
      }
      return {-1, -1};
    };

    bool placed = true;
    const Pos start = random_free_in_chamber(0);
    if (start.x < 0) continue;
    level.agent_start = start;
    level.agent_dir = rng.range(0, 3);

    const Pos goal = random_free_in_chamber(doors);
    if (goal.x < 0) continue;
    level.goal = goal;
    level.at(goal.x, goal.y) = Tile{kGoal, 0, 0};

    for (int d = 0; d < doors && placed; ++d) {
      const Pos key = random_free_in_chamber(rng.range(0, d));
      if (key.x < 0 || (key == level.agent_start)) {
        placed = false;
        break;
      }
      level.at(key.x, key.y) = Tile{kKey, static_cast<std::uint8_t>(d), 0};
    }
    if (!placed) continue;

    for (int w = 0; w < params.extra_walls; ++w) {
      const int x = rng.range(1, n - 2), y = rng.range(1, n - 2);
      if (level.at(x, y).object == kEmpty && !(Pos{x, y} == level.agent_start))
        level.at(x, y) = Tile{kWall, 0, 0};
    }

    if (check_solvable(level)) return level;
  }
  raise(Errc::generation_exhausted,
        "no solvable grid level after " + std::to_string(params.max_attempts) + " attempts");
}

}  // namespace coevo::grid
