#include "coevo/gridworld.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <map>
#include <unordered_set>

#include "coevo/rng.hpp"

using namespace coevo;
using namespace coevo::grid;

namespace {

// Build a level from ASCII art. Legend: '#' wall, '.' empty, 'G' goal,
// 'A' agent (facing east), keys 'a'..'c','e','f' of colors 0..5 skipping 'd',
// locked doors 'D'..'I' of colors 0..5, 'd' closed colorless door, 'L' lava.
GridLevel level_from_art(const std::vector<std::string>& art, int max_steps = 200) {
  GridLevel level;
  level.size = static_cast<int>(art.size());
  level.tiles.assign(static_cast<std::size_t>(level.size) * level.size, Tile{kEmpty, 0, 0});
  for (int y = 0; y < level.size; ++y) {
    REQUIRE(static_cast<int>(art[y].size()) == level.size);
    for (int x = 0; x < level.size; ++x) {
      const char c = art[y][x];
      Tile& t = level.at(x, y);
      if (c == '#') t = Tile{kWall, 0, 0};
      else if (c == 'L') t = Tile{kLava, 0, 0};
      else if (c == 'G') {
        t = Tile{kGoal, 0, 0};
        level.goal = {x, y};
      } else if (c == 'A') {
        level.agent_start = {x, y};
        level.agent_dir = 0;
      } else if (c >= 'a' && c <= 'f' && c != 'd') {
        t = Tile{kKey, static_cast<std::uint8_t>(c - 'a'), 0};
      } else if (c >= 'D' && c <= 'I') {
        t = Tile{kDoor, static_cast<std::uint8_t>(c - 'D'), kLocked};
        ++level.num_doors;
      } else if (c == 'd') {
        t = Tile{kDoor, 0, kClosed};
        ++level.num_doors;
      }
    }
  }
  level.max_steps = max_steps;
  return level;
}

// Exhaustive oracle: BFS over raw game states reached through grid_step with
// every action, deduplicated on the full snapshot. Independent of
// check_solvable's product-state abstraction.
bool exhaustive_solvable(const GridLevel& level, std::size_t node_cap = 4'000'000) {
  auto encode = [](const GridState& s) {
    std::string key;
    key.reserve(s.tiles.size() * 3 + 8);
    for (const auto& t : s.tiles) {
      key.push_back(static_cast<char>(t.object));
      key.push_back(static_cast<char>(t.color));
      key.push_back(static_cast<char>(t.state));
    }
    key.push_back(static_cast<char>(s.agent.x));
    key.push_back(static_cast<char>(s.agent.y));
    key.push_back(static_cast<char>(s.dir));
    key.push_back(static_cast<char>(s.carried_key + 1));
    return key;
  };

  GridLevel unbounded = level;
  unbounded.max_steps = 1 << 29;  // solvability is step-horizon-free
  std::unordered_set<std::string> seen;
  std::deque<GridState> queue{grid_reset(unbounded)};
  seen.insert(encode(queue.front()));
  while (!queue.empty()) {
    GridState cur = std::move(queue.front());
    queue.pop_front();
    for (int action = 0; action <= 5; ++action) {
      GridState next = grid_step(cur, action);
      if (next.outcome == Outcome::goal) return true;
      if (next.terminated) continue;
      next.steps_elapsed = 0;  // step counter is irrelevant to reachability
      auto key = encode(next);
      if (seen.insert(std::move(key)).second) {
        if (seen.size() > node_cap) throw std::runtime_error("oracle node cap exceeded");
        queue.push_back(std::move(next));
      }
    }
  }
  return false;
}

std::map<int, int> key_census(const GridState& s) {
  std::map<int, int> counts;
  for (const auto& t : s.tiles)
    if (t.object == kKey) ++counts[t.color];
  if (s.carried_key >= 0) ++counts[s.carried_key];
  return counts;
}

}  // namespace

TEST_CASE("grid_step movement semantics") {
  auto level = level_from_art({
      "#####",
      "#A..#",
      "#...#",
      "#..G#",
      "#####",
  });
  auto s0 = grid_reset(level);

  SECTION("forward into free cell advances one tile") {
    auto s1 = grid_step(s0, kMoveForward);
    REQUIRE(s1.agent == Pos{2, 1});
    REQUIRE(s1.steps_elapsed == 1);
  }
  SECTION("forward into a wall is a no-op that consumes a step") {
    auto s1 = grid_step(grid_step(s0, kTurnLeft), kMoveForward);  // facing north wall
    REQUIRE(s1.agent == Pos{1, 1});
    REQUIRE(s1.steps_elapsed == 2);
  }
  SECTION("turns rotate in place") {
    REQUIRE(grid_step(s0, kTurnRight).dir == 1);
    REQUIRE(grid_step(s0, kTurnLeft).dir == 3);
    REQUIRE(grid_step(s0, kTurnLeft).agent == s0.agent);
  }
  SECTION("goal entry terminates with outcome goal") {
    auto s = grid_step(s0, kMoveForward);
    s = grid_step(s, kMoveForward);  // at (3,1)
    s = grid_step(s, kTurnRight);    // facing south
    s = grid_step(s, kMoveForward);  // (3,2)
    s = grid_step(s, kMoveForward);  // (3,3) = goal
    REQUIRE(s.terminated);
    REQUIRE(s.outcome == Outcome::goal);
  }
  SECTION("timeout at max_steps") {
    auto level2 = level;
    level2.max_steps = 3;
    auto s = grid_reset(level2);
    s = grid_step(s, kTurnLeft);
    s = grid_step(s, kTurnLeft);
    s = grid_step(s, kTurnLeft);
    REQUIRE(s.terminated);
    REQUIRE(s.outcome == Outcome::timeout);
  }
}

TEST_CASE("grid_step key and door semantics") {
  // Agent faces east at the red key 'a' (color 0); locked red door 'D'.
  auto level = level_from_art({
      "#####",
      "#AD.#",
      "#.a.#",
      "#..G#",
      "#####",
  });
  auto t0 = grid_reset(level);

  SECTION("toggle on a locked door without the key is a no-op") {
    auto t1 = grid_step(t0, kToggle);  // facing the door at (2,1)
    REQUIRE(t1.at(2, 1).state == kLocked);
  }
  SECTION("unlock with the matching key keeps the key in hand") {
    auto t = grid_step(t0, kTurnRight);  // facing south
    t = grid_step(t, kMoveForward);      // (1,2)
    t = grid_step(t, kTurnLeft);         // facing east toward key at (2,2)
    t = grid_step(t, kPickUp);
    REQUIRE(t.carried_key == 0);
    REQUIRE(t.at(2, 2).object == kEmpty);
    t = grid_step(t, kTurnLeft);     // facing north
    t = grid_step(t, kMoveForward);  // (1,1)
    t = grid_step(t, kTurnRight);    // facing east, door ahead
    t = grid_step(t, kToggle);
    REQUIRE(t.at(2, 1).state == kOpen);
    REQUIRE(t.carried_key == 0);
  }
  SECTION("pickup with full hands is a no-op, drop needs an empty cell") {
    auto t = grid_step(t0, kTurnRight);
    t = grid_step(t, kMoveForward);
    t = grid_step(t, kTurnLeft);
    t = grid_step(t, kPickUp);  // carrying red
    auto before = t;
    t = grid_step(t, kPickUp);  // nothing in front now: no-op
    REQUIRE(t.carried_key == 0);
    REQUIRE(t.steps_elapsed == before.steps_elapsed + 1);
    t = grid_step(t, kDrop);  // drop into the vacated cell
    REQUIRE(t.carried_key == -1);
    REQUIRE(t.at(2, 2).object == kKey);
  }
  SECTION("closed doors open without a key") {
    auto closed = level_from_art({
        "#####",
        "#Ad.#",
        "#...#",
        "#..G#",
        "#####",
    });
    auto s = grid_reset(closed);
    auto s1 = grid_step(s, kToggle);
    REQUIRE(s1.at(2, 1).state == kOpen);
    auto s2 = grid_step(s1, kToggle);  // toggling an open door changes nothing
    REQUIRE(s2.at(2, 1).state == kOpen);
  }
}

TEST_CASE("key conservation holds along random trajectories") {
  Rng rng(2025);
  auto level = level_from_art({
      "#######",
      "#Aa..G#",
      "#.b...#",
      "#..D..#",
      "#...E.#",
      "#.....#",
      "#######",
  });
  const auto initial = key_census(grid_reset(level));
  for (int episode = 0; episode < 20; ++episode) {
    auto s = grid_reset(level);
    while (!s.terminated) {
      s = grid_step(s, static_cast<int>(rng.below(6)));
      REQUIRE(key_census(s) == initial);
      const auto& under = s.at(s.agent.x, s.agent.y);
      REQUIRE(under.object != kWall);
      REQUIRE(under.object != kLava);
    }
  }
}

TEST_CASE("grid dynamics are deterministic") {
  auto level = level_from_art({
      "#####",
      "#A..#",
      "#.a.#",
      "#..G#",
      "#####",
  });
  Rng rng(7);
  auto a = grid_reset(level);
  auto b = grid_reset(level);
  for (int i = 0; i < 50 && !a.terminated; ++i) {
    const int action = static_cast<int>(rng.below(6));
    a = grid_step(a, action);
    b = grid_step(b, action);
    REQUIRE(a.tiles == b.tiles);
    REQUIRE(a.agent == b.agent);
    REQUIRE(a.carried_key == b.carried_key);
  }
}

TEST_CASE("bfs helpers") {
  SECTION("empty room corners reachable both ways") {
    auto level = level_from_art({
        "#####",
        "#A..#",
        "#...#",
        "#..G#",
        "#####",
    });
    REQUIRE(bfs_block_locked(level, {1, 1}, {3, 3}));
    REQUIRE(bfs_ignore_doors(level, {1, 1}, {3, 3}));
  }
  SECTION("locked door on the sole corridor splits the two modes") {
    auto level = level_from_art({
        "#####",
        "#ADG#",
        "#a###",
        "#.###",
        "#####",
    });
    REQUIRE_FALSE(bfs_block_locked(level, {1, 1}, {3, 1}));
    REQUIRE(bfs_ignore_doors(level, {1, 1}, {3, 1}));
  }
  SECTION("wall-sealed goal is unreachable in both modes") {
    auto level = level_from_art({
        "######",
        "#A..##",
        "#..###",
        "###G##",
        "##L###",
        "######",
    });
    REQUIRE_FALSE(bfs_block_locked(level, {1, 1}, {3, 3}));
    REQUIRE_FALSE(bfs_ignore_doors(level, {1, 1}, {3, 3}));
    REQUIRE_THROWS_MATCHES(bfs_block_locked(level, {-1, 0}, {3, 3}), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == Errc::out_of_bounds;
                           }));
  }
}

TEST_CASE("check_solvable pinned cases") {
  SECTION("empty interior") {
    auto level = level_from_art({
        "#####",
        "#A..#",
        "#...#",
        "#..G#",
        "#####",
    });
    REQUIRE(check_solvable(level));
  }
  SECTION("goal fully enclosed") {
    auto level = level_from_art({
        "######",
        "#A..##",
        "#..###",
        "###G##",
        "##L###",
        "######",
    });
    REQUIRE_FALSE(check_solvable(level));
    REQUIRE_FALSE(exhaustive_solvable(level));
  }
  SECTION("locked blue door on the only corridor, key on the start side") {
    // 'E' is a locked door of color 1, 'b' the matching key.
    auto corridor = level_from_art({
        "#######",
        "#Ab.EG#",
        "#######",
        "#######",
        "#######",
        "#######",
        "#######",
    });
    REQUIRE(check_solvable(corridor));
    REQUIRE(exhaustive_solvable(corridor));
  }
}

TEST_CASE("check_solvable agrees with exhaustive search on random levels") {
  Rng rng(314159);
  int solvable_count = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(2));  // 5..6
    GridLevel level;
    level.size = n;
    level.max_steps = 200;
    level.tiles.assign(static_cast<std::size_t>(n) * n, Tile{kEmpty, 0, 0});
    for (int i = 0; i < n; ++i) {
      level.at(i, 0) = level.at(i, n - 1) = Tile{kWall, 0, 0};
      level.at(0, i) = level.at(n - 1, i) = Tile{kWall, 0, 0};
    }
    std::vector<Pos> interior;
    for (int y = 1; y < n - 1; ++y)
      for (int x = 1; x < n - 1; ++x) interior.push_back({x, y});
    rng.shuffle(interior);
    std::size_t next = 0;
    auto take = [&]() { return interior[next++]; };

    level.agent_start = take();
    level.agent_dir = static_cast<int>(rng.below(4));
    level.goal = take();
    level.at(level.goal.x, level.goal.y) = Tile{kGoal, 0, 0};

    const int doors = static_cast<int>(rng.below(3));  // 0..2
    for (int d = 0; d < doors; ++d) {
      const Pos dp = take();
      level.at(dp.x, dp.y) = Tile{kDoor, static_cast<std::uint8_t>(d), kLocked};
      const Pos kp = take();
      level.at(kp.x, kp.y) = Tile{kKey, static_cast<std::uint8_t>(d), 0};
      ++level.num_doors;
    }
    const int walls = static_cast<int>(rng.below(6));
    for (int w = 0; w < walls && next < interior.size(); ++w) {
      const Pos wp = take();
      level.at(wp.x, wp.y) = Tile{kWall, 0, 0};
    }

    const bool fast = check_solvable(level);
    const bool oracle = exhaustive_solvable(level);
    INFO("trial " << trial);
    REQUIRE(fast == oracle);
    solvable_count += fast ? 1 : 0;
  }
  // the suite should exercise both outcomes
  REQUIRE(solvable_count > 5);
  REQUIRE(solvable_count < 55);
}

TEST_CASE("grid_observe") {
  auto level = level_from_art({
      "######",
      "#A...#",
      "#....#",
      "#....#",
      "#...G#",
      "######",
  });
  auto obs = grid_observe(grid_reset(level));
  SECTION("length is n*n*3 + 3") { REQUIRE(obs.values.size() == 6 * 6 * 3 + 3); }
  SECTION("wall tile object channel normalizes to 0.2") {
    REQUIRE(obs.values[0] == Catch::Approx(2.0 / 10.0));  // (0,0) is a wall
  }
  SECTION("goal tile object channel normalizes to 0.8") {
    const std::size_t goal_idx = (static_cast<std::size_t>(4) * 6 + 4) * 3;
    REQUIRE(obs.values[goal_idx] == Catch::Approx(8.0 / 10.0));
  }
  SECTION("agent scalars appended") {
    REQUIRE(obs.values[obs.values.size() - 3] == 1.0);
    REQUIRE(obs.values[obs.values.size() - 2] == 1.0);
    REQUIRE(obs.values[obs.values.size() - 1] == 0.0);
  }
}

TEST_CASE("level serialization round-trips") {
  auto level = generate_grid_level({.size = 9, .num_doors = 2, .extra_walls = 3}, 42);
  auto j = to_json(level);
  auto back = grid_level_from_json(j);
  REQUIRE(back.size == level.size);
  REQUIRE(back.tiles == level.tiles);
  REQUIRE(back.agent_start == level.agent_start);
  REQUIRE(back.agent_dir == level.agent_dir);
  REQUIRE(back.goal == level.goal);
  REQUIRE(back.max_steps == level.max_steps);
  REQUIRE(back.num_doors == level.num_doors);
}

TEST_CASE("generator produces solvable levels with requested structure") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    auto level = generate_grid_level({.size = 9, .num_doors = 2, .extra_walls = 2}, seed);
    REQUIRE(level.size == 9);
    REQUIRE(level.num_doors == 2);
    REQUIRE(check_solvable(level));
    int doors = 0, keys = 0;
    for (const auto& t : level.tiles) {
      doors += t.object == kDoor ? 1 : 0;
      keys += t.object == kKey ? 1 : 0;
    }
    REQUIRE(doors == 2);
    REQUIRE(keys == 2);
  }
  auto a = generate_grid_level({.size = 7, .num_doors = 1}, 5);
  auto b = generate_grid_level({.size = 7, .num_doors = 1}, 5);
  REQUIRE(a.tiles == b.tiles);
  REQUIRE(a.agent_start == b.agent_start);
}

TEST_CASE("level signature is stable within an episode and distinguishes levels") {
  auto a = generate_grid_level({.size = 9, .num_doors = 1}, 1);
  auto b = generate_grid_level({.size = 9, .num_doors = 1}, 2);
  REQUIRE(level_signature(a) != level_signature(b));

  auto s = grid_reset(a);
  const auto sig = state_signature(s);
  REQUIRE(sig == level_signature(a));
  Rng rng(3);
  for (int i = 0; i < 60 && !s.terminated; ++i) {
    s = grid_step(s, static_cast<int>(rng.below(6)));
    if (!s.terminated) REQUIRE(state_signature(s) == sig);
  }
}

TEST_CASE("malformed levels are rejected") {
  auto level = level_from_art({
      "#####",
      "#A..#",
      "#...#",
      "#..G#",
      "#####",
  });
  SECTION("broken perimeter") {
    auto bad = level;
    bad.at(0, 2) = Tile{kEmpty, 0, 0};
    REQUIRE_THROWS_MATCHES(validate_level(bad), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == Errc::malformed_level;
                           }));
  }
  SECTION("locked door without key") {
    auto bad = level;
    bad.at(2, 2) = Tile{kDoor, 3, kLocked};
    REQUIRE_THROWS_AS(validate_level(bad), Error);
  }
  SECTION("two goals") {
    auto bad = level;
    bad.at(1, 3) = Tile{kGoal, 0, 0};
    REQUIRE_THROWS_AS(validate_level(bad), Error);
  }
}
