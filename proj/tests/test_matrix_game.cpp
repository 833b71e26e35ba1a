#include "coevo/matrix_game.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "coevo/rng.hpp"

using namespace coevo;

namespace {

PayoffMatrix make(std::vector<std::vector<double>> rows) {
  std::vector<std::string> row_ids, col_ids;
  std::vector<double> entries;
  for (std::size_t i = 0; i < rows.size(); ++i) row_ids.push_back("p" + std::to_string(i));
  for (std::size_t j = 0; j < rows[0].size(); ++j) col_ids.push_back("l" + std::to_string(j));
  for (const auto& r : rows)
    for (double v : r) entries.push_back(v);
  return PayoffMatrix(row_ids, col_ids, entries);
}

double min_col_value(const PayoffMatrix& m, const std::vector<double>& p) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double v = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) v += p[i] * m.at(i, j);
    best = std::min(best, v);
  }
  return best;
}

// Independent oracle: exhaustive enumeration of the strategy simplex at a
// fixed resolution, keeping the best worst-case column value. Supports r <= 3.
double grid_search_value(const PayoffMatrix& m, int steps) {
  const std::size_t r = m.rows();
  double best = -1.0;
  std::vector<double> p(r, 0.0);
  if (r == 1) {
    p[0] = 1.0;
    return min_col_value(m, p);
  }
  if (r == 2) {
    for (int k = 0; k <= steps; ++k) {
      p[0] = static_cast<double>(k) / steps;
      p[1] = 1.0 - p[0];
      best = std::max(best, min_col_value(m, p));
    }
    return best;
  }
  REQUIRE(r == 3);
  for (int k1 = 0; k1 <= steps; ++k1) {
    for (int k2 = 0; k2 <= steps - k1; ++k2) {
      p[0] = static_cast<double>(k1) / steps;
      p[1] = static_cast<double>(k2) / steps;
      p[2] = 1.0 - p[0] - p[1];
      best = std::max(best, min_col_value(m, p));
    }
  }
  return best;
}

PayoffMatrix random_matrix(Rng& rng, std::size_t max_dim) {
  const std::size_t r = 1 + rng.below(max_dim);
  const std::size_t t = 1 + rng.below(max_dim);
  std::vector<std::vector<double>> rows(r, std::vector<double>(t));
  for (auto& row : rows)
    for (auto& v : row) v = rng.next_double();
  return make(rows);
}

void check_certificates(const PayoffMatrix& m, const GameSolution& g) {
  double wsum = 0.0;
  for (double w : g.strategy.weights) {
    REQUIRE(w >= 0.0);
    wsum += w;
  }
  REQUIRE(std::abs(wsum - 1.0) < 1e-9);

  const auto cols = mixture_column_values(m, g.strategy);
  double min_col = std::numeric_limits<double>::infinity();
  for (double v : cols) {
    REQUIRE(v >= g.value - 1e-6);
    min_col = std::min(min_col, v);
  }
  REQUIRE(min_col <= g.value + 1e-6);

  double qsum = 0.0;
  for (double q : g.dual_weights) {
    REQUIRE(q >= 0.0);
    qsum += q;
  }
  REQUIRE(std::abs(qsum - 1.0) < 1e-9);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double v = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) v += g.dual_weights[j] * m.at(i, j);
    REQUIRE(v <= g.value + 1e-6);
  }
}

}  // namespace

TEST_CASE("solve_nash on pinned examples") {
  SECTION("single strategy") {
    auto g = solve_nash(make({{0.7}}));
    REQUIRE(g.strategy.weights == std::vector<double>{1.0});
    REQUIRE(g.value == Catch::Approx(0.7).margin(1e-9));
  }
  SECTION("dominant row") {
    auto g = solve_nash(make({{1.0, 1.0}, {0.5, 0.2}}));
    REQUIRE(g.strategy.weights[0] == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(g.strategy.weights[1] == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(g.value == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(g.support == std::vector<std::size_t>{0});
  }
  SECTION("matching pennies diagonal") {
    auto m = make({{1.0, 0.0}, {0.0, 1.0}});
    auto g = solve_nash(m);
    // 2x2 closed-form indifference point, cross-checked by enumeration below.
    REQUIRE(g.strategy.weights[0] == Catch::Approx(0.5).margin(1e-6));
    REQUIRE(g.strategy.weights[1] == Catch::Approx(0.5).margin(1e-6));
    REQUIRE(g.value == Catch::Approx(0.5).margin(1e-6));
    REQUIRE(std::abs(g.value - grid_search_value(m, 10000)) < 2e-4);
  }
}

TEST_CASE("degenerate all-equal matrix canonicalizes to row 0") {
  auto g = solve_nash(make({{0.4, 0.4}, {0.4, 0.4}, {0.4, 0.4}}));
  REQUIRE(g.strategy.weights[0] == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(g.support == std::vector<std::size_t>{0});
  REQUIRE(g.value == Catch::Approx(0.4).margin(1e-9));
}

TEST_CASE("solve_nash input validation") {
  REQUIRE_THROWS_MATCHES(solve_nash(PayoffMatrix()), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::empty_matrix; }));
  REQUIRE_THROWS_MATCHES(
      make({{0.5, std::numeric_limits<double>::quiet_NaN()}}), Error,
      Catch::Matchers::Predicate<Error>(
          [](const Error& e) { return e.code() == Errc::non_finite_entry; }));
}

TEST_CASE("mixture_column_values") {
  auto m = make({{1.0, 0.0}, {0.0, 1.0}});
  SECTION("point mass selects row") {
    auto v = mixture_column_values(m, MixedStrategy{{1.0, 0.0}});
    REQUIRE(v == std::vector<double>{1.0, 0.0});
  }
  SECTION("symmetry") {
    auto v = mixture_column_values(m, MixedStrategy{{0.5, 0.5}});
    REQUIRE(v[0] == Catch::Approx(0.5));
    REQUIRE(v[1] == Catch::Approx(0.5));
  }
  SECTION("hand dot product, recomputed independently") {
    auto m2 = make({{0.2, 0.8}, {0.6, 0.4}});
    MixedStrategy p{{0.25, 0.75}};
    auto v = mixture_column_values(m2, p);
    // scalar recomputation, term by term
    const double c0 = 0.25 * 0.2 + 0.75 * 0.6;
    const double c1 = 0.25 * 0.8 + 0.75 * 0.4;
    REQUIRE(v[0] == Catch::Approx(c0).margin(1e-15));
    REQUIRE(v[1] == Catch::Approx(c1).margin(1e-15));
    REQUIRE(c0 == Catch::Approx(0.5));
    REQUIRE(c1 == Catch::Approx(0.5));
  }
  SECTION("dimension mismatch") {
    REQUIRE_THROWS_MATCHES(mixture_column_values(m, MixedStrategy{{1.0}}), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == Errc::dimension_mismatch;
                           }));
  }
}

TEST_CASE("uniform_strategy") {
  REQUIRE(uniform_strategy(1).weights == std::vector<double>{1.0});
  REQUIRE(uniform_strategy(4).weights == std::vector<double>{0.25, 0.25, 0.25, 0.25});
  auto u3 = uniform_strategy(3);
  double sum = u3.weights[0] + u3.weights[1] + u3.weights[2];
  REQUIRE(std::abs(sum - 1.0) < 1e-12);
  REQUIRE_THROWS_MATCHES(uniform_strategy(0), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::zero_rows; }));
}

TEST_CASE("append_row and append_column") {
  auto m = make({{0.5}});
  auto m2 = append_row(m, "p1", {0.9});
  REQUIRE(m2.rows() == 2);
  REQUIRE(m2.at(0, 0) == 0.5);
  REQUIRE(m2.at(1, 0) == 0.9);

  auto m3 = append_column(m2, "l1", {0.1, 0.2});
  REQUIRE(m3.cols() == 2);
  REQUIRE(m3.at(0, 0) == 0.5);
  REQUIRE(m3.at(0, 1) == 0.1);
  REQUIRE(m3.at(1, 0) == 0.9);
  REQUIRE(m3.at(1, 1) == 0.2);

  REQUIRE_THROWS_MATCHES(append_row(m, "p1", {1.3}), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::out_of_range_entry; }));
  REQUIRE_THROWS_MATCHES(append_row(m, "p0", {0.1}), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::duplicate_id; }));
  REQUIRE_THROWS_MATCHES(append_column(m3, "l2", {0.1}), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::dimension_mismatch; }));
}

TEST_CASE("nash value matches exhaustive grid search up to 3x3") {
  Rng rng(20240811);
  for (int trial = 0; trial < 60; ++trial) {
    auto m = random_matrix(rng, 3);
    auto g = solve_nash(m);
    const double oracle = grid_search_value(m, 1000);
    INFO("trial " << trial << " dims " << m.rows() << "x" << m.cols());
    REQUIRE(std::abs(g.value - oracle) < 2e-3);
  }
}

TEST_CASE("certificates and dominance on random matrices") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = random_matrix(rng, 8);
    auto g = solve_nash(m);
    check_certificates(m, g);

    // Nash beats the uniform mixture and every pure row in worst case.
    const double uniform_min = min_col_value(m, uniform_strategy(m.rows()).weights);
    REQUIRE(g.value >= uniform_min - 1e-9);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      std::vector<double> pure(m.rows(), 0.0);
      pure[i] = 1.0;
      REQUIRE(g.value >= min_col_value(m, pure) - 1e-9);
    }
  }
}

TEST_CASE("appending rows raises and columns lower the value") {
  Rng rng(1234);
  for (int trial = 0; trial < 60; ++trial) {
    auto m = random_matrix(rng, 5);
    double value = solve_nash(m).value;
    for (int step = 0; step < 4; ++step) {
      if (rng.chance(0.5)) {
        std::vector<double> vals(m.cols());
        for (auto& v : vals) v = rng.next_double();
        m = append_row(m, "pr" + std::to_string(trial) + "_" + std::to_string(step), vals);
        const double next = solve_nash(m).value;
        REQUIRE(next >= value - 1e-9);
        value = next;
      } else {
        std::vector<double> vals(m.rows());
        for (auto& v : vals) v = rng.next_double();
        m = append_column(m, "lc" + std::to_string(trial) + "_" + std::to_string(step), vals);
        const double next = solve_nash(m).value;
        REQUIRE(next <= value + 1e-9);
        value = next;
      }
    }
  }
}

TEST_CASE("solve_nash is bitwise deterministic") {
  Rng rng(5150);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_matrix(rng, 6);
    auto a = solve_nash(m);
    auto b = solve_nash(m);
    REQUIRE(a.strategy.weights.size() == b.strategy.weights.size());
    REQUIRE(std::memcmp(a.strategy.weights.data(), b.strategy.weights.data(),
                        a.strategy.weights.size() * sizeof(double)) == 0);
    REQUIRE(std::memcmp(&a.value, &b.value, sizeof(double)) == 0);
  }
}

TEST_CASE("matrix CSV round-trips exactly") {
  Rng rng(99);
  auto m = random_matrix(rng, 6);
  std::stringstream ss;
  write_matrix_csv(m, ss);
  auto back = read_matrix_csv(ss);
  REQUIRE(back.row_ids() == m.row_ids());
  REQUIRE(back.col_ids() == m.col_ids());
  REQUIRE(back.entries() == m.entries());

  std::stringstream ragged("policy,l0,l1\np0,0.5\n");
  REQUIRE_THROWS_MATCHES(read_matrix_csv(ragged), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.code() == Errc::parse_error &&
                                  std::string(e.what()).find("row 2") != std::string::npos;
                         }));
}
