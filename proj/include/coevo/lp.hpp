#pragma once

#include <cstddef>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace coevo::lp {

enum class Rel { le, ge, eq };

struct Constraint {
  std::vector<double> coeff;
  Rel rel = Rel::le;
  double rhs = 0.0;
};

// minimize objective . x  subject to rows, x >= 0
struct Problem {
  std::size_t num_vars = 0;
  std::vector<double> objective;
  std::vector<Constraint> rows;
};

enum class Status { optimal, infeasible, unbounded };

struct Solution {
  Status status = Status::infeasible;
  double objective = 0.0;
  std::vector<double> x;
};

namespace detail {

constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-9;
constexpr double kFeasTol = 1e-7;

// Dense two-phase primal simplex. Bland's rule for both the entering and the
// leaving variable: deterministic and cycle-free. Reduced costs are recomputed
// from the cost vector every iteration, which avoids accumulation drift at the
// price of an extra O(m*n) pass; problems here are tiny.
class Tableau {
 public:
  explicit Tableau(const Problem& p) : n_struct_(p.num_vars) {
    const std::size_t m = p.rows.size();
    a_.assign(m, {});
    rhs_.assign(m, 0.0);
    basis_.assign(m, 0);

    std::size_t n_slack = 0;
    for (const auto& row : p.rows)
      if (row.rel != Rel::eq) ++n_slack;
    n_total_ = n_struct_ + n_slack;
    first_artificial_ = n_total_;

    std::size_t slack_idx = n_struct_;
    std::vector<std::size_t> needs_artificial;
    for (std::size_t i = 0; i < m; ++i) {
      const auto& row = p.rows[i];
      if (row.coeff.size() != n_struct_) throw std::logic_error("lp: row width mismatch");
      a_[i].assign(n_total_, 0.0);
      double sign = row.rhs < 0.0 ? -1.0 : 1.0;
      for (std::size_t j = 0; j < n_struct_; ++j) a_[i][j] = sign * row.coeff[j];
      rhs_[i] = sign * row.rhs;
      Rel rel = row.rel;
      if (sign < 0.0) {
        if (rel == Rel::le) rel = Rel::ge;
        else if (rel == Rel::ge) rel = Rel::le;
      }
      if (rel == Rel::le) {
        a_[i][slack_idx] = 1.0;
        basis_[i] = slack_idx++;
      } else if (rel == Rel::ge) {
        a_[i][slack_idx] = -1.0;
        ++slack_idx;
        needs_artificial.push_back(i);
      } else {
        needs_artificial.push_back(i);
      }
    }

    // Artificial columns appended last; they may never re-enter in phase 2.
    for (std::size_t i : needs_artificial) {
      for (auto& r : a_) r.push_back(0.0);
      a_[i].back() = 1.0;
      basis_[i] = n_total_;
      ++n_total_;
    }

    cost_.assign(n_total_, 0.0);
    for (std::size_t j = first_artificial_; j < n_total_; ++j) cost_[j] = 1.0;
    phase_two_cost_.assign(n_total_, 0.0);
    for (std::size_t j = 0; j < n_struct_; ++j) phase_two_cost_[j] = p.objective[j];
  }

  Solution run() {
    if (!iterate()) return {Status::unbounded, 0.0, {}};
    if (phase_one_value() > kFeasTol) return {Status::infeasible, 0.0, {}};
    drive_out_artificials();

    cost_ = phase_two_cost_;
    phase_one_ = false;
    if (!iterate()) return {Status::unbounded, 0.0, {}};

    Solution s;
    s.status = Status::optimal;
    s.x.assign(n_struct_, 0.0);
    for (std::size_t i = 0; i < basis_.size(); ++i)
      if (basis_[i] < n_struct_) s.x[basis_[i]] = rhs_[i];
    s.objective = 0.0;
    for (std::size_t j = 0; j < n_struct_; ++j) s.objective += phase_two_cost_[j] * s.x[j];
    return s;
  }

 private:
  double phase_one_value() const {
    double v = 0.0;
    for (std::size_t i = 0; i < basis_.size(); ++i)
      if (basis_[i] >= first_artificial_) v += rhs_[i];
    return v;
  }

  // A basic artificial left at value ~0 can re-grow during phase 2 and make the
  // point silently infeasible. Pivot each one onto a structural/slack column;
  // rows with no such column are redundant and stay parked at zero.
  void drive_out_artificials() {
    for (std::size_t i = 0; i < basis_.size(); ++i) {
      if (basis_[i] < first_artificial_) continue;
      std::size_t best = n_total_;
      double best_mag = kPivotTol;
      for (std::size_t j = 0; j < first_artificial_; ++j) {
        const double mag = std::abs(a_[i][j]);
        if (mag > best_mag) {
          best_mag = mag;
          best = j;
        }
      }
      if (best != n_total_) pivot(i, best);
    }
  }

  // Returns false on unboundedness.
  bool iterate() {
    const std::size_t m = basis_.size();
    const std::size_t max_iters = 2000 * (m + n_total_ + 1);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
      // Reduced costs: r_j = c_j - c_B . column_j.
      std::size_t entering = n_total_;
      for (std::size_t j = 0; j < n_total_; ++j) {
        if (!phase_one_ && j >= first_artificial_) continue;
        double r = cost_[j];
        for (std::size_t i = 0; i < m; ++i) {
          const double cb = cost_[basis_[i]];
          if (cb != 0.0) r -= cb * a_[i][j];
        }
        if (r < -kCostTol) {
          entering = j;  // Bland: smallest eligible index
          break;
        }
      }
      if (entering == n_total_) return true;  // optimal for current phase

      std::size_t leaving = m;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        if (a_[i][entering] > kPivotTol) {
          const double ratio = rhs_[i] / a_[i][entering];
          if (ratio < best_ratio - kPivotTol ||
              (ratio < best_ratio + kPivotTol && (leaving == m || basis_[i] < basis_[leaving]))) {
            best_ratio = ratio;
            leaving = i;
          }
        }
      }
      if (leaving == m) return false;

      pivot(leaving, entering);
    }
    throw std::logic_error("lp: iteration limit exceeded");
  }

  void pivot(std::size_t row, std::size_t col) {
    const std::size_t m = basis_.size();
    const double piv = a_[row][col];
    for (std::size_t j = 0; j < n_total_; ++j) a_[row][j] /= piv;
    rhs_[row] /= piv;
    a_[row][col] = 1.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == row) continue;
      const double f = a_[i][col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n_total_; ++j) a_[i][j] -= f * a_[row][j];
      rhs_[i] -= f * rhs_[row];
      a_[i][col] = 0.0;
      if (rhs_[i] < 0.0 && rhs_[i] > -1e-12) rhs_[i] = 0.0;
    }
    basis_[row] = col;
  }

  std::size_t n_struct_;
  std::size_t n_total_ = 0;
  std::size_t first_artificial_ = 0;
  bool phase_one_ = true;
  std::vector<std::vector<double>> a_;
  std::vector<double> rhs_;
  std::vector<std::size_t> basis_;
  std::vector<double> cost_;
  std::vector<double> phase_two_cost_;
};

}  // namespace detail

inline Solution solve(const Problem& p) {
  if (p.objective.size() != p.num_vars) throw std::logic_error("lp: objective width mismatch");
  detail::Tableau t(p);
  return t.run();
}

}  // namespace coevo::lp
