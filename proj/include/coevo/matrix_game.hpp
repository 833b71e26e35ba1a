#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "coevo/error.hpp"
#include "coevo/lp.hpp"

namespace coevo {

// Empirical zero-sum game matrix: rows are policies, columns are levels,
// entry(i, j) is the estimated success rate of policy i on level j.
class PayoffMatrix {
 public:
  PayoffMatrix() = default;

  PayoffMatrix(std::vector<std::string> row_ids, std::vector<std::string> col_ids,
               std::vector<double> entries)
      : row_ids_(std::move(row_ids)), col_ids_(std::move(col_ids)), entries_(std::move(entries)) {
    if (entries_.size() != row_ids_.size() * col_ids_.size())
      raise(Errc::dimension_mismatch, "entry count does not match ids");
    check_unique(row_ids_, "row");
    check_unique(col_ids_, "column");
    for (auto& e : entries_) e = validate_entry(e);
  }

  std::size_t rows() const { return row_ids_.size(); }
  std::size_t cols() const { return col_ids_.size(); }
  bool empty() const { return rows() == 0 || cols() == 0; }

  double at(std::size_t i, std::size_t j) const { return entries_[i * cols() + j]; }

  const std::vector<std::string>& row_ids() const { return row_ids_; }
  const std::vector<std::string>& col_ids() const { return col_ids_; }
  const std::vector<double>& entries() const { return entries_; }

  // Entries outside [0,1] by more than 1e-9 are a hard error; inside that
  // band they are snapped onto the interval (payoffs are success rates).
  static double validate_entry(double v) {
    if (!std::isfinite(v)) raise(Errc::non_finite_entry, "matrix entry is not finite");
    if (v < -1e-9 || v > 1.0 + 1e-9)
      raise(Errc::out_of_range_entry, "matrix entry " + std::to_string(v) + " outside [0,1]");
    return std::clamp(v, 0.0, 1.0);
  }

 private:
  static void check_unique(const std::vector<std::string>& ids, const char* axis) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = i + 1; j < ids.size(); ++j)
        if (ids[i] == ids[j])
          raise(Errc::duplicate_id, std::string(axis) + " id '" + ids[i] + "' repeated");
  }

  std::vector<std::string> row_ids_;
  std::vector<std::string> col_ids_;
  std::vector<double> entries_;
};

struct MixedStrategy {
  std::vector<double> weights;  // on the probability simplex
};

struct GameSolution {
  MixedStrategy strategy;             // p*, maximizes the worst-case column value
  double value = 0.0;                 // the max-min game value v
  std::vector<double> dual_weights;   // q, the level player's equilibrium mixture
  std::vector<std::size_t> support;   // rows with weight > kSupportEpsilon
};

constexpr double kSupportEpsilon = 1e-7;

inline MixedStrategy uniform_strategy(std::size_t r) {
  if (r == 0) raise(Errc::zero_rows, "uniform strategy needs at least one row");
  MixedStrategy s;
  s.weights.assign(r, 1.0 / static_cast<double>(r));
  return s;
}

inline std::vector<double> mixture_column_values(const PayoffMatrix& m, const MixedStrategy& p) {
  if (p.weights.size() != m.rows())
    raise(Errc::dimension_mismatch, "strategy length != matrix rows");
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double v = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) v += p.weights[i] * m.at(i, j);
    out[j] = v;
  }
  return out;
}

inline PayoffMatrix append_row(const PayoffMatrix& m, const std::string& id,
                               const std::vector<double>& values) {
  if (values.size() != m.cols()) raise(Errc::dimension_mismatch, "row width != matrix cols");
  auto row_ids = m.row_ids();
  for (const auto& r : row_ids)
    if (r == id) raise(Errc::duplicate_id, "row id '" + id + "' already present");
  row_ids.push_back(id);
  auto entries = m.entries();
  for (double v : values) entries.push_back(PayoffMatrix::validate_entry(v));
  return PayoffMatrix(std::move(row_ids), m.col_ids(), std::move(entries));
}

inline PayoffMatrix append_column(const PayoffMatrix& m, const std::string& id,
                                  const std::vector<double>& values) {
  if (values.size() != m.rows()) raise(Errc::dimension_mismatch, "column height != matrix rows");
  auto col_ids = m.col_ids();
  for (const auto& c : col_ids)
    if (c == id) raise(Errc::duplicate_id, "column id '" + id + "' already present");
  col_ids.push_back(id);
  std::vector<double> entries;
  entries.reserve(m.rows() * (m.cols() + 1));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) entries.push_back(m.at(i, j));
    entries.push_back(PayoffMatrix::validate_entry(values[i]));
  }
  return PayoffMatrix(m.row_ids(), std::move(col_ids), std::move(entries));
}

namespace detail {

// Slack used when constraining a point to the optimal face. Well inside the
// 1e-6 certificate tolerance.
constexpr double kFaceSlack = 1e-9;

inline void require_solvable(const PayoffMatrix& m) {
  if (m.empty()) raise(Errc::empty_matrix, "matrix has zero rows or columns");
  for (double e : m.entries())
    if (!std::isfinite(e)) raise(Errc::non_finite_entry, "matrix entry is not finite");
}

// max v  s.t.  M^T p >= v.1, sum p = 1, p >= 0. Variables [p..., v]; entries in
// [0,1] make v >= 0 valid.
inline lp::Solution solve_primal(const PayoffMatrix& m) {
  const std::size_t r = m.rows(), t = m.cols();
  lp::Problem p;
  p.num_vars = r + 1;
  p.objective.assign(r + 1, 0.0);
  p.objective[r] = -1.0;  // maximize v
  for (std::size_t j = 0; j < t; ++j) {
    lp::Constraint c;
    c.coeff.assign(r + 1, 0.0);
    for (std::size_t i = 0; i < r; ++i) c.coeff[i] = m.at(i, j);
    c.coeff[r] = -1.0;
    c.rel = lp::Rel::ge;
    c.rhs = 0.0;
    p.rows.push_back(std::move(c));
  }
  lp::Constraint simplex;
  simplex.coeff.assign(r + 1, 0.0);
  for (std::size_t i = 0; i < r; ++i) simplex.coeff[i] = 1.0;
  simplex.rel = lp::Rel::eq;
  simplex.rhs = 1.0;
  p.rows.push_back(std::move(simplex));
  return lp::solve(p);
}

// min u  s.t.  M q <= u.1, sum q = 1, q >= 0. Variables [q..., u].
inline lp::Solution solve_dual(const PayoffMatrix& m) {
  const std::size_t r = m.rows(), t = m.cols();
  lp::Problem p;
  p.num_vars = t + 1;
  p.objective.assign(t + 1, 0.0);
  p.objective[t] = 1.0;
  for (std::size_t i = 0; i < r; ++i) {
    lp::Constraint c;
    c.coeff.assign(t + 1, 0.0);
    for (std::size_t j = 0; j < t; ++j) c.coeff[j] = m.at(i, j);
    c.coeff[t] = -1.0;
    c.rel = lp::Rel::le;
    c.rhs = 0.0;
    p.rows.push_back(std::move(c));
  }
  lp::Constraint simplex;
  simplex.coeff.assign(t + 1, 0.0);
  for (std::size_t j = 0; j < t; ++j) simplex.coeff[j] = 1.0;
  simplex.rel = lp::Rel::eq;
  simplex.rhs = 1.0;
  p.rows.push_back(std::move(simplex));
  return lp::solve(p);
}

// Optimal-face LP over rows restricted to `allowed`:
//   maximize z  s.t.  sum_{i in allowed} p_i m_ij >= vstar - slack  for all j,
//                     sum p = 1,  p_i >= z for i in `must`,  p >= 0.
// Returns -1 when the restricted face is empty. Variables [p_allowed..., z].
inline double face_max_min_weight(const PayoffMatrix& m, double vstar,
                                  const std::vector<std::size_t>& allowed,
                                  const std::vector<std::size_t>& must) {
  const std::size_t k = allowed.size(), t = m.cols();
  lp::Problem p;
  p.num_vars = k + 1;
  p.objective.assign(k + 1, 0.0);
  p.objective[k] = -1.0;  // maximize z
  for (std::size_t j = 0; j < t; ++j) {
    lp::Constraint c;
    c.coeff.assign(k + 1, 0.0);
    for (std::size_t a = 0; a < k; ++a) c.coeff[a] = m.at(allowed[a], j);
    c.rel = lp::Rel::ge;
    c.rhs = vstar - kFaceSlack;
    p.rows.push_back(std::move(c));
  }
  lp::Constraint simplex;
  simplex.coeff.assign(k + 1, 0.0);
  for (std::size_t a = 0; a < k; ++a) simplex.coeff[a] = 1.0;
  simplex.rel = lp::Rel::eq;
  simplex.rhs = 1.0;
  p.rows.push_back(std::move(simplex));
  for (std::size_t i : must) {
    lp::Constraint c;
    c.coeff.assign(k + 1, 0.0);
    for (std::size_t a = 0; a < k; ++a)
      if (allowed[a] == i) c.coeff[a] = 1.0;
    c.coeff[k] = -1.0;
    c.rel = lp::Rel::ge;
    c.rhs = 0.0;
    p.rows.push_back(std::move(c));
  }
  auto sol = lp::solve(p);
  if (sol.status != lp::Status::optimal) return -1.0;
  return -sol.objective;
}

// Lexicographically smallest weight vector on the face restricted to rows of
// `support`: minimize each coordinate in ascending order, then substitute it
// out of the problem. Substitution keeps the remaining feasible region full
// rank; pinning with inequality slivers is numerically brittle.
inline std::vector<double> face_lex_min_weights(const PayoffMatrix& m, double vstar,
                                                const std::vector<std::size_t>& support) {
  const std::size_t k = support.size(), t = m.cols();
  std::vector<double> fixed;
  fixed.reserve(k);
  double remaining = 1.0;
  for (std::size_t step = 0; step + 1 < k; ++step) {
    const std::size_t nv = k - step;
    lp::Problem p;
    p.num_vars = nv;
    p.objective.assign(nv, 0.0);
    p.objective[0] = 1.0;
    for (std::size_t j = 0; j < t; ++j) {
      lp::Constraint c;
      c.coeff.assign(nv, 0.0);
      for (std::size_t a = 0; a < nv; ++a) c.coeff[a] = m.at(support[step + a], j);
      c.rel = lp::Rel::ge;
      double rhs = vstar - kFaceSlack;
      for (std::size_t f = 0; f < step; ++f) rhs -= fixed[f] * m.at(support[f], j);
      c.rhs = rhs;
      p.rows.push_back(std::move(c));
    }
    lp::Constraint simplex;
    simplex.coeff.assign(nv, 1.0);
    simplex.rel = lp::Rel::eq;
    simplex.rhs = remaining;
    p.rows.push_back(std::move(simplex));
    auto sol = lp::solve(p);
    if (sol.status != lp::Status::optimal)
      throw std::logic_error("nash: face became infeasible during lex minimization");
    const double w = std::max(0.0, sol.x[0]);
    fixed.push_back(w);
    remaining = std::max(0.0, remaining - w);
  }
  fixed.push_back(remaining);
  return fixed;
}

}  // namespace detail

// Solves the zero-sum game by linear programming and canonicalizes among
// multiple equilibria: lexicographically smallest support index set, then
// lexicographically smallest weight vector. A degenerate all-equal matrix
// therefore yields the point mass on row 0.
inline GameSolution solve_nash(const PayoffMatrix& m) {
  detail::require_solvable(m);
  const std::size_t r = m.rows();

  auto primal = detail::solve_primal(m);
  if (primal.status != lp::Status::optimal)
    throw std::logic_error("nash: primal LP did not solve");  // cannot happen for finite matrices
  const double vstar = -primal.objective;

  auto dual = detail::solve_dual(m);
  if (dual.status != lp::Status::optimal) throw std::logic_error("nash: dual LP did not solve");

  // Lexicographically smallest support: grow a prefix, preferring to stop as
  // soon as the prefix alone can carry an optimal solution with every prefix
  // row strictly inside the support.
  std::vector<std::size_t> support;
  std::size_t scan_from = 0;
  while (true) {
    if (!support.empty()) {
      const double z = detail::face_max_min_weight(m, vstar, support, support);
      if (z > kSupportEpsilon) break;  // the prefix is itself an optimal support
    }
    bool extended = false;
    for (std::size_t j = scan_from; j < r; ++j) {
      std::vector<std::size_t> allowed = support;
      std::vector<std::size_t> must = support;
      allowed.push_back(j);
      must.push_back(j);
      for (std::size_t i = j + 1; i < r; ++i) allowed.push_back(i);
      const double z = detail::face_max_min_weight(m, vstar, allowed, must);
      if (z > kSupportEpsilon) {
        support.push_back(j);
        scan_from = j + 1;
        extended = true;
        break;
      }
    }
    if (!extended)
      throw std::logic_error("nash: support construction failed");  // face is never empty
  }

  auto support_weights = detail::face_lex_min_weights(m, vstar, support);

  GameSolution g;
  g.strategy.weights.assign(r, 0.0);
  double sum = 0.0;
  for (std::size_t a = 0; a < support.size(); ++a) {
    const double w = std::max(0.0, support_weights[a]);
    g.strategy.weights[support[a]] = w;
    sum += w;
  }
  for (auto& w : g.strategy.weights) w /= sum;  // exact unit sum up to fp rounding

  g.value = vstar;
  g.dual_weights.assign(m.cols(), 0.0);
  double qsum = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    g.dual_weights[j] = std::max(0.0, dual.x[j]);
    qsum += g.dual_weights[j];
  }
  for (auto& q : g.dual_weights) q /= qsum;

  for (std::size_t i = 0; i < r; ++i)
    if (g.strategy.weights[i] > kSupportEpsilon) g.support.push_back(i);
  return g;
}

// --- CSV interface -----------------------------------------------------------
//
// Header row holds the level (column) ids, the first column the policy (row)
// ids. Entries are written with 17 significant digits so values round-trip
// exactly.

inline void write_matrix_csv(const PayoffMatrix& m, std::ostream& os) {
  os << "policy";
  for (const auto& c : m.col_ids()) os << ',' << c;
  os << '\n';
  os << std::setprecision(17);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    os << m.row_ids()[i];
    for (std::size_t j = 0; j < m.cols(); ++j) os << ',' << m.at(i, j);
    os << '\n';
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline PayoffMatrix read_matrix_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) raise(Errc::parse_error, "empty matrix CSV");
  auto header = detail::split_csv_line(line);
  if (header.size() < 2) raise(Errc::parse_error, "matrix CSV header has no level columns");
  std::vector<std::string> col_ids(header.begin() + 1, header.end());

  std::vector<std::string> row_ids;
  std::vector<double> entries;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != col_ids.size() + 1)
      raise(Errc::parse_error, "row " + std::to_string(line_no) + " has " +
                                   std::to_string(cells.size() - 1) + " entries, expected " +
                                   std::to_string(col_ids.size()));
    row_ids.push_back(cells[0]);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      try {
        std::size_t pos = 0;
        double v = std::stod(cells[j], &pos);
        if (pos != cells[j].size()) throw std::invalid_argument("trailing");
        entries.push_back(v);
      } catch (const std::exception&) {
        raise(Errc::parse_error,
              "row " + std::to_string(line_no) + ": bad numeric cell '" + cells[j] + "'");
      }
    }
  }
  if (row_ids.empty()) raise(Errc::parse_error, "matrix CSV has no data rows");
  return PayoffMatrix(std::move(row_ids), std::move(col_ids), std::move(entries));
}

}  // namespace coevo
