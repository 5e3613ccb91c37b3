#pragma once

#include <cstddef>
#include <limits>
#include <vector>

namespace heparin::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { maximize, minimize };
enum class Status { optimal, infeasible, unbounded };

const char* to_string(Status s);

/// Dense equality-form LP:  opt c'x  s.t.  A x = rhs,  lower <= x <= upper.
/// Bounds may be infinite.
class Problem {
 public:
  Problem() = default;
  Problem(std::size_t rows, std::size_t cols, Sense sense = Sense::maximize);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& a(std::size_t r, std::size_t c) { return matrix_[r * cols_ + c]; }
  double a(std::size_t r, std::size_t c) const { return matrix_[r * cols_ + c]; }

  /// Appends a column and returns its index. Existing rows get coefficient 0.
  std::size_t add_column(double cost, double lower, double upper);
  /// Appends an all-zero row with the given right-hand side.
  std::size_t add_row(double rhs);

  Sense sense = Sense::maximize;
  std::vector<double> cost;
  std::vector<double> rhs;
  std::vector<double> lower;
  std::vector<double> upper;

  /// Throws InvalidInput if vector sizes disagree or some lower > upper.
  void check() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> matrix_;
};

struct Tolerances {
  double feasibility = 1e-8;
  double dual_gap = 1e-7;
  double pivot = 1e-10;
  double optimality = 1e-9;
  std::size_t max_iterations = 200000;
};

struct Solution {
  Status status = Status::infeasible;
  std::vector<double> x;
  double objective = 0.0;
  /// d objective / d rhs for each row, in the problem's own sense.
  std::vector<double> duals;
  /// cost - A' duals.
  std::vector<double> reduced_costs;
  /// On infeasible: f with f'rhs > max_{l<=x<=u} f'A x.
  std::vector<double> farkas;
  /// On unbounded: a direction d with A d = 0 that keeps the bounds and
  /// strictly improves the objective.
  std::vector<double> ray;
  std::size_t iterations = 0;
};

/// Bounded-variable two-phase primal simplex on a dense tableau. Pricing is
/// Dantzig's rule, switching to Bland's rule while pivots are degenerate, so
/// the pivot sequence is deterministic and cannot cycle.
Solution solve(const Problem& problem, const Tolerances& tol = {});

/// Max |A x - rhs| and the worst bound violation.
double primal_residual(const Problem& problem, const std::vector<double>& x);

/// rhs'y + sum_j of the bound term d_j * (u_j or l_j) picked by the sign of the
/// reduced cost d_j and the objective sense.
double dual_objective(const Problem& problem, const std::vector<double>& duals);

/// f'rhs - max_{l<=x<=u} f'A x; strictly positive for a valid certificate.
double farkas_margin(const Problem& problem, const std::vector<double>& f);

}  // namespace heparin::lp
