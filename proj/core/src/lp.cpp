#include "heparin/lp.hpp"

#include <algorithm>
#include <cmath>

#include "heparin/errors.hpp"

namespace heparin::lp {

const char* to_string(Status s) {
  switch (s) {
    case Status::optimal:
      return "optimal";
    case Status::infeasible:
      return "infeasible";
    case Status::unbounded:
      return "unbounded";
  }
  return "unknown";
}

Problem::Problem(std::size_t rows, std::size_t cols, Sense s)
    : sense(s),
      cost(cols, 0.0),
      rhs(rows, 0.0),
      lower(cols, 0.0),
      upper(cols, kInf),
      rows_(rows),
      cols_(cols),
      matrix_(rows * cols, 0.0) {}

std::size_t Problem::add_column(double c, double lo, double hi) {
  std::vector<double> next(rows_ * (cols_ + 1), 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    std::copy_n(matrix_.begin() + r * cols_, cols_, next.begin() + r * (cols_ + 1));
  }
  matrix_ = std::move(next);
  cost.push_back(c);
  lower.push_back(lo);
  upper.push_back(hi);
  return cols_++;
}

std::size_t Problem::add_row(double b) {
  matrix_.resize((rows_ + 1) * cols_, 0.0);
  rhs.push_back(b);
  return rows_++;
}

void Problem::check() const {
  if (cost.size() != cols_ || lower.size() != cols_ || upper.size() != cols_ ||
      rhs.size() != rows_ || matrix_.size() != rows_ * cols_) {
    throw InvalidInput("LP dimension mismatch");
  }
  for (std::size_t j = 0; j < cols_; ++j) {
    if (std::isnan(lower[j]) || std::isnan(upper[j]) || lower[j] > upper[j]) {
      throw InvalidInput("LP bounds must satisfy lower <= upper");
    }
    if (!std::isfinite(cost[j])) throw InvalidInput("LP cost must be finite");
  }
  for (double v : matrix_) {
    if (!std::isfinite(v)) throw InvalidInput("LP matrix must be finite");
  }
  for (double v : rhs) {
    if (!std::isfinite(v)) throw InvalidInput("LP right-hand side must be finite");
  }
}

namespace {

// Internal column x' in [0, ub]; original x[orig] += sign * x'.
struct Column {
  std::size_t orig;
  double sign;
  double ub;
};

class Tableau {
 public:
  Tableau(const Problem& p, const Tolerances& tol) : p_(p), tol_(tol) { build(); }

  Solution run();

 private:
  void build();
  // Returns false when the pivot limit is hit.
  enum class Outcome { optimal, unbounded };
  Outcome iterate(const std::vector<double>& cost, bool phase_one);
  void pivot(std::size_t r, std::size_t j);
  std::vector<double> row_duals(const std::vector<double>& cost) const;
  std::vector<double> original_x() const;

  double& t(std::size_t r, std::size_t c) { return tab_[r * width_ + c]; }
  double t(std::size_t r, std::size_t c) const { return tab_[r * width_ + c]; }

  const Problem& p_;
  const Tolerances& tol_;
  std::size_t m_ = 0;
  std::size_t n_ = 0;      // internal structural columns
  std::size_t width_ = 0;  // n_ + m_ (artificials last)
  std::vector<Column> cols_;
  std::vector<double> shift_;  // original-space offset
  std::vector<double> tab_;
  std::vector<double> ub_;
  std::vector<char> at_upper_;
  std::vector<std::size_t> basis_;
  std::vector<char> is_basic_;
  std::vector<double> beta_;
  std::size_t iterations_ = 0;
  std::vector<double> ray_;
};

void Tableau::build() {
  m_ = p_.rows();
  const std::size_t n0 = p_.cols();
  shift_.assign(n0, 0.0);
  for (std::size_t j = 0; j < n0; ++j) {
    const double lo = p_.lower[j];
    const double hi = p_.upper[j];
    if (std::isfinite(lo)) {
      shift_[j] = lo;
      cols_.push_back({j, 1.0, hi - lo});
    } else if (std::isfinite(hi)) {
      shift_[j] = hi;
      cols_.push_back({j, -1.0, kInf});
    } else {
      cols_.push_back({j, 1.0, kInf});
      cols_.push_back({j, -1.0, kInf});
    }
  }
  n_ = cols_.size();
  width_ = n_ + m_;
  tab_.assign(m_ * width_, 0.0);
  ub_.assign(width_, 0.0);
  at_upper_.assign(width_, 0);
  is_basic_.assign(width_, 0);
  basis_.assign(m_, 0);
  beta_.assign(m_, 0.0);

  std::vector<double> b(m_);
  for (std::size_t r = 0; r < m_; ++r) {
    double v = p_.rhs[r];
    for (std::size_t j = 0; j < n0; ++j) v -= p_.a(r, j) * shift_[j];
    b[r] = v;
    for (std::size_t c = 0; c < n_; ++c) t(r, c) = cols_[c].sign * p_.a(r, cols_[c].orig);
    t(r, n_ + r) = 1.0;
  }
  for (std::size_t c = 0; c < n_; ++c) ub_[c] = cols_[c].ub;

  // Crash basis: a unit column whose implied value fits its bounds.
  std::vector<std::size_t> nnz(n_, 0);
  for (std::size_t r = 0; r < m_; ++r) {
    for (std::size_t c = 0; c < n_; ++c) nnz[c] += t(r, c) != 0.0 ? 1 : 0;
  }
  for (std::size_t r = 0; r < m_; ++r) {
    std::size_t chosen = width_;
    for (std::size_t c = 0; c < n_ && chosen == width_; ++c) {
      if (nnz[c] != 1 || is_basic_[c] || t(r, c) == 0.0) continue;
      const double v = b[r] / t(r, c);
      if (v >= 0.0 && v <= ub_[c]) chosen = c;
    }
    double scale;
    if (chosen != width_) {
      scale = 1.0 / t(r, chosen);
      basis_[r] = chosen;
      ub_[n_ + r] = 0.0;  // artificial never used
    } else {
      scale = b[r] < 0.0 ? -1.0 : 1.0;
      basis_[r] = n_ + r;
      ub_[n_ + r] = kInf;
    }
    for (std::size_t c = 0; c < width_; ++c) t(r, c) *= scale;
    beta_[r] = b[r] * scale;
    is_basic_[basis_[r]] = 1;
  }
}

void Tableau::pivot(std::size_t r, std::size_t j) {
  const double piv = t(r, j);
  double* row = &tab_[r * width_];
  for (std::size_t c = 0; c < width_; ++c) row[c] /= piv;
  for (std::size_t i = 0; i < m_; ++i) {
    if (i == r) continue;
    const double f = t(i, j);
    if (f == 0.0) continue;
    double* other = &tab_[i * width_];
    for (std::size_t c = 0; c < width_; ++c) other[c] -= f * row[c];
    other[j] = 0.0;
  }
  is_basic_[basis_[r]] = 0;
  basis_[r] = j;
  is_basic_[j] = 1;
}

Tableau::Outcome Tableau::iterate(const std::vector<double>& cost, bool phase_one) {
  bool bland = false;
  std::vector<double> d(width_);
  for (;;) {
    if (++iterations_ > tol_.max_iterations) {
      throw NumericError("simplex iteration cap exceeded");
    }
    // Reduced costs for nonbasic columns.
    std::size_t enter = width_;
    double best = 0.0;
    for (std::size_t c = 0; c < width_; ++c) {
      if (is_basic_[c] || ub_[c] == 0.0) continue;
      double dc = cost[c];
      for (std::size_t i = 0; i < m_; ++i) dc -= cost[basis_[i]] * t(i, c);
      d[c] = dc;
      const bool improving = at_upper_[c] ? dc < -tol_.optimality : dc > tol_.optimality;
      if (!improving) continue;
      if (bland) {
        enter = c;
        break;
      }
      if (std::abs(dc) > best) {
        best = std::abs(dc);
        enter = c;
      }
    }
    if (enter == width_) return Outcome::optimal;

    const double dir = at_upper_[enter] ? -1.0 : 1.0;
    double theta = ub_[enter];  // bound flip
    std::size_t leave = m_;
    bool leave_to_upper = false;
    double leave_mag = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      const double a = t(i, enter) * dir;  // beta_i decreases by a * step
      if (std::abs(a) <= tol_.pivot) continue;
      double lim;
      bool to_upper;
      if (a > 0.0) {
        lim = std::max(beta_[i], 0.0) / a;
        to_upper = false;
      } else {
        const double u = ub_[basis_[i]];
        if (!std::isfinite(u)) continue;
        lim = std::max(u - beta_[i], 0.0) / -a;
        to_upper = true;
      }
      bool take = false;
      if (lim < theta) {
        take = true;
      } else if (lim == theta && leave < m_) {
        take = bland ? basis_[i] < basis_[leave] : std::abs(a) > leave_mag;
      }
      if (take) {
        theta = lim;
        leave = i;
        leave_to_upper = to_upper;
        leave_mag = std::abs(a);
      }
    }
    if (!std::isfinite(theta)) {
      if (phase_one) throw NumericError("phase one reported unbounded");
      ray_.assign(width_, 0.0);
      ray_[enter] = dir;
      for (std::size_t i = 0; i < m_; ++i) ray_[basis_[i]] = -t(i, enter) * dir;
      return Outcome::unbounded;
    }
    for (std::size_t i = 0; i < m_; ++i) beta_[i] -= t(i, enter) * dir * theta;
    bland = theta <= 1e-12;
    if (leave == m_) {
      at_upper_[enter] = at_upper_[enter] ? 0 : 1;
      continue;
    }
    const double entering_value = at_upper_[enter] ? ub_[enter] - theta : theta;
    const std::size_t leaving = basis_[leave];
    at_upper_[leaving] = leave_to_upper ? 1 : 0;
    at_upper_[enter] = 0;
    pivot(leave, enter);
    beta_[leave] = entering_value;
  }
}

std::vector<double> Tableau::row_duals(const std::vector<double>& cost) const {
  std::vector<double> y(m_, 0.0);
  for (std::size_t r = 0; r < m_; ++r) {
    double v = 0.0;
    for (std::size_t i = 0; i < m_; ++i) v += cost[basis_[i]] * t(i, n_ + r);
    y[r] = v;
  }
  return y;
}

std::vector<double> Tableau::original_x() const {
  std::vector<double> xi(width_, 0.0);
  for (std::size_t c = 0; c < width_; ++c) {
    if (!is_basic_[c] && at_upper_[c]) xi[c] = ub_[c];
  }
  for (std::size_t i = 0; i < m_; ++i) xi[basis_[i]] = beta_[i];
  std::vector<double> x = shift_;
  for (std::size_t c = 0; c < n_; ++c) x[cols_[c].orig] += cols_[c].sign * xi[c];
  return x;
}

Solution Tableau::run() {
  Solution sol;
  const std::size_t n0 = p_.cols();

  std::vector<double> phase1(width_, 0.0);
  bool need_phase1 = false;
  for (std::size_t r = 0; r < m_; ++r) {
    if (ub_[n_ + r] > 0.0) {
      phase1[n_ + r] = -1.0;
      need_phase1 = true;
    }
  }
  if (need_phase1) {
    iterate(phase1, true);
    double infeas = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      if (basis_[i] >= n_) infeas += std::max(beta_[i], 0.0);
    }
    if (infeas > tol_.feasibility) {
      sol.status = Status::infeasible;
      auto y = row_duals(phase1);
      sol.farkas.resize(m_);
      for (std::size_t r = 0; r < m_; ++r) sol.farkas[r] = -y[r];
      sol.iterations = iterations_;
      return sol;
    }
    // Drive zero-level artificials out of the basis where possible.
    for (std::size_t r = 0; r < m_; ++r) {
      if (basis_[r] < n_) continue;
      std::size_t best = width_;
      double mag = tol_.pivot;
      for (std::size_t c = 0; c < n_; ++c) {
        if (is_basic_[c] || std::abs(t(r, c)) <= mag) continue;
        mag = std::abs(t(r, c));
        best = c;
      }
      if (best == width_) continue;  // redundant row
      const double v = at_upper_[best] ? ub_[best] : 0.0;
      at_upper_[best] = 0;
      pivot(r, best);
      beta_[r] = v;
    }
    for (std::size_t r = 0; r < m_; ++r) {
      ub_[n_ + r] = 0.0;
      at_upper_[n_ + r] = 0;
    }
  }

  const double s = p_.sense == Sense::maximize ? 1.0 : -1.0;
  std::vector<double> phase2(width_, 0.0);
  for (std::size_t c = 0; c < n_; ++c) phase2[c] = s * cols_[c].sign * p_.cost[cols_[c].orig];

  const auto outcome = iterate(phase2, false);
  sol.iterations = iterations_;
  if (outcome == Outcome::unbounded) {
    sol.status = Status::unbounded;
    sol.ray.assign(n0, 0.0);
    for (std::size_t c = 0; c < n_; ++c) sol.ray[cols_[c].orig] += cols_[c].sign * ray_[c];
    sol.x = original_x();
    return sol;
  }
  sol.status = Status::optimal;
  sol.x = original_x();
  auto y = row_duals(phase2);
  for (double& v : y) v *= s;
  sol.duals = y;
  sol.objective = 0.0;
  for (std::size_t j = 0; j < n0; ++j) sol.objective += p_.cost[j] * sol.x[j];
  sol.reduced_costs.assign(n0, 0.0);
  for (std::size_t j = 0; j < n0; ++j) {
    double dj = p_.cost[j];
    for (std::size_t r = 0; r < m_; ++r) dj -= p_.a(r, j) * y[r];
    sol.reduced_costs[j] = dj;
  }
  return sol;
}

}  // namespace

Solution solve(const Problem& problem, const Tolerances& tol) {
  problem.check();
  Tableau tab(problem, tol);
  return tab.run();
}

double primal_residual(const Problem& p, const std::vector<double>& x) {
  if (x.size() != p.cols()) throw InvalidInput("primal vector has wrong size");
  double worst = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double v = -p.rhs[r];
    for (std::size_t j = 0; j < p.cols(); ++j) v += p.a(r, j) * x[j];
    worst = std::max(worst, std::abs(v));
  }
  for (std::size_t j = 0; j < p.cols(); ++j) {
    worst = std::max({worst, p.lower[j] - x[j], x[j] - p.upper[j]});
  }
  return worst;
}

double dual_objective(const Problem& p, const std::vector<double>& y) {
  if (y.size() != p.rows()) throw InvalidInput("dual vector has wrong size");
  const bool maximize = p.sense == Sense::maximize;
  double v = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) v += p.rhs[r] * y[r];
  for (std::size_t j = 0; j < p.cols(); ++j) {
    double dj = p.cost[j];
    for (std::size_t r = 0; r < p.rows(); ++r) dj -= p.a(r, j) * y[r];
    if (dj == 0.0) continue;
    // max: sup_x d x ; min: inf_x d x
    const bool want_upper = maximize ? dj > 0.0 : dj < 0.0;
    const double bound = want_upper ? p.upper[j] : p.lower[j];
    if (!std::isfinite(bound)) return maximize ? kInf : -kInf;
    v += dj * bound;
  }
  return v;
}

double farkas_margin(const Problem& p, const std::vector<double>& f) {
  if (f.size() != p.rows()) throw InvalidInput("certificate has wrong size");
  double v = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) v += f[r] * p.rhs[r];
  for (std::size_t j = 0; j < p.cols(); ++j) {
    double g = 0.0;
    for (std::size_t r = 0; r < p.rows(); ++r) g += f[r] * p.a(r, j);
    if (g == 0.0) continue;
    const double bound = g > 0.0 ? p.upper[j] : p.lower[j];
    if (!std::isfinite(bound)) return -kInf;
    v -= g * bound;
  }
  return v;
}

}  // namespace heparin::lp
