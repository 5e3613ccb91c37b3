#include "heparin/reformulation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "heparin/errors.hpp"

namespace heparin::reform {

namespace {

class Recorder {
 public:
  Recorder(CheckResult& out, double tol) : out_(out), tol_(tol) {}

  /// `excess` > 0 means the row is violated by that amount.
  void row(const char* name, std::size_t t, double excess, double scale) {
    const double v = excess / (1.0 + scale);
    out_.worst_violation = std::max(out_.worst_violation, std::max(v, 0.0));
    if (v > tol_ && out_.feasible) {
      out_.feasible = false;
      std::ostringstream os;
      os << name << " at t=" << t << " violated by " << excess;
      out_.first_violation = os.str();
    }
  }
  void equality(const char* name, std::size_t t, double residual, double scale) {
    row(name, t, std::abs(residual), scale);
  }
  void usage(double u) { out_.relaxed_usage = std::max(out_.relaxed_usage, u); }

 private:
  CheckResult& out_;
  double tol_;
};

bool binary(int v) { return v == 0 || v == 1; }

}  // namespace

BigM big_m(const Domains& d) {
  BigM m;
  m.z_max = d.b.hi * d.x_max;
  m.c_max = d.b.hi * d.k.hi;
  m.alpha = m.z_max;
  m.mode = m.z_max + m.c_max + d.b.hi * d.u_max;
  return m;
}

Assignment lift(const PatientParams& params, std::size_t alpha_index,
                const std::vector<double>& doses, const GlobalDecayRates& gammas,
                const Domains& domains) {
  if (alpha_index >= domains.alphas.size()) throw InvalidParameter("alpha index out of range");
  if (domains.alphas[alpha_index] != params.alpha) {
    throw InvalidParameter("params.alpha does not match the selected alpha");
  }
  const auto traj = simulate(params, gammas, doses, domains);
  if (traj.clamped) throw InvalidParameter("rollout leaves the domain box");
  const std::size_t T = doses.size();
  Assignment a;
  a.b = params.b;
  a.c = params.b * params.k;
  a.y_home = params.yb;
  for (const auto& s : traj.states) {
    a.z.push_back(params.b * s.x);
    a.y.push_back(s.y);
    a.y_base.push_back(s.y_base);
  }
  a.iota.assign(domains.alphas.size(), 0);
  a.iota[alpha_index] = 1;
  a.w_i.assign(domains.alphas.size(), std::vector<double>(T, 0.0));
  a.w.assign(T, 0.0);
  a.nu.assign(T, 0);
  for (std::size_t t = 0; t < T; ++t) {
    a.w_i[alpha_index][t] = params.alpha * a.z[t];
    a.w[t] = a.w_i[alpha_index][t];
    a.nu[t] = traj.states[t].x > params.k / (1.0 - params.alpha) ? 1 : 0;
  }
  return a;
}

CheckResult check_bilinear(const Assignment& a, double alpha, const std::vector<double>& doses,
                           const GlobalDecayRates& g, double tol) {
  CheckResult out;
  Recorder rec(out, tol);
  const std::size_t T = doses.size();
  if (a.z.size() != T + 1 || a.y.size() != T + 1 || a.y_base.size() != T + 1) {
    throw InvalidInput("assignment length does not match the dose sequence");
  }
  rec.equality("z_0 = 0", 0, a.z[0], 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double leg = a.z[t] <= a.c / (1.0 - alpha) ? alpha * a.z[t] : a.z[t] - a.c;
    rec.equality("z recursion", t, a.z[t + 1] - (a.b * doses[t] + leg), a.z[t + 1]);
    rec.equality("y recursion", t,
                 a.y[t + 1] - (g.gamma1 * a.y[t] + (1.0 - g.gamma1) * a.y_base[t] + a.z[t + 1]),
                 a.y[t + 1]);
    rec.equality("baseline recursion", t,
                 a.y_base[t + 1] - (g.gamma2 * a.y_base[t] + g.gamma3 * a.y[t] + g.gamma4 * a.y_home),
                 a.y_base[t + 1]);
  }
  return out;
}

CheckResult check_disjunctive(const Assignment& a, const std::vector<double>& alphas,
                              const std::vector<double>& doses, const BigM& m, double tol) {
  CheckResult out;
  Recorder rec(out, tol);
  const std::size_t T = doses.size();
  if (a.iota.size() != alphas.size() || a.w_i.size() != alphas.size() || a.w.size() != T) {
    throw InvalidInput("assignment does not match the alpha set");
  }
  int selected = 0;
  for (int v : a.iota) {
    if (!binary(v)) rec.row("iota binary", 0, 1.0, 0.0);
    selected += v;
  }
  rec.equality("sum iota = 1", 0, selected - 1.0, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      const double wi = a.w_i[i][t];
      const double off = 1.0 - a.iota[i];
      sum += wi;
      rec.row("w_it <= alpha_i z_t + M(1-iota)", t, wi - alphas[i] * a.z[t] - m.alpha * off, m.alpha);
      rec.row("w_it >= alpha_i z_t - M(1-iota)", t, alphas[i] * a.z[t] - m.alpha * off - wi, m.alpha);
      rec.row("|w_it| <= M iota", t, std::abs(wi) - m.alpha * a.iota[i], m.alpha);
      if (a.iota[i] == 0) {
        rec.usage(std::abs(wi - alphas[i] * a.z[t]) / m.alpha);
      } else {
        rec.usage(std::abs(wi) / m.alpha);
      }
    }
    rec.equality("w_t = sum_i w_it", t, a.w[t] - sum, std::abs(a.w[t]));
    const double leg = a.z[t] <= a.c + a.w[t] ? a.w[t] : a.z[t] - a.c;
    rec.equality("z recursion", t, a.z[t + 1] - (a.b * doses[t] + leg), a.z[t + 1]);
  }
  return out;
}

CheckResult check_big_m(const Assignment& a, const std::vector<double>& doses, const BigM& m,
                        double tol) {
  CheckResult out;
  Recorder rec(out, tol);
  const std::size_t T = doses.size();
  if (a.nu.size() != T || a.w.size() != T) throw InvalidInput("assignment length mismatch");
  const double M = m.mode;
  for (std::size_t t = 0; t < T; ++t) {
    const double nu = a.nu[t];
    if (!binary(a.nu[t])) rec.row("nu binary", t, 1.0, 0.0);
    const double bu = a.b * doses[t];
    const double first = a.w[t] + bu;          // first-order successor
    const double zero = a.z[t] - a.c + bu;     // zero-order successor
    const double next = a.z[t + 1];
    rec.row("z' <= w + bu + M nu", t, next - first - M * nu, M);
    rec.row("z' >= w + bu - M nu", t, first - M * nu - next, M);
    rec.row("z' <= z - c + bu + M(1-nu)", t, next - zero - M * (1.0 - nu), M);
    rec.row("z' >= z - c + bu - M(1-nu)", t, zero - M * (1.0 - nu) - next, M);
    rec.row("z >= c + w - M(1-nu)", t, a.c + a.w[t] - M * (1.0 - nu) - a.z[t], M);
    rec.row("z <= c + w + M nu", t, a.z[t] - a.c - a.w[t] - M * nu, M);
    if (a.nu[t] == 1) {
      rec.usage(std::abs(next - first) / M);
      rec.usage(std::max(0.0, a.z[t] - a.c - a.w[t]) / M);
    } else {
      rec.usage(std::abs(next - zero) / M);
      rec.usage(std::max(0.0, a.c + a.w[t] - a.z[t]) / M);
    }
  }
  return out;
}

bool maps_to_trajectory(const Assignment& a, const std::vector<double>& alphas,
                        const std::vector<double>& doses, double tol) {
  std::size_t chosen = alphas.size();
  for (std::size_t i = 0; i < a.iota.size() && i < alphas.size(); ++i) {
    if (a.iota[i] == 1) {
      if (chosen != alphas.size()) return false;
      chosen = i;
    }
  }
  if (chosen == alphas.size() || !(a.b > 0.0) || a.z.size() != doses.size() + 1) return false;
  const double alpha = alphas[chosen];
  const double k = a.c / a.b;
  double x = 0.0;
  if (std::abs(a.z[0]) > tol) return false;
  for (std::size_t t = 0; t < doses.size(); ++t) {
    x = eliminate(x, alpha, k) + doses[t];
    const double xz = a.z[t + 1] / a.b;
    if (std::abs(xz - x) > tol * (1.0 + std::abs(x))) return false;
  }
  return true;
}

}  // namespace heparin::reform
