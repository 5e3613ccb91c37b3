#include "heparin/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "heparin/errors.hpp"

namespace heparin {

ValidationError::ValidationError(std::vector<ValidationIssue> issues)
    : Error([&] {
        std::ostringstream os;
        os << issues.size() << " validation error(s)";
        for (const auto& i : issues) os << "; line " << i.line << ": " << i.message;
        return os.str();
      }()),
      issues_(std::move(issues)) {}

Domains Domains::synthetic_icu() {
  Domains d;
  d.b = {0.0015, 0.006};
  d.k = {100.0, 5000.0};
  d.y_max = 250.0;
  d.x_max = 20000.0;
  return d;
}

void Domains::validate() const {
  if (alphas.empty()) throw ConfigError("alpha set is empty");
  for (double a : alphas) {
    if (!(a > alpha_floor && a < 1.0)) throw ConfigError("alpha outside (alpha_floor, 1)");
  }
  if (!(b.lo > 0.0 && b.lo <= b.hi)) throw ConfigError("b interval must be positive and ordered");
  if (!(k.lo > 0.0 && k.lo <= k.hi)) throw ConfigError("k interval must be positive and ordered");
  if (!(y_max > 0.0 && x_max > 0.0 && u_max >= 0.0)) throw ConfigError("state/dose bounds must be positive");
}

void GlobalDecayRates::validate() const {
  for (double g : {gamma1, gamma2, gamma3, gamma4}) {
    if (!(g > 0.0 && g < 1.0)) throw ConfigError("decay rates must lie in (0,1)");
  }
  if (std::abs(gamma2 + gamma3 + gamma4 - 1.0) > 1e-12) {
    throw ConfigError("gamma2 + gamma3 + gamma4 must equal 1");
  }
  if (!(spectral_radius() < 1.0)) throw ConfigError("aPTT recursion is not stable");
}

double GlobalDecayRates::spectral_radius() const {
  // [[g1, 1-g1], [g3, g2]]
  const double tr = gamma1 + gamma2;
  const double det = gamma1 * gamma2 - (1.0 - gamma1) * gamma3;
  const double disc = tr * tr - 4.0 * det;
  if (disc >= 0.0) {
    const double s = std::sqrt(disc);
    return std::max(std::abs(0.5 * (tr + s)), std::abs(0.5 * (tr - s)));
  }
  return std::sqrt(det);  // complex pair, |lambda|^2 = det
}

void validate_params(const PatientParams& p, const Domains& d) {
  auto fail = [](const char* what) { throw InvalidParameter(what); };
  if (!(p.alpha > d.alpha_floor && p.alpha < 1.0)) fail("alpha outside (alpha_floor, 1)");
  if (!(p.k > 0.0)) fail("k must be positive");
  if (!(p.b > 0.0)) fail("b must be positive");
  for (double y : {p.y0, p.yb0, p.yb}) {
    if (!(y >= 0.0 && y <= d.y_max)) fail("aPTT parameter outside [0, y_max]");
  }
}

namespace {

inline StepResult advance(const PatientState& s, double dose, const PatientParams& p,
                          const GlobalDecayRates& g, const Domains& d) {
  StepResult r;
  double x = eliminate(s.x, p.alpha, p.k) + dose;
  double y = g.gamma1 * (s.y - s.y_base) + s.y_base + p.b * x;
  double yb = g.gamma2 * s.y_base + g.gamma3 * s.y + g.gamma4 * p.yb;
  auto clamp = [&r](double v, double hi) {
    if (v < 0.0) {
      r.clamped = true;
      return 0.0;
    }
    if (v > hi) {
      r.clamped = true;
      return hi;
    }
    return v;
  };
  r.state.x = clamp(x, d.x_max);
  r.state.y = clamp(y, d.y_max);
  r.state.y_base = clamp(yb, d.y_max);
  return r;
}

}  // namespace

StepResult step(const PatientState& state, double dose, const PatientParams& params,
                const GlobalDecayRates& gammas, const Domains& domains) {
  validate_params(params, domains);
  if (!(dose >= 0.0 && dose <= domains.u_max)) throw InvalidParameter("dose outside [0, u_max]");
  if (state.x < 0.0 || state.y < 0.0 || state.y_base < 0.0) {
    throw InvalidParameter("state must be nonnegative");
  }
  return advance(state, dose, params, gammas, domains);
}

Trajectory simulate_from(const PatientState& start, const PatientParams& params,
                         const GlobalDecayRates& gammas, std::span<const double> doses,
                         const Domains& domains) {
  Trajectory traj;
  traj.states.reserve(doses.size() + 1);
  traj.states.push_back(start);
  for (double u : doses) {
    auto r = advance(traj.states.back(), u, params, gammas, domains);
    traj.clamped = traj.clamped || r.clamped;
    traj.states.push_back(r.state);
  }
  return traj;
}

Trajectory simulate(const PatientParams& params, const GlobalDecayRates& gammas,
                    std::span<const double> doses, const Domains& domains) {
  validate_params(params, domains);
  for (double u : doses) {
    if (!(u >= 0.0 && u <= domains.u_max)) throw InvalidParameter("dose outside [0, u_max]");
  }
  return simulate_from({0.0, params.y0, params.yb0}, params, gammas, doses, domains);
}

double lambert_w0(double z) {
  if (z < 0.0 || std::isnan(z)) throw NumericError("lambert_w0 defined here for z >= 0 only");
  if (z == 0.0) return 0.0;
  if (std::isinf(z)) return z;
  return lambert_w0_from_log(std::log(z));
}

double lambert_w0_from_log(double log_z) {
  constexpr int kMaxIter = 100;
  constexpr double kTol = 1e-12;
  if (log_z < 1.0) {
    // Halley on w e^w = z; starting point from the series / log asymptote.
    const double z = std::exp(log_z);
    double w = z < 0.5 ? z * (1.0 - z) : std::log1p(z);
    for (int i = 0; i < kMaxIter; ++i) {
      const double ew = std::exp(w);
      const double f = w * ew - z;
      const double denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0);
      const double dw = f / denom;
      w -= dw;
      if (std::abs(dw) <= kTol * 1e-2 * (1.0 + std::abs(w)) || f == 0.0) return w;
    }
    throw NumericError("lambert_w0 did not converge");
  }
  // Newton on w + log(w) = log_z, w > 0.
  double w = log_z - std::log(log_z);
  if (!(w > 0.0)) w = 1.0;
  for (int i = 0; i < kMaxIter; ++i) {
    const double f = w + std::log(w) - log_z;
    const double dw = f / (1.0 + 1.0 / w);
    double next = w - dw;
    if (next <= 0.0) next = 0.5 * w;
    if (std::abs(next - w) <= kTol * 1e-2 * std::max(1.0, next)) return next;
    w = next;
  }
  throw NumericError("lambert_w0 did not converge");
}

double mm_exact(double v_max, double K, double x1, double t) {
  if (!(v_max > 0.0 && K > 0.0 && x1 > 0.0 && t >= 0.0)) {
    throw InvalidParameter("mm_exact requires v_max, K, x1 > 0 and t >= 0");
  }
  // W(z e^z) = z: no elimination has happened yet.
  if (t == 0.0) return x1;
  const double r = x1 / K;
  return K * lambert_w0_from_log(std::log(r) + r - v_max / K * t);
}

double sample_observation(double y_true, double scale, std::mt19937_64& rng) {
  if (!(scale > 0.0)) throw InvalidParameter("noise scale must be positive");
  // Inverse CDF on u in (-1/2, 1/2).
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  double u = unif(rng);
  while (std::abs(u) >= 0.5) u = unif(rng);
  const double eps = -scale * std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
  return y_true + eps;
}

double sample_observation(double y_true, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_observation(y_true, scale, rng);
}

Band therapeutic_range(double yb) {
  if (!(yb > 0.0)) throw InvalidParameter("baseline aPTT must be positive");
  return {1.5 * yb, 2.5 * yb};
}

const char* to_string(RangeLabel l) {
  switch (l) {
    case RangeLabel::sub:
      return "sub";
    case RangeLabel::therapeutic:
      return "therapeutic";
    case RangeLabel::super:
      return "super";
  }
  return "?";
}

RangeLabel label(double y, double yb) {
  const auto band = therapeutic_range(yb);
  if (y < band.low) return RangeLabel::sub;
  if (y > band.high) return RangeLabel::super;
  return RangeLabel::therapeutic;
}

}  // namespace heparin
