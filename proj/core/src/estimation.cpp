#include "heparin/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "heparin/errors.hpp"
#include "heparin/lp.hpp"
#include "parallel.hpp"

namespace heparin {

namespace {

using Clock = std::chrono::steady_clock;

double laplace_log(double x, const LaplacePrior& p) {
  return -std::abs(x - p.center) / p.scale - std::log(2.0 * p.scale);
}

std::vector<double> log_space(double lo, double hi, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {std::sqrt(lo * hi)};
  std::vector<double> out(n);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

/// Refinement mesh between the coarse neighbours of `k_best`.
std::vector<double> refine_mesh(const std::vector<double>& coarse, double k_best, std::size_t n) {
  if (coarse.size() < 2 || n < 2) return {};
  std::size_t i = 0;
  for (std::size_t j = 1; j < coarse.size(); ++j) {
    if (std::abs(coarse[j] - k_best) < std::abs(coarse[i] - k_best)) i = j;
  }
  const double lo = coarse[i == 0 ? 0 : i - 1];
  const double hi = coarse[std::min(i + 1, coarse.size() - 1)];
  return log_space(lo, hi, n);
}

void check_deadline(const EstimationConfig& config, const char* stage, std::size_t evaluated) {
  if (config.deadline && Clock::now() > *config.deadline) {
    std::ostringstream os;
    os << "stage=" << stage << " evaluated=" << evaluated;
    throw DeadlineExceeded("estimation deadline exceeded", os.str());
  }
}

/// Lexicographic preference: larger value, then smaller b index, then smaller k.
struct Incumbent {
  bool set = false;
  double value = kNegInf;
  std::size_t b_index = 0;
  double k = 0.0;

  bool improved_by(double v, std::size_t bi, double kk) const {
    if (!set) return true;
    if (v != value) return v > value;
    if (bi != b_index) return bi < b_index;
    return kk < k;
  }
  void take(double v, std::size_t bi, double kk) {
    set = true;
    value = v;
    b_index = bi;
    k = kk;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_point(double alpha, double k, double b, const Domains& d) {
  if (!(alpha > d.alpha_floor && alpha < 1.0)) throw InvalidParameter("alpha outside (alpha_floor, 1)");
  if (!d.k.contains(k)) throw InvalidParameter("k outside its domain");
  if (!d.b.contains(b)) throw InvalidParameter("b outside its domain");
}

}  // namespace

void ObservationSeries::validate() const {
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) {
    throw InvalidInput("noise scale must be positive");
  }
  for (double u : doses) {
    if (!(u >= 0.0) || !std::isfinite(u)) throw InvalidInput("doses must be nonnegative");
  }
  int prev = 0;
  for (const auto& o : observations) {
    if (o.hour < 1 || o.hour > horizon()) throw InvalidInput("observation hour outside 1..T");
    if (o.hour <= prev) throw InvalidInput("observation hours must be strictly increasing");
    if (!(o.aptt >= 0.0) || !std::isfinite(o.aptt)) throw InvalidInput("aPTT must be nonnegative");
    prev = o.hour;
  }
}

ObservationSeries ObservationSeries::truncated(int t) const {
  ObservationSeries out;
  out.noise_scale = noise_scale;
  const int T = std::clamp(t, 0, horizon());
  out.doses.assign(doses.begin(), doses.begin() + T);
  for (const auto& o : observations) {
    if (o.hour <= T) out.observations.push_back(o);
  }
  return out;
}

double estimate_noise_scale(const std::vector<Observation>& obs, double floor) {
  if (obs.size() < 3) return floor;
  std::vector<double> r;
  r.reserve(obs.size() - 2);
  for (std::size_t i = 1; i + 1 < obs.size(); ++i) {
    r.push_back(std::abs(obs[i].aptt - 0.5 * (obs[i - 1].aptt + obs[i + 1].aptt)));
  }
  auto mid = r.begin() + static_cast<long>(r.size() / 2);
  std::nth_element(r.begin(), mid, r.end());
  double med = *mid;
  if (r.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(r.begin(), mid));
  }
  // Median of |e0 - (e1 + e2) / 2| for i.i.d. unit Laplace e.
  constexpr double kResidualMedian = 1.0091499597078055;
  return std::max(floor, med / kResidualMedian);
}

double PriorSpec::log_density_master(double a, double kk, double bb) const {
  double v = 0.0;
  if (alpha) v += laplace_log(a, *alpha);
  if (k) v += laplace_log(kk, *k);
  if (b) v += laplace_log(bb, *b);
  return v;
}

double PriorSpec::log_density(const PatientParams& p) const {
  double v = log_density_master(p.alpha, p.k, p.b);
  if (y0) v += laplace_log(p.y0, *y0);
  if (yb0) v += laplace_log(p.yb0, *yb0);
  if (yb) v += laplace_log(p.yb, *yb);
  return v;
}

void PriorSpec::validate() const {
  for (const auto* p : {&alpha, &k, &b, &y0, &yb0, &yb}) {
    if (*p && !((*p)->scale > 0.0 && std::isfinite((*p)->scale) && std::isfinite((*p)->center))) {
      throw ConfigError("prior scale must be positive and finite");
    }
  }
}

std::vector<double> EstimationConfig::b_grid() const {
  if (!b_candidates.empty()) {
    auto out = b_candidates;
    std::sort(out.begin(), out.end());
    return out;
  }
  return log_space(domains.b.lo, domains.b.hi, b_mesh);
}

std::vector<double> EstimationConfig::k_grid() const {
  if (!k_candidates.empty()) {
    auto out = k_candidates;
    std::sort(out.begin(), out.end());
    return out;
  }
  return log_space(domains.k.lo, domains.k.hi, k_mesh);
}

// ---------------------------------------------------------------------------
// Profile evaluator

ProfileEvaluator::ProfileEvaluator(const ObservationSeries& obs, const Domains& domains,
                                   const GlobalDecayRates& gammas, const PriorSpec& prior)
    : obs_(obs), domains_(domains), gammas_(gammas), prior_(prior) {
  obs_.validate();
  prior_.validate();
  if (obs_.observations.empty()) throw InvalidInput("at least one observation is required");
  log_norm_ = -static_cast<double>(obs_.observations.size()) * std::log(2.0 * obs_.noise_scale);
  for (const auto* p : {&prior_.y0, &prior_.yb0, &prior_.yb}) {
    if (*p) log_norm_ -= std::log(2.0 * (*p)->scale);
  }
  const double g1 = gammas_.gamma1, g2 = gammas_.gamma2, g3 = gammas_.gamma3, g4 = gammas_.gamma4;
  sens_.resize(static_cast<std::size_t>(obs_.horizon()) + 1);
  sens_[0] = {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}};
  for (std::size_t t = 1; t < sens_.size(); ++t) {
    const auto& p = sens_[t - 1];
    for (int j = 0; j < 3; ++j) {
      sens_[t][0][j] = g1 * p[0][j] + (1.0 - g1) * p[1][j];
      sens_[t][1][j] = g3 * p[0][j] + g2 * p[1][j];
    }
    sens_[t][1][2] += g4;
  }
}

std::vector<double> ProfileEvaluator::heparin_path(double alpha, double k) const {
  std::vector<double> x(static_cast<std::size_t>(obs_.horizon()) + 1, 0.0);
  for (std::size_t t = 1; t < x.size(); ++t) {
    x[t] = std::clamp(eliminate(x[t - 1], alpha, k) + obs_.doses[t - 1], 0.0, domains_.x_max);
  }
  return x;
}

ProfileFit ProfileEvaluator::fit(double alpha, double k, double b) const {
  check_point(alpha, k, b, domains_);
  auto z = heparin_path(alpha, k);
  for (double& v : z) v *= b;
  return fit_z(z, nullptr);
}

ProfileFit ProfileEvaluator::fit_z(const std::vector<double>& z, ProfileCut* cut) const {
  const std::size_t T = static_cast<std::size_t>(obs_.horizon());
  if (z.size() != T + 1) throw InvalidInput("z path has wrong length");
  const double g1 = gammas_.gamma1, g2 = gammas_.gamma2, g3 = gammas_.gamma3;
  const double Y = domains_.y_max;

  // Heparin-driven part of (y_t, yb_t); the rest is sens_[t] . v.
  std::vector<std::array<double, 2>> drive(T + 1, {0.0, 0.0});
  for (std::size_t t = 1; t <= T; ++t) {
    const auto& p = drive[t - 1];
    drive[t][0] = g1 * p[0] + (1.0 - g1) * p[1] + z[t];
    drive[t][1] = g3 * p[0] + g2 * p[1];
  }

  // The fit maximizes -sum_r w_r |e_r - a_r.v| over v in [0, Y]^3 subject to
  // 0 <= sens_s.v + drive_s <= Y on the state box. It is solved through its
  // dual: minimize sum_r e_r y_r + sum_s (U_s l+_s - L_s l-_s) + Y sum_j s_j
  // with  A'y + G'(l+ - l-) + s - e = 0,  |y_r| <= w_r,  l, s, e >= 0.
  // The row duals of that problem are v itself.
  struct Residual {
    std::array<double, 3> a;
    double e;
    double w;
    std::size_t hour;  // 0 for prior rows
  };
  std::vector<Residual> res;
  const auto& obs = obs_.observations;
  for (const auto& o : obs) {
    const auto h = static_cast<std::size_t>(o.hour);
    res.push_back({sens_[h][0], o.aptt - drive[h][0], 1.0 / obs_.noise_scale, h});
  }
  auto add_prior = [&](const std::optional<LaplacePrior>& p, int j) {
    if (!p) return;
    std::array<double, 3> a{0.0, 0.0, 0.0};
    a[j] = 1.0;
    res.push_back({a, p->center, 1.0 / p->scale, 0});
  };
  add_prior(prior_.y0, 0);
  add_prior(prior_.yb0, 1);
  add_prior(prior_.yb, 2);

  lp::Problem dual(3, 0, lp::Sense::minimize);
  for (const auto& r : res) {
    const auto c = dual.add_column(r.e, -r.w, r.w);
    for (int j = 0; j < 3; ++j) dual.a(j, c) = r.a[j];
  }
  for (int j = 0; j < 3; ++j) {
    const auto s = dual.add_column(Y, 0.0, lp::kInf);
    const auto e = dual.add_column(0.0, 0.0, lp::kInf);
    dual.a(j, s) = 1.0;
    dual.a(j, e) = -1.0;
  }
  struct BoxColumn {
    std::size_t t;
    int i;
    std::size_t plus, minus;
  };
  std::vector<BoxColumn> box;
  std::vector<char> box_active(2 * (T + 1), 0);
  const double box_tol = 1e-9 * (1.0 + Y);

  auto add_box = [&](std::size_t t, int i) {
    const auto cp = dual.add_column(Y - drive[t][i], 0.0, lp::kInf);
    const auto cm = dual.add_column(drive[t][i], 0.0, lp::kInf);
    for (int j = 0; j < 3; ++j) {
      dual.a(j, cp) = sens_[t][i][j];
      dual.a(j, cm) = -sens_[t][i][j];
    }
    box.push_back({t, i, cp, cm});
    box_active[2 * t + i] = 1;
  };
  // A state that leaves the box for every v is a certificate on its own;
  // seeding it first avoids rounds of column generation.
  {
    double worst = box_tol;
    std::size_t wt = 0;
    int wi = 0;
    for (std::size_t t = 1; t <= T; ++t) {
      for (int i = 0; i < 2; ++i) {
        double lo = drive[t][i], hi = drive[t][i];
        for (int j = 0; j < 3; ++j) {
          const double c = sens_[t][i][j] * Y;
          (c < 0.0 ? lo : hi) += c;
        }
        const double excess = std::max(lo - Y, -hi);
        if (excess > worst) {
          worst = excess;
          wt = t;
          wi = i;
        }
      }
    }
    if (wt > 0) add_box(wt, wi);
  }

  lp::Solution sol;
  for (;;) {
    sol = lp::solve(dual);
    ++lp_solves_;
    if (cut) cut->lp_iterations += sol.iterations;
    if (sol.status == lp::Status::infeasible) throw NumericError("profile dual reported infeasible");
    if (sol.status == lp::Status::unbounded) break;
    bool added = false;
    for (std::size_t t = 1; t <= T; ++t) {
      for (int i = 0; i < 2; ++i) {
        if (box_active[2 * t + i]) continue;
        double s = drive[t][i];
        for (int j = 0; j < 3; ++j) s += sens_[t][i][j] * sol.duals[j];
        if (s >= -box_tol && s <= Y + box_tol) continue;
        add_box(t, i);
        added = true;
      }
    }
    if (!added) break;
  }

  // Adjoint pass: slope_j = sum_t W_t . d drive_t / d z_j.
  auto adjoint = [&](const std::vector<std::array<double, 2>>& W) {
    std::vector<double> slope(T + 1, 0.0);
    std::array<double, 2> psi{0.0, 0.0};
    for (std::size_t t = T; t >= 1; --t) {
      const std::array<double, 2> next{W[t][0] + g1 * psi[0] + g3 * psi[1],
                                       W[t][1] + (1.0 - g1) * psi[0] + g2 * psi[1]};
      psi = next;
      slope[t] = psi[0];
    }
    return slope;
  };

  ProfileFit fit;
  if (sol.status == lp::Status::unbounded) {
    // The ray certifies that no v satisfies the state box. Along it the
    // dual objective falls at rate phi(z) < 0; feasibility at z' needs
    // phi(z') >= 0, i.e. pairing(z') = -phi(z') <= 0.
    if (cut) {
      std::vector<std::array<double, 2>> W(T + 1, {0.0, 0.0});
      double phi = 0.0;
      for (std::size_t j = 0; j < sol.ray.size(); ++j) phi += dual.cost[j] * sol.ray[j];
      // d phi / d drive: -dy_r through e_r and -(dl+ - dl-) through U, L.
      for (std::size_t r = 0; r < res.size(); ++r) {
        if (res[r].hour > 0) W[res[r].hour][0] += sol.ray[r];
      }
      for (const auto& b : box) W[b.t][b.i] += sol.ray[b.plus] - sol.ray[b.minus];
      cut->feasible = false;
      cut->value = kNegInf;
      cut->pairing = -phi;
      cut->pairing_limit = 0.0;
      cut->slope = adjoint(W);
    }
    return fit;
  }

  fit.value = sol.objective + log_norm_;
  fit.y0 = std::clamp(sol.duals[0], 0.0, Y);
  fit.yb0 = std::clamp(sol.duals[1], 0.0, Y);
  fit.yb = std::clamp(sol.duals[2], 0.0, Y);
  fit.y_path.resize(T + 1);
  for (std::size_t t = 0; t <= T; ++t) {
    fit.y_path[t] = drive[t][0] + sens_[t][0][0] * fit.y0 + sens_[t][0][1] * fit.yb0 +
                    sens_[t][0][2] * fit.yb;
  }
  // Primal objective at the recovered v closes the duality gap.
  double primal = 0.0;
  for (const auto& r : res) {
    primal -= r.w * std::abs(r.e - (r.a[0] * fit.y0 + r.a[1] * fit.yb0 + r.a[2] * fit.yb));
  }
  const double gap = std::abs(primal - sol.objective);
  max_gap_ = std::max(max_gap_, gap);
  if (cut) {
    std::vector<std::array<double, 2>> W(T + 1, {0.0, 0.0});
    for (std::size_t r = 0; r < res.size(); ++r) {
      if (res[r].hour > 0) W[res[r].hour][0] -= sol.x[r];
    }
    for (const auto& b : box) W[b.t][b.i] -= sol.x[b.plus] - sol.x[b.minus];
    // The value is the dual optimum; d e_r, dU_s, dL_s / d drive are all -1.
    cut->feasible = true;
    cut->value = fit.value;
    cut->duality_gap = gap;
    cut->slope = adjoint(W);
  }
  return fit;
}

double ProfileEvaluator::fixed_value(const PatientParams& p) const {
  const auto x = heparin_path(p.alpha, p.k);
  const double g1 = gammas_.gamma1, g2 = gammas_.gamma2, g3 = gammas_.gamma3, g4 = gammas_.gamma4;
  const double tol = 1e-9 * (1.0 + domains_.y_max);
  double y = p.y0, yb = p.yb0;
  std::size_t next = 0;
  double resid = 0.0;
  const auto& obs = obs_.observations;
  for (std::size_t t = 1; t < x.size(); ++t) {
    const double y_new = g1 * (y - yb) + yb + p.b * x[t];
    const double yb_new = g2 * yb + g3 * y + g4 * p.yb;
    y = y_new;
    yb = yb_new;
    if (y < -tol || y > domains_.y_max + tol || yb < -tol || yb > domains_.y_max + tol) {
      return kNegInf;
    }
    while (next < obs.size() && static_cast<std::size_t>(obs[next].hour) == t) {
      resid += std::abs(obs[next].aptt - y);
      ++next;
    }
  }
  double v = -resid / obs_.noise_scale -
             static_cast<double>(obs.size()) * std::log(2.0 * obs_.noise_scale);
  if (prior_.y0) v += laplace_log(p.y0, *prior_.y0);
  if (prior_.yb0) v += laplace_log(p.yb0, *prior_.yb0);
  if (prior_.yb) v += laplace_log(p.yb, *prior_.yb);
  return v;
}

// ---------------------------------------------------------------------------
// Point evaluation and grid search

ProfileFit log_likelihood_at(const ObservationSeries& obs, double alpha, double b, double k,
                             const EstimationConfig& config) {
  ProfileEvaluator ev(obs, config.domains, config.gammas, config.prior);
  return ev.fit(alpha, k, b);
}

namespace {

EstimateResult finish(const ObservationSeries& obs, const EstimationConfig& config, double alpha,
                      double k, double b, const ProfileFit& fit, double posterior) {
  EstimateResult res;
  res.params = {alpha, k, b, fit.y0, fit.yb0, fit.yb};
  res.log_posterior = posterior;
  ProfileEvaluator plain(obs, config.domains, config.gammas, {});
  res.log_likelihood = plain.fixed_value(res.params);
  res.diagnostics.low_information = obs.observations.size() < 3;
  return res;
}

}  // namespace

EstimateResult mle_grid(const ObservationSeries& obs, const EstimationConfig& config,
                        std::size_t alpha_index) {
  const auto t0 = Clock::now();
  if (alpha_index >= config.domains.alphas.size()) throw InvalidParameter("alpha index out of range");
  const double alpha = config.domains.alphas[alpha_index];
  const auto bs = config.b_grid();
  const auto ks = config.k_grid();
  if (bs.empty() || ks.empty()) throw InvalidInput("empty estimation grid");
  ProfileEvaluator ev(obs, config.domains, config.gammas, config.prior);

  Incumbent best;
  std::size_t evaluated = 0;
  auto search = [&](const std::vector<double>& kset) {
    for (double k : kset) {
      check_deadline(config, "grid", evaluated);
      const auto x = ev.heparin_path(alpha, k);
      std::vector<double> z(x.size());
      for (std::size_t bi = 0; bi < bs.size(); ++bi) {
        for (std::size_t t = 0; t < x.size(); ++t) z[t] = bs[bi] * x[t];
        const auto fit = ev.fit_z(z, nullptr);
        ++evaluated;
        if (!fit.feasible()) continue;
        const double v = fit.value + config.prior.log_density_master(alpha, k, bs[bi]);
        if (best.improved_by(v, bi, k)) best.take(v, bi, k);
      }
    }
  };
  search(ks);
  if (!best.set) throw EstimationFailed("every grid point is infeasible");
  search(refine_mesh(ks, best.k, config.k_refine));

  const double b = bs[best.b_index];
  const auto fit = ev.fit(alpha, best.k, b);
  auto res = finish(obs, config, alpha, best.k, b, fit, best.value);
  res.diagnostics.iterations = evaluated;
  res.diagnostics.lp_solves = ev.lp_solves();
  res.diagnostics.max_duality_gap = ev.max_duality_gap();
  res.diagnostics.wall_seconds = seconds_since(t0);
  return res;
}

EstimateResult mle_grid(const ObservationSeries& obs, const EstimationConfig& config) {
  return mle_estimate(obs, EstimationMethod::grid, config);
}

// ---------------------------------------------------------------------------
// Benders decomposition over a finite candidate set

namespace {

class BendersMaster {
 public:
  BendersMaster(const ObservationSeries& obs, double alpha, std::vector<double> bs,
                const EstimationConfig& config)
      : config_(config),
        alpha_(alpha),
        bs_(std::move(bs)),
        ev_(obs, config.domains, config.gammas, config.prior) {
    if (bs_.empty()) throw InvalidInput("empty b candidate set");
    std::sort(bs_.begin(), bs_.end());
  }

  void add_k(const std::vector<double>& ks) {
    for (double k : ks) {
      if (std::find(ks_.begin(), ks_.end(), k) != ks_.end()) continue;
      check_point(alpha_, k, bs_.front(), config_.domains);
      Column col;
      col.k = k;
      col.x = ev_.heparin_path(alpha_, k);
      col.ub.assign(bs_.size(), lp::kInf);
      col.excluded.assign(bs_.size(), 0);
      col.value.assign(bs_.size(), std::numeric_limits<double>::quiet_NaN());
      col.prior.resize(bs_.size());
      for (std::size_t bi = 0; bi < bs_.size(); ++bi) {
        col.prior[bi] = config_.prior.log_density_master(alpha_, k, bs_[bi]);
      }
      for (const auto& c : cuts_) apply(c, col);
      ks_.push_back(k);
      cols_.push_back(std::move(col));
    }
  }

  void run(int phase) {
    for (;;) {
      check_deadline(config_, "benders", diag_.iterations);
      // Master: best bound over the surviving candidates.
      bool any = false;
      double top = kNegInf;
      std::size_t top_b = 0, top_c = 0;
      for (std::size_t c = 0; c < cols_.size(); ++c) {
        for (std::size_t bi = 0; bi < bs_.size(); ++bi) {
          if (cols_[c].excluded[bi]) continue;
          const double v = cols_[c].ub[bi] + cols_[c].prior[bi];
          const bool better = !any || v > top ||
                              (v == top && (bi < top_b || (bi == top_b && cols_[c].k < cols_[top_c].k)));
          if (better) {
            any = true;
            top = v;
            top_b = bi;
            top_c = c;
          }
        }
      }
      if (!any) {
        upper_ = best_.set ? best_.value : kNegInf;
        break;
      }
      upper_ = top;
      if (std::isfinite(top)) diag_.trace.push_back({phase, top, best_.set ? best_.value : kNegInf});
      if (best_.set && best_.value >= top - config_.epsilon) break;
      if (diag_.iterations >= config_.max_benders_iterations) {
        std::ostringstream os;
        os << "Benders iteration cap reached (iterations=" << diag_.iterations
           << ", upper=" << top << ", lower=" << best_.value << ")";
        throw EstimationFailed(os.str());
      }
      evaluate(top_c, top_b);
    }
  }

  BendersResult result(const std::chrono::steady_clock::time_point t0) {
    if (!best_.set) throw EstimationFailed("no feasible candidate for this alpha");
    BendersResult r;
    r.k = best_.k;
    r.b = bs_[best_.b_index];
    r.value = best_.value;
    r.upper = upper_;
    r.fit = ev_.fit(alpha_, r.k, r.b);
    r.diagnostics = diag_;
    r.diagnostics.lp_solves = ev_.lp_solves();
    r.diagnostics.max_duality_gap = ev_.max_duality_gap();
    r.diagnostics.low_information = ev_.series().observations.size() < 3;
    r.diagnostics.wall_seconds = seconds_since(t0);
    return r;
  }

  double incumbent_k() const { return best_.k; }
  bool has_incumbent() const { return best_.set; }

 private:
  struct Cut {
    bool optimality = true;
    std::vector<double> slope;
    double anchor = 0.0;  // slope . z_bar
    double value = 0.0;   // L(z_bar) or certificate pairing
    double limit = 0.0;   // feasibility only
  };
  struct Column {
    double k = 0.0;
    std::vector<double> x;
    std::vector<double> ub;
    std::vector<char> excluded;
    std::vector<double> value;
    std::vector<double> prior;
  };

  void apply(const Cut& cut, Column& col) const {
    double dot = 0.0;
    for (std::size_t t = 1; t < col.x.size(); ++t) dot += cut.slope[t] * col.x[t];
    for (std::size_t bi = 0; bi < bs_.size(); ++bi) {
      const double lin = cut.value + bs_[bi] * dot - cut.anchor;
      if (cut.optimality) {
        col.ub[bi] = std::min(col.ub[bi], lin);
      } else {
        const double tol = 1e-9 * (1.0 + std::abs(cut.limit) + std::abs(cut.value));
        if (lin > cut.limit + tol) col.excluded[bi] = 1;
      }
    }
  }

  void evaluate(std::size_t c, std::size_t bi) {
    ++diag_.iterations;
    auto& col = cols_[c];
    std::vector<double> z(col.x.size());
    for (std::size_t t = 0; t < z.size(); ++t) z[t] = bs_[bi] * col.x[t];
    ProfileCut pc;
    ev_.fit_z(z, &pc);
    Cut cut;
    cut.optimality = pc.feasible;
    cut.slope = std::move(pc.slope);
    for (std::size_t t = 1; t < z.size(); ++t) cut.anchor += cut.slope[t] * z[t];
    if (pc.feasible) {
      ++diag_.optimality_cuts;
      cut.value = pc.value;
      const double v = pc.value + col.prior[bi];
      col.value[bi] = v;
      if (best_.improved_by(v, bi, col.k)) best_.take(v, bi, col.k);
    } else {
      ++diag_.feasibility_cuts;
      cut.value = pc.pairing;
      cut.limit = pc.pairing_limit;
    }
    for (auto& other : cols_) apply(cut, other);
    // The evaluated point is settled exactly.
    if (pc.feasible) {
      col.ub[bi] = pc.value;
    } else {
      col.excluded[bi] = 1;
    }
    cuts_.push_back(std::move(cut));
  }

  const EstimationConfig& config_;
  double alpha_;
  std::vector<double> bs_;
  std::vector<double> ks_;
  ProfileEvaluator ev_;
  std::vector<Column> cols_;
  std::vector<Cut> cuts_;
  Incumbent best_;
  double upper_ = lp::kInf;
  EstimateDiagnostics diag_;
};

}  // namespace

BendersResult benders_solve(const ObservationSeries& obs, double alpha,
                            const std::vector<double>& k_candidates,
                            const std::vector<double>& b_candidates,
                            const EstimationConfig& config) {
  const auto t0 = Clock::now();
  if (!(config.epsilon > 0.0)) throw InvalidParameter("epsilon must be positive");
  if (k_candidates.empty()) throw InvalidInput("empty k candidate set");
  BendersMaster master(obs, alpha, b_candidates, config);
  auto ks = k_candidates;
  std::sort(ks.begin(), ks.end());
  master.add_k(ks);
  master.run(1);
  return master.result(t0);
}

BendersResult benders_refined(const ObservationSeries& obs, double alpha,
                              const EstimationConfig& config) {
  const auto t0 = Clock::now();
  if (!(config.epsilon > 0.0)) throw InvalidParameter("epsilon must be positive");
  BendersMaster master(obs, alpha, config.b_grid(), config);
  const auto ks = config.k_grid();
  master.add_k(ks);
  master.run(1);
  if (!master.has_incumbent()) throw EstimationFailed("no feasible candidate for this alpha");
  master.add_k(refine_mesh(ks, master.incumbent_k(), config.k_refine));
  master.run(2);
  return master.result(t0);
}

EstimateResult mle_estimate(const ObservationSeries& obs, EstimationMethod method,
                            const EstimationConfig& config) {
  const auto t0 = Clock::now();
  if (config.domains.alphas.empty()) throw ConfigError("alpha set is empty");
  std::optional<EstimateResult> best;
  EstimateDiagnostics total;
  for (std::size_t ai = 0; ai < config.domains.alphas.size(); ++ai) {
    EstimateResult r;
    try {
      if (method == EstimationMethod::grid) {
        r = mle_grid(obs, config, ai);
      } else {
        const double alpha = config.domains.alphas[ai];
        auto br = benders_refined(obs, alpha, config);
        r = finish(obs, config, alpha, br.k, br.b, br.fit, br.value);
        r.diagnostics = br.diagnostics;
      }
    } catch (const EstimationFailed&) {
      continue;  // this alpha admits no feasible candidate
    }
    total.iterations += r.diagnostics.iterations;
    total.optimality_cuts += r.diagnostics.optimality_cuts;
    total.feasibility_cuts += r.diagnostics.feasibility_cuts;
    total.lp_solves += r.diagnostics.lp_solves;
    total.max_duality_gap = std::max(total.max_duality_gap, r.diagnostics.max_duality_gap);
    if (!best || r.log_posterior > best->log_posterior) best = std::move(r);
  }
  if (!best) throw EstimationFailed("no feasible parameters for any alpha");
  total.trace = std::move(best->diagnostics.trace);
  total.low_information = obs.observations.size() < 3;
  total.wall_seconds = seconds_since(t0);
  best->diagnostics = std::move(total);
  return *best;
}

// ---------------------------------------------------------------------------
// Posterior

double log_posterior_at(const ObservationSeries& obs, const PatientParams& params,
                        const EstimationConfig& config) {
  validate_params(params, config.domains);
  ProfileEvaluator ev(obs, config.domains, config.gammas, config.prior);
  const double v = ev.fixed_value(params);
  if (v == kNegInf) return kNegInf;
  return v + config.prior.log_density_master(params.alpha, params.k, params.b);
}

double scaled_posterior(double log_posterior, double map_value) {
  if (log_posterior == kNegInf) return 0.0;
  return std::exp(std::min(0.0, log_posterior - map_value));
}

double scaled_posterior(const ObservationSeries& obs, const PatientParams& params,
                        const EstimationConfig& config, double map_value) {
  return scaled_posterior(log_posterior_at(obs, params, config), map_value);
}

// ---------------------------------------------------------------------------
// Scenario table

std::vector<std::pair<double, double>> scenario_grid(const std::vector<double>& alphas,
                                                     std::size_t b_count, const Domains& domains) {
  std::vector<std::pair<double, double>> grid;
  const auto bs = log_space(domains.b.lo, domains.b.hi, b_count);
  for (double a : alphas) {
    for (double b : bs) grid.emplace_back(a, b);
  }
  return grid;
}

std::pair<double, ProfileFit> profile_over_k(const ProfileEvaluator& eval, double alpha, double b,
                                             const EstimationConfig& config, std::size_t mesh) {
  const auto ks = log_space(config.domains.k.lo, config.domains.k.hi, std::max<std::size_t>(mesh, 2));
  double best_k = 0.0;
  double best_v = kNegInf;
  ProfileFit best_fit;
  bool set = false;
  auto consider = [&](double k) {
    auto fit = eval.fit(alpha, k, b);
    const double v = fit.feasible() ? fit.value + config.prior.log_density_master(alpha, k, b) : kNegInf;
    if (!set || v > best_v || (v == best_v && k < best_k)) {
      set = true;
      best_v = v;
      best_k = k;
      best_fit = std::move(fit);
    }
    return v;
  };
  std::vector<double> vs(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) vs[i] = consider(ks[i]);
  if (best_v == kNegInf) return {best_k, best_fit};

  // The profile is multimodal in k; refine every local maximum of the mesh
  // by golden-section search on log k over its two neighbouring cells.
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (std::size_t m = 0; m < ks.size(); ++m) {
    if (vs[m] == kNegInf) continue;
    if (m > 0 && vs[m - 1] >= vs[m]) continue;
    if (m + 1 < ks.size() && vs[m + 1] > vs[m]) continue;
    double lo = std::log(ks[m == 0 ? 0 : m - 1]);
    double hi = std::log(ks[std::min(m + 1, ks.size() - 1)]);
    double a = hi - invphi * (hi - lo);
    double c = lo + invphi * (hi - lo);
    double fa = consider(std::exp(a));
    double fc = consider(std::exp(c));
    for (int it = 0; it < 40 && hi - lo > 1e-6; ++it) {
      if (fa >= fc) {
        hi = c;
        c = a;
        fc = fa;
        a = hi - invphi * (hi - lo);
        fa = consider(std::exp(a));
      } else {
        lo = a;
        a = c;
        fa = fc;
        c = lo + invphi * (hi - lo);
        fc = consider(std::exp(c));
      }
    }
  }
  if (best_fit.feasible()) best_fit.value = best_v;
  return {best_k, best_fit};
}

ScenarioTable scenario_table(const ObservationSeries& obs,
                             const std::vector<std::pair<double, double>>& grid,
                             const EstimationConfig& config) {
  if (grid.empty()) throw InvalidInput("scenario grid is empty");
  obs.validate();
  ScenarioTable table;
  table.scenarios.resize(grid.size());
  detail::parallel_for(grid.size(), config.workers, [&](std::size_t i) {
    check_deadline(config, "scenario table", i);
    ProfileEvaluator ev(obs, config.domains, config.gammas, config.prior);
    const auto [alpha, b] = grid[i];
    auto [k, fit] = profile_over_k(ev, alpha, b, config);
    Scenario s;
    s.alpha = alpha;
    s.b = b;
    s.k = k;
    s.y0 = fit.y0;
    s.yb0 = fit.yb0;
    s.yb = fit.yb;
    s.log_weight = fit.value;
    table.scenarios[i] = s;
  });
  normalize_weights(table);
  return table;
}

void normalize_weights(ScenarioTable& table) {
  double top = kNegInf;
  for (const auto& s : table.scenarios) top = std::max(top, s.log_weight);
  if (top == kNegInf) throw EstimationFailed("every scenario is infeasible");
  double total = 0.0;
  for (auto& s : table.scenarios) {
    s.raw_weight = s.log_weight == kNegInf ? 0.0 : std::exp(s.log_weight - top);
    total += s.raw_weight;
  }
  for (auto& s : table.scenarios) s.weight = s.raw_weight / total;
}

std::size_t ScenarioTable::map_index() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scenarios.size(); ++i) {
    if (scenarios[i].weight > scenarios[best].weight) best = i;
  }
  return best;
}

}  // namespace heparin
