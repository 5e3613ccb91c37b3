#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "heparin/dynamics.hpp"

/// Mixed-integer restatements of the kinetics used by the estimation
/// problem, with checkers that evaluate each constraint system on a concrete
/// assignment. With z_t = b x_t and c = b k the bilinear products disappear;
/// the alpha choice becomes a disjunction over the finite alpha set and the
/// elimination mode becomes a big-M switch.
namespace heparin::reform {

/// Big-M constants derived from the domain boxes.
struct BigM {
  double z_max = 0.0;   ///< b_max * x_max
  double c_max = 0.0;   ///< b_max * k_max
  double alpha = 0.0;   ///< bounds |w_it - alpha_i z_t| and |w_it|
  double mode = 0.0;    ///< bounds every relaxed elimination-mode row
};
BigM big_m(const Domains& domains);

/// One assignment of the reformulated variables over t = 0..T.
struct Assignment {
  double b = 0.0;
  double c = 0.0;
  std::vector<double> z;                ///< z_t, t = 0..T
  std::vector<double> y, y_base;        ///< t = 0..T
  double y_home = 0.0;                  ///< homeostasis aPTT
  std::vector<int> iota;                ///< one entry per alpha in the set
  std::vector<std::vector<double>> w_i; ///< w_i[i][t], t = 0..T-1
  std::vector<double> w;                ///< w_t = sum_i w_i[i][t]
  std::vector<int> nu;                  ///< 1 = zero-order leg at t
};

/// Lifts the trajectory produced by `simulate` into every reformulated
/// variable. `alpha_index` selects params.alpha within domains.alphas.
Assignment lift(const PatientParams& params, std::size_t alpha_index,
                const std::vector<double>& doses, const GlobalDecayRates& gammas,
                const Domains& domains);

struct CheckResult {
  bool feasible = true;
  double worst_violation = 0.0;
  /// Largest fraction of M consumed by a row that the indicators relax.
  /// Must stay below 1 so that M never binds.
  double relaxed_usage = 0.0;
  std::string first_violation;
};

/// z recursion with the threshold c / (1 - alpha) and the aPTT recursions.
CheckResult check_bilinear(const Assignment& a, double alpha, const std::vector<double>& doses,
                           const GlobalDecayRates& gammas, double tol = 1e-9);
/// Disjunctive alpha selection with w_it bounded by M iota_i.
CheckResult check_disjunctive(const Assignment& a, const std::vector<double>& alphas,
                              const std::vector<double>& doses, const BigM& m,
                              double tol = 1e-9);
/// Big-M switch between the first- and zero-order legs.
CheckResult check_big_m(const Assignment& a, const std::vector<double>& doses, const BigM& m,
                        double tol = 1e-9);

/// Maps a feasible assignment back to (alpha, k, x_t) and reports whether
/// it reproduces the kinetics exactly (to `tol` relative).
bool maps_to_trajectory(const Assignment& a, const std::vector<double>& alphas,
                        const std::vector<double>& doses, double tol = 1e-9);

}  // namespace heparin::reform
