#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace heparin {

/// Closed interval [lo, hi].
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  double width() const { return hi - lo; }
};

/// Parameter and state domains. Defaults are the ones used for the
/// retrospective ICU cohort; `synthetic_icu()` rescales the heparin
/// response so that clinically sized hourly doses map into the aPTT box.
struct Domains {
  std::vector<double> alphas{0.500, 0.574, 0.630, 0.673, 0.707};
  double alpha_floor = 1e-3;
  Interval b{0.1, 10.0};
  Interval k{0.1, 5000.0};
  double y_max = 150.0;
  double x_max = 5000.0;
  double u_max = 3000.0;

  static Domains synthetic_icu();
  void validate() const;
};

/// Population-level decay constants of the aPTT recursion.
struct GlobalDecayRates {
  double gamma1 = 0.80;
  double gamma2 = 0.85;
  double gamma3 = 0.05;
  double gamma4 = 0.10;

  void validate() const;
  /// Spectral radius of the zero-heparin (y, y_base) transition matrix.
  double spectral_radius() const;
};

/// Metabolism parameters (alpha, k) and aPTT response parameters
/// (b, y0, yb0, yb) of one patient.
struct PatientParams {
  double alpha = 0.5;
  double k = 1000.0;
  double b = 0.003;
  double y0 = 30.0;
  double yb0 = 30.0;
  double yb = 30.0;

  friend bool operator==(const PatientParams&, const PatientParams&) = default;
};

/// Throws InvalidParameter when `p` lies outside `domains`. The alpha check
/// is against (alpha_floor, 1), not membership in the finite alpha set, so
/// that arbitrary scenario grids can be simulated.
void validate_params(const PatientParams& p, const Domains& domains);

struct PatientState {
  double x = 0.0;       ///< heparin amount, IU
  double y = 0.0;       ///< aPTT, seconds
  double y_base = 0.0;  ///< medium-term baseline aPTT, seconds

  friend bool operator==(const PatientState&, const PatientState&) = default;
};

struct StepResult {
  PatientState state;
  bool clamped = false;
};

/// Piecewise-linear elimination: alpha*x below the breakpoint k/(1-alpha),
/// x-k above it.
inline double eliminate(double x, double alpha, double k) {
  return x <= k / (1.0 - alpha) ? alpha * x : x - k;
}

/// Advance one hour. `dose` is the amount administered during the hour that
/// the new state describes.
StepResult step(const PatientState& state, double dose, const PatientParams& params,
                const GlobalDecayRates& gammas, const Domains& domains = {});

struct Trajectory {
  std::vector<PatientState> states;  ///< states[t] for t = 0..horizon
  bool clamped = false;

  std::size_t horizon() const { return states.empty() ? 0 : states.size() - 1; }
};

/// Roll the model forward from x_0 = 0, y_0 = params.y0, y_b0 = params.yb0.
/// doses[i] is the dose administered during hour i + 1.
Trajectory simulate(const PatientParams& params, const GlobalDecayRates& gammas,
                    std::span<const double> doses, const Domains& domains = {});

/// Same recursion starting from an arbitrary state, without validation.
/// Used by planners that cache the state at the planning time.
Trajectory simulate_from(const PatientState& start, const PatientParams& params,
                         const GlobalDecayRates& gammas, std::span<const double> doses,
                         const Domains& domains);

/// Principal branch of the Lambert W function for z >= 0.
double lambert_w0(double z);
/// W0(exp(log_z)), evaluated without forming exp(log_z).
double lambert_w0_from_log(double log_z);

/// Closed-form Michaelis-Menten amount after t hours of elimination from x1.
double mm_exact(double v_max, double K, double x1, double t);

/// y_true plus zero-mean Laplace noise with the given scale.
double sample_observation(double y_true, double scale, std::mt19937_64& rng);
double sample_observation(double y_true, double scale, std::uint64_t seed);

struct Band {
  double low = 0.0;
  double high = 0.0;

  bool contains(double y) const { return y >= low && y <= high; }
  double median() const { return 0.5 * (low + high); }
  /// Distance to the nearer edge; 0 inside the band.
  double distance(double y) const { return y < low ? low - y : (y > high ? y - high : 0.0); }
};

Band therapeutic_range(double yb);

enum class RangeLabel { sub, therapeutic, super };
const char* to_string(RangeLabel label);
/// Position of y relative to the closed band [1.5 yb, 2.5 yb].
RangeLabel label(double y, double yb);

}  // namespace heparin
