#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "heparin/dynamics.hpp"

namespace heparin {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Observation {
  int hour = 0;  ///< 1-based hour of the record
  double aptt = 0.0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Dose history plus the sparse aPTT readings made during it.
/// doses[i] is the dose given during hour i + 1, so the record spans
/// hours 1..doses.size().
struct ObservationSeries {
  std::vector<double> doses;
  std::vector<Observation> observations;  ///< strictly increasing hours
  double noise_scale = 1.0;               ///< Laplace scale, seconds

  int horizon() const { return static_cast<int>(doses.size()); }
  /// Throws InvalidInput on hours outside 1..T, nonincreasing hours,
  /// negative aPTT or doses, or a nonpositive noise scale.
  void validate() const;
  /// Copy restricted to hours 1..t.
  ObservationSeries truncated(int t) const;
};

/// Noise scale from second differences of consecutive readings: the median
/// absolute residual against the neighbour average, converted to a Laplace
/// scale. Never below `floor`.
double estimate_noise_scale(const std::vector<Observation>& obs, double floor = 1.0);

/// Laplace prior on one parameter.
struct LaplacePrior {
  double center = 0.0;
  double scale = 1.0;
};

/// Log prior over the patient parameters. Every unset component is uniform
/// over its domain and contributes 0, so log densities are relative to the
/// uniform reference measure.
struct PriorSpec {
  std::optional<LaplacePrior> alpha, k, b, y0, yb0, yb;

  bool uniform() const { return !alpha && !k && !b && !y0 && !yb0 && !yb; }
  /// Prior terms on (alpha, k, b) only.
  double log_density_master(double alpha, double k, double b) const;
  double log_density(const PatientParams& p) const;
  void validate() const;
};

struct EstimationConfig {
  Domains domains;
  GlobalDecayRates gammas;
  PriorSpec prior;
  /// Response coefficients searched; empty means `b_mesh` log-spaced points.
  std::vector<double> b_candidates;
  /// Metabolic capacities searched; empty means `k_mesh` log-spaced points.
  std::vector<double> k_candidates;
  std::size_t b_mesh = 24;
  std::size_t k_mesh = 64;
  /// Points in the refinement mesh spanning the coarse neighbours of the
  /// incumbent k (10x the coarse resolution).
  std::size_t k_refine = 21;
  double epsilon = 1e-3;
  std::size_t max_benders_iterations = 1000000;
  std::optional<std::chrono::steady_clock::time_point> deadline;
  /// Worker threads for scenario evaluation; 0 = hardware concurrency.
  std::size_t workers = 0;

  std::vector<double> b_grid() const;
  std::vector<double> k_grid() const;
};

/// Profiled fit for fixed (alpha, k, b).
struct ProfileFit {
  double value = kNegInf;  ///< log likelihood (+ y-parameter log prior)
  double y0 = 0.0, yb0 = 0.0, yb = 0.0;
  std::vector<double> y_path;  ///< y_t for t = 0..T at the profiled values
  bool feasible() const { return value != kNegInf; }
};

/// Per-solve LP information used by the Benders cuts.
struct ProfileCut {
  bool feasible = false;
  double value = kNegInf;
  /// Optimality: supergradient of the value in z = b * x (entries 1..T).
  /// Feasibility: gradient of the certificate's rhs pairing in z.
  std::vector<double> slope;
  /// Feasibility only: certificate value f'rhs at the evaluated z, and the
  /// largest value f'A x can take over the variable bounds.
  double pairing = 0.0;
  double pairing_limit = 0.0;
  double duality_gap = 0.0;
  std::size_t lp_iterations = 0;
};

/// Fits (y0, yb0, yb) for fixed (alpha, k, b) with an L1 linear program.
/// States are affine in (y0, yb0, yb); the state box rows are added only
/// when the unconstrained optimum violates them.
class ProfileEvaluator {
 public:
  ProfileEvaluator(const ObservationSeries& obs, const Domains& domains,
                   const GlobalDecayRates& gammas, const PriorSpec& prior = {});

  /// x_t for t = 0..T (clamped rollout, x_0 = 0).
  std::vector<double> heparin_path(double alpha, double k) const;

  ProfileFit fit(double alpha, double k, double b) const;
  /// Same as fit on z = b * x, also returning the cut data.
  ProfileFit fit_z(const std::vector<double>& z, ProfileCut* cut) const;
  /// Residual log likelihood with every parameter fixed; -inf when the
  /// rollout leaves the state box. Includes the y-parameter prior terms.
  double fixed_value(const PatientParams& params) const;

  const ObservationSeries& series() const { return obs_; }
  std::size_t lp_solves() const { return lp_solves_; }
  double max_duality_gap() const { return max_gap_; }

 private:
  ObservationSeries obs_;
  Domains domains_;
  GlobalDecayRates gammas_;
  PriorSpec prior_;
  double log_norm_ = 0.0;
  // Sensitivities of (y_t, yb_t) with respect to (y0, yb0, yb): sens_[t][i][j].
  std::vector<std::array<std::array<double, 3>, 2>> sens_;
  mutable std::size_t lp_solves_ = 0;
  mutable double max_gap_ = 0.0;
};

struct BoundTracePoint {
  int phase = 0;
  double upper = 0.0;  ///< master bound
  double lower = 0.0;  ///< best evaluated value
};

struct EstimateDiagnostics {
  std::size_t iterations = 0;
  std::size_t optimality_cuts = 0;
  std::size_t feasibility_cuts = 0;
  std::size_t lp_solves = 0;
  double wall_seconds = 0.0;
  double max_duality_gap = 0.0;
  bool low_information = false;
  std::vector<BoundTracePoint> trace;
};

struct EstimateResult {
  PatientParams params;
  double log_likelihood = kNegInf;
  double log_posterior = kNegInf;
  EstimateDiagnostics diagnostics;
};

/// Log likelihood of the record at (alpha, k, b) with (y0, yb0, yb) profiled
/// out. Infeasible combinations return value -inf.
ProfileFit log_likelihood_at(const ObservationSeries& obs, double alpha, double b, double k,
                             const EstimationConfig& config = {});

/// Exhaustive search over alpha x b x k with one k refinement per alpha.
/// Tie-break: alpha index, then b, then k.
EstimateResult mle_grid(const ObservationSeries& obs, const EstimationConfig& config);
EstimateResult mle_grid(const ObservationSeries& obs, const EstimationConfig& config,
                        std::size_t alpha_index);

/// Benders decomposition over the same candidate set as mle_grid for one alpha.
struct BendersResult {
  double k = 0.0;
  double b = 0.0;
  double value = kNegInf;  ///< incumbent (lower bound)
  double upper = kNegInf;  ///< final master bound
  ProfileFit fit;
  EstimateDiagnostics diagnostics;
};
BendersResult benders_solve(const ObservationSeries& obs, double alpha,
                            const std::vector<double>& k_candidates,
                            const std::vector<double>& b_candidates,
                            const EstimationConfig& config);
/// Two-phase variant used by mle_estimate: coarse candidates, then the
/// refinement mesh around the incumbent k.
BendersResult benders_refined(const ObservationSeries& obs, double alpha,
                              const EstimationConfig& config);

enum class EstimationMethod { grid, benders };
EstimateResult mle_estimate(const ObservationSeries& obs, EstimationMethod method,
                            const EstimationConfig& config);

/// Log posterior with every parameter fixed: residual term plus log prior.
/// Returns -inf when the fixed trajectory leaves the state box.
double log_posterior_at(const ObservationSeries& obs, const PatientParams& params,
                        const EstimationConfig& config);

/// exp(psi - map_value) clipped to [0, 1].
double scaled_posterior(double log_posterior, double map_value);
double scaled_posterior(const ObservationSeries& obs, const PatientParams& params,
                        const EstimationConfig& config, double map_value);

struct Scenario {
  double alpha = 0.0;
  double b = 0.0;
  double k = 0.0;
  double y0 = 0.0, yb0 = 0.0, yb = 0.0;
  double log_weight = kNegInf;  ///< profiled log posterior
  double raw_weight = 0.0;      ///< exp(log_weight - max log_weight)
  double weight = 0.0;          ///< normalized

  PatientParams params() const { return {alpha, k, b, y0, yb0, yb}; }
};

struct ScenarioTable {
  std::vector<Scenario> scenarios;
  /// Index of the highest weight; ties to the lower index.
  std::size_t map_index() const;
};

/// (alpha, b) scenario grid: alphas x `b_count` log-spaced coefficients.
std::vector<std::pair<double, double>> scenario_grid(const std::vector<double>& alphas,
                                                     std::size_t b_count, const Domains& domains);

/// Profile search over k: coarse log mesh, then golden-section refinement
/// around every local maximum of the mesh. Returns the best fit and its k.
std::pair<double, ProfileFit> profile_over_k(const ProfileEvaluator& eval, double alpha, double b,
                                             const EstimationConfig& config,
                                             std::size_t mesh = 32);

ScenarioTable scenario_table(const ObservationSeries& obs,
                             const std::vector<std::pair<double, double>>& grid,
                             const EstimationConfig& config);

/// Normalizes log weights into raw and normalized weights in place.
/// Throws EstimationFailed when every weight is -inf.
void normalize_weights(ScenarioTable& table);

}  // namespace heparin
