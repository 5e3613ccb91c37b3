#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "heparin/dynamics.hpp"
#include "heparin/estimation.hpp"

namespace heparin {

/// Probabilities indexed by RangeLabel: sub, therapeutic, super.
using LabelProbs = std::array<double, 3>;

inline std::size_t index(RangeLabel l) { return static_cast<std::size_t>(l); }

/// Most probable label; ties resolve to therapeutic, then to sub.
RangeLabel argmax_label(const LabelProbs& p);

struct LabelSample {
  int hour = 0;  ///< hour of the reading being predicted
  RangeLabel truth = RangeLabel::therapeutic;
  LabelProbs probs{0.0, 1.0, 0.0};
  RangeLabel predicted = RangeLabel::therapeutic;
  bool confident = true;  ///< false when the predictor had nothing to go on
};

struct LabelSeries {
  std::string id;
  std::vector<LabelSample> samples;

  /// Throws InvalidInput unless every triple is nonnegative and sums to 1
  /// within 1e-9.
  void validate() const;
};

/// Scenario-mixture label probabilities for a reading at `target_hour`.
/// Each scenario is rolled forward under `doses` and spreads its weight over
/// the labels by the Laplace(noise_scale) mass inside the band of `band_yb`,
/// or inside its own band when `band_yb` is empty.
/// Throws InvalidInput if the table carries no weight or `doses` is short.
LabelProbs predict_label_probs(const ScenarioTable& table, const std::vector<double>& doses,
                               int target_hour, double noise_scale,
                               const GlobalDecayRates& gammas, const Domains& domains,
                               std::optional<double> band_yb = std::nullopt);

struct EvaluationConfig {
  int epoch_hours = 4;
  /// Epochs whose start precedes this many hours of history are skipped.
  int min_history_hours = 24;
  std::vector<double> scenario_alphas{0.500, 0.574, 0.630, 0.673, 0.707};
  std::size_t scenario_b_count = 5;
  EstimationConfig estimation;

  void validate() const;
};

/// Epoch e covers hours ((e-1) E, e E]; the last reading inside it is the
/// epoch's reading. Returns (epoch, reading) for every epoch with one.
std::vector<std::pair<int, Observation>> epoch_readings(const ObservationSeries& record,
                                                        int epoch_hours);

/// One sample per epoch reading: the model sees readings up to the epoch's
/// start and is rolled under the recorded doses. Labels and predicted mass
/// both use the patient's band from `label_yb`, so the model predicts the
/// level, not the band.
LabelSeries model_label_series(const std::string& id, const ObservationSeries& record,
                               double label_yb, const EvaluationConfig& config);

/// Predicts the previous epoch's label with certainty. An epoch without a
/// predecessor reading gets uniform probabilities, therapeutic, and
/// confident = false. Samples cover the same epochs as model_label_series.
LabelSeries persistence_label_series(const std::string& id, const ObservationSeries& record,
                                     double label_yb, const EvaluationConfig& config);

enum class RocMode { micro, macro };
const char* to_string(RocMode mode);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  RocMode mode = RocMode::micro;
  std::vector<RocPoint> points;  ///< raw step curve from (0,0) to (1,1)
  double auc = 0.0;              ///< trapezoid over `points`
  std::vector<std::string> warnings;
};

/// micro pools the three one-vs-all problems; macro averages per-class TPR
/// on the union of their FPR points, skipping (with a warning) classes that
/// have no positives or no negatives. Throws InvalidInput on no samples, or
/// when micro has no positive or no negative pair.
RocCurve roc(const std::vector<LabelSeries>& series, RocMode mode);

/// Centered moving average of TPR for plotting; endpoints and AUC untouched.
RocCurve smoothed(const RocCurve& curve, std::size_t window);

struct ConfusionMatrix {
  /// [truth][predicted], as fractions of all samples.
  std::array<std::array<double, 3>, 3> fraction{};
  std::array<double, 3> tpr{};  ///< per class, one vs all
  std::array<double, 3> fpr{};
  std::size_t samples = 0;
};

ConfusionMatrix confusion(const std::vector<LabelSeries>& series);

struct EvaluationReport {
  RocCurve micro;
  RocCurve macro;
  ConfusionMatrix confusion;
  double accuracy = 0.0;
};

EvaluationReport evaluate(const std::vector<LabelSeries>& series);

}  // namespace heparin
