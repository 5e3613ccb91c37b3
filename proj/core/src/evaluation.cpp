#include "heparin/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>

#include "heparin/errors.hpp"

namespace heparin {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr LabelProbs kUniform{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

double laplace_cdf(double v, double mu, double scale) {
  const double z = (v - mu) / scale;
  return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
}

LabelProbs one_hot(RangeLabel l) {
  LabelProbs p{0.0, 0.0, 0.0};
  p[index(l)] = 1.0;
  return p;
}

struct BinaryRoc {
  std::vector<RocPoint> points;
  double auc = 0.0;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
};

/// Step curve over descending score groups. The AUC numerator is kept in
/// integer counts, so it equals the rank-sum statistic exactly.
BinaryRoc binary_roc(std::vector<std::pair<double, bool>> pairs) {
  BinaryRoc r;
  for (const auto& [s, pos] : pairs) (pos ? r.positives : r.negatives)++;
  if (r.positives == 0 || r.negatives == 0) return r;
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  const double P = static_cast<double>(r.positives), N = static_cast<double>(r.negatives);
  std::uint64_t tp = 0, fp = 0;
  std::uint64_t twice_area = 0;
  r.points.push_back({0.0, 0.0});
  for (std::size_t i = 0; i < pairs.size();) {
    const std::uint64_t tp0 = tp, fp0 = fp;
    std::size_t j = i;
    for (; j < pairs.size() && pairs[j].first == pairs[i].first; ++j) {
      (pairs[j].second ? tp : fp)++;
    }
    twice_area += (fp - fp0) * (tp + tp0);
    r.points.push_back({static_cast<double>(fp) / N, static_cast<double>(tp) / P});
    i = j;
  }
  r.auc = static_cast<double>(twice_area) / (2.0 * P * N);
  return r;
}

double trapezoid(const std::vector<RocPoint>& pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) * 0.5;
  }
  return a;
}

/// Lowest and highest TPR of a step curve at `f`; equal off vertical runs.
std::pair<double, double> tpr_at(const std::vector<RocPoint>& pts, double f) {
  auto lo = std::lower_bound(pts.begin(), pts.end(), f,
                             [](const RocPoint& p, double v) { return p.fpr < v; });
  if (lo != pts.end() && lo->fpr == f) {
    auto hi = lo;
    while (std::next(hi) != pts.end() && std::next(hi)->fpr == f) ++hi;
    return {lo->tpr, hi->tpr};
  }
  const auto& b = *lo;
  const auto& a = *std::prev(lo);
  const double t = a.tpr + (b.tpr - a.tpr) * (f - a.fpr) / (b.fpr - a.fpr);
  return {t, t};
}

std::size_t sample_count(const std::vector<LabelSeries>& series) {
  std::size_t n = 0;
  for (const auto& s : series) n += s.samples.size();
  return n;
}

}  // namespace

RangeLabel argmax_label(const LabelProbs& p) {
  RangeLabel best = RangeLabel::therapeutic;
  for (RangeLabel l : {RangeLabel::sub, RangeLabel::super}) {
    if (p[index(l)] > p[index(best)]) best = l;
  }
  return best;
}

void LabelSeries::validate() const {
  for (const auto& s : samples) {
    double sum = 0.0;
    for (double v : s.probs) {
      if (!(v >= 0.0)) throw InvalidInput("label probabilities must be nonnegative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("label probabilities must sum to 1");
  }
}

LabelProbs predict_label_probs(const ScenarioTable& table, const std::vector<double>& doses,
                               int target_hour, double noise_scale,
                               const GlobalDecayRates& gammas, const Domains& domains,
                               std::optional<double> band_yb) {
  if (target_hour < 0 || static_cast<std::size_t>(target_hour) > doses.size()) {
    throw InvalidInput("dose record does not reach the target hour");
  }
  if (!(noise_scale > 0.0)) throw InvalidInput("noise scale must be positive");
  if (band_yb && !(*band_yb > 0.0)) throw InvalidInput("band baseline must be positive");
  const std::vector<double> upto(doses.begin(), doses.begin() + target_hour);
  LabelProbs p{0.0, 0.0, 0.0};
  double total = 0.0;
  for (const auto& s : table.scenarios) {
    if (!(s.weight > 0.0) || (!band_yb && !(s.yb > 0.0))) continue;
    const double y = simulate(s.params(), gammas, upto, domains).states.back().y;
    const auto band = therapeutic_range(band_yb.value_or(s.yb));
    const double below = laplace_cdf(band.low, y, noise_scale);
    const double above = 1.0 - laplace_cdf(band.high, y, noise_scale);
    p[index(RangeLabel::sub)] += s.weight * below;
    p[index(RangeLabel::super)] += s.weight * above;
    p[index(RangeLabel::therapeutic)] += s.weight * (1.0 - below - above);
    total += s.weight;
  }
  if (!(total > 0.0)) throw InvalidInput("scenario table carries no usable weight");
  for (double& v : p) v = std::max(0.0, v / total);
  const double sum = p[0] + p[1] + p[2];
  for (double& v : p) v /= sum;
  return p;
}

void EvaluationConfig::validate() const {
  if (epoch_hours < 1) throw ConfigError("epoch length must be positive");
  if (min_history_hours < 0) throw ConfigError("minimum history must be nonnegative");
  if (scenario_alphas.empty() || scenario_b_count == 0) {
    throw ConfigError("evaluation scenario grid must be nonempty");
  }
}

std::vector<std::pair<int, Observation>> epoch_readings(const ObservationSeries& record,
                                                        int epoch_hours) {
  if (epoch_hours < 1) throw ConfigError("epoch length must be positive");
  std::map<int, Observation> last;
  for (const auto& o : record.observations) last[(o.hour + epoch_hours - 1) / epoch_hours] = o;
  return {last.begin(), last.end()};
}

LabelSeries model_label_series(const std::string& id, const ObservationSeries& record,
                               double label_yb, const EvaluationConfig& config) {
  config.validate();
  record.validate();
  const auto grid =
      scenario_grid(config.scenario_alphas, config.scenario_b_count, config.estimation.domains);
  LabelSeries out;
  out.id = id;
  for (const auto& [epoch, obs] : epoch_readings(record, config.epoch_hours)) {
    const int start = (epoch - 1) * config.epoch_hours;
    if (start < config.min_history_hours) continue;
    LabelSample s;
    s.hour = obs.hour;
    s.truth = label(obs.aptt, label_yb);
    auto history = record.truncated(start);
    if (history.observations.empty()) {
      s.probs = kUniform;
      s.confident = false;
    } else {
      history.noise_scale = estimate_noise_scale(history.observations);
      try {
        const auto table = scenario_table(history, grid, config.estimation);
        s.probs = predict_label_probs(table, record.doses, obs.hour, history.noise_scale,
                                      config.estimation.gammas, config.estimation.domains,
                                      label_yb);
      } catch (const EstimationFailed&) {
        s.probs = kUniform;
        s.confident = false;
      }
    }
    s.predicted = argmax_label(s.probs);
    out.samples.push_back(s);
  }
  return out;
}

LabelSeries persistence_label_series(const std::string& id, const ObservationSeries& record,
                                     double label_yb, const EvaluationConfig& config) {
  config.validate();
  record.validate();
  const auto readings = epoch_readings(record, config.epoch_hours);
  std::map<int, Observation> by_epoch(readings.begin(), readings.end());
  LabelSeries out;
  out.id = id;
  for (const auto& [epoch, obs] : readings) {
    if ((epoch - 1) * config.epoch_hours < config.min_history_hours) continue;
    LabelSample s;
    s.hour = obs.hour;
    s.truth = label(obs.aptt, label_yb);
    const auto prev = by_epoch.find(epoch - 1);
    if (prev == by_epoch.end()) {
      s.probs = kUniform;
      s.confident = false;
      s.predicted = RangeLabel::therapeutic;
    } else {
      s.predicted = label(prev->second.aptt, label_yb);
      s.probs = one_hot(s.predicted);
    }
    out.samples.push_back(s);
  }
  return out;
}

const char* to_string(RocMode mode) { return mode == RocMode::micro ? "micro" : "macro"; }

RocCurve roc(const std::vector<LabelSeries>& series, RocMode mode) {
  if (sample_count(series) == 0) throw InvalidInput("no labelled samples");
  RocCurve out;
  out.mode = mode;
  if (mode == RocMode::micro) {
    std::vector<std::pair<double, bool>> pairs;
    for (const auto& s : series) {
      for (const auto& x : s.samples) {
        for (std::size_t c = 0; c < 3; ++c) pairs.emplace_back(x.probs[c], index(x.truth) == c);
      }
    }
    auto b = binary_roc(std::move(pairs));
    if (b.positives == 0 || b.negatives == 0) throw InvalidInput("micro ROC is undefined");
    out.points = std::move(b.points);
    out.auc = b.auc;
    return out;
  }

  std::vector<std::vector<RocPoint>> curves;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<std::pair<double, bool>> pairs;
    for (const auto& s : series) {
      for (const auto& x : s.samples) pairs.emplace_back(x.probs[c], index(x.truth) == c);
    }
    auto b = binary_roc(std::move(pairs));
    if (b.positives == 0 || b.negatives == 0) {
      out.warnings.push_back(std::string("class ") + to_string(static_cast<RangeLabel>(c)) +
                             " has no " + (b.positives == 0 ? "positives" : "negatives") +
                             "; skipped in macro average");
      continue;
    }
    curves.push_back(std::move(b.points));
  }
  if (curves.empty()) {
    out.auc = kNaN;
    return out;
  }
  std::vector<double> mesh;
  for (const auto& c : curves) {
    for (const auto& p : c) mesh.push_back(p.fpr);
  }
  std::sort(mesh.begin(), mesh.end());
  mesh.erase(std::unique(mesh.begin(), mesh.end()), mesh.end());
  const double k = static_cast<double>(curves.size());
  for (double f : mesh) {
    double lo = 0.0, hi = 0.0;
    for (const auto& c : curves) {
      const auto [a, b] = tpr_at(c, f);
      lo += a;
      hi += b;
    }
    out.points.push_back({f, lo / k});
    if (hi != lo) out.points.push_back({f, hi / k});
  }
  out.auc = trapezoid(out.points);
  return out;
}

RocCurve smoothed(const RocCurve& curve, std::size_t window) {
  RocCurve out = curve;
  if (window < 2 || curve.points.size() < 3) return out;
  const std::size_t half = window / 2;
  const std::size_t n = curve.points.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const std::size_t a = i > half ? i - half : 0;
    const std::size_t b = std::min(n - 1, i + half);
    double sum = 0.0;
    for (std::size_t j = a; j <= b; ++j) sum += curve.points[j].tpr;
    out.points[i].tpr = sum / static_cast<double>(b - a + 1);
  }
  return out;
}

ConfusionMatrix confusion(const std::vector<LabelSeries>& series) {
  const std::size_t n = sample_count(series);
  if (n == 0) throw InvalidInput("no labelled samples");
  std::array<std::array<std::size_t, 3>, 3> counts{};
  for (const auto& s : series) {
    for (const auto& x : s.samples) ++counts[index(x.truth)][index(argmax_label(x.probs))];
  }
  ConfusionMatrix m;
  m.samples = n;
  const double total = static_cast<double>(n);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t p = 0; p < 3; ++p) m.fraction[t][p] = static_cast<double>(counts[t][p]) / total;
  }
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      row += counts[c][j];
      col += counts[j][c];
    }
    const std::size_t diag = counts[c][c];
    m.tpr[c] = row ? static_cast<double>(diag) / static_cast<double>(row) : kNaN;
    m.fpr[c] = n - row ? static_cast<double>(col - diag) / static_cast<double>(n - row) : kNaN;
  }
  return m;
}

EvaluationReport evaluate(const std::vector<LabelSeries>& series) {
  EvaluationReport r;
  r.micro = roc(series, RocMode::micro);
  r.macro = roc(series, RocMode::macro);
  r.confusion = confusion(series);
  for (std::size_t c = 0; c < 3; ++c) r.accuracy += r.confusion.fraction[c][c];
  return r;
}

}  // namespace heparin
