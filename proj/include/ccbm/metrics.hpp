#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccbm/errors.hpp"
#include "ccbm/model.hpp"
#include "ccbm/numkernel.hpp"

namespace ccbm {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(equal).
// The numerator is accumulated as an exact integer count of half-pairs.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores/labels length mismatch");
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  for (int y : labels) {
    if (y == 1) ++n_pos;
    else if (y == 0) ++n_neg;
    else throw DataError("auc: labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc: undefined with a single class present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::int64_t half_pairs = 0;
  std::int64_t neg_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::int64_t pos_here = 0;
    std::int64_t neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos_here : neg_here) += 1;
      ++j;
    }
    half_pairs += pos_here * (2 * neg_below + neg_here);
    neg_below += neg_here;
    i = j;
  }
  return static_cast<double>(half_pairs) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double auc(std::span<const double> scores, std::span<const std::size_t> labels) {
  std::vector<int> y(labels.begin(), labels.end());
  return auc(scores, std::span<const int>(y));
}

// Diagnosis AUC. Binary: AUC of the class-1 probability. Multiclass:
// unweighted one-vs-rest mean over classes that have both positives and
// negatives in `labels`.
inline double diagnosis_auc(const Matrix& probs, std::span<const std::size_t> labels) {
  if (probs.rows() != labels.size()) throw DimensionError("diagnosis_auc: shape mismatch");
  const std::size_t n_c = probs.cols();
  auto column = [&](std::size_t c) {
    Vector v(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) v[i] = probs(i, c);
    return v;
  };
  auto one_vs_rest = [&](std::size_t c) {
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == c ? 1 : 0;
    return y;
  };
  if (n_c == 2) {
    const auto s = column(1);
    const auto y = one_vs_rest(1);
    return auc(s, std::span<const int>(y));
  }
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < n_c; ++c) {
    const auto y = one_vs_rest(c);
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size())) continue;
    const auto s = column(c);
    sum += auc(s, std::span<const int>(y));
    ++used;
  }
  if (used == 0) throw MetricError("diagnosis_auc: no class has both positives and negatives");
  return sum / static_cast<double>(used);
}

inline double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> labels) {
  if (pred.size() != labels.size()) throw DimensionError("accuracy: length mismatch");
  if (pred.empty()) return kNaN;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

namespace detail {

inline double f1_for_class(std::span<const std::size_t> pred, std::span<const std::size_t> labels,
                           std::size_t c) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == c;
    const bool t = labels[i] == c;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

}  // namespace detail

enum class F1Mode { macro, binary_positive };

// Unweighted mean of per-class F1 with 0 when precision + recall = 0.
inline double macro_f1(std::span<const std::size_t> pred, std::span<const std::size_t> labels, std::size_t n_c) {
  if (pred.size() != labels.size()) throw DimensionError("macro_f1: length mismatch");
  double sum = 0.0;
  for (std::size_t c = 0; c < n_c; ++c) sum += detail::f1_for_class(pred, labels, c);
  return sum / static_cast<double>(n_c);
}

inline double f1_score(std::span<const std::size_t> pred, std::span<const std::size_t> labels,
                       std::size_t n_c, F1Mode mode, std::size_t positive_class = 1) {
  if (mode == F1Mode::binary_positive) {
    if (pred.size() != labels.size()) throw DimensionError("f1_score: length mismatch");
    return detail::f1_for_class(pred, labels, positive_class);
  }
  return macro_f1(pred, labels, n_c);
}

struct RmseMae {
  double rmse = 0.0;
  double mae = 0.0;
};

inline RmseMae rmse_mae(const Matrix& scores, const Matrix& targets) {
  if (!scores.same_shape(targets)) throw DimensionError("rmse_mae: shape mismatch");
  if (scores.empty()) return {kNaN, kNaN};
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double e = scores.data()[i] - targets.data()[i];
    sq += e * e;
    ab += std::abs(e);
  }
  const double n = static_cast<double>(scores.size());
  return {std::sqrt(sq / n), ab / n};
}

// ---------------------------------------------------------------------------

struct DiagnosisMetrics {
  double auc = kNaN;
  double acc = kNaN;
  double f1 = kNaN;
};

struct ConceptMetrics {
  ConceptTask task = ConceptTask::classification;
  Vector auc;  // per concept; NaN where a concept is single-class in the evaluated set
  Vector acc;
  double mean_auc = kNaN;
  double mean_acc = kNaN;
  double rmse = kNaN;
  double mae = kNaN;
};

struct MetricReport {
  DiagnosisMetrics diagnosis;
  ConceptMetrics concepts;

  // Ordered scalar summary used for aggregation across folds.
  std::vector<std::pair<std::string, double>> scalars() const {
    std::vector<std::pair<std::string, double>> out{
        {"diag_auc", diagnosis.auc}, {"diag_acc", diagnosis.acc}, {"diag_f1", diagnosis.f1}};
    if (concepts.task == ConceptTask::classification) {
      out.emplace_back("concept_auc", concepts.mean_auc);
      out.emplace_back("concept_acc", concepts.mean_acc);
    } else {
      out.emplace_back("concept_rmse", concepts.rmse);
      out.emplace_back("concept_mae", concepts.mae);
    }
    return out;
  }
};

inline double nan_mean(std::span<const double> v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    sum += x;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : kNaN;
}

inline std::vector<std::size_t> argmax_rows(const Matrix& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto r = probs.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

// probs: n x n_c, scores: n x n_k raw known scores, targets: n x n_k.
inline MetricReport compute_metrics(const Matrix& probs, std::span<const std::size_t> labels,
                                    const Matrix& scores, const Matrix& targets, ConceptTask task,
                                    F1Mode f1_mode = F1Mode::macro) {
  MetricReport r;
  const auto pred = argmax_rows(probs);
  try {
    r.diagnosis.auc = diagnosis_auc(probs, labels);
  } catch (const MetricError&) {
    r.diagnosis.auc = kNaN;
  }
  r.diagnosis.acc = accuracy(pred, labels);
  r.diagnosis.f1 = f1_score(pred, labels, probs.cols(), f1_mode);

  r.concepts.task = task;
  const std::size_t n_k = scores.cols();
  if (task == ConceptTask::classification) {
    r.concepts.auc.assign(n_k, kNaN);
    r.concepts.acc.assign(n_k, kNaN);
    for (std::size_t j = 0; j < n_k; ++j) {
      Vector s(scores.rows());
      std::vector<int> y(scores.rows());
      std::size_t correct = 0;
      for (std::size_t i = 0; i < scores.rows(); ++i) {
        s[i] = scores(i, j);
        y[i] = targets(i, j) > 0.5 ? 1 : 0;
        correct += (sigmoid(s[i]) >= 0.5 ? 1 : 0) == y[i];
      }
      try {
        r.concepts.auc[j] = auc(s, std::span<const int>(y));
      } catch (const MetricError&) {
      }
      if (!s.empty()) r.concepts.acc[j] = static_cast<double>(correct) / static_cast<double>(s.size());
    }
    r.concepts.mean_auc = nan_mean(r.concepts.auc);
    r.concepts.mean_acc = nan_mean(r.concepts.acc);
  } else {
    const auto e = rmse_mae(scores, targets);
    r.concepts.rmse = e.rmse;
    r.concepts.mae = e.mae;
  }
  return r;
}

}  // namespace ccbm
