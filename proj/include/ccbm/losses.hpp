#pragma once

// Training objectives and their gradients with respect to model outputs:
//   total = lambda1 * CE(probs, y) + concept_loss(S, C) + lambda2 * similarity(K^u, K)
// CE and BCE are summed over the batch; MSE carries a 1/n factor.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ccbm/errors.hpp"
#include "ccbm/model.hpp"
#include "ccbm/numkernel.hpp"

namespace ccbm {

inline constexpr double kLogClamp = 1e-12;

struct LossWeights {
  double lambda1 = 1.0;  // classification
  double lambda2 = 0.0;  // similarity

  void validate() const {
    if (!std::isfinite(lambda1) || !std::isfinite(lambda2) || lambda1 < 0.0 || lambda2 < 0.0) {
      throw ConfigError("LossWeights: lambdas must be finite and >= 0");
    }
  }
};

enum class SimilarityMode {
  squared_cosine,  // cos^2: minimum at orthogonality
  cosine,          // raw cos: minimum at anti-alignment
};

struct LossOptions {
  SimilarityMode similarity = SimilarityMode::squared_cosine;
  // Divide CE and BCE by the batch size. MSE already has 1/n.
  bool batch_mean = false;
};

struct LossBreakdown {
  double total = 0.0;
  double ce_term = 0.0;
  double concept_term = 0.0;
  double similarity_term = 0.0;
};

inline double recompose(const LossBreakdown& b, const LossWeights& w) {
  return w.lambda1 * b.ce_term + b.concept_term + w.lambda2 * b.similarity_term;
}

// ---------------------------------------------------------------------------
// Classification cross-entropy on probabilities.

inline void check_labels(const Matrix& probs, std::span<const std::size_t> labels) {
  if (probs.rows() != labels.size()) {
    throw DimensionError("classification_loss: probs has " + std::to_string(probs.rows()) +
                         " rows, labels " + std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= probs.cols()) {
      throw DataError("classification_loss: label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " out of range [0," + std::to_string(probs.cols()) + ")");
    }
  }
}

inline double classification_loss(const Matrix& probs, std::span<const std::size_t> labels) {
  check_labels(probs, labels);
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    loss -= std::log(std::max(probs(i, labels[i]), kLogClamp));
  }
  return loss;
}

// d/dprobs; zero where the clamp is active.
inline Matrix classification_loss_grad(const Matrix& probs, std::span<const std::size_t> labels) {
  check_labels(probs, labels);
  Matrix g(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = probs(i, labels[i]);
    if (p > kLogClamp) g(i, labels[i]) = -1.0 / p;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Concept detection terms.

inline void check_binary_targets(const Matrix& scores, const Matrix& targets) {
  if (!scores.same_shape(targets)) {
    throw DimensionError("concept loss: scores " + shape_str(scores) + " vs targets " +
                         shape_str(targets));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double c = targets.data()[i];
    if (c != 0.0 && c != 1.0) {
      throw DataError("concept_bce_loss: target " + std::to_string(c) + " at entry " +
                      std::to_string(i) + " is not binary");
    }
  }
}

// -[c log sigma(s) + (1-c) log(1 - sigma(s))] = softplus(s) - c s
inline double bce_with_logit(double s, double c) {
  const double softplus = std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s)));
  return softplus - c * s;
}

inline double concept_bce_loss(const Matrix& scores, const Matrix& targets) {
  check_binary_targets(scores, targets);
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) loss += bce_with_logit(scores.data()[i], targets.data()[i]);
  return loss;
}

inline Matrix concept_bce_loss_grad(const Matrix& scores, const Matrix& targets) {
  check_binary_targets(scores, targets);
  Matrix g(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < scores.size(); ++i) g.data()[i] = sigmoid(scores.data()[i]) - targets.data()[i];
  return g;
}

inline double concept_mse_loss(const Matrix& scores, const Matrix& targets) {
  if (!scores.same_shape(targets)) {
    throw DimensionError("concept_mse_loss: scores " + shape_str(scores) + " vs targets " +
                         shape_str(targets));
  }
  if (scores.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double e = targets.data()[i] - scores.data()[i];
    sum += e * e;
  }
  return sum / static_cast<double>(scores.rows());
}

inline Matrix concept_mse_loss_grad(const Matrix& scores, const Matrix& targets) {
  if (!scores.same_shape(targets)) throw DimensionError("concept_mse_loss_grad: shape mismatch");
  Matrix g(scores.rows(), scores.cols());
  const double inv_n = scores.rows() ? 1.0 / static_cast<double>(scores.rows()) : 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    g.data()[i] = 2.0 * (scores.data()[i] - targets.data()[i]) * inv_n;
  return g;
}

// ---------------------------------------------------------------------------
// Similarity penalty between unknown embeddings (rows of `unknown`) and
// everything else: sum_i [ sum_{j != i} sim(U_i, U_j) + sum_j sim(U_i, K_j) ].

namespace detail {

inline void check_nonzero_rows(const Matrix& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (norm(m.row(r)) == 0.0) {
      throw NumericError(std::string("similarity_penalty: ") + what + " row " + std::to_string(r) +
                         " has zero norm (degenerate embedding)");
    }
  }
}

inline double sim_value(double cos, SimilarityMode mode) {
  return mode == SimilarityMode::squared_cosine ? cos * cos : cos;
}

inline double sim_slope(double cos, SimilarityMode mode) {
  return mode == SimilarityMode::squared_cosine ? 2.0 * cos : 1.0;
}

// Adds slope * d cos(a, b) / da into ga.
inline void add_cos_grad(std::span<const double> a, std::span<const double> b, double slope,
                         std::span<double> ga) {
  const double na = norm(a);
  const double nb = norm(b);
  const double cos = dot(a, b) / (na * nb);
  for (std::size_t k = 0; k < a.size(); ++k) {
    ga[k] += slope * (b[k] / (na * nb) - cos * a[k] / (na * na));
  }
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / (norm(a) * norm(b));
}

}  // namespace detail

inline double similarity_penalty(const Matrix& unknown, const Matrix& known,
                                 SimilarityMode mode = SimilarityMode::squared_cosine) {
  if (unknown.rows() == 0) return 0.0;
  if (known.rows() > 0 && known.cols() != unknown.cols()) {
    throw DimensionError("similarity_penalty: unknown " + shape_str(unknown) + " vs known " +
                         shape_str(known));
  }
  detail::check_nonzero_rows(unknown, "unknown");
  detail::check_nonzero_rows(known, "known");
  double total = 0.0;
  for (std::size_t i = 0; i < unknown.rows(); ++i) {
    for (std::size_t j = 0; j < unknown.rows(); ++j) {
      if (j != i) total += detail::sim_value(detail::cosine(unknown.row(i), unknown.row(j)), mode);
    }
    for (std::size_t j = 0; j < known.rows(); ++j) {
      total += detail::sim_value(detail::cosine(unknown.row(i), known.row(j)), mode);
    }
  }
  return total;
}

inline Matrix similarity_penalty_grad(const Matrix& unknown, const Matrix& known,
                                      SimilarityMode mode = SimilarityMode::squared_cosine) {
  Matrix g(unknown.rows(), unknown.cols());
  if (unknown.rows() == 0) return g;
  detail::check_nonzero_rows(unknown, "unknown");
  detail::check_nonzero_rows(known, "known");
  for (std::size_t i = 0; i < unknown.rows(); ++i) {
    for (std::size_t j = 0; j < unknown.rows(); ++j) {
      if (j == i) continue;
      // Ordered pair (i, j) depends on both rows.
      const double slope = detail::sim_slope(detail::cosine(unknown.row(i), unknown.row(j)), mode);
      detail::add_cos_grad(unknown.row(i), unknown.row(j), slope, g.row(i));
      detail::add_cos_grad(unknown.row(j), unknown.row(i), slope, g.row(j));
    }
    for (std::size_t j = 0; j < known.rows(); ++j) {
      const double slope = detail::sim_slope(detail::cosine(unknown.row(i), known.row(j)), mode);
      detail::add_cos_grad(unknown.row(i), known.row(j), slope, g.row(i));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Aggregate objective over a batch of model outputs.

struct LossInputs {
  const Matrix& probs;                   // n x n_c
  std::span<const std::size_t> labels;   // n
  const Matrix& known_scores;            // n x n_k raw scores
  const Matrix& concept_targets;         // n x n_k
  const Matrix& unknown_embeddings;      // n_u x d_u
  const Matrix& known_embeddings;        // n_k x d_k
};

struct LossGrads {
  Matrix dprobs;
  Matrix dknown_scores;
  Matrix dunknown_embeddings;
};

inline LossBreakdown total_loss(const LossInputs& in, ConceptTask task, const LossWeights& w,
                                const LossOptions& opt = {}, LossGrads* grads = nullptr) {
  LossBreakdown b;
  const double n = static_cast<double>(in.labels.size());
  const double norm_factor = opt.batch_mean && n > 0 ? 1.0 / n : 1.0;
  b.ce_term = classification_loss(in.probs, in.labels) * norm_factor;
  if (task == ConceptTask::classification) {
    b.concept_term = concept_bce_loss(in.known_scores, in.concept_targets) * norm_factor;
  } else {
    b.concept_term = concept_mse_loss(in.known_scores, in.concept_targets);
  }
  const bool has_unknown = in.unknown_embeddings.rows() > 0;
  b.similarity_term = has_unknown ? similarity_penalty(in.unknown_embeddings, in.known_embeddings, opt.similarity) : 0.0;
  b.total = recompose(b, w);

  if (grads) {
    grads->dprobs = classification_loss_grad(in.probs, in.labels);
    for (double& v : grads->dprobs.data()) v *= w.lambda1 * norm_factor;
    if (task == ConceptTask::classification) {
      grads->dknown_scores = concept_bce_loss_grad(in.known_scores, in.concept_targets);
      for (double& v : grads->dknown_scores.data()) v *= norm_factor;
    } else {
      grads->dknown_scores = concept_mse_loss_grad(in.known_scores, in.concept_targets);
    }
    if (has_unknown) {
      grads->dunknown_embeddings = similarity_penalty_grad(in.unknown_embeddings, in.known_embeddings, opt.similarity);
      for (double& v : grads->dunknown_embeddings.data()) v *= w.lambda2;
    } else {
      grads->dunknown_embeddings = Matrix(in.unknown_embeddings.rows(), in.unknown_embeddings.cols());
    }
  }
  return b;
}

// Same objective from recorded traces.
inline LossBreakdown total_loss(std::span<const ForwardTrace> traces, std::span<const std::size_t> labels,
                                const Matrix& concept_targets, const LossWeights& w,
                                const CcbmParams& params, const ConceptBank& bank,
                                const ModelConfig& config, const LossOptions& opt = {}) {
  Matrix probs(traces.size(), config.n_c);
  Matrix scores(traces.size(), config.n_k);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::copy(traces[i].probs.begin(), traces[i].probs.end(), probs.row(i).begin());
    std::copy(traces[i].known_scores.begin(), traces[i].known_scores.end(), scores.row(i).begin());
  }
  return total_loss(LossInputs{probs, labels, scores, concept_targets, params.unknown_embeddings, bank.embeddings},
                    config.concept_task, w, opt);
}

}  // namespace ccbm
