#pragma once

// Mini-batch Adam on the joint objective, with early stopping on the
// training loss and a (lambda1, lambda2) grid search by k-fold AUC.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccbm/data.hpp"
#include "ccbm/errors.hpp"
#include "ccbm/losses.hpp"
#include "ccbm/metrics.hpp"
#include "ccbm/model.hpp"
#include "ccbm/numkernel.hpp"
#include "ccbm/rng.hpp"

namespace ccbm {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam on flat buffers; t is the 1-based step count.
inline void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                        std::span<double> v, const AdamHyper& h, std::size_t t) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw DimensionError("adam_update: buffer sizes differ");
  }
  if (t < 1) throw ConfigError("adam_update: t must be >= 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grads[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    params[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
  }
}

struct AdamState {
  CcbmParams m;
  CcbmParams v;
  std::size_t t = 0;

  static AdamState for_params(const CcbmParams& p) { return {zeros_like(p), zeros_like(p), 0}; }
};

// One step over every block in for_each_block order; increments state.t.
inline void adam_step(CcbmParams& params, CcbmParams& grads, AdamState& state, const AdamHyper& h) {
  auto pb = blocks(params);
  auto gb = blocks(grads);
  auto mb = blocks(state.m);
  auto vb = blocks(state.v);
  if (pb.size() != gb.size() || pb.size() != mb.size() || pb.size() != vb.size()) {
    throw DimensionError("adam_step: parameter structure mismatch");
  }
  ++state.t;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    adam_update(pb[i]->data(), gb[i]->data(), mb[i]->data(), vb[i]->data(), h, state.t);
  }
}

// ---------------------------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  LossOptions loss;
  std::size_t max_epochs = 300;
  std::size_t batch_size = 32;
  AdamHyper adam;
  std::size_t early_stop_window = 10;
  double early_stop_tol = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    weights.validate();
    if (max_epochs < 1) throw ConfigError("TrainConfig: max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr)) throw ConfigError("TrainConfig: lr must be finite and >= 0");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0)) {
      throw ConfigError("TrainConfig: betas must lie in (0, 1)");
    }
    if (early_stop_window < 2) throw ConfigError("TrainConfig: early_stop_window must be >= 2");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;     // mean over the epoch's mini-batches
  double val_auc = kNaN;
  double val_acc = kNaN;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t stopped_epoch = 0;
  bool early_stopped = false;
  double wall_seconds = 0.0;

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    out << "epoch,total,ce,cep,sim,val_auc,val_acc\n";
    for (const auto& e : epochs) {
      out << e.epoch << "," << format_double(e.loss.total) << "," << format_double(e.loss.ce_term) << ","
          << format_double(e.loss.concept_term) << "," << format_double(e.loss.similarity_term) << ","
          << format_double(e.val_auc) << "," << format_double(e.val_acc) << "\n";
    }
  }
};

struct BatchResult {
  LossBreakdown loss;
  CcbmParams grads;
};

// Loss and parameter gradient over dataset.records[indices].
inline BatchResult loss_and_gradient(const CcbmParams& params, const ConceptBank& bank, const Dataset& data,
                                     std::span<const std::size_t> indices, const ModelConfig& config,
                                     const LossWeights& weights, const LossOptions& options) {
  BatchResult out;
  out.grads = zeros_like(params);
  const std::size_t n = indices.size();
  GradTape tape;
  std::vector<GradTape::Var> prob_rows;
  std::vector<GradTape::Var> score_rows;
  prob_rows.reserve(n);
  score_rows.reserve(n);
  std::vector<std::size_t> labels(n);
  Matrix targets(n, config.n_k);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& rec = data.records[indices[b]];
    const ForwardVars v = record_forward(tape, rec.feature, params, bank, &out.grads);
    prob_rows.push_back(v.probs);
    score_rows.push_back(tape.transpose(v.known_scores));
    labels[b] = rec.label;
    std::copy(rec.concepts.begin(), rec.concepts.end(), targets.row(b).begin());
  }
  const auto probs = tape.concat_rows(prob_rows);
  const auto scores = tape.concat_rows(score_rows);
  LossGrads lg;
  out.loss = total_loss(LossInputs{tape.value(probs), labels, tape.value(scores), targets,
                                   params.unknown_embeddings, bank.embeddings},
                        config.concept_task, weights, options, &lg);
  tape.grad(probs) += lg.dprobs;
  tape.grad(scores) += lg.dknown_scores;
  tape.backward();
  out.grads.unknown_embeddings += lg.dunknown_embeddings;
  return out;
}

inline double batch_total_loss(const CcbmParams& params, const ConceptBank& bank, const Dataset& data,
                               std::span<const std::size_t> indices, const ModelConfig& config,
                               const LossWeights& weights, const LossOptions& options) {
  std::vector<ForwardTrace> traces;
  std::vector<std::size_t> labels;
  Matrix targets(indices.size(), config.n_k);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& rec = data.records[indices[b]];
    traces.push_back(diagnose(rec.feature, params, bank));
    labels.push_back(rec.label);
    std::copy(rec.concepts.begin(), rec.concepts.end(), targets.row(b).begin());
  }
  return total_loss(traces, labels, targets, weights, params, bank, config, options).total;
}

// ---------------------------------------------------------------------------

struct Predictions {
  Matrix probs;   // n x n_c
  Matrix scores;  // n x n_k raw known scores
  Matrix unknown_scores;
  Matrix targets;
  std::vector<std::size_t> labels;
};

inline Predictions predict(const CcbmParams& params, const ConceptBank& bank, const Dataset& data,
                           std::span<const std::size_t> indices) {
  Predictions p;
  const std::size_t n = indices.size();
  const std::size_t n_c = params.decision.weight.cols();
  const std::size_t n_k = params.known_adapters.size();
  const std::size_t n_u = params.unknown_adapters.size();
  p.probs = Matrix(n, n_c);
  p.scores = Matrix(n, n_k);
  p.unknown_scores = Matrix(n, n_u);
  p.targets = Matrix(n, n_k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = data.records[indices[i]];
    const ForwardTrace t = diagnose(rec.feature, params, bank);
    std::copy(t.probs.begin(), t.probs.end(), p.probs.row(i).begin());
    std::copy(t.known_scores.begin(), t.known_scores.end(), p.scores.row(i).begin());
    std::copy(t.unknown_scores.begin(), t.unknown_scores.end(), p.unknown_scores.row(i).begin());
    std::copy(rec.concepts.begin(), rec.concepts.end(), p.targets.row(i).begin());
    p.labels.push_back(rec.label);
  }
  return p;
}

inline std::vector<std::size_t> all_indices(const Dataset& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

inline MetricReport evaluate(const CcbmParams& params, const ConceptBank& bank, const Dataset& data,
                             std::span<const std::size_t> indices, ConceptTask task,
                             F1Mode f1_mode = F1Mode::macro) {
  const Predictions p = predict(params, bank, data, indices);
  return compute_metrics(p.probs, p.labels, p.scores, p.targets, task, f1_mode);
}

struct TrainResult {
  CcbmParams params;
  TrainHistory history;
};

struct ValidationSet {
  const Dataset* data = nullptr;
  std::vector<std::size_t> indices;
};

inline void check_consistency(const Dataset& data, const ConceptBank& bank, const ModelConfig& m) {
  if (data.meta.d != m.d || data.meta.n_k != m.n_k || data.meta.n_c != m.n_c) {
    throw DimensionError("dataset (d=" + std::to_string(data.meta.d) + ", n_k=" + std::to_string(data.meta.n_k) +
                         ", n_c=" + std::to_string(data.meta.n_c) + ") does not match model config (d=" +
                         std::to_string(m.d) + ", n_k=" + std::to_string(m.n_k) + ", n_c=" +
                         std::to_string(m.n_c) + ")");
  }
  if (data.meta.task != m.concept_task) throw DimensionError("dataset task does not match model concept_task");
  if (bank.embeddings.rows() != m.n_k || bank.embeddings.cols() != m.d_k) {
    throw DimensionError("concept bank " + shape_str(bank.embeddings) + " does not match n_k x d_k = " +
                         std::to_string(m.n_k) + "x" + std::to_string(m.d_k));
  }
}

// Trains on data.records[train_indices] from init_params(config.seed).
inline TrainResult train(const Dataset& data, const ConceptBank& bank, std::span<const std::size_t> train_indices,
                         const TrainConfig& config, const ValidationSet* validation = nullptr) {
  config.validate();
  check_consistency(data, bank, config.model);
  if (train_indices.empty()) throw DataError("train: empty training set");
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  result.params = init_params(config.model, config.seed);
  AdamState state = AdamState::for_params(result.params);
  Rng shuffle_rng(config.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    LossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t off = 0; off < order.size(); off += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - off);
      const std::span<const std::size_t> batch(order.data() + off, len);
      BatchResult br = loss_and_gradient(result.params, bank, data, batch, config.model, config.weights, config.loss);
      if (!std::isfinite(br.loss.total)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite");
      }
      adam_step(result.params, br.grads, state, config.adam);
      sum.ce_term += br.loss.ce_term;
      sum.concept_term += br.loss.concept_term;
      sum.similarity_term += br.loss.similarity_term;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    const double nb = static_cast<double>(batches);
    rec.loss.ce_term = sum.ce_term / nb;
    rec.loss.concept_term = sum.concept_term / nb;
    rec.loss.similarity_term = sum.similarity_term / nb;
    rec.loss.total = recompose(rec.loss, config.weights);
    if (!all_finite(flatten(result.params))) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": parameters are not finite");
    }
    if (validation && validation->data) {
      const auto m = evaluate(result.params, bank, *validation->data, validation->indices, config.model.concept_task);
      rec.val_auc = m.diagnosis.auc;
      rec.val_acc = m.diagnosis.acc;
    }
    result.history.epochs.push_back(rec);
    result.history.stopped_epoch = epoch;

    const std::size_t w = config.early_stop_window;
    if (result.history.epochs.size() > w) {
      const double now = rec.loss.total;
      const double then = result.history.epochs[result.history.epochs.size() - 1 - w].loss.total;
      const double rel = std::abs(now - then) / std::max(std::abs(then), 1e-300);
      if (rel < config.early_stop_tol) {
        result.history.early_stopped = true;
        break;
      }
    }
  }
  result.history.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

inline TrainResult train(const Dataset& data, const ConceptBank& bank, const TrainConfig& config) {
  const auto idx = all_indices(data);
  return train(data, bank, idx, config);
}

// ---------------------------------------------------------------------------

struct GridCell {
  LossWeights weights;
  std::vector<double> fold_auc;
  double mean_auc = kNaN;
  bool ok = false;
  std::string failure;
};

struct GridSearchResult {
  LossWeights best;
  std::vector<GridCell> table;
};

// Each cell scored by k-fold mean held-out diagnosis AUC. Cells whose
// training diverges or whose AUC is undefined are kept in the table but
// cannot win. Ties go to smaller lambda2, then smaller lambda1.
inline GridSearchResult grid_search(const Dataset& data, const ConceptBank& bank, const TrainConfig& base,
                                    std::span<const double> lambda1_grid, std::span<const double> lambda2_grid,
                                    std::size_t k) {
  if (lambda1_grid.empty() || lambda2_grid.empty()) throw ConfigError("grid_search: empty grid");
  const auto labels = data.labels();
  const auto folds = stratified_kfold_split(labels, k, base.seed);
  GridSearchResult out;
  const GridCell* best = nullptr;
  for (double l1 : lambda1_grid) {
    for (double l2 : lambda2_grid) {
      GridCell cell;
      cell.weights = {l1, l2};
      try {
        TrainConfig cfg = base;
        cfg.weights = cell.weights;
        cfg.weights.validate();
        for (std::size_t f = 0; f < folds.size(); ++f) {
          cfg.seed = base.seed + f;
          const auto r = train(data, bank, folds[f].train, cfg);
          const auto m = evaluate(r.params, bank, data, folds[f].test, cfg.model.concept_task);
          cell.fold_auc.push_back(m.diagnosis.auc);
        }
        cell.mean_auc = nan_mean(cell.fold_auc);
        cell.ok = std::isfinite(cell.mean_auc) &&
                  std::none_of(cell.fold_auc.begin(), cell.fold_auc.end(), [](double a) { return std::isnan(a); });
        if (!cell.ok) cell.failure = "undefined AUC";
      } catch (const NumericError& e) {
        cell.failure = e.what();
      } catch (const ConfigError& e) {
        cell.failure = e.what();
      }
      out.table.push_back(cell);
    }
  }
  for (const auto& c : out.table) {
    if (!c.ok) continue;
    if (!best || c.mean_auc > best->mean_auc ||
        (c.mean_auc == best->mean_auc &&
         (c.weights.lambda2 < best->weights.lambda2 ||
          (c.weights.lambda2 == best->weights.lambda2 && c.weights.lambda1 < best->weights.lambda1)))) {
      best = &c;
    }
  }
  if (!best) throw NumericError("grid_search: every cell failed");
  out.best = best->weights;
  return out;
}

}  // namespace ccbm
