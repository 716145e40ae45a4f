#pragma once

// Cross-validated experiment harnesses and their report format.
//
// Every harness returns an ExperimentReport: one row per (setting, fold) run
// with full provenance, plus a per-setting summary holding the mean and
// population standard deviation of every scalar across that setting's rows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccbm/data.hpp"
#include "ccbm/errors.hpp"
#include "ccbm/losses.hpp"
#include "ccbm/metrics.hpp"
#include "ccbm/model.hpp"
#include "ccbm/numkernel.hpp"
#include "ccbm/serialize.hpp"
#include "ccbm/trainer.hpp"

namespace ccbm {

struct ExperimentRow {
  std::string setting;
  double x = kNaN;  // numeric setting value for plotting
  std::optional<std::size_t> fold;
  std::uint64_t seed = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::vector<std::size_t> test_indices;  // provenance only, not serialized
  MetricReport metrics;
  std::vector<std::pair<std::string, double>> extras;

  std::vector<std::pair<std::string, double>> scalars() const {
    auto out = metrics.scalars();
    out.insert(out.end(), extras.begin(), extras.end());
    return out;
  }

  double scalar(const std::string& name) const {
    for (const auto& [k, v] : scalars()) {
      if (k == name) return v;
    }
    throw MetricError("row has no scalar '" + name + "'");
  }
};

struct SettingSummary {
  std::string setting;
  double x = kNaN;
  std::size_t runs = 0;
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> std;  // population

  double mean_of(const std::string& name) const { return at(mean, name); }
  double std_of(const std::string& name) const { return at(std, name); }

 private:
  double at(const std::vector<double>& v, const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return v[i];
    }
    throw MetricError("summary for '" + setting + "' has no scalar '" + name + "'");
  }
};

struct ExperimentReport {
  std::string id;
  nlohmann::json config = nlohmann::json::object();
  std::vector<ExperimentRow> rows;
  std::vector<SettingSummary> summary;

  const SettingSummary& setting(const std::string& name) const {
    for (const auto& s : summary) {
      if (s.setting == name) return s;
    }
    throw MetricError("report '" + id + "' has no setting '" + name + "'");
  }

  std::vector<const ExperimentRow*> rows_for(const std::string& name) const {
    std::vector<const ExperimentRow*> out;
    for (const auto& r : rows) {
      if (r.setting == name) out.push_back(&r);
    }
    return out;
  }

  // Rebuilds `summary` from `rows`, settings in first-appearance order.
  void aggregate() {
    summary.clear();
    for (const auto& row : rows) {
      auto it = std::find_if(summary.begin(), summary.end(), [&](const auto& s) { return s.setting == row.setting; });
      if (it != summary.end()) continue;
      SettingSummary s;
      s.setting = row.setting;
      s.x = row.x;
      const auto members = rows_for(row.setting);
      s.runs = members.size();
      for (const auto& [name, v] : row.scalars()) {
        Vector values;
        for (const auto* m : members) values.push_back(m->scalar(name));
        double sum = 0.0;
        for (double v2 : values) sum += v2;
        const double mu = sum / static_cast<double>(values.size());
        double sq = 0.0;
        for (double v2 : values) sq += (v2 - mu) * (v2 - mu);
        s.names.push_back(name);
        s.mean.push_back(mu);
        s.std.push_back(std::sqrt(sq / static_cast<double>(values.size())));
      }
      summary.push_back(std::move(s));
    }
  }
};

inline nlohmann::json to_json(const ExperimentReport& r) {
  using nlohmann::json;
  json rows = json::array();
  for (const auto& row : r.rows) {
    json j;
    j["setting"] = row.setting;
    j["x"] = row.x;
    j["fold"] = row.fold ? json(*row.fold) : json(nullptr);
    j["seed"] = row.seed;
    j["train_size"] = row.train_size;
    j["test_size"] = row.test_size;
    j["metrics"] = to_json(row.metrics);
    json extras = json::object();
    for (const auto& [k, v] : row.extras) extras[k] = v;
    j["extras"] = extras;
    rows.push_back(j);
  }
  json summary = json::array();
  for (const auto& s : r.summary) {
    json m = json::object();
    for (std::size_t i = 0; i < s.names.size(); ++i) m[s.names[i]] = {{"mean", s.mean[i]}, {"std", s.std[i]}};
    summary.push_back({{"setting", s.setting}, {"x", s.x}, {"runs", s.runs}, {"metrics", m}});
  }
  return json{{"experiment", r.id}, {"config", r.config}, {"rows", rows}, {"summary", summary}};
}

namespace detail {

inline std::string csv_number(double v) { return std::isnan(v) ? "" : format_double(v); }

}  // namespace detail

// One line per row; columns are the union of scalar names in row order.
inline std::string report_csv(const ExperimentReport& r) {
  std::vector<std::string> cols;
  for (const auto& row : r.rows) {
    for (const auto& [k, v] : row.scalars()) {
      if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
    }
  }
  std::string out = "experiment,setting,x,fold,seed,train_size,test_size";
  for (const auto& c : cols) out += "," + c;
  out += "\n";
  for (const auto& row : r.rows) {
    out += r.id + "," + row.setting + "," + detail::csv_number(row.x) + "," +
           (row.fold ? std::to_string(*row.fold) : std::string()) + "," + std::to_string(row.seed) + "," +
           std::to_string(row.train_size) + "," + std::to_string(row.test_size);
    const auto sc = row.scalars();
    for (const auto& c : cols) {
      auto it = std::find_if(sc.begin(), sc.end(), [&](const auto& p) { return p.first == c; });
      out += "," + (it == sc.end() ? std::string() : detail::csv_number(it->second));
    }
    out += "\n";
  }
  return out;
}

// Long format: setting, x, metric, mean, std.
inline std::string plot_csv(const ExperimentReport& r) {
  std::string out = "setting,x,metric,mean,std\n";
  for (const auto& s : r.summary) {
    for (std::size_t i = 0; i < s.names.size(); ++i) {
      out += s.setting + "," + detail::csv_number(s.x) + "," + s.names[i] + "," + detail::csv_number(s.mean[i]) +
             "," + detail::csv_number(s.std[i]) + "\n";
    }
  }
  return out;
}

inline void write_report(const ExperimentReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    out << text;
  };
  write("report.json", to_json(r).dump(2) + "\n");
  write("report.csv", report_csv(r));
  write("plot.csv", plot_csv(r));
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldRun {
  ExperimentRow row;
  CcbmParams params;
  TrainHistory history;
};

namespace detail {

inline std::vector<std::pair<std::string, double>> loss_extras(const TrainHistory& h) {
  double sim_max = 0.0;
  for (const auto& e : h.epochs) sim_max = std::max(sim_max, std::abs(e.loss.similarity_term));
  const auto& last = h.epochs.back().loss;
  return {{"epochs", static_cast<double>(h.epochs.size())},
          {"final_loss", last.total},
          {"final_ce", last.ce_term},
          {"final_concept", last.concept_term},
          {"final_sim", last.similarity_term},
          {"max_abs_sim", sim_max}};
}

}  // namespace detail

// Trains on fold.train (or a subset of it) with seed base.seed + fold index
// and evaluates on fold.test.
inline FoldRun run_fold(const Dataset& data, const ConceptBank& bank, const TrainConfig& base,
                        const Fold& fold, std::size_t fold_index, std::span<const std::size_t> train_indices,
                        F1Mode f1_mode = F1Mode::macro) {
  TrainConfig cfg = base;
  cfg.seed = base.seed + fold_index;
  FoldRun run;
  TrainResult tr = train(data, bank, train_indices, cfg);
  run.row.fold = fold_index;
  run.row.seed = cfg.seed;
  run.row.train_size = train_indices.size();
  run.row.test_size = fold.test.size();
  run.row.test_indices = fold.test;
  run.row.metrics = evaluate(tr.params, bank, data, fold.test, cfg.model.concept_task, f1_mode);
  run.row.extras = detail::loss_extras(tr.history);
  run.params = std::move(tr.params);
  run.history = std::move(tr.history);
  return run;
}

inline std::vector<Fold> experiment_folds(const Dataset& data, const TrainConfig& config, std::size_t k) {
  return stratified_kfold_split(data.labels(), k, config.seed);
}

inline ExperimentReport crossval_evaluate(const Dataset& data, const ConceptBank& bank, const TrainConfig& config,
                                          std::size_t k = 5, F1Mode f1_mode = F1Mode::macro) {
  config.validate();
  ExperimentReport r;
  r.id = "crossval";
  r.config = to_json(config);
  r.config["folds"] = k;
  const auto folds = experiment_folds(data, config, k);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    FoldRun run = run_fold(data, bank, config, folds[f], f, folds[f].train, f1_mode);
    run.row.setting = "crossval";
    r.rows.push_back(std::move(run.row));
  }
  r.aggregate();
  return r;
}

// ---------------------------------------------------------------------------
// Label efficiency

inline const std::vector<double>& default_proportions() {
  static const std::vector<double> p{1.0, 0.7, 0.5, 0.3, 0.1};
  return p;
}

inline ExperimentReport run_label_efficiency(const Dataset& data, const ConceptBank& bank, const TrainConfig& config,
                                             std::span<const double> proportions, std::size_t k = 5,
                                             F1Mode f1_mode = F1Mode::macro) {
  config.validate();
  if (proportions.empty()) throw ConfigError("label efficiency: no proportions given");
  for (double p : proportions) {
    if (!(p > 0.0) || p > 1.0) throw ConfigError("label efficiency: proportion " + format_double(p) + " not in (0, 1]");
  }
  ExperimentReport r;
  r.id = "label_efficiency";
  r.config = to_json(config);
  r.config["folds"] = k;
  r.config["proportions"] = std::vector<double>(proportions.begin(), proportions.end());
  const auto labels = data.labels();
  const auto folds = experiment_folds(data, config, k);
  for (double p : proportions) {
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto sub = subsample_proportion(folds[f].train, labels, p, config.seed + f);
      FoldRun run = run_fold(data, bank, config, folds[f], f, sub, f1_mode);
      run.row.setting = "p=" + format_double(p);
      run.row.x = p;
      run.row.extras.emplace_back("proportion", p);
      r.rows.push_back(std::move(run.row));
    }
  }
  r.aggregate();
  return r;
}

// ---------------------------------------------------------------------------
// Unknown-concept sweep

inline ExperimentReport run_unknown_sweep(const Dataset& data, const ConceptBank& bank, const TrainConfig& base,
                                          std::span<const std::size_t> n_u_values, std::size_t k = 5,
                                          F1Mode f1_mode = F1Mode::macro) {
  if (n_u_values.empty()) throw ConfigError("unknown sweep: no n_u values given");
  ExperimentReport r;
  r.id = "unknown_sweep";
  r.config = to_json(base);
  r.config["folds"] = k;
  r.config["n_u_values"] = std::vector<std::size_t>(n_u_values.begin(), n_u_values.end());
  const auto folds = experiment_folds(data, base, k);
  for (std::size_t n_u : n_u_values) {
    TrainConfig cfg = base;
    cfg.model.n_u = n_u;
    cfg.validate();
    for (std::size_t f = 0; f < folds.size(); ++f) {
      FoldRun run = run_fold(data, bank, cfg, folds[f], f, folds[f].train, f1_mode);
      run.row.setting = "n_u=" + std::to_string(n_u);
      run.row.x = static_cast<double>(n_u);
      r.rows.push_back(std::move(run.row));
    }
  }
  r.aggregate();
  return r;
}

// ---------------------------------------------------------------------------
// Similarity ablation

struct EmbeddingCosines {
  double unknown_unknown = kNaN;  // mean |cos| over unordered unknown pairs
  double unknown_known = kNaN;    // mean |cos| over all unknown x known pairs
};

inline EmbeddingCosines embedding_cosines(const Matrix& unknown, const Matrix& known) {
  EmbeddingCosines out;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < unknown.rows(); ++i) {
    for (std::size_t j = i + 1; j < unknown.rows(); ++j) {
      sum += std::abs(detail::cosine(unknown.row(i), unknown.row(j)));
      ++n;
    }
  }
  if (n) out.unknown_unknown = sum / static_cast<double>(n);
  sum = 0.0;
  n = 0;
  for (std::size_t i = 0; i < unknown.rows(); ++i) {
    for (std::size_t j = 0; j < known.rows(); ++j) {
      sum += std::abs(detail::cosine(unknown.row(i), known.row(j)));
      ++n;
    }
  }
  if (n) out.unknown_known = sum / static_cast<double>(n);
  return out;
}

inline ExperimentReport run_ablation_similarity(const Dataset& data, const ConceptBank& bank,
                                                const TrainConfig& config, std::size_t k = 5,
                                                F1Mode f1_mode = F1Mode::macro) {
  config.validate();
  if (config.model.n_u < 1) throw ConfigError("similarity ablation needs n_u >= 1");
  ExperimentReport r;
  r.id = "ablation_similarity";
  r.config = to_json(config);
  r.config["folds"] = k;
  const auto folds = experiment_folds(data, config, k);
  const std::pair<std::string, double> settings[] = {{"with_sim", config.weights.lambda2}, {"without_sim", 0.0}};
  for (const auto& [name, lambda2] : settings) {
    TrainConfig cfg = config;
    cfg.weights.lambda2 = lambda2;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      FoldRun run = run_fold(data, bank, cfg, folds[f], f, folds[f].train, f1_mode);
      const auto cos = embedding_cosines(run.params.unknown_embeddings, bank.embeddings);
      run.row.setting = name;
      run.row.x = lambda2;
      run.row.extras.emplace_back("lambda2", lambda2);
      run.row.extras.emplace_back("cos_unknown_unknown", cos.unknown_unknown);
      run.row.extras.emplace_back("cos_unknown_known", cos.unknown_known);
      r.rows.push_back(std::move(run.row));
    }
  }
  r.aggregate();
  return r;
}

// ---------------------------------------------------------------------------
// Inference-time intervention
//
// Known scores whose display value (sigmoid for classification concepts,
// raw for regression) exceeds the threshold are reset to a raw score of 0.
// Unknown scores are compared raw and only touched when include_unknown.

struct InterventionOutcome {
  Matrix scores;  // n x (n_k + n_u) intervened raw decision inputs
  Matrix logits;
  Matrix probs;
  std::size_t reset = 0;
};

inline Vector intervene_scores(std::span<const double> known, std::span<const double> unknown, double threshold,
                               ConceptTask task, bool include_unknown, std::size_t* reset = nullptr) {
  Vector out(known.begin(), known.end());
  out.insert(out.end(), unknown.begin(), unknown.end());
  std::size_t count = 0;
  for (std::size_t j = 0; j < known.size(); ++j) {
    if (display_scale(known[j], task) > threshold) {
      out[j] = 0.0;
      ++count;
    }
  }
  if (include_unknown) {
    for (std::size_t j = 0; j < unknown.size(); ++j) {
      if (unknown[j] > threshold) {
        out[known.size() + j] = 0.0;
        ++count;
      }
    }
  }
  if (reset) *reset += count;
  return out;
}

// Passing +infinity as the threshold leaves every score unchanged.
inline InterventionOutcome apply_intervention(const CcbmParams& params, const Predictions& p, double threshold,
                                              ConceptTask task, bool include_unknown) {
  const std::size_t n = p.scores.rows();
  const std::size_t n_c = params.decision.weight.cols();
  InterventionOutcome out;
  out.scores = Matrix(n, p.scores.cols() + p.unknown_scores.cols());
  out.logits = Matrix(n, n_c);
  out.probs = Matrix(n, n_c);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector s = intervene_scores(p.scores.row(i), p.unknown_scores.row(i), threshold, task, include_unknown,
                                      &out.reset);
    const Vector z = decision_logits(params, s);
    const Vector pr = softmax(z);
    std::copy(s.begin(), s.end(), out.scores.row(i).begin());
    std::copy(z.begin(), z.end(), out.logits.row(i).begin());
    std::copy(pr.begin(), pr.end(), out.probs.row(i).begin());
  }
  return out;
}

// Linear-interpolated quantiles at i / (count - 1) of the observed known
// display scores (plus unknown raw scores when include_unknown).
inline std::vector<double> default_thresholds(const Predictions& p, ConceptTask task, bool include_unknown = false,
                                              std::size_t count = 8) {
  if (count < 2) throw ConfigError("default_thresholds: count must be >= 2");
  Vector values;
  for (double s : p.scores.data()) values.push_back(display_scale(s, task));
  if (include_unknown) values.insert(values.end(), p.unknown_scores.data().begin(), p.unknown_scores.data().end());
  if (values.empty()) throw DataError("default_thresholds: no scores observed");
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = static_cast<double>(i) / static_cast<double>(count - 1) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    out.push_back(values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]));
  }
  return out;
}

inline void check_thresholds(std::span<const double> thresholds) {
  if (thresholds.empty()) throw ConfigError("intervention: no thresholds given");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::isnan(thresholds[i])) throw ConfigError("intervention: threshold is NaN");
    if (i && thresholds[i] < thresholds[i - 1]) {
      throw ConfigError("intervention: thresholds must be ascending (t" + std::to_string(i + 1) + " < t" +
                        std::to_string(i) + ")");
    }
  }
}

// Rows: "baseline" (no intervention) then one per threshold, all computed
// through the decision layer from the same recorded scores.
inline ExperimentReport run_intervention(const CcbmParams& params, const ConceptBank& bank, const Dataset& test,
                                         std::span<const std::size_t> indices, std::span<const double> thresholds,
                                         bool include_unknown = false, F1Mode f1_mode = F1Mode::macro) {
  check_thresholds(thresholds);
  const ConceptTask task = test.meta.task;
  const Predictions p = predict(params, bank, test, indices);
  const std::size_t n_k = p.scores.cols();

  ExperimentReport r;
  r.id = "intervention";
  r.config = {{"thresholds", std::vector<double>(thresholds.begin(), thresholds.end())},
              {"include_unknown", include_unknown},
              {"concept_task", to_string(task)},
              {"test_size", indices.size()}};
  auto add_row = [&](const std::string& name, double x, const InterventionOutcome& o) {
    ExperimentRow row;
    row.setting = name;
    row.x = x;
    row.test_size = indices.size();
    row.test_indices.assign(indices.begin(), indices.end());
    Matrix known(o.scores.rows(), n_k);
    for (std::size_t i = 0; i < known.rows(); ++i) {
      for (std::size_t j = 0; j < n_k; ++j) known(i, j) = o.scores(i, j);
    }
    row.metrics = compute_metrics(o.probs, p.labels, known, p.targets, task, f1_mode);
    const std::size_t eligible = o.scores.rows() * (include_unknown ? o.scores.cols() : n_k);
    row.extras = {{"threshold", x},
                  {"reset_fraction", eligible ? static_cast<double>(o.reset) / static_cast<double>(eligible) : 0.0}};
    r.rows.push_back(std::move(row));
  };
  add_row("baseline", kNaN, apply_intervention(params, p, INFINITY, task, include_unknown));
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    add_row("t" + std::to_string(i + 1), thresholds[i],
            apply_intervention(params, p, thresholds[i], task, include_unknown));
  }
  r.aggregate();
  return r;
}

inline ExperimentReport run_intervention(const CcbmParams& params, const ConceptBank& bank, const Dataset& test,
                                         std::span<const double> thresholds, bool include_unknown = false,
                                         F1Mode f1_mode = F1Mode::macro) {
  const auto idx = all_indices(test);
  return run_intervention(params, bank, test, idx, thresholds, include_unknown, f1_mode);
}

}  // namespace ccbm
