#pragma once

// JSON forms of configs, metric reports and model checkpoints.
// Doubles are written by nlohmann::json with round-trip precision, so a
// reloaded checkpoint reproduces every parameter bit for bit.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccbm/data.hpp"
#include "ccbm/errors.hpp"
#include "ccbm/metrics.hpp"
#include "ccbm/model.hpp"
#include "ccbm/trainer.hpp"

namespace ccbm {

using nlohmann::json;

inline constexpr const char* kCheckpointFormat = "ccbm-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline json to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline json to_json(const ModelConfig& c) {
  return json{{"d", c.d},     {"d_k", c.d_k}, {"d_u", c.d_u},         {"n_k", c.n_k},
              {"n_u", c.n_u}, {"n_c", c.n_c}, {"heads", c.heads}, {"concept_task", to_string(c.concept_task)}};
}

// Missing keys keep the values already in `base`.
inline ModelConfig model_config_from_json(const json& j, ModelConfig base = {}) {
  base.d = j.value("d", base.d);
  base.d_k = j.value("d_k", base.d_k);
  base.d_u = j.value("d_u", base.d_u);
  base.n_k = j.value("n_k", base.n_k);
  base.n_u = j.value("n_u", base.n_u);
  base.n_c = j.value("n_c", base.n_c);
  base.heads = j.value("heads", base.heads);
  if (j.contains("concept_task")) base.concept_task = parse_concept_task(j.at("concept_task").get<std::string>());
  return base;
}

inline std::string to_string(SimilarityMode m) {
  return m == SimilarityMode::squared_cosine ? "squared_cosine" : "cosine";
}

inline SimilarityMode parse_similarity_mode(const std::string& s) {
  if (s == "squared_cosine") return SimilarityMode::squared_cosine;
  if (s == "cosine") return SimilarityMode::cosine;
  throw ConfigError("unknown similarity mode '" + s + "'");
}

inline json to_json(const TrainConfig& c) {
  return json{{"model", to_json(c.model)},
              {"lambda1", c.weights.lambda1},
              {"lambda2", c.weights.lambda2},
              {"similarity", to_string(c.loss.similarity)},
              {"batch_mean", c.loss.batch_mean},
              {"max_epochs", c.max_epochs},
              {"batch_size", c.batch_size},
              {"lr", c.adam.lr},
              {"beta1", c.adam.beta1},
              {"beta2", c.adam.beta2},
              {"eps", c.adam.eps},
              {"early_stop_window", c.early_stop_window},
              {"early_stop_tol", c.early_stop_tol},
              {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
  try {
    if (j.contains("model")) base.model = model_config_from_json(j.at("model"), base.model);
    base.weights.lambda1 = j.value("lambda1", base.weights.lambda1);
    base.weights.lambda2 = j.value("lambda2", base.weights.lambda2);
    if (j.contains("similarity")) base.loss.similarity = parse_similarity_mode(j.at("similarity").get<std::string>());
    base.loss.batch_mean = j.value("batch_mean", base.loss.batch_mean);
    base.max_epochs = j.value("max_epochs", base.max_epochs);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.adam.lr = j.value("lr", base.adam.lr);
    base.adam.beta1 = j.value("beta1", base.adam.beta1);
    base.adam.beta2 = j.value("beta2", base.adam.beta2);
    base.adam.eps = j.value("eps", base.adam.eps);
    base.early_stop_window = j.value("early_stop_window", base.early_stop_window);
    base.early_stop_tol = j.value("early_stop_tol", base.early_stop_tol);
    base.seed = j.value("seed", base.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return base;
}

inline json to_json(const MetricReport& r, const std::vector<std::string>& concept_names = {}) {
  json j;
  j["diagnosis"] = {{"auc", r.diagnosis.auc}, {"acc", r.diagnosis.acc}, {"f1", r.diagnosis.f1}};
  json c;
  c["task"] = to_string(r.concepts.task);
  if (r.concepts.task == ConceptTask::classification) {
    json per = json::array();
    for (std::size_t i = 0; i < r.concepts.auc.size(); ++i) {
      per.push_back({{"name", i < concept_names.size() ? concept_names[i] : "concept_" + std::to_string(i)},
                     {"auc", r.concepts.auc[i]},
                     {"acc", r.concepts.acc[i]}});
    }
    c["per_concept"] = per;
    c["mean_auc"] = r.concepts.mean_auc;
    c["mean_acc"] = r.concepts.mean_acc;
  } else {
    c["rmse"] = r.concepts.rmse;
    c["mae"] = r.concepts.mae;
  }
  j["concepts"] = c;
  return j;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ModelConfig config;
  CcbmParams params;
  ConceptBank bank;
  std::vector<std::string> class_names;
  json metadata = json::object();
};

namespace detail {

inline json linear_to_json(const Linear& l) { return json{{"weight", to_json(l.weight)}, {"bias", to_json(l.bias)}}; }

inline Linear linear_from_json(const json& j) {
  return Linear{matrix_from_json(j.at("weight")), matrix_from_json(j.at("bias"))};
}

inline json projections_to_json(const AttentionProjections& p) {
  json j{{"query", json::array()}, {"key", json::array()}, {"value", json::array()}};
  for (const auto& m : p.query) j["query"].push_back(to_json(m));
  for (const auto& m : p.key) j["key"].push_back(to_json(m));
  for (const auto& m : p.value) j["value"].push_back(to_json(m));
  j["output"] = to_json(p.output);
  return j;
}

inline AttentionProjections projections_from_json(const json& j) {
  AttentionProjections p;
  for (const auto& m : j.at("query")) p.query.push_back(matrix_from_json(m));
  for (const auto& m : j.at("key")) p.key.push_back(matrix_from_json(m));
  for (const auto& m : j.at("value")) p.value.push_back(matrix_from_json(m));
  p.output = matrix_from_json(j.at("output"));
  return p;
}

}  // namespace detail

inline json params_to_json(const CcbmParams& p) {
  json j;
  j["known_adapters"] = json::array();
  for (const auto& a : p.known_adapters) j["known_adapters"].push_back(detail::linear_to_json(a));
  j["unknown_adapters"] = json::array();
  for (const auto& a : p.unknown_adapters) j["unknown_adapters"].push_back(detail::linear_to_json(a));
  j["known_aggregators"] = {{"weight", to_json(p.known_aggregators.weight)}, {"bias", to_json(p.known_aggregators.bias)}};
  j["unknown_aggregators"] = {{"weight", to_json(p.unknown_aggregators.weight)},
                              {"bias", to_json(p.unknown_aggregators.bias)}};
  j["unknown_embeddings"] = to_json(p.unknown_embeddings);
  j["decision"] = detail::linear_to_json(p.decision);
  j["known_attention"] = detail::projections_to_json(p.known_attention);
  j["unknown_attention"] = detail::projections_to_json(p.unknown_attention);
  return j;
}

inline CcbmParams params_from_json(const json& j) {
  CcbmParams p;
  for (const auto& a : j.at("known_adapters")) p.known_adapters.push_back(detail::linear_from_json(a));
  for (const auto& a : j.at("unknown_adapters")) p.unknown_adapters.push_back(detail::linear_from_json(a));
  p.known_aggregators = {matrix_from_json(j.at("known_aggregators").at("weight")),
                         matrix_from_json(j.at("known_aggregators").at("bias"))};
  p.unknown_aggregators = {matrix_from_json(j.at("unknown_aggregators").at("weight")),
                           matrix_from_json(j.at("unknown_aggregators").at("bias"))};
  p.unknown_embeddings = matrix_from_json(j.at("unknown_embeddings"));
  p.decision = detail::linear_from_json(j.at("decision"));
  p.known_attention = detail::projections_from_json(j.at("known_attention"));
  p.unknown_attention = detail::projections_from_json(j.at("unknown_attention"));
  return p;
}

inline json checkpoint_to_json(const Checkpoint& c) {
  return json{{"format", kCheckpointFormat},
              {"version", kCheckpointVersion},
              {"config", to_json(c.config)},
              {"concept_names", c.bank.names},
              {"class_names", c.class_names},
              {"bank", to_json(c.bank.embeddings)},
              {"params", params_to_json(c.params)},
              {"metadata", c.metadata}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint c;
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw DataError("checkpoint: wrong format tag");
    if (j.at("version").get<int>() != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
    c.config = model_config_from_json(j.at("config"));
    c.config.validate();
    c.bank.names = j.at("concept_names").get<std::vector<std::string>>();
    c.bank.embeddings = matrix_from_json(j.at("bank"));
    c.bank.validate();
    c.class_names = j.at("class_names").get<std::vector<std::string>>();
    c.params = params_from_json(j.at("params"));
    c.metadata = j.value("metadata", json::object());
    check_shapes(c.params, c.config);
    if (c.class_names.size() != c.config.n_c) throw DataError("checkpoint: class_names length != n_c");
    if (c.bank.embeddings.rows() != c.config.n_k || c.bank.embeddings.cols() != c.config.d_k) {
      throw DataError("checkpoint: bank shape does not match config");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw DataError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("corrupt checkpoint: ") + e.what());
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(c).dump() << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

// Decision layer only, for clients that recompute interventions locally.
inline json export_decision_layer(const Checkpoint& c) {
  std::vector<std::string> names = c.bank.names;
  for (const auto& u : unknown_concept_names(c.config.n_u)) names.push_back(u);
  json rows = json::array();
  for (std::size_t r = 0; r < c.params.decision.weight.rows(); ++r) {
    const auto row = c.params.decision.weight.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  const auto bias = c.params.decision.bias.row(0);
  return json{{"format", "ccbm-decision-layer"},
              {"version", 1},
              {"concept_task", to_string(c.config.concept_task)},
              {"n_k", c.config.n_k},
              {"n_u", c.config.n_u},
              {"concept_names", names},
              {"class_names", c.class_names},
              {"weights", rows},
              {"bias", std::vector<double>(bias.begin(), bias.end())},
              {"score_scale",
               {{"known", c.config.concept_task == ConceptTask::classification ? "sigmoid" : "identity"},
                {"unknown", "identity"},
                {"decision_input", "raw"}}}};
}

struct DecisionLayer {
  Matrix weights;  // (n_k + n_u) x n_c
  Vector bias;
};

inline DecisionLayer decision_layer_from_json(const json& j) {
  try {
    DecisionLayer d;
    const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
    d.bias = j.at("bias").get<std::vector<double>>();
    d.weights = Matrix(rows.size(), d.bias.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != d.bias.size()) throw DataError("decision layer: ragged weights");
      std::copy(rows[r].begin(), rows[r].end(), d.weights.row(r).begin());
    }
    return d;
  } catch (const json::exception& e) {
    throw DataError(std::string("decision layer: ") + e.what());
  }
}

}  // namespace ccbm
