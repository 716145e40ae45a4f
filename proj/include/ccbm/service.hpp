#pragma once

// Stateless inference and intervention handlers over an immutable
// checkpoint and dataset. Transport-independent: every handler returns a
// status code and a JSON body. service_http.hpp binds them to HTTP routes.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"

#include "ccbm/data.hpp"
#include "ccbm/errors.hpp"
#include "ccbm/model.hpp"
#include "ccbm/serialize.hpp"
#include "ccbm/trainer.hpp"

namespace ccbm {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

struct InterventionRequest {
  std::string id;
  std::vector<std::pair<std::string, double>> overrides;  // display scale
  bool include_unknown = false;
};

// Display-scale probabilities are clamped to this distance from {0, 1}
// before the logit is taken.
inline constexpr double kOverrideClamp = 1e-12;

inline double display_to_raw(double display, ConceptTask task) {
  if (task == ConceptTask::regression) return display;
  const double p = std::clamp(display, kOverrideClamp, 1.0 - kOverrideClamp);
  return std::log(p) - std::log1p(-p);
}

class Service {
 public:
  Service(Checkpoint checkpoint, Dataset dataset) : ckpt_(std::move(checkpoint)), data_(std::move(dataset)) {
    check_consistency(data_, ckpt_.bank, ckpt_.config);
    if (data_.meta.concept_names != ckpt_.bank.names) {
      throw DataError("dataset concept names do not match the checkpoint");
    }
    if (data_.meta.class_names != ckpt_.class_names) throw DataError("dataset class names do not match the checkpoint");
    for (std::size_t i = 0; i < data_.records.size(); ++i) index_.emplace(data_.records[i].id, i);
    names_ = ckpt_.bank.names;
    for (const auto& u : unknown_concept_names(ckpt_.config.n_u)) names_.push_back(u);
  }

  const Checkpoint& checkpoint() const { return ckpt_; }
  const Dataset& dataset() const { return data_; }

  ServiceResponse meta() const {
    nlohmann::json j;
    j["config"] = to_json(ckpt_.config);
    j["concept_task"] = to_string(ckpt_.config.concept_task);
    j["concept_names"] = ckpt_.bank.names;
    j["unknown_concept_names"] = unknown_concept_names(ckpt_.config.n_u);
    j["class_names"] = ckpt_.class_names;
    j["num_samples"] = data_.size();
    j["decision_layer"] = export_decision_layer(ckpt_);
    return {200, j};
  }

  ServiceResponse samples(std::optional<std::string> limit_text) const {
    std::size_t limit = data_.size();
    if (limit_text) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(*limit_text, &used);
        if (used != limit_text->size() || v < 0) throw std::invalid_argument("limit");
        limit = std::min<std::size_t>(static_cast<std::size_t>(v), data_.size());
      } catch (const std::exception&) {
        return bad_request("limit", "must be a non-negative integer");
      }
    }
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t i = 0; i < limit; ++i) {
      const auto& r = data_.records[i];
      list.push_back({{"id", r.id}, {"label", r.label}, {"class_name", ckpt_.class_names[r.label]}});
    }
    return {200, {{"samples", list}, {"total", data_.size()}}};
  }

  ServiceResponse explain(const std::string& id) const {
    const auto* rec = find(id);
    if (!rec) return not_found(id);
    const ForwardTrace t = diagnose(rec->feature, ckpt_.params, ckpt_.bank);
    const ExplanationReport e =
        explain_trace(t, ckpt_.params, ckpt_.config.concept_task, ckpt_.class_names, ckpt_.bank.names, rec->label);
    nlohmann::json j;
    j["id"] = id;
    j["class_names"] = e.class_names;
    j["probs"] = e.probs;
    j["logits"] = e.logits;
    j["predicted"] = e.predicted;
    j["predicted_class"] = e.class_names[e.predicted];
    j["true_label"] = rec->label;
    j["bias"] = e.bias;
    nlohmann::json contrib = nlohmann::json::array();
    for (const auto& c : e.contributions) {
      contrib.push_back({{"name", c.name},
                         {"unknown", c.unknown},
                         {"score", c.score},
                         {"display_score", c.display_score},
                         {"weight", c.weight},
                         {"contribution", c.contribution}});
    }
    j["contributions"] = contrib;
    j["concepts"] = concept_rows(*rec, t.concept_vector());
    return {200, j};
  }

  // Parses and validates a request body; errors name the offending field.
  std::variant<InterventionRequest, ServiceResponse> parse_intervention(const std::string& body) const {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      return bad_request("body", "is not valid JSON");
    }
    if (!j.is_object()) return bad_request("body", "must be a JSON object");
    InterventionRequest req;
    if (!j.contains("id") || !j["id"].is_string()) return bad_request("id", "is required and must be a string");
    req.id = j["id"].get<std::string>();
    if (j.contains("include_unknown")) {
      if (!j["include_unknown"].is_boolean()) return bad_request("include_unknown", "must be a boolean");
      req.include_unknown = j["include_unknown"].get<bool>();
    }
    if (j.contains("overrides")) {
      if (!j["overrides"].is_object()) return bad_request("overrides", "must be an object of name -> score");
      for (const auto& [name, v] : j["overrides"].items()) {
        const auto pos = concept_index(name);
        if (!pos) return bad_request("overrides." + name, "unknown concept '" + name + "'");
        if (*pos >= ckpt_.config.n_k && !req.include_unknown) {
          return bad_request("overrides." + name, "unknown concept '" + name + "' requires include_unknown");
        }
        if (!v.is_number()) return bad_request("overrides." + name, "must be a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) return bad_request("overrides." + name, "must be finite");
        if (*pos < ckpt_.config.n_k && ckpt_.config.concept_task == ConceptTask::classification &&
            (x < 0.0 || x > 1.0)) {
          return bad_request("overrides." + name, "must lie in [0, 1] for classification concepts");
        }
        req.overrides.emplace_back(name, x);
      }
    }
    return req;
  }

  ServiceResponse intervene(const std::string& body) const {
    auto parsed = parse_intervention(body);
    if (auto* err = std::get_if<ServiceResponse>(&parsed)) return *err;
    return intervene(std::get<InterventionRequest>(parsed));
  }

  // Recomputes only the decision layer over the overridden score vector.
  ServiceResponse intervene(const InterventionRequest& req) const {
    const auto* rec = find(req.id);
    if (!rec) return not_found(req.id);
    const ForwardTrace t = diagnose(rec->feature, ckpt_.params, ckpt_.bank);
    const Vector before = t.concept_vector();
    Vector after = before;
    std::vector<bool> overridden(after.size(), false);
    for (const auto& [name, value] : req.overrides) {
      const std::size_t j = *concept_index(name);
      after[j] = j < ckpt_.config.n_k ? display_to_raw(value, ckpt_.config.concept_task) : value;
      overridden[j] = true;
    }
    nlohmann::json j;
    j["id"] = req.id;
    j["include_unknown"] = req.include_unknown;
    j["class_names"] = ckpt_.class_names;
    j["original"] = decision_block(before);
    j["intervened"] = decision_block(after);
    nlohmann::json scores = nlohmann::json::array();
    for (std::size_t k = 0; k < after.size(); ++k) {
      const bool unknown = k >= ckpt_.config.n_k;
      scores.push_back({{"name", names_[k]},
                        {"unknown", unknown},
                        {"overridden", static_cast<bool>(overridden[k])},
                        {"raw_before", before[k]},
                        {"raw_after", after[k]},
                        {"display_before", unknown ? before[k] : display_scale(before[k], ckpt_.config.concept_task)},
                        {"display_after", unknown ? after[k] : display_scale(after[k], ckpt_.config.concept_task)}});
    }
    j["scores"] = scores;
    return {200, j};
  }

 private:
  const FeatureRecord* find(const std::string& id) const {
    const auto it = index_.find(id);
    return it == index_.end() ? nullptr : &data_.records[it->second];
  }

  std::optional<std::size_t> concept_index(const std::string& name) const {
    for (std::size_t k = 0; k < names_.size(); ++k) {
      if (names_[k] == name) return k;
    }
    return std::nullopt;
  }

  nlohmann::json concept_rows(const FeatureRecord& rec, const Vector& scores) const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t k = 0; k < scores.size(); ++k) {
      const bool unknown = k >= ckpt_.config.n_k;
      nlohmann::json row{{"name", names_[k]},
                         {"unknown", unknown},
                         {"score", scores[k]},
                         {"display_score", unknown ? scores[k] : display_scale(scores[k], ckpt_.config.concept_task)}};
      if (!unknown) row["truth"] = rec.concepts[k];
      rows.push_back(row);
    }
    return rows;
  }

  // Logits, probabilities, prediction and per-class contributions w_jc * s_j.
  nlohmann::json decision_block(const Vector& scores) const {
    const Vector z = decision_logits(ckpt_.params, scores);
    const Vector p = softmax(z);
    const std::size_t pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < z.size(); ++c) {
      nlohmann::json list = nlohmann::json::array();
      for (std::size_t k = 0; k < scores.size(); ++k) {
        list.push_back({{"name", names_[k]}, {"contribution", ckpt_.params.decision.weight(k, c) * scores[k]}});
      }
      per_class.push_back({{"class", ckpt_.class_names[c]},
                           {"bias", ckpt_.params.decision.bias(0, c)},
                           {"contributions", list}});
    }
    return {{"logits", z},
            {"probs", p},
            {"predicted", pred},
            {"predicted_class", ckpt_.class_names[pred]},
            {"contributions", per_class}};
  }

  static ServiceResponse bad_request(const std::string& field, const std::string& message) {
    return {400, {{"error", "bad_request"}, {"field", field}, {"message", field + " " + message}}};
  }

  static ServiceResponse not_found(const std::string& id) {
    return {404, {{"error", "not_found"}, {"field", "id"}, {"message", "no sample with id '" + id + "'"}}};
  }

  Checkpoint ckpt_;
  Dataset data_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> names_;  // known then unknown_j
};

}  // namespace ccbm
