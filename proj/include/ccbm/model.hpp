#pragma once

// Concept complement bottleneck model: per-concept adapters produce queries,
// cross-attention over concept embeddings (frozen text embeddings for known
// concepts, learnable ones for unknown concepts), per-concept aggregators
// turn each attended vector into a scalar score, and an affine decision layer
// maps the concatenated scores to class logits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ccbm/errors.hpp"
#include "ccbm/numkernel.hpp"
#include "ccbm/rng.hpp"

namespace ccbm {

enum class ConceptTask { classification, regression };

inline std::string to_string(ConceptTask t) {
  return t == ConceptTask::classification ? "classification" : "regression";
}

inline ConceptTask parse_concept_task(const std::string& s) {
  if (s == "classification") return ConceptTask::classification;
  if (s == "regression") return ConceptTask::regression;
  throw ConfigError("unknown concept task '" + s + "'");
}

struct ModelConfig {
  std::size_t d = 1;    // feature dim
  std::size_t d_k = 1;  // known concept subspace
  std::size_t d_u = 1;  // unknown concept subspace
  std::size_t n_k = 1;
  std::size_t n_u = 0;
  std::size_t n_c = 2;
  std::size_t heads = 1;
  ConceptTask concept_task = ConceptTask::classification;

  std::size_t decision_width() const { return n_k + n_u; }

  void validate() const {
    if (d < 1 || d_k < 1 || d_u < 1 || n_k < 1 || n_c < 1 || heads < 1) {
      throw ConfigError("ModelConfig: d, d_k, d_u, n_k, n_c and heads must be >= 1");
    }
    if (n_u > 0 && d_u != d_k) {
      throw ConfigError("ModelConfig: d_u (" + std::to_string(d_u) + ") must equal d_k (" +
                        std::to_string(d_k) + ") when n_u > 0");
    }
    if (heads > 1 && d_k % heads != 0) {
      throw ConfigError("ModelConfig: heads (" + std::to_string(heads) + ") must divide d_k (" +
                        std::to_string(d_k) + ")");
    }
    if (heads > 1 && n_u > 0 && d_u % heads != 0) {
      throw ConfigError("ModelConfig: heads must divide d_u");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

// Frozen known-concept embeddings; rows are both keys and values.
struct ConceptBank {
  std::vector<std::string> names;
  Matrix embeddings;  // n_k x d_k

  void validate() const {
    if (names.size() != embeddings.rows()) {
      throw DimensionError("ConceptBank: " + std::to_string(names.size()) + " names but " +
                           std::to_string(embeddings.rows()) + " embedding rows");
    }
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (!seen.insert(n).second) throw DataError("ConceptBank: duplicate concept name '" + n + "'");
    }
  }
};

struct Linear {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

// One scalar head per concept, stacked: row i is (weight_i, bias_i).
struct Aggregators {
  Matrix weight;  // n x dim
  Matrix bias;    // n x 1
};

// Learned per-head projections, only populated when heads > 1.
struct AttentionProjections {
  std::vector<Matrix> query;  // heads x (dim x dim/heads)
  std::vector<Matrix> key;
  std::vector<Matrix> value;
  Matrix output;  // dim x dim

  bool empty() const { return query.empty(); }
};

struct CcbmParams {
  std::vector<Linear> known_adapters;    // n_k, each d -> d_k
  std::vector<Linear> unknown_adapters;  // n_u, each d -> d_u
  Aggregators known_aggregators;         // n_k x d_k
  Aggregators unknown_aggregators;       // n_u x d_u
  Matrix unknown_embeddings;             // n_u x d_u, keys and values of unknown branch
  Linear decision;                       // (n_k + n_u) x n_c
  AttentionProjections known_attention;
  AttentionProjections unknown_attention;
};

// Every parameter block in a fixed order. Optimizers, flattening and
// serialization all rely on this order.
template <class Params, class F>
void for_each_block(Params& p, F&& f) {
  for (auto& a : p.known_adapters) {
    f(a.weight);
    f(a.bias);
  }
  for (auto& a : p.unknown_adapters) {
    f(a.weight);
    f(a.bias);
  }
  f(p.known_aggregators.weight);
  f(p.known_aggregators.bias);
  f(p.unknown_aggregators.weight);
  f(p.unknown_aggregators.bias);
  f(p.unknown_embeddings);
  f(p.decision.weight);
  f(p.decision.bias);
  for (auto* proj : {&p.known_attention, &p.unknown_attention}) {
    for (auto& m : proj->query) f(m);
    for (auto& m : proj->key) f(m);
    for (auto& m : proj->value) f(m);
    f(proj->output);
  }
}

inline std::vector<Matrix*> blocks(CcbmParams& p) {
  std::vector<Matrix*> out;
  for_each_block(p, [&](Matrix& m) { out.push_back(&m); });
  return out;
}

inline std::size_t parameter_count(const CcbmParams& p) {
  std::size_t n = 0;
  for_each_block(p, [&](const Matrix& m) { n += m.size(); });
  return n;
}

inline CcbmParams zeros_like(const CcbmParams& p) {
  CcbmParams z = p;
  for_each_block(z, [](Matrix& m) { m.fill(0.0); });
  return z;
}

inline std::vector<double> flatten(const CcbmParams& p) {
  std::vector<double> flat;
  flat.reserve(parameter_count(p));
  for_each_block(p, [&](const Matrix& m) { flat.insert(flat.end(), m.data().begin(), m.data().end()); });
  return flat;
}

inline void unflatten(std::span<const double> flat, CcbmParams& p) {
  if (flat.size() != parameter_count(p)) throw DimensionError("unflatten: size mismatch");
  std::size_t off = 0;
  for_each_block(p, [&](Matrix& m) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), m.size(), m.data().begin());
    off += m.size();
  });
}

inline bool operator==(const CcbmParams& a, const CcbmParams& b) { return flatten(a) == flatten(b); }

inline void check_shapes(const CcbmParams& p, const ModelConfig& c) {
  auto expect = [](const Matrix& m, std::size_t r, std::size_t cols, const char* what) {
    if (m.rows() != r || m.cols() != cols) {
      throw DimensionError(std::string("CcbmParams: ") + what + " is " + shape_str(m) +
                           ", expected " + std::to_string(r) + "x" + std::to_string(cols));
    }
  };
  if (p.known_adapters.size() != c.n_k || p.unknown_adapters.size() != c.n_u) {
    throw DimensionError("CcbmParams: adapter count does not match config");
  }
  for (const auto& a : p.known_adapters) {
    expect(a.weight, c.d, c.d_k, "known adapter weight");
    expect(a.bias, 1, c.d_k, "known adapter bias");
  }
  for (const auto& a : p.unknown_adapters) {
    expect(a.weight, c.d, c.d_u, "unknown adapter weight");
    expect(a.bias, 1, c.d_u, "unknown adapter bias");
  }
  expect(p.known_aggregators.weight, c.n_k, c.d_k, "known aggregator weight");
  expect(p.known_aggregators.bias, c.n_k, 1, "known aggregator bias");
  expect(p.unknown_aggregators.weight, c.n_u, c.n_u ? c.d_u : 0, "unknown aggregator weight");
  expect(p.unknown_aggregators.bias, c.n_u, c.n_u ? 1 : 0, "unknown aggregator bias");
  expect(p.unknown_embeddings, c.n_u, c.n_u ? c.d_u : 0, "unknown embeddings");
  expect(p.decision.weight, c.decision_width(), c.n_c, "decision weight");
  expect(p.decision.bias, 1, c.n_c, "decision bias");
}

// ---------------------------------------------------------------------------
// Initialization: weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero,
// unknown embeddings are Gaussian rows normalized to unit length.

namespace detail {

inline Matrix uniform_fan_in(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  Matrix m(fan_in, fan_out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

inline Linear init_linear(Rng& rng, std::size_t in, std::size_t out) {
  return Linear{uniform_fan_in(rng, in, out), Matrix(1, out)};
}

inline AttentionProjections init_projections(Rng& rng, std::size_t dim, std::size_t heads) {
  AttentionProjections p;
  if (heads <= 1) return p;
  const std::size_t dh = dim / heads;
  for (std::size_t h = 0; h < heads; ++h) p.query.push_back(uniform_fan_in(rng, dim, dh));
  for (std::size_t h = 0; h < heads; ++h) p.key.push_back(uniform_fan_in(rng, dim, dh));
  for (std::size_t h = 0; h < heads; ++h) p.value.push_back(uniform_fan_in(rng, dim, dh));
  p.output = uniform_fan_in(rng, dim, dim);
  return p;
}

}  // namespace detail

inline CcbmParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  CcbmParams p;
  for (std::size_t i = 0; i < config.n_k; ++i)
    p.known_adapters.push_back(detail::init_linear(rng, config.d, config.d_k));
  for (std::size_t j = 0; j < config.n_u; ++j)
    p.unknown_adapters.push_back(detail::init_linear(rng, config.d, config.d_u));

  // Aggregator rows are separate heads with fan_in = subspace dim.
  p.known_aggregators.weight = Matrix(config.n_k, config.d_k);
  const double kb = 1.0 / std::sqrt(static_cast<double>(config.d_k));
  for (double& v : p.known_aggregators.weight.data()) v = rng.uniform(-kb, kb);
  p.known_aggregators.bias = Matrix(config.n_k, 1);

  const std::size_t du = config.n_u ? config.d_u : 0;
  p.unknown_aggregators.weight = Matrix(config.n_u, du);
  const double ub = 1.0 / std::sqrt(static_cast<double>(config.d_u));
  for (double& v : p.unknown_aggregators.weight.data()) v = rng.uniform(-ub, ub);
  p.unknown_aggregators.bias = Matrix(config.n_u, config.n_u ? 1 : 0);

  p.unknown_embeddings = Matrix(config.n_u, du);
  for (std::size_t j = 0; j < config.n_u; ++j) {
    auto row = p.unknown_embeddings.row(j);
    for (double& v : row) v = rng.normal();
    const double nrm = norm(row);
    for (double& v : row) v /= nrm;
  }

  p.decision = detail::init_linear(rng, config.decision_width(), config.n_c);
  p.known_attention = detail::init_projections(rng, config.d_k, config.heads);
  if (config.n_u > 0) p.unknown_attention = detail::init_projections(rng, config.d_u, config.heads);
  return p;
}

// ---------------------------------------------------------------------------
// Straight kernels for the individual stages.

// Row i is adapter i applied to the shared feature.
inline Matrix encode_queries(std::span<const double> feature, const std::vector<Linear>& adapters,
                             std::size_t dim) {
  Matrix q(adapters.size(), dim);
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    const Vector row = linear_apply(feature, adapters[i].weight, adapters[i].bias.row(0));
    std::copy(row.begin(), row.end(), q.row(i).begin());
  }
  return q;
}

inline Matrix encode_known_queries(std::span<const double> feature, const CcbmParams& params) {
  if (params.known_adapters.empty()) return Matrix();
  if (feature.size() != params.known_adapters.front().weight.rows()) {
    throw DimensionError("encode_known_queries: feature length " + std::to_string(feature.size()) +
                         " != d " + std::to_string(params.known_adapters.front().weight.rows()));
  }
  return encode_queries(feature, params.known_adapters, params.known_adapters.front().weight.cols());
}

struct AttentionResult {
  Matrix attention;  // m x p, rows sum to 1
  Matrix weighted;   // m x dk
};

// Single-head scaled dot-product cross-attention.
inline AttentionResult cross_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw DimensionError("cross_attention: Q[" + shape_str(q) + "] K[" + shape_str(k) + "] V[" +
                         shape_str(v) + "]");
  }
  Matrix logits = matmul_transposed(q, k);
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (double& x : logits.data()) x *= s;
  AttentionResult r;
  r.attention = softmax_rows(logits);
  r.weighted = matmul(r.attention, v);
  return r;
}

// ---------------------------------------------------------------------------
// Graph construction on a tape. With `grads` null every parameter enters as a
// constant (inference); otherwise gradients accumulate into *grads.

struct ForwardVars {
  GradTape::Var known_queries;
  GradTape::Var known_attention;
  std::optional<GradTape::Var> unknown_queries;
  std::optional<GradTape::Var> unknown_attention;
  GradTape::Var known_scores;                   // n_k x 1
  std::optional<GradTape::Var> unknown_scores;  // n_u x 1
  GradTape::Var logits;                         // 1 x n_c
  GradTape::Var probs;                          // 1 x n_c
};

namespace detail {

class Binder {
 public:
  Binder(GradTape& tape, CcbmParams* grads) : tape_(tape), grads_(grads) {}

  // `select` maps a params object to the matching block.
  template <class Select>
  GradTape::Var operator()(const CcbmParams& params, Select&& select) const {
    const Matrix& value = select(params);
    if (!grads_) return tape_.constant(value);
    return tape_.parameter(value, select(*grads_));
  }

 private:
  GradTape& tape_;
  CcbmParams* grads_;
};

struct AttentionVars {
  GradTape::Var attention;  // averaged over heads
  GradTape::Var weighted;
};

// `which` selects known (false) or unknown (true) projections.
inline AttentionVars record_attention(GradTape& tape, const Binder& bind, const CcbmParams& params,
                                      bool which, GradTape::Var q, GradTape::Var k, GradTape::Var v) {
  const AttentionProjections& proj = which ? params.unknown_attention : params.known_attention;
  auto proj_of = [which](auto& p) -> auto& {
    return which ? p.unknown_attention : p.known_attention;
  };
  if (proj.empty()) {
    const double s = 1.0 / std::sqrt(static_cast<double>(tape.value(q).cols()));
    const auto a = tape.softmax_rows(tape.scale(tape.matmul_transposed(q, k), s));
    return {a, tape.matmul(a, v)};
  }
  const std::size_t heads = proj.query.size();
  std::vector<GradTape::Var> outs;
  std::vector<GradTape::Var> maps;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto wq = bind(params, [&](auto& p) -> auto& { return proj_of(p).query[h]; });
    const auto wk = bind(params, [&](auto& p) -> auto& { return proj_of(p).key[h]; });
    const auto wv = bind(params, [&](auto& p) -> auto& { return proj_of(p).value[h]; });
    const auto qh = tape.matmul(q, wq);
    const auto kh = tape.matmul(k, wk);
    const auto vh = tape.matmul(v, wv);
    const double s = 1.0 / std::sqrt(static_cast<double>(tape.value(qh).cols()));
    const auto a = tape.softmax_rows(tape.scale(tape.matmul_transposed(qh, kh), s));
    maps.push_back(a);
    outs.push_back(tape.matmul(a, vh));
  }
  const auto wo = bind(params, [&](auto& p) -> auto& { return proj_of(p).output; });
  const auto weighted = tape.matmul(tape.concat_cols(outs), wo);
  // Reported map: head average. Rows still sum to one.
  Matrix mean(tape.value(maps[0]).rows(), tape.value(maps[0]).cols());
  for (auto m : maps) mean += tape.value(m);
  for (double& x : mean.data()) x /= static_cast<double>(heads);
  return {tape.input(std::move(mean)), weighted};
}

inline std::vector<GradTape::Var> record_queries(GradTape& tape, const Binder& bind,
                                                 const CcbmParams& params, GradTape::Var x,
                                                 bool unknown) {
  const auto& adapters = unknown ? params.unknown_adapters : params.known_adapters;
  std::vector<GradTape::Var> rows;
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    auto pick = [unknown](auto& p) -> auto& {
      return unknown ? p.unknown_adapters : p.known_adapters;
    };
    const auto w = bind(params, [&](auto& p) -> auto& { return pick(p)[i].weight; });
    const auto b = bind(params, [&](auto& p) -> auto& { return pick(p)[i].bias; });
    rows.push_back(tape.linear(x, w, b));
  }
  return rows;
}

}  // namespace detail

inline ForwardVars record_forward(GradTape& tape, std::span<const double> feature,
                                  const CcbmParams& params, const ConceptBank& bank,
                                  CcbmParams* grads) {
  if (params.known_adapters.empty()) throw DimensionError("record_forward: no known adapters");
  const std::size_t d = params.known_adapters.front().weight.rows();
  if (feature.size() != d) {
    throw DimensionError("feature length " + std::to_string(feature.size()) + " != d " +
                         std::to_string(d));
  }
  if (bank.embeddings.rows() != params.known_adapters.size() ||
      bank.embeddings.cols() != params.known_adapters.front().weight.cols()) {
    throw DimensionError("concept bank " + shape_str(bank.embeddings) + " does not match n_k x d_k");
  }
  detail::Binder bind(tape, grads);
  ForwardVars out;
  const auto x = tape.input(Matrix::row_vector(feature));

  // Known branch: K = V = frozen bank.
  const auto known_rows = detail::record_queries(tape, bind, params, x, false);
  out.known_queries = tape.concat_rows(known_rows);
  const auto bank_var = tape.constant(bank.embeddings);
  const auto known = detail::record_attention(tape, bind, params, false, out.known_queries, bank_var, bank_var);
  out.known_attention = known.attention;
  out.known_scores = tape.row_dot(
      known.weighted,
      bind(params, [](auto& p) -> auto& { return p.known_aggregators.weight; }),
      bind(params, [](auto& p) -> auto& { return p.known_aggregators.bias; }));

  std::vector<GradTape::Var> score_parts{out.known_scores};
  if (!params.unknown_adapters.empty()) {
    // Unknown branch: K^u = V^u = learnable embeddings.
    const auto rows = detail::record_queries(tape, bind, params, x, true);
    const auto qu = tape.concat_rows(rows);
    const auto ku = bind(params, [](auto& p) -> auto& { return p.unknown_embeddings; });
    const auto unk = detail::record_attention(tape, bind, params, true, qu, ku, ku);
    out.unknown_queries = qu;
    out.unknown_attention = unk.attention;
    out.unknown_scores = tape.row_dot(
        unk.weighted,
        bind(params, [](auto& p) -> auto& { return p.unknown_aggregators.weight; }),
        bind(params, [](auto& p) -> auto& { return p.unknown_aggregators.bias; }));
    score_parts.push_back(*out.unknown_scores);
  }
  const auto scores = tape.transpose(tape.concat_rows(score_parts));
  out.logits = tape.linear(
      scores, bind(params, [](auto& p) -> auto& { return p.decision.weight; }),
      bind(params, [](auto& p) -> auto& { return p.decision.bias; }));
  out.probs = tape.softmax_rows(out.logits);
  return out;
}

// ---------------------------------------------------------------------------
// Inference

struct ForwardTrace {
  Matrix known_queries;      // n_k x d_k
  Matrix unknown_queries;    // n_u x d_u
  Matrix known_attention;    // n_k x n_k
  Matrix unknown_attention;  // n_u x n_u
  Vector known_scores;       // S, raw aggregator outputs
  Vector unknown_scores;     // L
  Vector logits;
  Vector probs;

  std::size_t predicted() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  Vector concept_vector() const {
    Vector v = known_scores;
    v.insert(v.end(), unknown_scores.begin(), unknown_scores.end());
    return v;
  }
};

inline ForwardTrace diagnose(std::span<const double> feature, const CcbmParams& params,
                             const ConceptBank& bank) {
  GradTape tape;
  const ForwardVars v = record_forward(tape, feature, params, bank, nullptr);
  ForwardTrace t;
  t.known_queries = tape.value(v.known_queries);
  t.known_attention = tape.value(v.known_attention);
  if (v.unknown_queries) {
    t.unknown_queries = tape.value(*v.unknown_queries);
    t.unknown_attention = tape.value(*v.unknown_attention);
    t.unknown_scores = tape.value(*v.unknown_scores).data();
  }
  t.known_scores = tape.value(v.known_scores).data();
  t.logits = tape.value(v.logits).data();
  t.probs = tape.value(v.probs).data();
  return t;
}

inline Vector known_concept_scores(std::span<const double> feature, const CcbmParams& params,
                                   const ConceptBank& bank) {
  return diagnose(feature, params, bank).known_scores;
}

inline Vector unknown_concept_scores(std::span<const double> feature, const CcbmParams& params) {
  if (params.unknown_adapters.empty()) return {};
  const std::size_t du = params.unknown_embeddings.cols();
  const Matrix qu = encode_queries(feature, params.unknown_adapters, du);
  GradTape tape;
  detail::Binder bind(tape, nullptr);
  const auto q = tape.input(qu);
  const auto k = tape.constant(params.unknown_embeddings);
  const auto att = detail::record_attention(tape, bind, params, true, q, k, k);
  const auto s = tape.row_dot(att.weighted, tape.constant(params.unknown_aggregators.weight),
                              tape.constant(params.unknown_aggregators.bias));
  return tape.value(s).data();
}

// Decision layer alone over a (possibly overridden) score vector [S, L].
inline Vector decision_logits(const CcbmParams& params, std::span<const double> scores) {
  return linear_apply(scores, params.decision.weight, params.decision.bias.row(0));
}

// ---------------------------------------------------------------------------
// Explanation

struct ConceptContribution {
  std::string name;
  bool unknown = false;
  double score = 0.0;          // value fed to the decision layer
  double display_score = 0.0;  // sigmoid(score) for classification-task known concepts
  double weight = 0.0;         // decision weight toward the predicted class
  double contribution = 0.0;   // weight * score
};

struct ExplanationReport {
  std::vector<std::string> class_names;
  Vector probs;
  Vector logits;
  std::size_t predicted = 0;
  std::optional<std::size_t> true_label;
  double bias = 0.0;  // decision bias of the predicted class
  std::vector<ConceptContribution> contributions;  // sorted by |contribution|, descending
};

inline double display_scale(double raw, ConceptTask task) {
  return task == ConceptTask::classification ? sigmoid(raw) : raw;
}

inline std::vector<std::string> unknown_concept_names(std::size_t n_u) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < n_u; ++j) out.push_back("unknown_" + std::to_string(j));
  return out;
}

inline ExplanationReport explain_trace(const ForwardTrace& trace, const CcbmParams& params,
                                       ConceptTask task, const std::vector<std::string>& class_names,
                                       const std::vector<std::string>& concept_names,
                                       std::optional<std::size_t> true_label = std::nullopt) {
  ExplanationReport r;
  r.class_names = class_names;
  r.probs = trace.probs;
  r.logits = trace.logits;
  r.predicted = trace.predicted();
  r.true_label = true_label;
  r.bias = params.decision.bias(0, r.predicted);
  const auto unknown_names = unknown_concept_names(trace.unknown_scores.size());
  const Vector scores = trace.concept_vector();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    ConceptContribution c;
    c.unknown = j >= trace.known_scores.size();
    c.name = c.unknown ? unknown_names[j - trace.known_scores.size()]
                       : (j < concept_names.size() ? concept_names[j] : "concept_" + std::to_string(j));
    c.score = scores[j];
    c.display_score = c.unknown ? scores[j] : display_scale(scores[j], task);
    c.weight = params.decision.weight(j, r.predicted);
    c.contribution = c.weight * c.score;
    r.contributions.push_back(std::move(c));
  }
  std::stable_sort(r.contributions.begin(), r.contributions.end(),
                   [](const auto& a, const auto& b) { return std::abs(a.contribution) > std::abs(b.contribution); });
  return r;
}

inline ExplanationReport explain(std::span<const double> feature, const CcbmParams& params,
                                 const ConceptBank& bank, ConceptTask task,
                                 const std::vector<std::string>& class_names,
                                 const std::vector<std::string>& concept_names,
                                 std::optional<std::size_t> true_label = std::nullopt) {
  return explain_trace(diagnose(feature, params, bank), params, task, class_names, concept_names,
                       true_label);
}

}  // namespace ccbm
