#pragma once

// Dataset and concept-bank ingestion (precomputed features, CSV + JSON),
// cross-validation splits, label-efficiency subsampling and a synthetic
// generator with an optional hidden factor.
//
// On-disk dataset layout (one directory):
//   meta.json     {"task","d","n_k","n_c","concept_names":[],"class_names":[]}
//   features.csv  id,f0,...,f{d-1}
//   concepts.csv  id,<concept names>
//   labels.csv    id,label

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "ccbm/errors.hpp"
#include "ccbm/model.hpp"
#include "ccbm/numkernel.hpp"
#include "ccbm/rng.hpp"

namespace ccbm {

struct FeatureRecord {
  std::string id;
  Vector feature;   // d
  Vector concepts;  // n_k
  std::size_t label = 0;
};

struct DatasetMeta {
  ConceptTask task = ConceptTask::classification;
  std::size_t d = 0;
  std::size_t n_k = 0;
  std::size_t n_c = 0;
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<FeatureRecord> records;

  std::size_t size() const { return records.size(); }

  std::vector<std::size_t> labels() const {
    std::vector<std::size_t> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.label);
    return out;
  }

  void validate() const {
    if (meta.concept_names.size() != meta.n_k) throw DataError("meta: concept_names length != n_k");
    if (meta.class_names.size() != meta.n_c) throw DataError("meta: class_names length != n_c");
    std::set<std::string> ids;
    for (const auto& r : records) {
      if (!ids.insert(r.id).second) throw DataError("dataset: duplicate id '" + r.id + "'");
      if (r.feature.size() != meta.d) throw DataError("dataset: record '" + r.id + "' feature length mismatch");
      if (r.concepts.size() != meta.n_k) throw DataError("dataset: record '" + r.id + "' concept length mismatch");
      if (r.label >= meta.n_c) throw DataError("dataset: record '" + r.id + "' label out of range");
      if (!all_finite(r.feature) || !all_finite(r.concepts)) {
        throw DataError("dataset: record '" + r.id + "' has non-finite values");
      }
      for (double c : r.concepts) {
        if (meta.task == ConceptTask::classification && c != 0.0 && c != 1.0) {
          throw DataError("dataset: record '" + r.id + "' has non-binary concept target");
        }
        if (meta.task == ConceptTask::regression && (c < 0.0 || c > 1.0)) {
          throw DataError("dataset: record '" + r.id + "' has regression target outside [0,1]");
        }
      }
    }
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.meta = meta;
    out.records.reserve(indices.size());
    for (std::size_t i : indices) out.records.push_back(records.at(i));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Number formatting: shortest round-trip representation.

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string location(const std::filesystem::path& file, std::size_t line) {
  return file.filename().string() + ":" + std::to_string(line);
}

inline double parse_double(std::string_view field, const std::filesystem::path& file, std::size_t line) {
  double v = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw DataError(location(file, line) + ": cannot parse number '" + std::string(field) + "'");
  }
  if (!std::isfinite(v)) {
    throw DataError(location(file, line) + ": non-finite value '" + std::string(field) + "'");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  struct Row {
    std::size_t line;
    std::vector<std::string> fields;
  };
  std::vector<Row> rows;
};

inline CsvTable read_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("missing file " + file.string());
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    for (auto f : split_csv_line(line)) fields.emplace_back(f);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw DataError(location(file, lineno) + ": expected " + std::to_string(t.header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back({lineno, std::move(fields)});
  }
  if (t.header.empty()) throw DataError(file.string() + ": empty file");
  return t;
}

// Maps id -> row pointer, rejecting duplicates.
inline std::unordered_map<std::string, const CsvTable::Row*> index_by_id(const CsvTable& t,
                                                                        const std::filesystem::path& file) {
  std::unordered_map<std::string, const CsvTable::Row*> idx;
  for (const auto& r : t.rows) {
    if (!idx.emplace(r.fields[0], &r).second) {
      throw DataError(location(file, r.line) + ": duplicate id '" + r.fields[0] + "'");
    }
  }
  return idx;
}

}  // namespace detail

inline nlohmann::json meta_to_json(const DatasetMeta& m) {
  return nlohmann::json{{"task", to_string(m.task)}, {"d", m.d},
                        {"n_k", m.n_k},               {"n_c", m.n_c},
                        {"concept_names", m.concept_names}, {"class_names", m.class_names}};
}

inline DatasetMeta meta_from_json(const nlohmann::json& j) {
  DatasetMeta m;
  try {
    m.task = parse_concept_task(j.at("task").get<std::string>());
    m.d = j.at("d").get<std::size_t>();
    m.n_k = j.at("n_k").get<std::size_t>();
    m.n_c = j.at("n_c").get<std::size_t>();
    m.concept_names = j.at("concept_names").get<std::vector<std::string>>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("meta.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("meta.json: ") + e.what());
  }
  return m;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw DataError("missing file " + meta_path.string());
  nlohmann::json mj;
  try {
    meta_in >> mj;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("meta.json: " + std::string(e.what()));
  }
  Dataset ds;
  ds.meta = meta_from_json(mj);

  const fs::path fpath = dir / "features.csv";
  const fs::path cpath = dir / "concepts.csv";
  const fs::path lpath = dir / "labels.csv";
  const auto features = detail::read_csv(fpath);
  const auto concepts = detail::read_csv(cpath);
  const auto labels = detail::read_csv(lpath);

  if (features.header.size() != ds.meta.d + 1 || features.header[0] != "id") {
    throw DataError(detail::location(fpath, 1) + ": header must be id,f0..f" +
                    std::to_string(ds.meta.d - 1) + " (d=" + std::to_string(ds.meta.d) + ")");
  }
  if (concepts.header.size() != ds.meta.n_k + 1 || concepts.header[0] != "id") {
    throw DataError(detail::location(cpath, 1) + ": header must be id + " + std::to_string(ds.meta.n_k) +
                    " concept columns");
  }
  for (std::size_t j = 0; j < ds.meta.n_k; ++j) {
    if (concepts.header[j + 1] != ds.meta.concept_names[j]) {
      throw DataError(detail::location(cpath, 1) + ": column '" + concepts.header[j + 1] +
                      "' does not match concept name '" + ds.meta.concept_names[j] + "'");
    }
  }
  if (labels.header.size() != 2 || labels.header[0] != "id" || labels.header[1] != "label") {
    throw DataError(detail::location(lpath, 1) + ": header must be id,label");
  }

  const auto cidx = detail::index_by_id(concepts, cpath);
  const auto lidx = detail::index_by_id(labels, lpath);
  std::set<std::string> seen;
  for (const auto& row : features.rows) {
    FeatureRecord r;
    r.id = row.fields[0];
    if (!seen.insert(r.id).second) {
      throw DataError(detail::location(fpath, row.line) + ": duplicate id '" + r.id + "'");
    }
    for (std::size_t j = 1; j < row.fields.size(); ++j)
      r.feature.push_back(detail::parse_double(row.fields[j], fpath, row.line));

    const auto cit = cidx.find(r.id);
    if (cit == cidx.end()) throw DataError("concepts.csv: id mismatch, missing id '" + r.id + "'");
    for (std::size_t j = 1; j < cit->second->fields.size(); ++j) {
      const double c = detail::parse_double(cit->second->fields[j], cpath, cit->second->line);
      if (ds.meta.task == ConceptTask::classification && c != 0.0 && c != 1.0) {
        throw DataError(detail::location(cpath, cit->second->line) + ": concept target must be 0 or 1");
      }
      if (ds.meta.task == ConceptTask::regression && (c < 0.0 || c > 1.0)) {
        throw DataError(detail::location(cpath, cit->second->line) + ": concept target outside [0,1]");
      }
      r.concepts.push_back(c);
    }

    const auto lit = lidx.find(r.id);
    if (lit == lidx.end()) throw DataError("labels.csv: id mismatch, missing id '" + r.id + "'");
    const std::string& lab = lit->second->fields[1];
    std::size_t label = 0;
    const auto res = std::from_chars(lab.data(), lab.data() + lab.size(), label);
    if (res.ec != std::errc() || res.ptr != lab.data() + lab.size()) {
      throw DataError(detail::location(lpath, lit->second->line) + ": cannot parse label '" + lab + "'");
    }
    if (label >= ds.meta.n_c) {
      throw DataError(detail::location(lpath, lit->second->line) + ": label " + lab + " out of range");
    }
    r.label = label;
    ds.records.push_back(std::move(r));
  }
  for (const auto& [id, row] : cidx) {
    if (!seen.count(id)) {
      throw DataError(detail::location(cpath, row->line) + ": id mismatch, '" + id + "' absent from features.csv");
    }
  }
  for (const auto& [id, row] : lidx) {
    if (!seen.count(id)) {
      throw DataError(detail::location(lpath, row->line) + ": id mismatch, '" + id + "' absent from features.csv");
    }
  }
  ds.validate();
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "meta.json");
    out << meta_to_json(ds.meta).dump(2) << "\n";
  }
  std::ofstream f(dir / "features.csv");
  std::ofstream c(dir / "concepts.csv");
  std::ofstream l(dir / "labels.csv");
  f << "id";
  for (std::size_t j = 0; j < ds.meta.d; ++j) f << ",f" << j;
  f << "\n";
  c << "id";
  for (const auto& n : ds.meta.concept_names) c << "," << n;
  c << "\n";
  l << "id,label\n";
  for (const auto& r : ds.records) {
    f << r.id;
    for (double v : r.feature) f << "," << format_double(v);
    f << "\n";
    c << r.id;
    for (double v : r.concepts) c << "," << format_double(v);
    c << "\n";
    l << r.id << "," << r.label << "\n";
  }
}

// ---------------------------------------------------------------------------
// Concept bank CSV: name,e0,...,e{d_k-1}

inline ConceptBank load_concept_bank(const std::filesystem::path& path,
                                     const std::vector<std::string>& expected_names) {
  const auto t = detail::read_csv(path);
  if (t.header.size() < 2 || t.header[0] != "name") {
    throw DataError(detail::location(path, 1) + ": header must be name,e0,...");
  }
  const std::size_t dk = t.header.size() - 1;
  std::map<std::string, std::pair<std::size_t, Vector>> rows;
  for (const auto& row : t.rows) {
    Vector v;
    for (std::size_t j = 1; j < row.fields.size(); ++j) v.push_back(detail::parse_double(row.fields[j], path, row.line));
    if (v.size() != dk) throw DataError(detail::location(path, row.line) + ": inconsistent row width");
    if (!rows.emplace(row.fields[0], std::make_pair(row.line, std::move(v))).second) {
      throw DataError(detail::location(path, row.line) + ": duplicate concept name '" + row.fields[0] + "'");
    }
  }
  ConceptBank bank;
  bank.names = expected_names;
  bank.embeddings = Matrix(expected_names.size(), dk);
  for (std::size_t i = 0; i < expected_names.size(); ++i) {
    const auto it = rows.find(expected_names[i]);
    if (it == rows.end()) throw DataError(path.filename().string() + ": missing concept '" + expected_names[i] + "'");
    std::copy(it->second.second.begin(), it->second.second.end(), bank.embeddings.row(i).begin());
  }
  if (rows.size() != expected_names.size()) {
    for (const auto& [name, row] : rows) {
      if (std::find(expected_names.begin(), expected_names.end(), name) == expected_names.end()) {
        throw DataError(detail::location(path, row.first) + ": unknown concept '" + name + "'");
      }
    }
  }
  bank.validate();
  return bank;
}

inline void save_concept_bank(const ConceptBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << "name";
  for (std::size_t j = 0; j < bank.embeddings.cols(); ++j) out << ",e" << j;
  out << "\n";
  for (std::size_t i = 0; i < bank.names.size(); ++i) {
    out << bank.names[i];
    for (double v : bank.embeddings.row(i)) out << "," << format_double(v);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Splits

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

namespace detail {

inline std::vector<Fold> folds_from_order(const std::vector<std::size_t>& order, std::size_t n, std::size_t k) {
  std::vector<Fold> folds(k);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t pos = 0; pos < order.size(); ++pos) fold_of[order[pos]] = pos % k;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) (fold_of[i] == f ? folds[f].test : folds[f].train).push_back(i);
  }
  return folds;
}

inline void check_fold_args(std::size_t n, std::size_t k) {
  if (k < 2) throw ConfigError("kfold_split: k must be >= 2");
  if (k > n) throw ConfigError("kfold_split: k (" + std::to_string(k) + ") > n (" + std::to_string(n) + ")");
}

}  // namespace detail

// Shuffled k-fold partition of [0, n); test sizes differ by at most one.
// Index lists inside each fold are ascending.
inline std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  detail::check_fold_args(n, k);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));
  return detail::folds_from_order(order, n, k);
}

// Class-stratified variant: indices are shuffled within each class, classes
// are laid end to end, and positions are dealt round-robin. Per-class and
// overall fold sizes both differ by at most one.
inline std::vector<Fold> stratified_kfold_split(std::span<const std::size_t> labels, std::size_t k,
                                                std::uint64_t seed) {
  const std::size_t n = labels.size();
  detail::check_fold_args(n, k);
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (auto& [cls, idx] : by_class) {
    rng.shuffle(std::span(idx));
    order.insert(order.end(), idx.begin(), idx.end());
  }
  return detail::folds_from_order(order, n, k);
}

// ceil(p * |train|) indices, class-stratified by largest remainder, returned
// in their original relative order. p == 1 returns `train` unchanged.
inline std::vector<std::size_t> subsample_proportion(std::span<const std::size_t> train,
                                                     std::span<const std::size_t> labels, double p,
                                                     std::uint64_t seed) {
  if (!(p > 0.0) || p > 1.0) throw ConfigError("subsample_proportion: p must be in (0, 1]");
  if (p == 1.0) return {train.begin(), train.end()};
  const auto target = static_cast<std::size_t>(std::ceil(p * static_cast<double>(train.size()) - 1e-9));

  std::map<std::size_t, std::vector<std::size_t>> by_class;  // label -> positions in train
  for (std::size_t pos = 0; pos < train.size(); ++pos) by_class[labels[train[pos]]].push_back(pos);

  struct Quota {
    std::size_t label;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [cls, pos] : by_class) {
    const double exact = p * static_cast<double>(pos.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({cls, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t i = 0; assigned < target && i < order.size(); ++i) {
    auto& q = quotas[order[i]];
    if (q.take < by_class[q.label].size()) {
      ++q.take;
      ++assigned;
    }
  }

  Rng rng(seed);
  std::vector<std::size_t> chosen_pos;
  for (const auto& q : quotas) {
    auto pos = by_class[q.label];
    rng.shuffle(std::span(pos));
    chosen_pos.insert(chosen_pos.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(q.take));
  }
  std::sort(chosen_pos.begin(), chosen_pos.end());
  std::vector<std::size_t> out;
  out.reserve(chosen_pos.size());
  for (std::size_t pos : chosen_pos) out.push_back(train[pos]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
//
// Features x ~ N(0, I_d). Concept j is a probe w_j . x (+ noise), thresholded
// at zero for classification or squashed through a sigmoid for regression.
// The base label is argmax_c R_c . (c - 1/2) for a random rule R, so labels
// are an exact linear function of the recorded concepts. With a hidden
// factor, a unit direction h orthogonal to all probes shifts the label to the
// next class whenever h . x exceeds the (1 - hidden_strength) normal quantile.

struct SynthSpec {
  std::size_t n = 2000;
  std::size_t d = 16;
  std::size_t n_k = 6;
  std::size_t n_c = 2;
  double noise = 0.0;
  bool hidden_factor = false;
  double hidden_strength = 0.0;
  std::uint64_t seed = 0;
  std::size_t bank_dim = 16;
  ConceptTask task = ConceptTask::classification;

  void validate() const {
    if (n_c < 2 || n_k < 1 || d < 1 || bank_dim < 1) throw ConfigError("SynthSpec: invalid dimensions");
    if (n < 10 * n_c) throw ConfigError("SynthSpec: n must be >= 10 * n_c");
    if (!(noise >= 0.0)) throw ConfigError("SynthSpec: noise must be >= 0");
    if (!(hidden_strength >= 0.0 && hidden_strength <= 1.0)) {
      throw ConfigError("SynthSpec: hidden_strength must be in [0, 1]");
    }
    if (hidden_factor && d < n_k + 1) throw ConfigError("SynthSpec: hidden factor needs d > n_k");
  }
};

struct SynthResult {
  Dataset dataset;
  ConceptBank bank;
  Matrix probes;      // n_k x d
  Matrix label_rule;  // n_c x n_k
  Vector hidden_direction;
  double hidden_threshold = 0.0;
  std::vector<bool> flipped;
};

// Standard normal quantile by bisection on erfc.
inline double normal_quantile(double prob) {
  if (prob <= 0.0) return -INFINITY;
  if (prob >= 1.0) return INFINITY;
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < prob ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::size_t apply_label_rule(const Matrix& rule, std::span<const double> concepts) {
  std::size_t best = 0;
  double best_v = -INFINITY;
  for (std::size_t c = 0; c < rule.rows(); ++c) {
    double v = 0.0;
    for (std::size_t j = 0; j < concepts.size(); ++j) v += rule(c, j) * (concepts[j] - 0.5);
    if (v > best_v) {
      best_v = v;
      best = c;
    }
  }
  return best;
}

inline SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SynthResult out;

  // Probe directions, orthonormalized so the hidden direction can be made
  // exactly orthogonal to all of them.
  out.probes = Matrix(spec.n_k, spec.d);
  for (std::size_t j = 0; j < spec.n_k; ++j) {
    auto row = out.probes.row(j);
    for (double& v : row) v = rng.normal();
  }
  std::vector<Vector> basis;
  for (std::size_t j = 0; j < spec.n_k; ++j) {
    Vector v(out.probes.row(j).begin(), out.probes.row(j).end());
    for (const auto& b : basis) {
      const double c = dot(v, b);
      for (std::size_t t = 0; t < v.size(); ++t) v[t] -= c * b[t];
    }
    const double nv = norm(v);
    if (nv > 1e-9) {
      for (double& t : v) t /= nv;
      basis.push_back(v);
    }
    const double np = norm(out.probes.row(j));
    for (double& t : out.probes.row(j)) t /= np;
  }

  out.label_rule = Matrix(spec.n_c, spec.n_k);
  for (double& v : out.label_rule.data()) v = rng.normal();

  out.hidden_direction.assign(spec.d, 0.0);
  out.hidden_threshold = INFINITY;
  if (spec.hidden_factor) {
    Vector h(spec.d);
    for (double& v : h) v = rng.normal();
    for (const auto& b : basis) {
      const double c = dot(h, b);
      for (std::size_t t = 0; t < h.size(); ++t) h[t] -= c * b[t];
    }
    const double nh = norm(h);
    for (double& v : h) v /= nh;
    out.hidden_direction = h;
    out.hidden_threshold = normal_quantile(1.0 - spec.hidden_strength);
  }

  out.bank.embeddings = Matrix(spec.n_k, spec.bank_dim);
  for (std::size_t j = 0; j < spec.n_k; ++j) {
    auto row = out.bank.embeddings.row(j);
    for (double& v : row) v = rng.normal();
    const double nr = norm(row);
    for (double& v : row) v /= nr;
  }

  auto& meta = out.dataset.meta;
  meta.task = spec.task;
  meta.d = spec.d;
  meta.n_k = spec.n_k;
  meta.n_c = spec.n_c;
  for (std::size_t j = 0; j < spec.n_k; ++j) meta.concept_names.push_back("concept_" + std::to_string(j));
  for (std::size_t c = 0; c < spec.n_c; ++c) meta.class_names.push_back("class_" + std::to_string(c));
  out.bank.names = meta.concept_names;

  const int width = static_cast<int>(std::to_string(spec.n - 1).size());
  for (std::size_t i = 0; i < spec.n; ++i) {
    FeatureRecord r;
    std::string num = std::to_string(i);
    r.id = "s" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
    r.feature.resize(spec.d);
    for (double& v : r.feature) v = rng.normal();
    r.concepts.resize(spec.n_k);
    for (std::size_t j = 0; j < spec.n_k; ++j) {
      const double probe = dot(out.probes.row(j), r.feature) + spec.noise * rng.normal();
      r.concepts[j] = spec.task == ConceptTask::classification ? (probe > 0.0 ? 1.0 : 0.0) : sigmoid(probe);
    }
    r.label = apply_label_rule(out.label_rule, r.concepts);
    const bool flip = spec.hidden_factor && dot(out.hidden_direction, r.feature) > out.hidden_threshold;
    if (flip) r.label = (r.label + 1) % spec.n_c;
    out.flipped.push_back(flip);
    out.dataset.records.push_back(std::move(r));
  }
  out.dataset.validate();
  return out;
}

}  // namespace ccbm
