#pragma once

// Command-line front end. run_cli() parses argv, runs one subcommand, and
// maps exceptions to exit codes: 0 ok, 1 usage or config, 2 data or
// dimension, 3 numeric abort.

#include <algorithm>
#include <cstdlib>
#include <iterator>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ccbm/data.hpp"
#include "ccbm/errors.hpp"
#include "ccbm/experiments.hpp"
#include "ccbm/serialize.hpp"
#include "ccbm/service.hpp"
#include "ccbm/service_http.hpp"
#include "ccbm/trainer.hpp"

namespace ccbm {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const MetricError*>(&e)) {
    return kExitData;
  }
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kExitData;
  return kExitUsage;
}

namespace cli {

inline std::filesystem::path default_out_root() {
  const char* env = std::getenv("CCBM_OUT_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("ccbm_out");
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    is >> v;
    if (is.fail() || !is.eof()) throw ConfigError(std::string(flag) + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string(flag) + ": empty list");
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t folds = 5;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<std::size_t> n_u;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::optional<std::size_t> heads;
  std::string thresholds;
  std::string proportions;
  std::string values = "0,1,2,3,5";
  std::string data;
  std::string bank;
  std::string checkpoint;
  std::string id;
  std::string file;
  bool include_unknown = false;
  bool binary_f1 = false;
  std::string host = "127.0.0.1";
  int port = 8080;
  SynthSpec synth;
  double test_fraction = 0.0;
  std::string synth_task = "classification";
};

struct Inputs {
  Dataset data;
  ConceptBank bank;
};

inline Inputs load_inputs(const Options& o) {
  if (o.data.empty()) throw ConfigError("--data is required");
  Inputs in;
  in.data = load_dataset(o.data);
  const std::filesystem::path bank = o.bank.empty() ? std::filesystem::path(o.data) / "bank.csv" : std::filesystem::path(o.bank);
  in.bank = load_concept_bank(bank, in.data.meta.concept_names);
  return in;
}

// Config resolution: dataset-derived shape, then --config JSON, then flags.
inline TrainConfig resolve_config(const Options& o, const Inputs& in) {
  TrainConfig c;
  c.model.d = in.data.meta.d;
  c.model.n_k = in.data.meta.n_k;
  c.model.n_c = in.data.meta.n_c;
  c.model.concept_task = in.data.meta.task;
  c.model.d_k = in.bank.embeddings.cols();
  c.model.d_u = c.model.d_k;
  c.model.n_u = c.model.n_c;
  if (!o.config_path.empty()) {
    std::ifstream f(o.config_path);
    if (!f) throw ConfigError("cannot read config " + o.config_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + o.config_path + ": " + e.what());
    }
    c = train_config_from_json(j, c);
  }
  if (o.seed) c.seed = *o.seed;
  if (o.lambda1) c.weights.lambda1 = *o.lambda1;
  if (o.lambda2) c.weights.lambda2 = *o.lambda2;
  if (o.n_u) c.model.n_u = *o.n_u;
  if (o.epochs) c.max_epochs = *o.epochs;
  if (o.batch) c.batch_size = *o.batch;
  if (o.lr) c.adam.lr = *o.lr;
  if (o.heads) c.model.heads = *o.heads;
  c.validate();
  check_consistency(in.data, in.bank, c.model);
  return c;
}

inline F1Mode f1_mode(const Options& o) { return o.binary_f1 ? F1Mode::binary_positive : F1Mode::macro; }

inline std::filesystem::path out_dir(const Options& o, const std::string& sub) {
  return o.out.empty() ? default_out_root() / sub : std::filesystem::path(o.out);
}

inline Checkpoint need_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_checkpoint(o.checkpoint);
}

inline Dataset need_data_for(const Options& o, const Checkpoint& c) {
  if (o.data.empty()) throw ConfigError("--data is required");
  Dataset d = load_dataset(o.data);
  check_consistency(d, c.bank, c.config);
  return d;
}

inline int cmd_synth(const Options& o) {
  SynthSpec s = o.synth;
  s.task = parse_concept_task(o.synth_task);
  if (o.seed) s.seed = *o.seed;
  s.hidden_factor = s.hidden_strength > 0.0;
  const auto result = synth_generate(s);
  const auto dir = out_dir(o, "synth");
  if (o.test_fraction > 0.0) {
    if (o.test_fraction >= 1.0) throw ConfigError("--test-fraction must be in [0, 1)");
    const auto labels = result.dataset.labels();
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), 0);
    const auto test = subsample_proportion(all, labels, o.test_fraction, s.seed + 1);
    std::vector<std::size_t> rest;
    std::set_difference(all.begin(), all.end(), test.begin(), test.end(), std::back_inserter(rest));
    for (const auto& [name, idx] : {std::pair{"train", rest}, std::pair{"test", test}}) {
      save_dataset(result.dataset.subset(idx), dir / name);
      save_concept_bank(result.bank, dir / name / "bank.csv");
    }
    std::cout << "wrote " << rest.size() << " train and " << test.size() << " test records to " << dir.string()
              << "\n";
    return kExitOk;
  }
  save_dataset(result.dataset, dir);
  save_concept_bank(result.bank, dir / "bank.csv");
  std::cout << "wrote " << result.dataset.size() << " records to " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_train(const Options& o) {
  const Inputs in = load_inputs(o);
  const TrainConfig cfg = resolve_config(o, in);
  const TrainResult tr = train(in.data, in.bank, cfg);
  const auto dir = out_dir(o, "train");
  std::filesystem::create_directories(dir);
  Checkpoint ck{cfg.model, tr.params, in.bank, in.data.meta.class_names, nlohmann::json::object()};
  ck.metadata["train_config"] = to_json(cfg);
  ck.metadata["epochs"] = tr.history.epochs.size();
  ck.metadata["early_stopped"] = tr.history.early_stopped;
  save_checkpoint(ck, dir / "checkpoint.json");
  tr.history.write_csv((dir / "history.csv").string());
  std::cout << "trained " << tr.history.epochs.size() << " epochs; checkpoint " << (dir / "checkpoint.json").string()
            << "\n";
  return kExitOk;
}

inline int cmd_eval(const Options& o) {
  const Checkpoint ck = need_checkpoint(o);
  const Dataset d = need_data_for(o, ck);
  const auto m = evaluate(ck.params, ck.bank, d, all_indices(d), ck.config.concept_task, f1_mode(o));
  const auto dir = out_dir(o, "eval");
  const std::string text = to_json(m, ck.bank.names).dump(2) + "\n";
  write_text(dir / "metrics.json", text);
  std::cout << text;
  return kExitOk;
}

inline int emit_report(const ExperimentReport& r, const std::filesystem::path& dir) {
  write_report(r, dir);
  std::cout << plot_csv(r);
  return kExitOk;
}

inline int cmd_crossval(const Options& o) {
  const Inputs in = load_inputs(o);
  const TrainConfig cfg = resolve_config(o, in);
  return emit_report(crossval_evaluate(in.data, in.bank, cfg, o.folds, f1_mode(o)), out_dir(o, "crossval"));
}

inline int cmd_intervene(const Options& o) {
  const Checkpoint ck = need_checkpoint(o);
  const Dataset d = need_data_for(o, ck);
  std::vector<double> t;
  if (o.thresholds.empty()) {
    const auto p = predict(ck.params, ck.bank, d, all_indices(d));
    t = default_thresholds(p, ck.config.concept_task, o.include_unknown);
  } else {
    t = parse_list<double>(o.thresholds, "--thresholds");
  }
  return emit_report(run_intervention(ck.params, ck.bank, d, t, o.include_unknown, f1_mode(o)),
                     out_dir(o, "intervention"));
}

inline int cmd_label_eff(const Options& o) {
  const Inputs in = load_inputs(o);
  const TrainConfig cfg = resolve_config(o, in);
  const auto p = o.proportions.empty() ? default_proportions() : parse_list<double>(o.proportions, "--proportions");
  return emit_report(run_label_efficiency(in.data, in.bank, cfg, p, o.folds, f1_mode(o)),
                     out_dir(o, "label_efficiency"));
}

inline int cmd_sweep(const Options& o) {
  const Inputs in = load_inputs(o);
  const TrainConfig cfg = resolve_config(o, in);
  const auto v = parse_list<std::size_t>(o.values, "--values");
  return emit_report(run_unknown_sweep(in.data, in.bank, cfg, v, o.folds, f1_mode(o)), out_dir(o, "unknown_sweep"));
}

inline int cmd_ablate(const Options& o) {
  const Inputs in = load_inputs(o);
  const TrainConfig cfg = resolve_config(o, in);
  return emit_report(run_ablation_similarity(in.data, in.bank, cfg, o.folds, f1_mode(o)),
                     out_dir(o, "ablation_similarity"));
}

inline int cmd_explain(const Options& o) {
  const Checkpoint ck = need_checkpoint(o);
  Dataset d = need_data_for(o, ck);
  const Service svc(ck, std::move(d));
  const std::string id = o.id.empty() ? svc.dataset().records.at(0).id : o.id;
  const auto r = svc.explain(id);
  if (r.status != 200) throw DataError(r.body.value("message", "explain failed"));
  const std::string text = r.body.dump(2) + "\n";
  write_text(out_dir(o, "explain") / ("explain_" + id + ".json"), text);
  std::cout << text;
  return kExitOk;
}

inline int cmd_export(const Options& o) {
  const Checkpoint ck = need_checkpoint(o);
  const std::filesystem::path path = o.file.empty() ? out_dir(o, "export") / "decision_layer.json" : std::filesystem::path(o.file);
  write_text(path, export_decision_layer(ck).dump(2) + "\n");
  std::cout << "wrote " << path.string() << "\n";
  return kExitOk;
}

inline int cmd_serve(const Options& o) {
  const Checkpoint ck = need_checkpoint(o);
  Dataset d = need_data_for(o, ck);
  const Service svc(ck, std::move(d));
  httplib::Server server;
  bind_routes(server, svc);
  std::cout << "listening on " << o.host << ":" << o.port << std::endl;
  if (!server.listen(o.host, o.port)) throw ConfigError("cannot bind " + o.host + ":" + std::to_string(o.port));
  return kExitOk;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv) {
  using cli::Options;
  Options o;
  CLI::App app{"ccbm: concept bottleneck training, evaluation and experiment harnesses"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* s) {
    s->add_option("--out", o.out, "Output directory (default: $CCBM_OUT_DIR/<command>)");
    s->add_option("--seed", o.seed, "Random seed");
  };
  auto add_data = [&](CLI::App* s) {
    s->add_option("--data", o.data, "Dataset directory (meta.json, features.csv, concepts.csv, labels.csv)");
    s->add_option("--bank", o.bank, "Concept bank CSV (default: <data>/bank.csv)");
  };
  auto add_training = [&](CLI::App* s) {
    add_data(s);
    s->add_option("--config", o.config_path, "Training config JSON");
    s->add_option("--lambda1", o.lambda1, "Weight of the classification term");
    s->add_option("--lambda2", o.lambda2, "Weight of the similarity penalty");
    s->add_option("--nu", o.n_u, "Number of unknown concepts (default: class count)");
    s->add_option("--epochs", o.epochs, "Maximum epochs");
    s->add_option("--batch", o.batch, "Batch size");
    s->add_option("--lr", o.lr, "Adam learning rate");
    s->add_option("--heads", o.heads, "Attention heads");
  };
  auto add_model_input = [&](CLI::App* s) {
    s->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON written by train");
    s->add_option("--data", o.data, "Dataset directory");
  };
  auto add_folds = [&](CLI::App* s) {
    s->add_option("--folds", o.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
    s->add_flag("--binary-f1", o.binary_f1, "Report positive-class F1 instead of macro F1");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset and concept bank");
  add_common(synth);
  synth->add_option("--n", o.synth.n, "Records");
  synth->add_option("--d", o.synth.d, "Feature dimension");
  synth->add_option("--nk", o.synth.n_k, "Known concepts");
  synth->add_option("--nc", o.synth.n_c, "Classes");
  synth->add_option("--noise", o.synth.noise, "Concept noise standard deviation");
  synth->add_option("--hidden-strength", o.synth.hidden_strength, "Fraction of labels driven by a hidden factor");
  synth->add_option("--bank-dim", o.synth.bank_dim, "Concept embedding dimension");
  synth->add_option("--task", o.synth_task, "classification or regression");
  synth->add_option("--test-fraction", o.test_fraction, "Write a stratified held-out split to <out>/train and <out>/test");

  auto* train_cmd = app.add_subcommand("train", "Train on a full dataset and write a checkpoint");
  add_common(train_cmd);
  add_training(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_common(eval_cmd);
  add_model_input(eval_cmd);
  eval_cmd->add_flag("--binary-f1", o.binary_f1, "Report positive-class F1 instead of macro F1");

  auto* cv = app.add_subcommand("crossval", "K-fold cross-validation");
  add_common(cv);
  add_training(cv);
  add_folds(cv);

  auto* iv = app.add_subcommand("intervene", "Threshold intervention on known concept scores");
  add_common(iv);
  add_model_input(iv);
  iv->add_option("--thresholds", o.thresholds, "Ascending comma-separated thresholds (default: 8 score quantiles)");
  iv->add_flag("--include-unknown", o.include_unknown, "Also reset unknown concept scores");
  iv->add_flag("--binary-f1", o.binary_f1, "Report positive-class F1 instead of macro F1");

  auto* le = app.add_subcommand("label-eff", "Label-efficiency sweep over training proportions");
  add_common(le);
  add_training(le);
  add_folds(le);
  le->add_option("--proportions", o.proportions, "Comma-separated proportions in (0, 1]");

  auto* sw = app.add_subcommand("sweep-nu", "Cross-validate each number of unknown concepts");
  add_common(sw);
  add_training(sw);
  add_folds(sw);
  sw->add_option("--values", o.values, "Comma-separated n_u values");

  auto* ab = app.add_subcommand("ablate-sim", "Cross-validate with and without the similarity penalty");
  add_common(ab);
  add_training(ab);
  add_folds(ab);

  auto* ex = app.add_subcommand("explain", "Explain one sample's diagnosis");
  add_common(ex);
  add_model_input(ex);
  ex->add_option("--id", o.id, "Sample id (default: first record)");

  auto* sv = app.add_subcommand("serve", "Serve the inference and intervention API over HTTP");
  add_model_input(sv);
  sv->add_option("--host", o.host, "Bind address");
  sv->add_option("--port", o.port, "Port");

  auto* exp = app.add_subcommand("export", "Export the decision layer as JSON");
  add_common(exp);
  exp->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON");
  exp->add_option("--file", o.file, "Output file (default: <out>/decision_layer.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cli::cmd_synth(o);
    if (*train_cmd) return cli::cmd_train(o);
    if (*eval_cmd) return cli::cmd_eval(o);
    if (*cv) return cli::cmd_crossval(o);
    if (*iv) return cli::cmd_intervene(o);
    if (*le) return cli::cmd_label_eff(o);
    if (*sw) return cli::cmd_sweep(o);
    if (*ab) return cli::cmd_ablate(o);
    if (*ex) return cli::cmd_explain(o);
    if (*sv) return cli::cmd_serve(o);
    if (*exp) return cli::cmd_export(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitUsage;
}

}  // namespace ccbm
