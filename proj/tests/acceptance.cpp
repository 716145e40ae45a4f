// Acceptance suite. Prints one PASS/FAIL line per criterion with the
// measured quantities and returns non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "ccbm/experiments.hpp"
#include "ccbm/service.hpp"
#include "test_util.hpp"

using namespace ccbm;
using namespace ccbm::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- gradient correctness ---------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string detail;
  for (auto task : {ConceptTask::classification, ConceptTask::regression}) {
    std::mt19937_64 gen(task == ConceptTask::classification ? 101 : 202);
    const auto ds = random_dataset(gen, 5, 10, 4, 3, task);
    const auto bank = random_bank(gen, 4, 8);
    const auto cfg = config_for(ds, 8, 2);
    auto params = init_params(cfg, 7);
    randomize(params, gen, 0.5);
    const auto idx = all_indices(ds);
    const LossWeights w{0.2, 10.0};
    const auto br = loss_and_gradient(params, bank, ds, idx, cfg, w, {});
    auto fn = [&](std::span<const double> x) {
      CcbmParams p = params;
      unflatten(x, p);
      return batch_total_loss(p, bank, ds, idx, cfg, w, {});
    };
    const auto r = grad_check(fn, flatten(params), flatten(br.grads), 1e-4, 1e-4);
    worst = std::max(worst, r.max_rel_error);
    detail += fmt("%s max_rel=%.2e over %zu params; ", task == ConceptTask::classification ? "bce" : "mse",
                  r.max_rel_error, flatten(params).size());
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 10.0, detail + fmt("%.2fs", secs)};
}

// --- oracle equivalence -----------------------------------------------------

Outcome oracle_equivalence() {
  std::mt19937_64 gen(303);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    ModelConfig c;
    c.d = 3 + gen() % 6;
    c.d_k = 2 + gen() % 5;
    c.d_u = c.d_k;
    c.n_k = 1 + gen() % 5;
    c.n_u = gen() % 4;
    c.n_c = 2 + gen() % 3;
    auto p = init_params(c, inst);
    randomize(p, gen, 1.0);
    const auto bank = random_bank(gen, c.n_k, c.d_k);
    const auto x = random_vector(gen, c.d, -2, 2);
    const auto t = diagnose(x, p, bank);
    const auto o = oracle::forward(x, p, bank);
    worst = std::max({worst, max_abs_diff(t.known_attention, o.known_attention), max_abs_diff(t.known_scores, o.S),
                      max_abs_diff(t.logits, o.logits), max_abs_diff(t.probs, o.probs)});
    if (c.n_u) {
      worst = std::max({worst, max_abs_diff(t.unknown_attention, o.unknown_attention),
                        max_abs_diff(t.unknown_scores, o.L)});
    }
  }
  return {worst <= 1e-9, fmt("20 instances, max_abs_diff=%.2e", worst)};
}

// --- normalization ----------------------------------------------------------

Outcome normalization() {
  std::mt19937_64 gen(404);
  double worst = 0.0;
  auto row_err = [&](const Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double s = 0.0;
      for (double v : m.row(i)) s += v;
      worst = std::max(worst, std::abs(s - 1.0));
    }
  };
  for (int draw = 0; draw < 100; ++draw) {
    ModelConfig c;
    c.d = 4 + gen() % 8;
    c.d_k = 2 + gen() % 7;
    c.d_u = c.d_k;
    c.n_k = 1 + gen() % 6;
    c.n_u = gen() % 4;
    c.n_c = 2 + gen() % 4;
    auto p = init_params(c, draw);
    randomize(p, gen, 3.0);
    const auto bank = random_bank(gen, c.n_k, c.d_k);
    const auto t = diagnose(random_vector(gen, c.d, -5, 5), p, bank);
    row_err(t.known_attention);
    if (c.n_u) row_err(t.unknown_attention);
    double s = 0.0;
    for (double v : t.probs) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return {worst <= 1e-12, fmt("100 draws, max |sum-1|=%.2e", worst)};
}

// --- training criteria ------------------------------------------------------

SynthSpec desk_spec(std::uint64_t seed, double hidden_strength) {
  SynthSpec s;
  s.n = 2000;
  s.d = 16;
  s.n_k = 6;
  s.n_c = 2;
  s.noise = 0.05;
  s.bank_dim = 16;
  s.seed = seed;
  s.hidden_factor = hidden_strength > 0.0;
  s.hidden_strength = hidden_strength;
  return s;
}

TrainConfig desk_config(const SynthResult& r, std::size_t n_u, std::uint64_t seed) {
  TrainConfig t;
  t.model = config_for(r, n_u);
  t.weights = {0.2, 10.0};
  t.seed = seed;
  return t;
}

struct Holdout {
  MetricReport metrics;
  TrainResult model;
  double seconds = 0.0;
};

// Trains on 80% of the records and evaluates on the untouched 20%.
Holdout holdout_run(const SynthResult& r, const TrainConfig& cfg) {
  const auto folds = stratified_kfold_split(r.dataset.labels(), 5, cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  Holdout h;
  h.model = train(r.dataset, r.bank, folds[0].train, cfg);
  h.seconds = seconds_since(t0);
  h.metrics = evaluate(h.model.params, r.bank, r.dataset, folds[0].test, cfg.model.concept_task);
  return h;
}

Outcome learnability() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = synth_generate(desk_spec(seed, 0.0));
    const auto h = holdout_run(r, desk_config(r, 0, seed));
    const bool pass = h.metrics.concepts.mean_auc >= 0.95 && h.metrics.diagnosis.auc >= 0.95 &&
                      h.model.history.stopped_epoch <= 300 && h.seconds < 120.0;
    ok &= pass;
    detail += fmt("seed%llu concept=%.4f diag=%.4f ep=%zu %.1fs; ", static_cast<unsigned long long>(seed),
                  h.metrics.concepts.mean_auc, h.metrics.diagnosis.auc, h.model.history.stopped_epoch, h.seconds);
  }
  return {ok, detail};
}

Outcome complement_benefit() {
  double with = 0.0, without = 0.0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = synth_generate(desk_spec(seed, 0.25));
    const double a0 = holdout_run(r, desk_config(r, 0, seed)).metrics.diagnosis.auc;
    const double a1 = holdout_run(r, desk_config(r, r.dataset.meta.n_c, seed)).metrics.diagnosis.auc;
    without += a0 / 5.0;
    with += a1 / 5.0;
    detail += fmt("seed%llu %.4f->%.4f; ", static_cast<unsigned long long>(seed), a0, a1);
  }
  return {with - without >= 0.02, detail + fmt("mean n_u=0 %.4f, n_u=n_c %.4f, gain %.4f", without, with, with - without)};
}

Outcome ablation() {
  const auto r = synth_generate(desk_spec(1, 0.25));
  auto cfg = desk_config(r, r.dataset.meta.n_c, 1);
  const auto with = holdout_run(r, cfg);
  const auto cw = embedding_cosines(with.model.params.unknown_embeddings, r.bank.embeddings);
  cfg.weights.lambda2 = 0.0;
  const auto without = holdout_run(r, cfg);
  const auto co = embedding_cosines(without.model.params.unknown_embeddings, r.bank.embeddings);
  const bool ok = cw.unknown_unknown <= 0.2 && cw.unknown_known <= 0.2;
  return {ok, fmt("lambda2=10: |cos| uu=%.4f uk=%.4f; lambda2=0 (reported): uu=%.4f uk=%.4f", cw.unknown_unknown,
                  cw.unknown_known, co.unknown_unknown, co.unknown_known)};
}

// --- intervention faithfulness ----------------------------------------------

Outcome intervention_faithfulness() {
  const auto r = small_synth(505, 400);
  TrainConfig cfg;
  cfg.model = config_for(r, 0);
  cfg.max_epochs = 40;
  cfg.adam.lr = 1e-2;
  cfg.seed = 5;
  const auto model = train(r.dataset, r.bank, cfg).params;
  const auto idx = all_indices(r.dataset);
  const auto preds = predict(model, r.bank, r.dataset, idx);
  const auto task = r.dataset.meta.task;

  // No-op threshold.
  const std::vector<double> above{1.5};
  const auto rep = run_intervention(model, r.bank, r.dataset, above);
  const auto base = evaluate(model, r.bank, r.dataset, idx, task);
  bool noop = true;
  for (const auto* row : {&rep.rows[0], &rep.rows[1]}) {
    const auto a = row->metrics.scalars(), b = base.scalars();
    for (std::size_t i = 0; i < a.size(); ++i)
      noop &= a[i].second == b[i].second || (std::isnan(a[i].second) && std::isnan(b[i].second));
  }
  noop &= apply_intervention(model, preds, 1.5, task, false).probs == preds.probs;

  // All-zero intervention with n_u = 0.
  const auto zero = apply_intervention(model, preds, -1.0, task, false);
  const Vector prior = softmax(model.decision.bias.data());
  bool exact = true;
  for (std::size_t i = 0; i < zero.probs.rows(); ++i)
    for (std::size_t c = 0; c < prior.size(); ++c) exact &= zero.probs(i, c) == prior[c];

  // Direct recomputation at every default threshold.
  double worst = 0.0;
  for (double t : default_thresholds(preds, task)) {
    const auto o = apply_intervention(model, preds, t, task, false);
    for (std::size_t i = 0; i < o.scores.rows(); ++i)
      for (std::size_t c = 0; c < o.logits.cols(); ++c) {
        double z = model.decision.bias(0, c);
        for (std::size_t k = 0; k < o.scores.cols(); ++k) {
          const double raw = preds.scores(i, k);
          const double s = sigmoid(raw) > t ? 0.0 : raw;
          z += s * model.decision.weight(k, c);
        }
        worst = std::max(worst, std::abs(z - o.logits(i, c)));
      }
  }
  return {noop && exact && worst <= 1e-9,
          fmt("noop bit-exact=%s, zero->softmax(bias) exact=%s, recompute max diff=%.2e", noop ? "yes" : "no",
              exact ? "yes" : "no", worst)};
}

// --- metric oracles -----------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 gen(606);
  std::size_t auc_mismatch = 0, sigma_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + gen() % 120;
    const unsigned levels = t % 3 == 0 ? 5 : 100000;
    Vector s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(gen() % levels) / levels * 8.0 - 4.0;
      y[i] = static_cast<int>(gen() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1;
          num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    const double a = auc(s, std::span<const int>(y));
    auc_mismatch += a != num / pairs;
    Vector sg = s;
    for (double& v : sg) v = sigmoid(v);
    sigma_mismatch += auc(sg, std::span<const int>(y)) != a;
  }

  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + gen() % 60, n_c = 2 + gen() % 3;
    std::vector<std::size_t> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = gen() % n_c;
      y[i] = gen() % n_c;
    }
    double correct = 0.0, f1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) correct += p[i] == y[i];
    for (std::size_t c = 0; c < n_c; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += p[i] == c && y[i] == c;
        fp += p[i] == c && y[i] != c;
        fn += p[i] != c && y[i] == c;
      }
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0, rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      f1 += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    }
    worst = std::max(worst, std::abs(accuracy(p, y) - correct / static_cast<double>(n)));
    worst = std::max(worst, std::abs(macro_f1(p, y, n_c) - f1 / static_cast<double>(n_c)));

    const Matrix sc = random_matrix(gen, 1 + gen() % 10, 1 + gen() % 5);
    const Matrix tg = random_matrix(gen, sc.rows(), sc.cols(), 0, 1);
    double sq = 0, ab = 0;
    for (std::size_t i = 0; i < sc.size(); ++i) {
      sq += (sc.data()[i] - tg.data()[i]) * (sc.data()[i] - tg.data()[i]);
      ab += std::abs(sc.data()[i] - tg.data()[i]);
    }
    const auto e = rmse_mae(sc, tg);
    worst = std::max({worst, std::abs(e.rmse - std::sqrt(sq / static_cast<double>(sc.size()))),
                      std::abs(e.mae - ab / static_cast<double>(sc.size()))});
  }
  return {auc_mismatch == 0 && sigma_mismatch == 0 && worst <= 1e-12,
          fmt("auc mismatches %zu/1000, sigma-invariance mismatches %zu, acc/f1/rmse/mae max diff %.2e",
              auc_mismatch, sigma_mismatch, worst)};
}

// --- label efficiency ---------------------------------------------------------

Outcome label_efficiency() {
  const auto r = small_synth(707, 300);
  TrainConfig cfg;
  cfg.model = config_for(r, 2);
  cfg.max_epochs = 5;
  cfg.adam.lr = 1e-2;
  cfg.seed = 9;
  const std::size_t k = 5;
  const auto& props = default_proportions();
  const auto rep = run_label_efficiency(r.dataset, r.bank, cfg, props, k);
  const auto folds = experiment_folds(r.dataset, cfg, k);
  const auto labels = r.dataset.labels();
  bool cards = true, untouched = true, complete = rep.rows.size() == props.size() * k &&
                                                   rep.summary.size() == props.size();
  std::string trend;
  for (std::size_t pi = 0; pi < props.size() && complete; ++pi) {
    for (std::size_t f = 0; f < k; ++f) {
      const auto& row = rep.rows[pi * k + f];
      const auto expect = subsample_proportion(folds[f].train, labels, props[pi], cfg.seed + f);
      const double target = std::round(props[pi] * static_cast<double>(folds[f].train.size()));
      cards &= row.train_size == expect.size() && std::abs(static_cast<double>(row.train_size) - target) <= 1.0;
      untouched &= row.test_indices == folds[f].test;
      complete &= !std::isnan(row.scalar("diag_auc")) && row.scalar("proportion") == props[pi];
    }
    trend += fmt("p=%.1f auc=%.3f ", props[pi], rep.summary[pi].mean_of("diag_auc"));
  }
  const auto dir = temp_dir("acceptance_label_eff");
  write_report(rep, dir);
  for (const char* f : {"report.json", "report.csv", "plot.csv"}) complete &= std::filesystem::exists(dir / f);
  return {cards && untouched && complete,
          fmt("cardinalities=%s untouched_tests=%s complete=%s; ", cards ? "ok" : "bad", untouched ? "ok" : "bad",
              complete ? "ok" : "bad") +
              "reported: " + trend};
}

// --- reproducibility ----------------------------------------------------------

Outcome reproducibility() {
  bool ok = true;
  std::string failed;
  auto check = [&](const char* what, bool same) {
    ok &= same;
    if (!same) failed += std::string(what) + " ";
  };
  const auto a = small_synth(808, 200, true, 0.2), b = small_synth(808, 200, true, 0.2);
  bool synth_same = a.bank.embeddings == b.bank.embeddings;
  for (std::size_t i = 0; i < a.dataset.size(); ++i)
    synth_same &= a.dataset.records[i].feature == b.dataset.records[i].feature &&
                  a.dataset.records[i].concepts == b.dataset.records[i].concepts &&
                  a.dataset.records[i].label == b.dataset.records[i].label;
  check("synth", synth_same);

  TrainConfig cfg;
  cfg.model = config_for(a, 2);
  cfg.weights = {0.2, 10.0};
  cfg.max_epochs = 8;
  cfg.adam.lr = 1e-2;
  cfg.seed = 4;
  const auto t1 = train(a.dataset, a.bank, cfg), t2 = train(a.dataset, a.bank, cfg);
  bool hist = t1.history.epochs.size() == t2.history.epochs.size();
  for (std::size_t e = 0; hist && e < t1.history.epochs.size(); ++e)
    hist &= t1.history.epochs[e].loss.total == t2.history.epochs[e].loss.total;
  check("train", t1.params == t2.params && hist);
  const auto idx = all_indices(a.dataset);
  check("eval", to_json(evaluate(t1.params, a.bank, a.dataset, idx, cfg.model.concept_task)).dump() ==
                    to_json(evaluate(t2.params, a.bank, a.dataset, idx, cfg.model.concept_task)).dump());

  auto same_report = [](const ExperimentReport& x, const ExperimentReport& y) {
    return to_json(x).dump() == to_json(y).dump() && report_csv(x) == report_csv(y);
  };
  auto quick = cfg;
  quick.max_epochs = 3;
  check("crossval", same_report(crossval_evaluate(a.dataset, a.bank, quick, 3),
                                crossval_evaluate(a.dataset, a.bank, quick, 3)));
  const std::vector<double> props{1.0, 0.5};
  check("label-eff", same_report(run_label_efficiency(a.dataset, a.bank, quick, props, 3),
                                 run_label_efficiency(a.dataset, a.bank, quick, props, 3)));
  const std::vector<std::size_t> nu{0, 1};
  check("sweep", same_report(run_unknown_sweep(a.dataset, a.bank, quick, nu, 3),
                             run_unknown_sweep(a.dataset, a.bank, quick, nu, 3)));
  check("ablation", same_report(run_ablation_similarity(a.dataset, a.bank, quick, 3),
                                run_ablation_similarity(a.dataset, a.bank, quick, 3)));
  const auto thr = default_thresholds(predict(t1.params, a.bank, a.dataset, idx), cfg.model.concept_task);
  check("intervention", same_report(run_intervention(t1.params, a.bank, a.dataset, thr),
                                    run_intervention(t2.params, a.bank, a.dataset, thr)));
  return {ok, ok ? "synth, train, eval, crossval, label-eff, sweep, ablation, intervention identical"
                 : "differs: " + failed};
}

// --- service affine delta -------------------------------------------------------

Outcome service_affine_delta() {
  const auto r = small_synth(909, 40);
  Checkpoint ck;
  ck.config = config_for(r, 2);
  ck.params = init_params(ck.config, 3);
  std::mt19937_64 gen(3);
  randomize(ck.params, gen, 0.8);
  ck.bank = r.bank;
  ck.class_names = r.dataset.meta.class_names;
  const Service svc(ck, r.dataset);
  double worst = 0.0, explain_diff = 0.0;
  for (const auto& rec : r.dataset.records) {
    const auto e = nlohmann::json::parse(svc.explain(rec.id).body.dump());
    const auto empty =
        nlohmann::json::parse(svc.intervene(nlohmann::json({{"id", rec.id}}).dump()).body.dump());
    explain_diff = std::max(explain_diff, max_abs_diff(e["probs"].get<Vector>(),
                                                       empty["intervened"]["probs"].get<Vector>()));
    const std::string name = "unknown_1";
    const auto resp = nlohmann::json::parse(
        svc.intervene(nlohmann::json({{"id", rec.id}, {"include_unknown", true}, {"overrides", {{name, 0.37}}}}).dump())
            .body.dump());
    const std::size_t k = ck.config.n_k + 1;
    const double delta = resp["scores"][k]["raw_after"].get<double>() - resp["scores"][k]["raw_before"].get<double>();
    const auto z0 = resp["original"]["logits"].get<Vector>(), z1 = resp["intervened"]["logits"].get<Vector>();
    for (std::size_t c = 0; c < z0.size(); ++c)
      worst = std::max(worst, std::abs((z1[c] - z0[c]) - ck.params.decision.weight(k, c) * delta));
  }
  return {worst <= 1e-6 && explain_diff <= 1e-9,
          fmt("affine delta max err %.2e, empty-override vs explain %.2e", worst, explain_diff)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"gradient_correctness", gradient_correctness},
      {"oracle_equivalence", oracle_equivalence},
      {"normalization", normalization},
      {"synthetic_learnability", learnability},
      {"complement_benefit", complement_benefit},
      {"similarity_ablation", ablation},
      {"intervention_faithfulness", intervention_faithfulness},
      {"metric_oracles", metric_oracles},
      {"label_efficiency_structure", label_efficiency},
      {"reproducibility", reproducibility},
      {"service_affine_delta", service_affine_delta},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failures, std::size(criteria));
  return failures ? 1 : 0;
}
