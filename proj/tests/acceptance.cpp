// Acceptance suite: one PASS/FAIL line per criterion on the synthetic
// benchmark (2000 sequences, vocab 100, lengths 20-60, class signal 0.9,
// 80/20 split). Usage: acceptance [criterion numbers...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "seqtrojan/error.hpp"
#include "seqtrojan/evaluation.hpp"
#include "seqtrojan/experiment.hpp"
#include "seqtrojan/random.hpp"
#include "seqtrojan/training.hpp"

using namespace seqtrojan;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::size_t env_size(const char* name, std::size_t fallback) {
  const char* v = std::getenv(name);
  return v ? static_cast<std::size_t>(std::stoul(v)) : fallback;
}

fs::path g_root;
CleanModelCache g_cache;

ExperimentConfig base_config(const std::string& name, EncoderKind encoder) {
  ExperimentConfig c;
  c.name = name;
  c.model.encoder = encoder;
  c.train.epochs = env_size("SEQTROJAN_ACCEPT_EPOCHS", c.train.epochs);
  c.attack_train = c.train;
  c.output_dir = g_root;
  return c;
}

double mean_of(const RunResult& r, const std::string& metric) { return r.aggregate.metrics.at(metric).mean; }

// ---- 1 ----
Outcome clean_baseline() {
  const SyntheticConfig scfg;
  const auto raw = generate_synthetic(scfg);
  const auto layout = synthetic_layout(scfg.vocab_size);
  std::size_t correct = 0;
  for (const auto& s : raw.sequences) {
    int votes[2] = {0, 0};
    for (auto t : s.tokens) {
      for (int c = 0; c < 2; ++c) votes[c] += t >= layout.block_begin[c] && t < layout.block_end[c];
    }
    correct += (votes[1] > votes[0] ? 1 : 0) == s.label;
  }
  const double oracle = static_cast<double>(correct) / static_cast<double>(raw.size());
  bool pass = oracle >= 0.95;
  std::string detail = fmt("block-frequency oracle %.3f;", oracle);
  for (auto enc : {EncoderKind::Lstm, EncoderKind::LstmAttention, EncoderKind::Cnn, EncoderKind::Transformer}) {
    ExperimentConfig cfg = base_config("clean", enc);
    cfg.train = TrainSpec{};  // full default schedule
    const auto data = prepare_data(cfg.data, 0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto model = train_clean_for(cfg, data, 0);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::vector<int> truth;
    for (const auto& s : data.test.sequences) truth.push_back(s.label);
    const double acc = accuracy(predict(model, data.test).label, truth);
    pass = pass && acc >= 0.90 && secs <= 300.0;
    detail += fmt(" %s %.3f in %.0fs;", std::string(to_string(enc)).c_str(), acc, secs);
  }
  return {pass, detail};
}

// ---- 2 ----
RunResult& lstm_attack(TriggerStrategy trigger) {
  static std::map<TriggerStrategy, RunResult> runs;
  auto it = runs.find(trigger);
  if (it == runs.end()) {
    auto cfg = base_config(trigger == TriggerStrategy::RareTokens ? "lstm-rare" : "lstm-composed", EncoderKind::Lstm);
    cfg.attack.trigger = trigger;
    cfg.attack.k = trigger == TriggerStrategy::RareTokens ? 1 : 2;
    it = runs.emplace(trigger, run_experiment(cfg, &g_cache)).first;
  }
  return it->second;
}

Outcome attacks_succeed() {
  bool pass = true;
  std::string detail;
  for (auto trigger : {TriggerStrategy::RareTokens, TriggerStrategy::ComposedStructure}) {
    const auto& r = lstm_attack(trigger);
    const double poisoned = mean_of(r, "poisoned_test_accuracy");
    const double clean = mean_of(r, "clean_test_accuracy");
    const double baseline = mean_of(r, "reference_clean_accuracy");
    pass = pass && poisoned >= 0.95 && std::abs(clean - baseline) <= 0.05;
    detail += fmt(" %s: poisoned %.3f, clean %.3f vs baseline %.3f;", std::string(to_string(trigger)).c_str(),
                  poisoned, clean, baseline);
  }
  return {pass, detail};
}

// ---- 3 ----
Outcome weight_poisoning() {
  auto cfg = base_config("lstm-weight", EncoderKind::Lstm);
  cfg.attack.method = AttackMethod::WeightPoisoning;
  cfg.attack_train.learning_rate = 0.1;
  const auto run = run_experiment(cfg, &g_cache);
  bool identity = true, frozen = true;
  double min_inter = 1.0, min_rho = 1.0;
  for (auto seed : cfg.seeds) {
    const auto dir = run.dir / ("seed-" + std::to_string(seed));
    const auto clean = load_checkpoint(dir / "clean.ckpt");
    const auto attacked = load_checkpoint(dir / "attacked.ckpt");
    const auto data = prepare_data(cfg.data, seed);
    PoisonPlan plan = make_plan(cfg.attack.trigger, data.vocab, 1, cfg.attack.position, cfg.attack.ratio,
                                run_seeds(seed).plan);
    const auto rep = evaluate_attack(clean, attacked, trigger_free(data.test, plan), plan);
    min_inter = std::min(min_inter, rep.intersect);
    min_rho = std::min(min_rho, rep.spearman.value_or(-2.0));
    identity = identity && rep.intersect == 1.0 && rep.spearman && *rep.spearman == 1.0;
    for (std::size_t i = 0; i < clean.params.size(); ++i) {
      const auto& a = clean.params.entry(i).value;
      const auto& b = attacked.params.entry(i).value;
      if (clean.params.entry(i).group != ParamGroup::Embedding) {
        frozen = frozen && std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
        continue;
      }
      for (Index r = 0; r < a.rows(); ++r) {
        if (!plan.uses_token(static_cast<TokenId>(r))) frozen = frozen && (a.row(r).array() == b.row(r).array()).all();
      }
    }
  }
  const double poisoned = mean_of(run, "poisoned_test_accuracy");
  return {identity && frozen && poisoned >= 0.80,
          fmt(" (a) min intersect %.6f, min spearman %.6f; (b) frozen params bit-identical: %s; (c) poisoned %.3f",
              min_inter, min_rho, frozen ? "yes" : "no", poisoned)};
}

// ---- 4 ----
Outcome three_heads() {
  auto single_cfg = base_config("tf-single", EncoderKind::Transformer);
  single_cfg.attack.trigger = TriggerStrategy::ComposedStructure;
  single_cfg.attack.k = 2;
  auto three_cfg = single_cfg;
  three_cfg.name = "tf-three-heads";
  three_cfg.attack.method = AttackMethod::ThreeHeads;
  const auto single = run_experiment(single_cfg, &g_cache);
  const auto three = run_experiment(three_cfg, &g_cache);
  const double detector = mean_of(three, "detector_accuracy");
  const double head = mean_of(three, "poisoned_head_poisoned_test");
  const double routed = mean_of(three, "intersect");
  const double plain = mean_of(single, "intersect");
  return {detector >= 0.98 && head >= 0.95 && routed > plain,
          fmt(" detector %.4f, poisoned head on poisoned test %.4f, routed intersect %.4f vs single %.4f", detector,
              head, routed, plain)};
}

// ---- 5 ----
Outcome distillation() {
  auto cfg = base_config("lstm-rare-distill", EncoderKind::Lstm);
  cfg.attack_train.distill_weight = 1.0;
  const auto distilled = run_experiment(cfg, &g_cache);
  const auto& plain = lstm_attack(TriggerStrategy::RareTokens);
  const double with = mean_of(distilled, "spearman");
  const double without = mean_of(plain, "spearman");
  return {with > without, fmt(" spearman lambda=1 %.4f vs lambda=0 %.4f (intersect %.4f vs %.4f)", with, without,
                              mean_of(distilled, "intersect"), mean_of(plain, "intersect"))};
}

// ---- 6 ----
Outcome ratio_sweep() {
  SweepConfig s;
  s.base = base_config("ratio", EncoderKind::LstmAttention);
  s.base.n_runs = env_size("SEQTROJAN_ACCEPT_SWEEP_RUNS", 5);
  s.base.seeds.resize(s.base.n_runs);
  for (std::size_t i = 0; i < s.base.n_runs; ++i) s.base.seeds[i] = i;
  s.parameter = SweepParameter::Ratio;
  s.values = {0.01, 0.05, 0.1, 0.2, 0.5};
  const auto res = run_sweep(s, &g_cache);
  std::vector<double> acc;
  std::string detail;
  for (std::size_t i = 0; i < res.runs.size(); ++i) {
    acc.push_back(mean_of(res.runs[i], "poisoned_test_accuracy"));
    detail += fmt(" %g:%.3f", s.values[i].get<double>(), acc.back());
  }
  int inversions = 0;
  for (std::size_t i = 1; i < acc.size(); ++i) inversions += acc[i] < acc[i - 1];
  return {inversions <= 1 && acc.back() >= 0.98, detail + fmt("; inversions %d", inversions)};
}

// ---- 7 ----
std::vector<double> position_sweep(EncoderKind enc, const std::string& name) {
  SweepConfig s;
  s.base = base_config(name, enc);
  s.base.n_runs = env_size("SEQTROJAN_ACCEPT_SWEEP_RUNS", 5);
  s.base.seeds.resize(s.base.n_runs);
  for (std::size_t i = 0; i < s.base.n_runs; ++i) s.base.seeds[i] = i;
  s.base.attack.trigger = TriggerStrategy::ComposedStructure;
  s.base.attack.k = 2;
  s.parameter = SweepParameter::Position;
  s.values = {"beginning", "middle", "ending", "end"};
  const auto res = run_sweep(s, &g_cache);
  std::vector<double> acc;
  for (const auto& r : res.runs) acc.push_back(mean_of(r, "poisoned_test_accuracy"));
  return acc;
}

Outcome position_sweeps() {
  const auto att = position_sweep(EncoderKind::LstmAttention, "position-lstm-att");
  const auto cnn = position_sweep(EncoderKind::Cnn, "position-cnn");
  const bool end_max = att[3] >= *std::max_element(att.begin(), att.end());
  const auto [lo, hi] = std::minmax_element(cnn.begin(), cnn.end());
  return {end_max && *hi - *lo <= 0.10,
          fmt(" lstm_att beginning/middle/ending/end %.3f/%.3f/%.3f/%.3f; cnn %.3f/%.3f/%.3f/%.3f (spread %.3f)", att[0],
              att[1], att[2], att[3], cnn[0], cnn[1], cnn[2], cnn[3], *hi - *lo)};
}

// ---- 8 ----
double oracle_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i] / n;
    mb += rb[i] / n;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

Outcome metric_suite() {
  int failed = 0;
  auto check = [&](bool ok) { failed += !ok; };
  check(accuracy(std::vector{1, 0, 1}, std::vector{1, 0, 1}) == 1.0);
  check(accuracy(std::vector{1, 0, 1, 0}, std::vector{0, 1, 0, 1}) == 0.0);
  check(accuracy(std::vector{1, 1, 0, 0}, std::vector{1, 0, 0, 1}) == 0.5);
  check(intersect(std::vector{1, 0, 1}, std::vector{1, 0, 1}) == 1.0);
  check(intersect(std::vector{1, 0, 1, 1}, std::vector{1, 1, 1, 0}) == 0.5);
  check(spearman(std::vector{0.1, 0.2, 0.3}, std::vector{0.4, 0.5, 0.9}) == 1.0);
  check(spearman(std::vector{0.1, 0.2, 0.3}, std::vector{0.9, 0.5, 0.1}) == -1.0);
  const std::vector tie_a{0.1, 0.1, 0.3}, tie_b{0.2, 0.5, 0.9};
  check(std::abs(*spearman(tie_a, tie_b) - oracle_spearman(tie_a, tie_b)) <= 1e-12);
  const auto one = summarize(std::vector{0.3});
  check(one.mean == 0.3 && one.std == 0.0);
  const auto two = summarize(std::vector{0.6, 0.8});
  check(std::abs(two.mean - 0.7) <= 1e-15 && std::abs(two.std - 0.1) <= 1e-12);
  EvalReport r;
  r.clean_test_accuracy = 0.9;
  r.spearman = 0.8;
  const auto agg = aggregate_runs(std::vector<EvalReport>(5, r));
  for (const auto& [_, m] : agg.metrics) check(m.std == 0.0);

  Rng rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(50), b(50);
    for (int i = 0; i < 50; ++i) {
      a[i] = trial % 3 == 0 ? std::round(rng.uniform() * 10) / 10 : rng.uniform();
      b[i] = rng.uniform();
    }
    worst = std::max(worst, std::abs(*spearman(a, b) - oracle_spearman(a, b)));
  }
  check(worst <= 1e-12);
  return {failed == 0, fmt(" %d example(s) failed; worst oracle deviation %.2e over 100 vectors", failed, worst)};
}

// ---- 9 ----
Outcome gradient_checks() {
  std::string detail;
  bool pass = true;
  for (auto enc : {EncoderKind::Lstm, EncoderKind::LstmAttention, EncoderKind::Cnn, EncoderKind::Transformer}) {
    ModelSpec spec;
    spec.encoder = enc;
    spec.vocab_size = 10;
    spec.emb_dim = spec.hidden_dim = 4;
    spec.n_attention_heads = 2;
    spec.ff_dim = 8;
    spec.cnn_kernel_max = 4;
    spec.max_len = 10;
    auto m = init_model(spec, 5);
    std::vector<TokenSequence> rows{{"a", {1, 4, 2, 9, 3, 7, 5}, 0, false}, {"b", {6, 8, 2}, 1, false}};
    const auto batch = pad_batch(std::span<const TokenSequence>(rows), 7);
    Rng rng(3);
    Matrix w(2, 2);
    for (Index i = 0; i < 4; ++i) w.data()[i] = rng.uniform(-1, 1);
    auto loss = [&] { return forward_pass(m, batch).logits[0].cwiseProduct(w).sum(); };
    Gradients g(m.params);
    g.zero();
    std::vector<Matrix> d{w};
    backward_pass(m, forward_pass(m, batch), d, g);
    double worst = 0;
    for (std::size_t p = 0; p < m.params.size(); ++p) {
      Matrix& v = m.params.entry(p).value;
      for (Index i = 0; i < v.size(); ++i) {
        const double saved = v.data()[i];
        v.data()[i] = saved + 1e-5;
        const double up = loss();
        v.data()[i] = saved - 1e-5;
        const double down = loss();
        v.data()[i] = saved;
        const double num = (up - down) / 2e-5;
        const double ana = g[p].data()[i];
        worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-3}));
      }
    }
    pass = pass && worst <= 1e-4;
    detail += fmt(" %s %.1e;", std::string(to_string(enc)).c_str(), worst);
  }
  return {pass, " max relative error:" + detail};
}

// ---- 10 ----
Outcome determinism() {
  auto cfg = base_config("lstm-rare", EncoderKind::Lstm);
  const auto& first = lstm_attack(TriggerStrategy::RareTokens);
  const std::string before = [&] {
    std::ifstream in(first.dir / "reports.ndjson", std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }();
  const auto again = run_experiment(cfg);  // fresh cache: retrains everything
  std::ifstream in(again.dir / "reports.ndjson", std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  const bool same = again.dir == first.dir && ss.str() == before && !before.empty();
  return {same, fmt(" %zu records, rerun byte-identical: %s", first.reports.size(), same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  g_root = fs::current_path() / "acceptance_runs";
  fs::remove_all(g_root);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"clean baseline >= 0.90 for every encoder within 5 minutes", clean_baseline},
      {"rare-token and composed attacks: poisoned >= 0.95, clean within 0.05", attacks_succeed},
      {"weight poisoning: exact concealment, frozen path, poisoned >= 0.80", weight_poisoning},
      {"three heads: detector >= 0.98, poisoned head >= 0.95, routed intersect above single", three_heads},
      {"distillation lambda 1 raises spearman over lambda 0", distillation},
      {"ratio sweep non-decreasing (one inversion), 0.5 reaches 0.98", ratio_sweep},
      {"position sweep: end is best for lstm_att, cnn spread <= 0.10", position_sweeps},
      {"metric unit suite and spearman oracle", metric_suite},
      {"encoder gradients match central differences", gradient_checks},
      {"rerun reproduces byte-identical records", determinism},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string(" raised: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s criterion %d: %s |%s [%.0fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
