#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "seqtrojan/error.hpp"
#include "seqtrojan/experiment.hpp"
#include "seqtrojan/plot.hpp"
#include "seqtrojan/report.hpp"

using namespace seqtrojan;
using namespace seqtrojan::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig c;
  c.name = "small";
  c.data.synthetic.n_sequences = 200;
  c.data.synthetic.vocab_size = 40;
  c.data.synthetic.len_min = 10;
  c.data.synthetic.len_max = 20;
  c.data.synthetic.rare_count_a = 2;
  c.data.synthetic.rare_count_b = 3;
  c.data.max_len = 40;
  c.model.encoder = EncoderKind::Cnn;
  c.model.emb_dim = 16;
  c.train.epochs = 3;
  c.train.learning_rate = 5e-3;
  c.attack_train = c.train;
  c.n_runs = 2;
  c.seeds = {0, 1};
  c.output_dir = out;
  return c;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

}  // namespace

TEST_CASE("config json round-trip materialises defaults") {
  const json full = config_to_json(ExperimentConfig{});
  CHECK(full.at("n_runs") == 5);
  CHECK(full.at("seeds") == json({0, 1, 2, 3, 4}));
  CHECK(full.at("train").at("optimizer") == "adam");
  CHECK(full.at("model").at("emb_dim") == 128);
  CHECK(config_to_json(config_from_json(full)) == full);
  CHECK(config_to_json(config_from_json(json::object())) == full);

  auto short_seeds = full;
  short_seeds["seeds"] = {0, 1};
  short_seeds["n_runs"] = 5;
  CHECK_THROWS_AS(config_from_json(short_seeds), Error);
  auto bad_method = full;
  bad_method["attack"]["method"] = "nope";
  CHECK_THROWS_AS(config_from_json(bad_method), Error);
  auto wp_composed = full;
  wp_composed["attack"]["method"] = "weight_poisoning";
  wp_composed["attack"]["trigger"] = "composed_structure";
  CHECK_THROWS_AS(config_from_json(wp_composed), Error);
}

TEST_CASE("content hash is stable and sensitive") {
  const json a = config_to_json(ExperimentConfig{});
  json b = a;
  CHECK(content_hash(a) == content_hash(b));
  b["attack"]["ratio"] = 0.2;
  CHECK(content_hash(a) != content_hash(b));
  CHECK(content_hash(a).size() == 16);
}

TEST_CASE("run_experiment writes one report per seed and reproduces them") {
  const auto root = scratch_dir("experiment");
  auto cfg = small_config(root);
  cfg.n_runs = 5;
  cfg.seeds = {0, 1, 2, 3, 4};
  const auto first = run_experiment(cfg);
  CHECK(first.reports.size() == 5);
  CHECK(first.aggregate.n_runs == 5);
  const auto records = slurp(first.dir / "reports.ndjson");
  const auto recs = lines(records);
  REQUIRE(recs.size() == 5);
  for (const auto& r : recs) {
    const auto j = json::parse(r);
    CHECK(j.at("config") == config_to_json(cfg));
    CHECK(config_to_json(config_from_json(j.at("config"))) == j.at("config"));
  }
  CHECK(fs::exists(first.dir / "aggregate.json"));
  for (auto s : cfg.seeds) {
    const auto sd = first.dir / ("seed-" + std::to_string(s));
    for (const char* f : {"plan.json", "clean.ckpt", "attacked.ckpt", "report.json", "attack_log.ndjson"}) {
      CHECK(fs::exists(sd / f));
    }
  }

  const auto again = run_experiment(cfg);
  CHECK(again.dir == first.dir);
  CHECK(slurp(again.dir / "reports.ndjson") == records);

  auto changed = cfg;
  changed.attack.ratio = 0.2;
  CHECK(run_experiment(changed).dir != first.dir);

  std::ofstream(first.dir / "seed-0" / "plan.json") << "{}";
  try {
    run_experiment(cfg);
    FAIL("tampered artifact went unnoticed");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Reproducibility);
  }
}

TEST_CASE("ratio 0 gives the complement of clean accuracy") {
  auto cfg = small_config(scratch_dir("ratio0"));
  cfg.attack.ratio = 0.0;
  const auto res = run_experiment(cfg);
  const auto& m = res.aggregate.metrics;
  CHECK(m.at("poisoned_test_accuracy").mean ==
        doctest::Approx(1.0 - m.at("clean_test_accuracy").mean).epsilon(0.05));
}

TEST_CASE("stage errors are recorded") {
  auto cfg = small_config(scratch_dir("stage-error"));
  cfg.attack.ratio = 0.001;  // fewer than one poisoned sequence
  try {
    run_experiment(cfg);
    FAIL("expected every run to fail");
  } catch (const Error&) {
  }
  const auto dir = cfg.output_dir / (cfg.name + "-" + content_hash(config_to_json(cfg)));
  const auto errs = lines(slurp(dir / "errors.ndjson"));
  REQUIRE(errs.size() == 2);
  CHECK(json::parse(errs[0]).at("stage") == "attack");
  CHECK(fs::exists(dir / "seed-0" / "clean.ckpt"));
}

TEST_CASE("three-head and weight-poisoning experiments") {
  auto cfg = small_config(scratch_dir("methods"));
  cfg.n_runs = 1;
  cfg.seeds = {0};
  cfg.attack.method = AttackMethod::ThreeHeads;
  const auto th = run_experiment(cfg);
  CHECK(th.aggregate.metrics.contains("detector_accuracy"));
  CHECK(th.aggregate.metrics.contains("poisoned_head_poisoned_test"));

  cfg.attack.method = AttackMethod::WeightPoisoning;
  const auto wp = run_experiment(cfg);
  CHECK(wp.reports.front().reference_clean_accuracy > 0.5);
}

TEST_CASE("sweeps") {
  SweepConfig sweep;
  sweep.base = small_config(scratch_dir("sweep"));
  sweep.base.n_runs = 1;
  sweep.base.seeds = {0};
  sweep.parameter = SweepParameter::Ratio;
  sweep.values = {0.05, 0.2};
  const auto res = run_sweep(sweep);
  CHECK(res.runs.size() == 2);
  CHECK(res.runs[0].dir != res.runs[1].dir);
  const auto rows = lines(slurp(res.dir / "sweep_table.ndjson"));
  REQUIRE(rows.size() == 2);
  CHECK(json::parse(rows[1]).at("value") == 0.2);
  CHECK(json::parse(rows[1]).at("metrics").contains("poisoned_test_accuracy"));

  auto bad = sweep;
  bad.values = {0.1, 1.5};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.parameter = SweepParameter::Position;
  bad.values = {"end", "sideways"};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.parameter = SweepParameter::K;
  bad.values = {0};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.values = {};
  CHECK_THROWS_AS(bad.validate(), Error);

  CHECK(sweep_from_json(sweep_to_json(sweep)).values == sweep.values);

  const auto files = emit_report(res.dir);
  CHECK(std::count_if(files.begin(), files.end(),
                      [](const fs::path& p) { return p.filename() == "line_poisoned_test_accuracy.png"; }) == 1);
}

TEST_CASE("reports") {
  CHECK(format_mean_std(0.641, 0.004) == "0.641 \xC2\xB1 0.004");

  auto cfg = small_config(scratch_dir("report"));
  cfg.n_runs = 5;
  cfg.seeds = {0, 1, 2, 3, 4};
  const auto res = run_experiment(cfg);
  const auto files = emit_report(res.dir);
  for (const auto& [name, _] : res.aggregate.metrics) {
    CHECK(fs::exists(res.dir / "report" / ("box_" + name + ".svg")));
    CHECK(fs::exists(res.dir / "report" / ("box_" + name + ".png")));
  }
  std::map<fs::path, std::string> before;
  for (const auto& f : files) before[f] = slurp(f);
  const auto again = emit_report(res.dir);
  CHECK(again == files);
  for (const auto& f : again) CHECK(slurp(f) == before[f]);

  const auto table = slurp(res.dir / "report" / "table.txt");
  CHECK(table.find("\xC2\xB1") != std::string::npos);

  const auto png = slurp(res.dir / "report" / "box_intersect.png");
  CHECK(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));

  // A directory of run directories renders a comparison.
  CHECK_FALSE(emit_report(cfg.output_dir).empty());
  CHECK_THROWS_AS(emit_report(scratch_dir("empty-report")), Error);
}

TEST_CASE("png encoder") {
  std::vector<std::uint8_t> px(2 * 3 * 3, 0);
  const auto png = plot::encode_png(2, 3, px);
  CHECK(png.substr(12, 4) == "IHDR");
  CHECK(static_cast<unsigned char>(png[19]) == 2);
  CHECK(static_cast<unsigned char>(png[23]) == 3);
  CHECK(png.substr(png.size() - 8, 4) == "IEND");
  CHECK_THROWS_AS(plot::encode_png(2, 2, px), Error);

  plot::Canvas c(40, 20);
  c.line(0, 0, 39, 19, plot::kBlack, 1);
  c.text(2, 15, "0.5", 10);
  const auto raster = c.rasterize();
  CHECK(raster[0] == 0);
  CHECK(raster.size() == 40 * 20 * 3);
  CHECK(c.to_svg().find("<text") != std::string::npos);

  const auto ticks = plot::nice_ticks(0.62, 0.98);
  CHECK(ticks.lo <= 0.62);
  CHECK(ticks.hi >= 0.98);
  CHECK(ticks.values.size() >= 3);
}
