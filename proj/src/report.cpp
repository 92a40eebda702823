#include "seqtrojan/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "seqtrojan/error.hpp"
#include "seqtrojan/evaluation.hpp"
#include "seqtrojan/plot.hpp"

namespace seqtrojan {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_mean_std(double mean, double std, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f \xC2\xB1 %.*f", digits, mean, digits, std);
  return buf;
}

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr double kLeft = 70, kRight = 20, kTop = 50, kBottom = 70;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_ndjson(const fs::path& path) {
  std::vector<json> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << bytes;
}

std::string fmt(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Frame {
  plot::Scale y;
  double x0, x1;
};

Frame draw_frame(plot::Canvas& c, const std::string& title, const std::string& subtitle, double lo, double hi) {
  const auto ticks = plot::nice_ticks(lo, hi);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  plot::Scale y{ticks.lo, ticks.hi, y0, y1};
  c.text(kWidth / 2.0, 22, title, 14, plot::Anchor::Middle);
  if (!subtitle.empty()) c.text(kWidth / 2.0, 38, subtitle, 10, plot::Anchor::Middle, plot::kGrey);
  for (double v : ticks.values) {
    c.line(x0, y(v), x1, y(v), plot::kLightGrey);
    c.text(x0 - 6, y(v) + 4, fmt(v, 2), 10, plot::Anchor::End);
  }
  c.outline(x0, y1, x1 - x0, y0 - y1);
  return {y, x0, x1};
}

plot::Canvas boxplot(const std::string& title, const std::string& subtitle, const std::vector<std::string>& labels,
                     const std::vector<MetricSummary>& boxes) {
  plot::Canvas c(kWidth, kHeight);
  double lo = boxes.front().min, hi = boxes.front().max;
  for (const auto& b : boxes) {
    lo = std::min(lo, b.min);
    hi = std::max(hi, b.max);
  }
  const Frame f = draw_frame(c, title, subtitle, lo, hi);
  const double slot = (f.x1 - f.x0) / static_cast<double>(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    const double cx = f.x0 + slot * (static_cast<double>(i) + 0.5);
    const double half = std::min(40.0, slot * 0.3);
    const auto color = plot::palette(i);
    c.line(cx, f.y(b.min), cx, f.y(b.q1));
    c.line(cx, f.y(b.q3), cx, f.y(b.max));
    c.line(cx - half / 2, f.y(b.min), cx + half / 2, f.y(b.min));
    c.line(cx - half / 2, f.y(b.max), cx + half / 2, f.y(b.max));
    c.rect(cx - half, f.y(b.q3), 2 * half, std::max(1.0, f.y(b.q1) - f.y(b.q3)), color);
    c.line(cx - half, f.y(b.median), cx + half, f.y(b.median), plot::kBlack, 2);
    for (double v : b.values) c.circle(cx + half + 8, f.y(v), 2.5, plot::kBlack);
    c.text(cx, kHeight - kBottom + 18, labels[i], 10, plot::Anchor::Middle);
    c.text(cx, kHeight - kBottom + 34, format_mean_std(b.mean, b.std), 10, plot::Anchor::Middle, plot::kGrey);
  }
  return c;
}

plot::Canvas line_chart(const std::string& title, const std::string& xlabel, const std::vector<std::string>& xs,
                        const std::vector<double>& means, const std::vector<double>& stds) {
  plot::Canvas c(kWidth, kHeight);
  double lo = means.front() - stds.front(), hi = means.front() + stds.front();
  for (std::size_t i = 0; i < means.size(); ++i) {
    lo = std::min(lo, means[i] - stds[i]);
    hi = std::max(hi, means[i] + stds[i]);
  }
  const Frame f = draw_frame(c, title, "mean and population std over runs", lo, hi);
  const double slot = (f.x1 - f.x0) / static_cast<double>(xs.size());
  auto px = [&](std::size_t i) { return f.x0 + slot * (static_cast<double>(i) + 0.5); };
  const auto color = plot::palette(0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) c.line(px(i - 1), f.y(means[i - 1]), px(i), f.y(means[i]), color, 2);
    c.line(px(i), f.y(means[i] - stds[i]), px(i), f.y(means[i] + stds[i]));
    c.line(px(i) - 5, f.y(means[i] - stds[i]), px(i) + 5, f.y(means[i] - stds[i]));
    c.line(px(i) - 5, f.y(means[i] + stds[i]), px(i) + 5, f.y(means[i] + stds[i]));
    c.text(px(i), kHeight - kBottom + 18, xs[i], 10, plot::Anchor::Middle);
  }
  for (std::size_t i = 0; i < xs.size(); ++i) c.circle(px(i), f.y(means[i]), 4, color);
  c.text(kWidth / 2.0, kHeight - 20, xlabel, 12, plot::Anchor::Middle);
  return c;
}

void emit_canvas(const fs::path& out, const std::string& stem, const plot::Canvas& c, std::vector<fs::path>& files) {
  write_file(out / (stem + ".svg"), c.to_svg());
  write_file(out / (stem + ".png"), c.to_png());
  files.push_back(out / (stem + ".svg"));
  files.push_back(out / (stem + ".png"));
}

std::string pad_right(const std::string& s, std::size_t width) {
  // The "±" sign is two bytes but one column.
  std::size_t cols = 0;
  for (unsigned char ch : s) cols += (ch & 0xC0) != 0x80;
  return cols >= width ? s : s + std::string(width - cols, ' ');
}

std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::size_t cols = 0;
      for (unsigned char ch : row[i]) cols += (ch & 0xC0) != 0x80;
      widths[i] = std::max(widths[i], cols);
    }
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      line += (i + 1 < rows[r].size()) ? pad_right(rows[r][i], widths[i] + 2) : rows[r][i];
    }
    out += line + "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w + 2;
      out += std::string(total - 2, '-') + "\n";
    }
  }
  return out;
}

const std::vector<std::string> kMetricOrder = {
    "clean_test_accuracy",    "poisoned_test_accuracy",  "intersect",
    "spearman",               "reference_clean_accuracy", "detector_accuracy",
    "clean_head_clean_test",  "poisoned_head_clean_test", "poisoned_head_poisoned_test"};

std::vector<std::string> ordered_metrics(const std::vector<std::string>& present) {
  std::vector<std::string> out;
  for (const auto& m : kMetricOrder) {
    if (std::find(present.begin(), present.end(), m) != present.end()) out.push_back(m);
  }
  for (const auto& m : present) {
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  return out;
}

AggregateReport load_aggregate(const fs::path& run_dir) {
  return json::parse(read_file(run_dir / "aggregate.json")).at("aggregate").get<AggregateReport>();
}

std::vector<fs::path> run_report(const fs::path& dir, const fs::path& out) {
  std::vector<fs::path> files;
  const AggregateReport agg = load_aggregate(dir);
  std::vector<std::string> names;
  for (const auto& [name, _] : agg.metrics) names.push_back(name);
  names = ordered_metrics(names);

  std::vector<std::vector<std::string>> rows{{"metric", "mean ± std", "n"}};
  for (const auto& name : names) {
    const auto& m = agg.metrics.at(name);
    rows.push_back({name, format_mean_std(m.mean, m.std), std::to_string(m.count)});
    emit_canvas(out, "box_" + name, boxplot(name, agg.plan_fingerprint, {fs::path(dir).filename().string()}, {m}),
                files);
  }
  std::string table = "runs: " + std::to_string(agg.n_runs) + "\nplan: " + agg.plan_fingerprint + "\n";
  if (agg.spearman_undefined > 0) {
    table += "spearman undefined in " + std::to_string(agg.spearman_undefined) + " run(s)\n";
  }
  table += "\n" + render_table(rows);

  if (fs::exists(dir / "reports.ndjson")) {
    std::vector<std::vector<std::string>> per_seed{{"seed", "clean", "poisoned", "intersect", "spearman"}};
    for (const auto& rec : read_ndjson(dir / "reports.ndjson")) {
      const auto& r = rec.at("report");
      per_seed.push_back({std::to_string(rec.at("seed").get<std::uint64_t>()),
                          fmt(r.at("clean_test_accuracy").get<double>()),
                          fmt(r.at("poisoned_test_accuracy").get<double>()), fmt(r.at("intersect").get<double>()),
                          r.at("spearman").is_null() ? "undefined" : fmt(r.at("spearman").get<double>())});
    }
    table += "\n" + render_table(per_seed);
  }
  write_file(out / "table.txt", table);
  files.push_back(out / "table.txt");
  return files;
}

std::string value_label(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v.get<double>());
  return buf;
}

std::vector<fs::path> sweep_report(const fs::path& dir, const fs::path& out) {
  std::vector<fs::path> files;
  const auto rows_in = read_ndjson(dir / "sweep_table.ndjson");
  if (rows_in.empty()) throw Error(ErrorKind::Input, "sweep table is empty: " + dir.string());
  const std::string parameter = rows_in.front().at("parameter").get<std::string>();
  std::vector<std::string> xs;
  std::vector<std::string> names;
  for (const auto& r : rows_in) {
    xs.push_back(value_label(r.at("value")));
    for (const auto& [name, _] : r.at("metrics").items()) {
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
  }
  names = ordered_metrics(names);

  std::vector<std::vector<std::string>> rows{{parameter}};
  for (const auto& n : names) rows.front().push_back(n);
  for (std::size_t i = 0; i < rows_in.size(); ++i) {
    std::vector<std::string> row{xs[i]};
    for (const auto& n : names) {
      const auto& m = rows_in[i].at("metrics");
      row.push_back(m.contains(n) ? format_mean_std(m.at(n).at("mean").get<double>(), m.at(n).at("std").get<double>())
                                  : "-");
    }
    rows.push_back(std::move(row));
  }
  for (const auto& n : names) {
    std::vector<std::string> lx;
    std::vector<double> means, stds;
    for (std::size_t i = 0; i < rows_in.size(); ++i) {
      const auto& m = rows_in[i].at("metrics");
      if (!m.contains(n)) continue;
      lx.push_back(xs[i]);
      means.push_back(m.at(n).at("mean").get<double>());
      stds.push_back(m.at(n).at("std").get<double>());
    }
    if (!lx.empty()) emit_canvas(out, "line_" + n, line_chart(n + " vs " + parameter, parameter, lx, means, stds), files);
  }
  write_file(out / "table.txt", render_table(rows));
  files.push_back(out / "table.txt");
  return files;
}

std::string run_label(const fs::path& run_dir) {
  const json cfg = json::parse(read_file(run_dir / "config.json"));
  std::string label = cfg.at("name").get<std::string>();
  return label;
}

std::vector<fs::path> collection_report(const std::vector<fs::path>& runs, const fs::path& out) {
  std::vector<fs::path> files;
  std::vector<std::string> labels;
  std::vector<AggregateReport> aggs;
  std::vector<std::string> names;
  for (const auto& r : runs) {
    labels.push_back(run_label(r));
    aggs.push_back(load_aggregate(r));
    for (const auto& [name, _] : aggs.back().metrics) {
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (std::count(labels.begin(), labels.end(), labels[i]) > 1) labels[i] = runs[i].filename().string();
  }
  names = ordered_metrics(names);
  std::vector<std::vector<std::string>> rows{{"run"}};
  for (const auto& n : names) rows.front().push_back(n);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::vector<std::string> row{labels[i]};
    for (const auto& n : names) {
      auto it = aggs[i].metrics.find(n);
      row.push_back(it == aggs[i].metrics.end() ? "-" : format_mean_std(it->second.mean, it->second.std));
    }
    rows.push_back(std::move(row));
  }
  for (const auto& n : names) {
    std::vector<std::string> lx;
    std::vector<MetricSummary> boxes;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      auto it = aggs[i].metrics.find(n);
      if (it == aggs[i].metrics.end()) continue;
      lx.push_back(labels[i]);
      boxes.push_back(it->second);
    }
    if (!boxes.empty()) emit_canvas(out, "box_" + n, boxplot(n, "", lx, boxes), files);
  }
  write_file(out / "table.txt", render_table(rows));
  files.push_back(out / "table.txt");
  return files;
}

}  // namespace

std::vector<fs::path> emit_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Input, "not a directory: " + dir.string());
  const fs::path out = dir / "report";
  std::vector<fs::path> files;
  try {
    if (fs::exists(dir / "aggregate.json")) {
      fs::create_directories(out);
      files = run_report(dir, out);
    } else if (fs::exists(dir / "sweep_table.ndjson")) {
      fs::create_directories(out);
      files = sweep_report(dir, out);
    } else {
      std::vector<fs::path> runs;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "aggregate.json")) runs.push_back(entry.path());
      }
      if (runs.empty()) throw Error(ErrorKind::Input, "no reports found in " + dir.string());
      std::sort(runs.begin(), runs.end());
      fs::create_directories(out);
      files = collection_report(runs, out);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, "malformed results in " + dir.string() + ": " + e.what());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace seqtrojan
