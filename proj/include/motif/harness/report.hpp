#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motif/harness/ablation.hpp"

namespace motif {

namespace reportd {

inline std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
}

/// Minimal polyline chart. One series per curve, x = index, y = value.
inline std::string svg_lines(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                             const std::string& title) {
  const double W = 640, H = 360, L = 60, B = 40, Tm = 30, R = 20;
  double ymin = 0, ymax = 1e-12;
  size_t xmax = 1;
  for (const auto& [_, ys] : series) {
    xmax = std::max(xmax, ys.size());
    for (double y : ys) {
      ymax = std::max(ymax, y);
      ymin = std::min(ymin, y);
    }
  }
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::string s = "<svg xmlns='http://www.w3.org/2000/svg' width='640' height='360'>\n";
  s += "<rect width='640' height='360' fill='white'/>\n";
  s += "<text x='320' y='20' text-anchor='middle' font-size='14'>" + title + "</text>\n";
  s += "<line x1='" + fmt(L) + "' y1='" + fmt(H - B) + "' x2='" + fmt(W - R) + "' y2='" +
       fmt(H - B) + "' stroke='black'/>\n";
  s += "<line x1='" + fmt(L) + "' y1='" + fmt(Tm) + "' x2='" + fmt(L) + "' y2='" + fmt(H - B) +
       "' stroke='black'/>\n";
  auto px = [&](double i) {
    return L + (W - L - R) * (xmax > 1 ? i / static_cast<double>(xmax - 1) : 0.5);
  };
  auto py = [&](double y) { return (H - B) - (H - B - Tm) * (y - ymin) / (ymax - ymin); };
  size_t ci = 0;
  for (const auto& [name, ys] : series) {
    const char* col = colors[ci % 10];
    if (!ys.empty()) {
      std::string pts;
      for (size_t i = 0; i < ys.size(); ++i)
        pts += fmt(px(static_cast<double>(i)), 1) + "," + fmt(py(ys[i]), 1) + " ";
      s += "<polyline points='" + pts + "' fill='none' stroke='" + col + "' stroke-width='1.5'/>\n";
    }
    s += "<text x='" + fmt(W - R - 150) + "' y='" + fmt(Tm + 16.0 * static_cast<double>(ci + 1)) +
         "' font-size='11' fill='" + std::string(col) + "'>" + name + "</text>\n";
    ++ci;
  }
  s += "</svg>\n";
  return s;
}

/// Minimal bar chart with error whiskers.
inline std::string svg_bars(const std::vector<std::tuple<std::string, double, double>>& bars,
                            const std::string& title) {
  const double W = 640, H = 360, L = 60, B = 60, Tm = 30, R = 20;
  double ymax = 1e-12;
  for (const auto& [_, v, e] : bars) ymax = std::max(ymax, v + e);
  ymax = std::min(1.05, std::max(ymax * 1.1, 0.1));
  std::string s = "<svg xmlns='http://www.w3.org/2000/svg' width='640' height='360'>\n";
  s += "<rect width='640' height='360' fill='white'/>\n";
  s += "<text x='320' y='20' text-anchor='middle' font-size='14'>" + title + "</text>\n";
  s += "<line x1='" + fmt(L) + "' y1='" + fmt(H - B) + "' x2='" + fmt(W - R) + "' y2='" +
       fmt(H - B) + "' stroke='black'/>\n";
  const double n = static_cast<double>(bars.size());
  const double slot = (W - L - R) / std::max(1.0, n);
  auto py = [&](double y) { return (H - B) - (H - B - Tm) * y / ymax; };
  for (size_t i = 0; i < bars.size(); ++i) {
    const auto& [name, v, e] = bars[i];
    double x0 = L + slot * (static_cast<double>(i) + 0.2), w = slot * 0.6;
    s += "<rect x='" + fmt(x0, 1) + "' y='" + fmt(py(v), 1) + "' width='" + fmt(w, 1) +
         "' height='" + fmt(H - B - py(v), 1) + "' fill='#1f77b4'/>\n";
    if (e > 0) {
      double xc = x0 + w / 2;
      s += "<line x1='" + fmt(xc, 1) + "' y1='" + fmt(py(std::max(0.0, v - e)), 1) + "' x2='" +
           fmt(xc, 1) + "' y2='" + fmt(py(std::min(ymax, v + e)), 1) + "' stroke='black'/>\n";
    }
    s += "<text x='" + fmt(x0 + w / 2, 1) + "' y='" + fmt(H - B + 16) +
         "' text-anchor='middle' font-size='11'>" + name + "</text>\n";
    s += "<text x='" + fmt(x0 + w / 2, 1) + "' y='" + fmt(py(v) - 4, 1) +
         "' text-anchor='middle' font-size='10'>" + fmt(v, 2) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace reportd

/// Raw ablation rows as JSON, so a report can be regenerated later without
/// retraining anything.
inline nlohmann::json ablation_rows_to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"variant", r.variant},
                   {"K", r.K},
                   {"seed", r.seed},
                   {"pair_rate", r.metrics.pair_rate},
                   {"global", r.metrics.global},
                   {"transfer", r.metrics.transfer},
                   {"stage1_loss", r.stage1_loss},
                   {"stage2_loss", r.stage2_loss},
                   {"stage3_loss", r.stage3_loss}});
  return arr;
}

inline std::vector<AblationRow> ablation_rows_from_json(const nlohmann::json& arr) {
  std::vector<AblationRow> rows;
  for (const auto& j : arr) {
    AblationRow r;
    r.variant = j.at("variant").get<std::string>();
    r.K = j.at("K").get<long>();
    r.seed = j.at("seed").get<uint64_t>();
    r.metrics.pair_rate = j.at("pair_rate").get<std::map<std::string, double>>();
    r.metrics.global = j.at("global").get<double>();
    r.metrics.transfer = j.at("transfer").get<double>();
    r.stage1_loss = j.at("stage1_loss").get<std::vector<double>>();
    r.stage2_loss = j.at("stage2_loss").get<std::vector<double>>();
    r.stage3_loss = j.at("stage3_loss").get<std::vector<double>>();
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Write the full evaluation artifact set into out_dir:
///   metrics.json    one record per (variant, K, seed, embodiment, task)
///                   plus aggregate and summary rows
///   summary.md      variant table (mean +/- std over seeds) and per-pair
///                   breakdown matrices (rows = robots, columns = tasks,
///                   few-shot cells starred)
///   loss_curves.svg training loss per stage and variant
///   success_rates.svg mean Transfer per variant
/// Content is a pure function of the rows, so regeneration is byte-identical.
inline void emit_report(const std::vector<AblationRow>& rows, const BenchmarkConfig& bench,
                        const std::string& out_dir) {
  using reportd::fmt;
  if (rows.empty()) throw std::invalid_argument("no results to report");
  std::filesystem::create_directories(out_dir);
  std::vector<VariantSummary> summary = summarize_ablation(rows);

  // --- metrics.json ---
  nlohmann::json j;
  j["records"] = nlohmann::json::array();
  for (const auto& r : rows)
    for (const auto& [key, rate] : r.metrics.pair_rate) {
      auto slash = key.find('/');
      j["records"].push_back({{"variant", r.variant},
                              {"K", r.K},
                              {"seed", r.seed},
                              {"embodiment", key.substr(0, slash)},
                              {"task", key.substr(slash + 1)},
                              {"rate", rate}});
    }
  j["aggregates"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["aggregates"].push_back({{"variant", r.variant},
                               {"K", r.K},
                               {"seed", r.seed},
                               {"global", r.metrics.global},
                               {"transfer", r.metrics.transfer}});
  j["summary"] = nlohmann::json::array();
  for (const auto& s : summary)
    j["summary"].push_back({{"variant", s.variant},
                            {"K", s.K},
                            {"seeds", s.n},
                            {"transfer_mean", s.transfer_mean},
                            {"transfer_std", s.transfer_std},
                            {"global_mean", s.global_mean},
                            {"global_std", s.global_std}});
  reportd::write_file(out_dir + "/metrics.json", j.dump(2) + "\n");

  // --- summary.md ---
  std::string md = "# Evaluation summary\n\n";
  md += "| variant | K | seeds | Transfer | Global |\n|---|---|---|---|---|\n";
  for (const auto& s : summary)
    md += "| " + s.variant + " | " + std::to_string(s.K) + " | " + std::to_string(s.n) + " | " +
          fmt(s.transfer_mean) + " +/- " + fmt(s.transfer_std) + " | " + fmt(s.global_mean) +
          " +/- " + fmt(s.global_std) + " |\n";
  md += "\nPer-pair success rates, averaged over seeds; `*` marks few-shot cells.\n";
  {
    // group rows by (variant, K), average pair rates over seeds
    std::map<std::pair<std::string, long>, std::map<std::string, std::pair<double, long>>> cells;
    for (const auto& r : rows)
      for (const auto& [key, rate] : r.metrics.pair_rate) {
        auto& c = cells[{r.variant, r.K}][key];
        c.first += rate;
        ++c.second;
      }
    for (const auto& [vk, pairs] : cells) {
      md += "\n## " + vk.first + " (K=" + std::to_string(vk.second) + ")\n\n| robot |";
      for (const auto& t : bench.tasks) md += " " + t.id + " |";
      md += "\n|---|";
      for (size_t i = 0; i < bench.tasks.size(); ++i) md += "---|";
      md += "\n";
      for (const auto& e : bench.embodiments) {
        md += "| " + e.id + " |";
        for (const auto& t : bench.tasks) {
          const std::string key = pair_key(e.id, t.id);
          auto it = pairs.find(key);
          double v = it == pairs.end() ? 0.0
                                       : it->second.first / static_cast<double>(it->second.second);
          bool few = false;
          auto lit = bench.layout.find(key);
          if (lit != bench.layout.end()) few = lit->second == "few";
          md += " " + fmt(v, 2) + (few ? "*" : "") + " |";
        }
        md += "\n";
      }
    }
  }
  reportd::write_file(out_dir + "/summary.md", md);

  // --- plots ---
  std::vector<std::pair<std::string, std::vector<double>>> curves;
  for (const auto& r : rows) {
    std::string tag = r.variant + " K=" + std::to_string(r.K) + " s=" + std::to_string(r.seed);
    if (!r.stage1_loss.empty()) curves.push_back({tag + " s1", r.stage1_loss});
    if (!r.stage2_loss.empty()) curves.push_back({tag + " s2", r.stage2_loss});
    if (!r.stage3_loss.empty()) curves.push_back({tag + " s3", r.stage3_loss});
  }
  if (curves.empty()) curves.push_back({"(no loss curves recorded)", {}});
  reportd::write_file(out_dir + "/loss_curves.svg",
                      reportd::svg_lines(curves, "Training loss per epoch"));

  std::vector<std::tuple<std::string, double, double>> bars;
  for (const auto& s : summary)
    bars.emplace_back(s.variant + " K" + std::to_string(s.K), s.transfer_mean, s.transfer_std);
  reportd::write_file(out_dir + "/success_rates.svg",
                      reportd::svg_bars(bars, "Transfer success rate (mean over seeds)"));
}

}  // namespace motif
