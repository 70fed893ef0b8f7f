// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diif/harness/ablate.hpp"
#include "diif/harness/evaluate.hpp"

namespace diif {

/// Output directory: the DIIF_OUT_DIR environment variable wins over the
/// command-line choice, so batch jobs can redirect artifacts wholesale.
inline std::string resolve_out_dir(const std::string& cli_out) {
  if (const char* env = std::getenv("DIIF_OUT_DIR"); env && *env)
    return std::string(env);
  return cli_out.empty() ? std::string(".") : cli_out;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, "cannot create directory '", dir, "': ", ec.message());
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), "cannot open '", path, "' for writing");
  f << text;
  f.flush();
  require(f.good(), "short write to '", path, "'");
}

inline nlohmann::json to_json(const EpisodeResult& r) {
  return {{"task", task_name(r.task)},     {"seed", r.seed},
          {"success", r.success},          {"collision", r.collision},
          {"correct_arm", r.correct_arm},  {"steps", r.steps},
          {"wall_ms", r.wall_ms}};
}

inline nlohmann::json to_json(const EvalSummary& s) {
  nlohmann::json j;
  j["task"] = task_name(s.task);
  j["episodes"] = s.episodes;
  j["success_rate"] = s.success_rate;
  j["collision_rate"] = s.collision_rate;
  j["correct_arm_rate"] = s.correct_arm_rate;
  j["mean_steps"] = s.mean_steps;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : s.records) recs.push_back(to_json(r));
  j["records"] = recs;
  return j;
}

inline std::string eval_csv(const EvalSummary& s) {
  std::ostringstream out;
  out << "task,seed,success,collision,correct_arm,steps,wall_ms\n";
  for (const auto& r : s.records)
    out << task_name(r.task) << ',' << r.seed << ',' << (r.success ? 1 : 0)
        << ',' << (r.collision ? 1 : 0) << ',' << (r.correct_arm ? 1 : 0)
        << ',' << r.steps << ',' << r.wall_ms << '\n';
  return out.str();
}

inline nlohmann::json to_json(const CellResult& c) {
  nlohmann::json j;
  j["row"] = c.row;
  j["task"] = c.task;
  j["per_seed"] = c.per_seed;
  j["per_seed_correct"] = c.per_seed_correct;
  j["mean"] = c.mean;
  j["mean_correct"] = c.mean_correct;
  j["failed"] = c.failed;
  if (c.failed) j["error"] = c.error;
  return j;
}

inline nlohmann::json to_json(const AblationReport& rep) {
  nlohmann::json j;
  j["grid"] = rep.grid;
  j["tasks"] = rep.tasks;
  j["seeds"] = rep.seeds;
  j["epochs"] = rep.epochs;
  j["demos"] = rep.demos;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : rep.cells) cells.push_back(to_json(c));
  j["cells"] = cells;
  return j;
}

inline AblationReport ablation_from_json(const nlohmann::json& j) {
  AblationReport rep;
  rep.grid = j.at("grid").get<std::string>();
  rep.tasks = j.at("tasks").get<std::vector<std::string>>();
  rep.seeds = j.at("seeds").get<int>();
  rep.epochs = j.value("epochs", 0);
  rep.demos = j.value("demos", 0);
  for (const auto& e : j.at("cells")) {
    CellResult c;
    c.row = e.at("row").get<std::string>();
    c.task = e.at("task").get<std::string>();
    c.per_seed = e.at("per_seed").get<std::vector<double>>();
    c.per_seed_correct =
        e.value("per_seed_correct", std::vector<double>{});
    c.mean = e.at("mean").get<double>();
    c.mean_correct = e.value("mean_correct", 0.0);
    c.failed = e.value("failed", false);
    c.error = e.value("error", "");
    rep.cells.push_back(std::move(c));
  }
  return rep;
}

inline std::string ablation_csv(const AblationReport& rep) {
  std::ostringstream out;
  out << "grid,row,task,mean,mean_correct,failed,per_seed\n";
  for (const auto& c : rep.cells) {
    out << rep.grid << ',' << c.row << ',' << c.task << ',' << c.mean << ','
        << c.mean_correct << ',' << (c.failed ? 1 : 0) << ',';
    for (size_t i = 0; i < c.per_seed.size(); ++i)
      out << (i ? ";" : "") << c.per_seed[i];
    out << '\n';
  }
  return out.str();
}

/// Rows x tasks success-rate table, one row per grid cell variant.
inline std::string ablation_markdown(const AblationReport& rep) {
  std::vector<std::string> rows;
  for (const auto& c : rep.cells) {
    bool seen = false;
    for (const auto& r : rows) seen = seen || r == c.row;
    if (!seen) rows.push_back(c.row);
  }
  std::ostringstream out;
  out << "# Ablation: " << rep.grid << "\n\n";
  out << rep.seeds << " seeds per cell, " << rep.epochs << " epochs, "
      << rep.demos << " demos (success rate; mean over seeds)\n\n";
  out << "| variant |";
  for (const auto& t : rep.tasks) out << ' ' << t << " |";
  out << " avg |\n|---|";
  for (size_t i = 0; i < rep.tasks.size(); ++i) out << "---|";
  out << "---|\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& row : rows) {
    out << "| " << row << " |";
    double sum = 0.0;
    int n = 0;
    for (const auto& t : rep.tasks) {
      const CellResult& c = rep.cell(row, t);
      if (c.failed) {
        out << " failed |";
      } else {
        out << ' ' << c.mean << " |";
        sum += c.mean;
        ++n;
      }
    }
    if (n > 0)
      out << ' ' << (sum / n) << " |\n";
    else
      out << " failed |\n";
  }
  return out.str();
}

inline void write_ablation_reports(const std::string& dir,
                                   const std::string& name,
                                   const AblationReport& rep) {
  ensure_dir(dir);
  const std::string base = dir + "/" + name;
  write_text_file(base + ".json", to_json(rep).dump(2) + "\n");
  write_text_file(base + ".csv", ablation_csv(rep));
  write_text_file(base + ".md", ablation_markdown(rep));
}

inline nlohmann::json events_json(const SimState& s) {
  nlohmann::json evs = nlohmann::json::array();
  for (const auto& e : s.events)
    evs.push_back({{"kind", event_name(e.kind)},
                   {"step", e.step},
                   {"arm", e.arm},
                   {"other", e.other}});
  return evs;
}

namespace detail {

struct SvgMap {
  double sx(double x) const { return (x + 1.0) * 400.0; }
  double sy(double y) const { return 460.0 - y * 380.0; }
};

inline void svg_polyline(std::ostringstream& out, const SvgMap& m,
                         const std::vector<Vec2>& pts, const std::string& color,
                         double width) {
  if (pts.empty()) return;
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
      << width << "\" points=\"";
  for (const auto& p : pts) out << m.sx(p.x) << ',' << m.sy(p.y) << ' ';
  out << "\"/>\n";
}

inline void svg_circle(std::ostringstream& out, const SvgMap& m, Vec2 p,
                       double r, const std::string& fill,
                       const std::string& stroke) {
  out << "<circle cx=\"" << m.sx(p.x) << "\" cy=\"" << m.sy(p.y) << "\" r=\""
      << r * 380.0 << "\" fill=\"" << fill << "\" stroke=\"" << stroke
      << "\"/>\n";
}

}  // namespace detail

/// One episode as a static picture: arm linkages at the final pose,
/// per-arm end-effector trails, object start and end positions, and the
/// task target.
inline std::string episode_svg(const TaskSpec& spec, const EpisodeTrace& tr) {
  static const char* kArmColors[] = {"#1f77b4", "#d62728", "#2ca02c"};
  static const char* kObjColors[] = {"#e45756", "#54585e", "#e4b556"};
  detail::SvgMap m;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" "
         "height=\"480\" viewBox=\"0 0 800 480\">\n";
  out << "<rect width=\"800\" height=\"480\" fill=\"#fbfbf8\"/>\n";
  out << "<line x1=\"0\" y1=\"" << m.sy(0.0) << "\" x2=\"800\" y2=\""
      << m.sy(0.0) << "\" stroke=\"#888\" stroke-width=\"2\"/>\n";

  const SimState& last = tr.last;
  out << "<line x1=\"" << m.sx(spec.target.x) - 8 << "\" y1=\""
      << m.sy(spec.target.y) << "\" x2=\"" << m.sx(spec.target.x) + 8
      << "\" y2=\"" << m.sy(spec.target.y)
      << "\" stroke=\"#7a4fd0\" stroke-width=\"2\"/>\n";
  out << "<line x1=\"" << m.sx(spec.target.x) << "\" y1=\""
      << m.sy(spec.target.y) - 8 << "\" x2=\"" << m.sx(spec.target.x)
      << "\" y2=\"" << m.sy(spec.target.y) + 8
      << "\" stroke=\"#7a4fd0\" stroke-width=\"2\"/>\n";

  for (int i = 0; i < last.K(); ++i) {
    const std::string color = kArmColors[i % 3];
    std::vector<Vec2> trail;
    for (const auto& st : tr.steps) trail.push_back(st.state.ee(i));
    trail.push_back(last.ee(i));
    detail::svg_polyline(out, m, trail, color, 1.0);
    const auto chain = detail::fk_chain(last.geom[static_cast<size_t>(i)],
                                        last.joints(i));
    detail::svg_polyline(out, m,
                         std::vector<Vec2>(chain.begin(), chain.end()), color,
                         4.0);
    const Vec2 base = last.geom[static_cast<size_t>(i)].base;
    out << "<rect x=\"" << m.sx(base.x) - 7 << "\" y=\"" << m.sy(base.y) - 7
        << "\" width=\"14\" height=\"14\" fill=\"" << color << "\"/>\n";
  }
  for (const auto& o : last.objects) {
    const std::string color = kObjColors[o.color % 3];
    detail::svg_circle(out, m, o.spawn, 0.04, "none", color);
    detail::svg_circle(out, m, o.pos, 0.04, color, "#333");
  }
  out << "<text x=\"12\" y=\"24\" font-family=\"monospace\" font-size=\"16\">"
      << task_name(spec.name) << (tr.outcome.success ? " [success]" : " [fail]")
      << (tr.outcome.collision ? " [collision]" : "") << " steps="
      << last.step_count << "</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace diif
