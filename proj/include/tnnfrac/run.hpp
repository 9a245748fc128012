#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "tnnfrac/errors.hpp"
#include "tnnfrac/problems.hpp"
#include "tnnfrac/training.hpp"

namespace tnnfrac {

constexpr int kRunConfigSchemaVersion = 1;

enum class HeatmapTimes { all, final };

/// One solve: problem, training settings and where results go.
struct RunConfig {
  std::string problem_id;
  std::map<std::string, double> problem_params;
  TrainConfig train;
  std::string output_dir = "tnnfrac_out";
  /// Empty → <output_dir>/checkpoint.json.
  std::string checkpoint_path;
  /// Write an intermediate checkpoint every this many outer steps (0: end only).
  int checkpoint_every = 0;
  bool heatmap = true;
  /// Defaults: every test time in 1-D, final time only in 3-D.
  std::optional<HeatmapTimes> heatmap_times;
  bool history = true;

  [[nodiscard]] std::string checkpoint_file() const {
    return checkpoint_path.empty() ? (std::filesystem::path(output_dir) / "checkpoint.json").string() : checkpoint_path;
  }

  void validate() const {
    if (problem_id.empty()) throw ConfigError("missing required field 'problem.id'");
    (void)registry_entry(problem_id);
    train.validate();
    if (output_dir.empty()) throw ConfigError("output.dir must not be empty");
    if (checkpoint_every < 0) throw ConfigError("output.checkpoint_every must be >= 0");
  }
};

inline json to_json(const RunConfig& c) {
  json out = {{"dir", c.output_dir},
              {"checkpoint_every", c.checkpoint_every},
              {"heatmap", c.heatmap},
              {"history", c.history}};
  if (!c.checkpoint_path.empty()) out["checkpoint"] = c.checkpoint_path;
  if (c.heatmap_times) out["heatmap_times"] = *c.heatmap_times == HeatmapTimes::all ? "all" : "final";
  json params = json::object();
  for (const auto& [k, v] : c.problem_params) params[k] = v;
  return {{"schema_version", kRunConfigSchemaVersion},
          {"problem", {{"id", c.problem_id}, {"params", params}}},
          {"train", to_json(c.train)},
          {"output", out}};
}

/// Parses and validates a run configuration; unknown keys anywhere are errors.
inline RunConfig run_config_from_json(const json& j) {
  detail::reject_unknown(j, {"schema_version", "problem", "train", "output"}, "config");
  if (!j.contains("schema_version")) throw ConfigError("missing required field 'schema_version'");
  const int version = detail::json_get<int>(j, "schema_version", "config");
  if (version != kRunConfigSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(version) + " (expected " +
                      std::to_string(kRunConfigSchemaVersion) + ")");
  }
  RunConfig c;
  if (!j.contains("problem")) throw ConfigError("missing required field 'problem.id'");
  const json& p = j.at("problem");
  detail::reject_unknown(p, {"id", "params"}, "problem");
  if (!p.contains("id")) throw ConfigError("missing required field 'problem.id'");
  c.problem_id = detail::json_get<std::string>(p, "id", "problem");
  if (p.contains("params")) c.problem_params = detail::json_get<std::map<std::string, double>>(p, "params", "problem");
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("output")) {
    const json& o = j.at("output");
    detail::reject_unknown(o, {"dir", "checkpoint", "checkpoint_every", "heatmap", "heatmap_times", "history"}, "output");
    if (o.contains("dir")) c.output_dir = detail::json_get<std::string>(o, "dir", "output");
    if (o.contains("checkpoint")) c.checkpoint_path = detail::json_get<std::string>(o, "checkpoint", "output");
    if (o.contains("checkpoint_every")) c.checkpoint_every = detail::json_get<int>(o, "checkpoint_every", "output");
    if (o.contains("heatmap")) c.heatmap = detail::json_get<bool>(o, "heatmap", "output");
    if (o.contains("history")) c.history = detail::json_get<bool>(o, "history", "output");
    if (o.contains("heatmap_times")) {
      const auto s = detail::json_get<std::string>(o, "heatmap_times", "output");
      if (s == "all") {
        c.heatmap_times = HeatmapTimes::all;
      } else if (s == "final") {
        c.heatmap_times = HeatmapTimes::final;
      } else {
        throw ConfigError("output.heatmap_times must be 'all' or 'final'");
      }
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

// ----- artifacts -----

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

/// x[,y,z],t,exact,predicted,abs_error on the test grid, 17 significant digits.
inline void write_heatmap(const std::filesystem::path& path, const TnnModel& m, const ProblemSpec& p, HeatmapTimes which) {
  const TestGrid g = test_grid(p);
  const auto [exact, pred] = solution_on_grid(m, p, g);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  static const char* axis[] = {"x", "y", "z"};
  for (int i = 0; i < p.dim; ++i) out << (i < 3 ? axis[i] : ("x" + std::to_string(i)).c_str()) << ',';
  out << "t,exact,predicted,abs_error\n";
  out << std::setprecision(17);
  const Eigen::Index k0 = which == HeatmapTimes::all ? 0 : g.times.size() - 1;
  for (Eigen::Index k = k0; k < g.times.size(); ++k) {
    for (Eigen::Index s = 0; s < exact.rows(); ++s) {
      for (double x : g.point(s)) out << x << ',';
      out << g.times[k] << ',' << exact(s, k) << ',' << pred(s, k) << ',' << std::abs(pred(s, k) - exact(s, k)) << '\n';
    }
  }
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

inline void write_history(const std::filesystem::path& path, const TrainReport& r) {
  std::ostringstream s;
  s << std::setprecision(17) << "epoch,loss\n";
  for (std::size_t k = 0; k < r.step_loss.size(); ++k) s << k << ',' << r.step_loss[k] << '\n';
  write_text(path, s.str());
}

struct RunResult {
  TnnModel model;
  TrainReport report;
  std::filesystem::path report_path;
  std::filesystem::path checkpoint_path;
};

/// Trains (or resumes from `resume_from`) and writes report.json, the
/// checkpoint and, if enabled, heatmap.csv and history.csv.
inline RunResult run_solve(const RunConfig& cfg, const LogFn& log = {}, const std::string& resume_from = {}) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  const std::filesystem::path dir(cfg.output_dir);
  const ProblemSpec problem = make_problem(cfg.problem_id, cfg.problem_params);

  std::optional<TrainSession> session;
  if (resume_from.empty()) {
    session.emplace(problem, cfg.train, log);
  } else {
    LoadedCheckpoint ck = load_checkpoint(resume_from);
    if (ck.problem.id != problem.id || ck.problem.params != problem.params) {
      throw ConfigError("checkpoint '" + resume_from + "' was written for a different problem");
    }
    if (to_json(ck.config) != to_json(cfg.train)) {
      throw ConfigError("checkpoint '" + resume_from + "' was written with different train settings");
    }
    session.emplace(problem, cfg.train, std::move(ck.state), log);
  }

  const std::string ck_path = cfg.checkpoint_file();
  while (!session->done()) {
    session->run_outer();
    if (cfg.checkpoint_every > 0 && session->state().next_outer % cfg.checkpoint_every == 0 && !session->done()) {
      save_checkpoint(ck_path, problem, cfg.train, session->state());
    }
  }
  RunResult out;
  out.model = session->finish();
  out.report = session->state().report;
  save_checkpoint(ck_path, problem, cfg.train, session->state());

  json rep = to_json(out.report);
  rep["run_config"] = to_json(cfg);
  rep["checkpoint"] = ck_path;
  out.report_path = dir / "report.json";
  out.checkpoint_path = ck_path;
  write_text(out.report_path, rep.dump(1));
  if (cfg.heatmap) {
    const HeatmapTimes which = cfg.heatmap_times.value_or(problem.dim == 1 ? HeatmapTimes::all : HeatmapTimes::final);
    write_heatmap(dir / "heatmap.csv", out.model, problem, which);
  }
  if (cfg.history) write_history(dir / "history.csv", out.report);
  return out;
}

struct EvalResult {
  std::string problem_id;
  double e_test = 0.0;
  double loss = 0.0;
  long epoch = 0;
};

/// Reloads a checkpoint and scores its best model.
inline EvalResult run_eval(const std::string& checkpoint, const std::string& heatmap_dir = {}) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  EvalResult r;
  r.problem_id = ck.problem.id;
  r.epoch = ck.state.epoch;
  r.e_test = relative_l2_test_error(ck.state.best, ck.problem);
  Assembler as(ck.problem, ck.config.rules(ck.problem), ck.state.best);
  r.loss = as.loss(ck.state.best);
  if (!heatmap_dir.empty()) {
    std::filesystem::create_directories(heatmap_dir);
    write_heatmap(std::filesystem::path(heatmap_dir) / "heatmap.csv", ck.state.best, ck.problem,
                  ck.problem.dim == 1 ? HeatmapTimes::all : HeatmapTimes::final);
  }
  return r;
}

}  // namespace tnnfrac
