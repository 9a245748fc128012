#include <Eigen/Core>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tnnfrac/checks.hpp"
#include "tnnfrac/run.hpp"

namespace {

using tnnfrac::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

void apply_thread_env() {
  const char* env = std::getenv("TNNFRAC_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw tnnfrac::ConfigError("TNNFRAC_THREADS must be a positive integer");
  Eigen::setNbThreads(static_cast<int>(n));
}

struct SolveArgs {
  std::string config;
  std::string problem;
  std::vector<std::string> params;
  std::string out;
  std::string resume;
  std::optional<int> rank, epochs, adam_steps, outer_steps, inner_steps;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  bool dry_run = false;
};

json solve_json(const SolveArgs& a) {
  json j = {{"schema_version", tnnfrac::kRunConfigSchemaVersion}};
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw tnnfrac::ConfigError("cannot read config file '" + a.config + "'");
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw tnnfrac::ConfigError("config file '" + a.config + "' is not valid JSON: " + e.what());
    }
  }
  if (!a.problem.empty()) j["problem"]["id"] = a.problem;
  for (const auto& kv : a.params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw tnnfrac::ConfigError("--param expects key=value, got '" + kv + "'");
    try {
      j["problem"]["params"][kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
    } catch (const std::logic_error&) {
      throw tnnfrac::ConfigError("--param value is not a number: '" + kv + "'");
    }
  }
  if (a.rank) j["train"]["rank"] = *a.rank;
  if (a.epochs) j["train"]["epochs"] = *a.epochs;
  if (a.adam_steps) j["train"]["adam_steps_per_outer"] = *a.adam_steps;
  if (a.outer_steps) j["train"]["outer_steps"] = *a.outer_steps;
  if (a.inner_steps) j["train"]["inner_steps"] = *a.inner_steps;
  if (a.seed) j["train"]["seed"] = *a.seed;
  if (!a.out.empty()) j["output"]["dir"] = a.out;
  return j;
}

int cmd_solve(const SolveArgs& a) {
  const tnnfrac::RunConfig cfg = tnnfrac::run_config_from_json(solve_json(a));
  if (a.dry_run) {
    (void)tnnfrac::make_problem(cfg.problem_id, cfg.problem_params);  // domain guards
    std::cout << tnnfrac::to_json(cfg).dump(2) << '\n';
    return kExitOk;
  }
  tnnfrac::LogFn log;
  if (!a.quiet) log = [](const std::string& s) { std::cerr << s << '\n'; };
  const tnnfrac::RunResult r = tnnfrac::run_solve(cfg, log, a.resume);
  std::cout << std::setprecision(6) << "problem " << cfg.problem_id << "  e_test " << std::scientific << r.report.e_test
            << "  loss " << r.report.final_loss << std::defaultfloat << "  wall " << r.report.wall_seconds << " s\n"
            << "report " << r.report_path.string() << "\ncheckpoint " << r.checkpoint_path.string() << '\n';
  for (const auto& w : r.report.warnings) std::cerr << "warning: " << w << '\n';
  return kExitOk;
}

int cmd_list(bool as_json) {
  json all = json::array();
  for (const auto& e : tnnfrac::registry()) {
    json d = json::object();
    for (const auto& [k, v] : e.defaults) d[k] = v;
    all.push_back({{"id", e.id}, {"summary", e.summary}, {"defaults", d}});
  }
  if (as_json) {
    std::cout << all.dump(1) << '\n';
    return kExitOk;
  }
  for (const auto& e : all) {
    std::cout << std::left << std::setw(28) << e["id"].get<std::string>() << e["summary"].get<std::string>() << "\n"
              << std::setw(28) << "" << "defaults " << e["defaults"].dump() << '\n';
  }
  return kExitOk;
}

void print_suite(const tnnfrac::checks::SuiteResult& s) {
  for (const auto& c : s.checks) {
    std::cout << std::left << std::setw(11) << s.suite << std::setw(66) << c.name << std::right << " max_rel_err "
              << std::scientific << std::setprecision(3) << c.max_rel_error << "  tol " << c.tolerance << std::defaultfloat
              << "  " << (c.passed ? "PASS" : "FAIL") << "  (" << std::fixed << std::setprecision(2) << c.seconds << " s)"
              << std::defaultfloat << '\n';
  }
}

int cmd_check(const std::string& suite, bool corrupt_gamma) {
  namespace ck = tnnfrac::checks;
  const tnnfrac::GammaFn good = [](double x) { return tnnfrac::gamma(x); };
  const tnnfrac::GammaFn bad = [](double x) { return tnnfrac::gamma(x) * (1.0 + 1e-6); };
  std::vector<ck::SuiteResult> results;
  const bool all = suite == "all";
  if (all || suite == "quadrature") results.push_back(ck::quadrature_suite());
  if (all || suite == "caputo") {
    ck::SuiteResult s = ck::caputo_suite(corrupt_gamma ? bad : good);
    if (!corrupt_gamma) {
      // The suite has to notice a perturbed Γ.
      ck::CheckResult ctl = ck::caputo_suite(bad).checks.front();
      ctl.name = "negative control: perturbed gamma is detected";
      ctl.passed = !ctl.passed;
      s.checks.push_back(ctl);
    }
    results.push_back(std::move(s));
  }
  if (all || suite == "gradients") results.push_back(ck::gradients_suite());
  if (all || suite == "assembly") results.push_back(ck::assembly_suite());
  bool ok = true;
  for (const auto& s : results) {
    print_suite(s);
    std::cout.flush();
    ok = ok && s.passed();
  }
  std::cout << (ok ? "all checks passed" : "CHECK FAILURES") << '\n';
  return ok ? kExitOk : kExitFailure;
}

int cmd_eval(const std::string& checkpoint, const std::string& heatmap_dir) {
  const tnnfrac::EvalResult r = tnnfrac::run_eval(checkpoint, heatmap_dir);
  json out = {{"problem", r.problem_id}, {"e_test", r.e_test}, {"loss", r.loss}, {"epoch", r.epoch}};
  std::cout << std::setprecision(17) << out.dump(1) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor neural network subspace solver for time-fractional PIDEs"};
  app.require_subcommand(1);

  SolveArgs sa;
  auto* solve = app.add_subcommand("solve", "train on one benchmark and write report.json, heatmap.csv, checkpoint");
  solve->add_option("-c,--config", sa.config, "JSON run configuration");
  solve->add_option("-p,--problem", sa.problem, "problem id (overrides problem.id)");
  solve->add_option("--param", sa.params, "problem parameter key=value (repeatable)");
  solve->add_option("-o,--out", sa.out, "output directory (overrides output.dir)");
  solve->add_option("--resume", sa.resume, "continue from this checkpoint");
  solve->add_option("--rank", sa.rank, "number of rank-one terms p");
  solve->add_option("--epochs", sa.epochs, "total Adam steps");
  solve->add_option("--adam-steps", sa.adam_steps, "Adam steps per outer iteration");
  solve->add_option("--outer-steps", sa.outer_steps, "outer iterations (default epochs / adam-steps)");
  solve->add_option("--inner-steps", sa.inner_steps, "fixed-point solves per outer step (nonlinear problems)");
  solve->add_option("--seed", sa.seed, "initialization seed");
  solve->add_flag("-q,--quiet", sa.quiet, "no per-iteration log");
  solve->add_flag("--dry-run", sa.dry_run, "validate and print the resolved configuration, no training");

  bool list_json = false;
  auto* list = app.add_subcommand("list-problems", "list benchmark ids and default parameters");
  list->add_flag("--json", list_json, "machine-readable output");

  std::string suite;
  bool corrupt_gamma = false;
  auto* check = app.add_subcommand("check", "run verification suites");
  check->add_option("suite", suite, "quadrature | caputo | gradients | assembly | all")
      ->required()
      ->check(CLI::IsMember({"quadrature", "caputo", "gradients", "assembly", "all"}));
  check->add_flag("--corrupt-gamma", corrupt_gamma, "run the Caputo suite with a perturbed gamma (must fail)");

  std::string checkpoint, heatmap_dir;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the test grid");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--heatmap-dir", heatmap_dir, "also write heatmap.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    apply_thread_env();
    if (solve->parsed()) return cmd_solve(sa);
    if (list->parsed()) return cmd_list(list_json);
    if (check->parsed()) return cmd_check(suite, corrupt_gamma);
    if (eval->parsed()) return cmd_eval(checkpoint, heatmap_dir);
  } catch (const tnnfrac::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const tnnfrac::LookupError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const tnnfrac::DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitConfig;
}
