#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tnnfrac/assembly.hpp"
#include "tnnfrac/errors.hpp"
#include "tnnfrac/model.hpp"
#include "tnnfrac/problems.hpp"

namespace tnnfrac {

using json = nlohmann::json;

// ----- Adam -----

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

/// One Adam update (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) in place.
inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (grad.size() != params.size()) throw ConfigError("adam_step: gradient size differs from parameters");
  if (st.m.size() == 0) {
    st.m = Eigen::VectorXd::Zero(params.size());
    st.v = Eigen::VectorXd::Zero(params.size());
  }
  if (st.m.size() != params.size()) throw ConfigError("adam_step: optimizer state size differs from parameters");
  ++st.step;
  st.m = b1 * st.m + (1.0 - b1) * grad;
  st.v = b2 * st.v + (1.0 - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  params.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + eps);
}

// ----- Configuration -----

struct TrainConfig {
  int rank = 20;
  std::vector<int> hidden{50, 50, 50};
  std::uint64_t seed = 0;
  int epochs = 5000;
  int adam_steps_per_outer = 1;
  /// 0 → epochs / adam_steps_per_outer.
  int outer_steps = 0;
  double learning_rate = 0.003;
  double lr_min = 1e-4;
  std::string lr_schedule = "cosine";  // cosine | constant
  int inner_steps = 3;
  double rcond = 1e-12;
  int subintervals = 10;
  int points = 16;
  int n_tau = 100;
  std::optional<int> kernel_subintervals;
  std::optional<int> kernel_points;
  std::optional<int> kernel_jacobi;
  int reduced_subintervals = 10;
  int reduced_points = 8;
  /// Test error every this many outer steps (0: only at the end).
  int test_every = 100;
  bool final_solve = true;
  /// Clear Adam moments after every c-solve. Only useful with long Adam
  /// blocks, where one solve can change the gradient scale by orders of
  /// magnitude and β₂ = 0.999 keeps the stale scale alive.
  bool reset_adam_each_outer = false;

  [[nodiscard]] int outer_count() const {
    return outer_steps > 0 ? outer_steps : epochs / std::max(1, adam_steps_per_outer);
  }
  [[nodiscard]] int total_adam_steps() const { return outer_count() * adam_steps_per_outer; }

  void validate() const {
    auto need = [](bool ok, const std::string& m) {
      if (!ok) throw ConfigError(m);
    };
    need(rank >= 1, "train.rank must be >= 1");
    need(!hidden.empty(), "train.hidden must list at least one width");
    for (int w : hidden) need(w >= 1, "train.hidden widths must be >= 1");
    need(epochs >= 1, "train.epochs must be >= 1");
    need(adam_steps_per_outer >= 0, "train.adam_steps_per_outer must be >= 0");
    need(outer_steps >= 0, "train.outer_steps must be >= 0");
    need(outer_count() >= 1, "train: at least one outer step is required");
    need(learning_rate > 0.0 && lr_min > 0.0, "train.learning_rate and train.lr_min must be > 0");
    need(lr_schedule == "cosine" || lr_schedule == "constant", "train.lr_schedule must be cosine or constant");
    need(inner_steps >= 1, "train.inner_steps must be >= 1");
    need(rcond > 0.0 && rcond < 1.0, "train.rcond must lie in (0,1)");
    need(subintervals >= 1 && points >= 1 && n_tau >= 1, "quadrature sizes must be >= 1");
    need(reduced_subintervals >= 1 && reduced_points >= 1, "reduced grid sizes must be >= 1");
    need(test_every >= 0, "train.test_every must be >= 0");
  }

  [[nodiscard]] AssemblyRules rules(const ProblemSpec& p) const {
    AssemblyRules r = make_rules(p, subintervals, points, n_tau);
    r.kernel_subintervals = kernel_subintervals;
    r.kernel_points = kernel_points;
    r.kernel_jacobi = kernel_jacobi;
    r.reduced_subintervals = reduced_subintervals;
    r.reduced_points = reduced_points;
    return r;
  }

  /// Learning rate for global Adam step `e` (0-based).
  [[nodiscard]] double lr_at(long e) const {
    if (lr_schedule == "constant") return learning_rate;
    const double total = std::max(1, total_adam_steps());
    const double frac = std::min(1.0, static_cast<double>(e) / total);
    return lr_min + 0.5 * (learning_rate - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
  }
};

inline json to_json(const TrainConfig& c) {
  json j = {{"rank", c.rank},
            {"hidden", c.hidden},
            {"seed", c.seed},
            {"epochs", c.epochs},
            {"adam_steps_per_outer", c.adam_steps_per_outer},
            {"outer_steps", c.outer_steps},
            {"learning_rate", c.learning_rate},
            {"lr_min", c.lr_min},
            {"lr_schedule", c.lr_schedule},
            {"inner_steps", c.inner_steps},
            {"rcond", c.rcond},
            {"subintervals", c.subintervals},
            {"points", c.points},
            {"n_tau", c.n_tau},
            {"reduced_subintervals", c.reduced_subintervals},
            {"reduced_points", c.reduced_points},
            {"test_every", c.test_every},
            {"final_solve", c.final_solve},
            {"reset_adam_each_outer", c.reset_adam_each_outer}};
  if (c.kernel_subintervals) j["kernel_subintervals"] = *c.kernel_subintervals;
  if (c.kernel_points) j["kernel_points"] = *c.kernel_points;
  if (c.kernel_jacobi) j["kernel_jacobi"] = *c.kernel_jacobi;
  return j;
}

namespace detail {

template <class T>
T json_get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (known.count(k) == 0) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const json& j) {
  static const std::set<std::string> known{
      "rank", "hidden", "seed", "epochs", "adam_steps_per_outer", "outer_steps", "learning_rate", "lr_min",
      "lr_schedule", "inner_steps", "rcond", "subintervals", "points", "n_tau", "kernel_subintervals",
      "kernel_points", "kernel_jacobi", "reduced_subintervals", "reduced_points", "test_every", "final_solve", "reset_adam_each_outer"};
  detail::reject_unknown(j, known, "train");
  TrainConfig c;
  const std::string w = "train";
  auto opt_int = [&](const char* k, int& dst) {
    if (j.contains(k)) dst = detail::json_get<int>(j, k, w);
  };
  auto opt_dbl = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = detail::json_get<double>(j, k, w);
  };
  opt_int("rank", c.rank);
  if (j.contains("hidden")) c.hidden = detail::json_get<std::vector<int>>(j, "hidden", w);
  if (j.contains("seed")) c.seed = detail::json_get<std::uint64_t>(j, "seed", w);
  opt_int("epochs", c.epochs);
  opt_int("adam_steps_per_outer", c.adam_steps_per_outer);
  opt_int("outer_steps", c.outer_steps);
  opt_dbl("learning_rate", c.learning_rate);
  opt_dbl("lr_min", c.lr_min);
  if (j.contains("lr_schedule")) c.lr_schedule = detail::json_get<std::string>(j, "lr_schedule", w);
  opt_int("inner_steps", c.inner_steps);
  opt_dbl("rcond", c.rcond);
  opt_int("subintervals", c.subintervals);
  opt_int("points", c.points);
  opt_int("n_tau", c.n_tau);
  if (j.contains("kernel_subintervals")) c.kernel_subintervals = detail::json_get<int>(j, "kernel_subintervals", w);
  if (j.contains("kernel_points")) c.kernel_points = detail::json_get<int>(j, "kernel_points", w);
  if (j.contains("kernel_jacobi")) c.kernel_jacobi = detail::json_get<int>(j, "kernel_jacobi", w);
  opt_int("reduced_subintervals", c.reduced_subintervals);
  opt_int("reduced_points", c.reduced_points);
  opt_int("test_every", c.test_every);
  if (j.contains("final_solve")) c.final_solve = detail::json_get<bool>(j, "final_solve", w);
  if (j.contains("reset_adam_each_outer")) {
    c.reset_adam_each_outer = detail::json_get<bool>(j, "reset_adam_each_outer", w);
  }
  c.validate();
  return c;
}

// ----- Report -----

struct OuterRecord {
  int index = 0;
  long epoch = 0;  // Adam steps completed before this solve
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::vector<double> inner_losses;  // nonlinear: after each inner solve
  int truncated = 0;
  double sv_max = 0.0;
  double sv_min = 0.0;
  bool degenerate = false;
  bool inner_stopped = false;
};

struct TrainReport {
  std::string problem_id;
  json config_echo;
  std::vector<double> step_loss;                  // loss before each Adam update
  std::vector<std::pair<long, double>> test_errors;  // (epoch, e_test of the best model so far)
  std::vector<OuterRecord> outer;
  std::vector<std::string> warnings;
  double best_loss = std::numeric_limits<double>::infinity();
  double final_loss = 0.0;
  double e_test = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  Eigen::VectorXd final_c;

  /// c-solves whose loss rose by more than `tol`.
  [[nodiscard]] int monotonicity_violations(double tol = 1e-12) const {
    int n = 0;
    for (const auto& o : outer) n += o.loss_after > o.loss_before + tol ? 1 : 0;
    return n;
  }
};

inline json to_json(const TrainReport& r) {
  json outer = json::array();
  for (const auto& o : r.outer) {
    outer.push_back({{"index", o.index},
                     {"epoch", o.epoch},
                     {"loss_before", o.loss_before},
                     {"loss_after", o.loss_after},
                     {"inner_losses", o.inner_losses},
                     {"truncated", o.truncated},
                     {"sv_max", o.sv_max},
                     {"sv_min", o.sv_min},
                     {"degenerate", o.degenerate},
                     {"inner_stopped", o.inner_stopped}});
  }
  json tests = json::array();
  for (const auto& [e, v] : r.test_errors) tests.push_back({{"epoch", e}, {"e_test", v}});
  std::vector<double> c(r.final_c.data(), r.final_c.data() + r.final_c.size());
  return {{"problem", r.problem_id},
          {"config", r.config_echo},
          {"loss_history", r.step_loss},
          {"test_history", tests},
          {"outer", outer},
          {"warnings", r.warnings},
          {"best_loss", r.best_loss},
          {"final_loss", r.final_loss},
          {"final_residual_norm", std::sqrt(std::max(0.0, r.final_loss))},
          {"e_test", r.e_test},
          {"wall_seconds", r.wall_seconds},
          {"final_c", c},
          {"monotonicity_violations", r.monotonicity_violations()}};
}

inline TrainReport report_from_json(const json& j) {
  TrainReport r;
  r.problem_id = j.at("problem").get<std::string>();
  r.config_echo = j.at("config");
  r.step_loss = j.at("loss_history").get<std::vector<double>>();
  for (const auto& t : j.at("test_history")) r.test_errors.emplace_back(t.at("epoch").get<long>(), t.at("e_test").get<double>());
  for (const auto& o : j.at("outer")) {
    OuterRecord rec;
    rec.index = o.at("index").get<int>();
    rec.epoch = o.at("epoch").get<long>();
    rec.loss_before = o.at("loss_before").get<double>();
    rec.loss_after = o.at("loss_after").get<double>();
    rec.inner_losses = o.at("inner_losses").get<std::vector<double>>();
    rec.truncated = o.at("truncated").get<int>();
    rec.sv_max = o.at("sv_max").get<double>();
    rec.sv_min = o.at("sv_min").get<double>();
    rec.degenerate = o.at("degenerate").get<bool>();
    rec.inner_stopped = o.at("inner_stopped").get<bool>();
    r.outer.push_back(rec);
  }
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.best_loss = j.at("best_loss").is_null() ? std::numeric_limits<double>::infinity() : j.at("best_loss").get<double>();
  r.final_loss = j.at("final_loss").get<double>();
  r.e_test = j.at("e_test").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("e_test").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  const auto c = j.at("final_c").get<std::vector<double>>();
  r.final_c = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  return r;
}

// ----- Model (de)serialization -----

inline json params_to_json(const SubnetParams& s) {
  json layers = json::array();
  for (const auto& l : s.layers) {
    std::vector<double> w(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w[static_cast<std::size_t>(r * l.weight.cols() + c)] = l.weight(r, c);
    }
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"weight", w}, {"bias", b}});
  }
  return layers;
}

inline SubnetParams params_from_json(const json& j) {
  SubnetParams s;
  for (const auto& l : j) {
    const auto rows = l.at("rows").get<Eigen::Index>();
    const auto cols = l.at("cols").get<Eigen::Index>();
    const auto w = l.at("weight").get<std::vector<double>>();
    const auto b = l.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
      throw ConfigError("checkpoint: layer array sizes are inconsistent");
    }
    Layer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      layer.bias[r] = b[static_cast<std::size_t>(r)];
    }
    s.layers.push_back(std::move(layer));
  }
  return s;
}

inline json model_to_json(const TnnModel& m) {
  json subnets = json::array();
  for (int s = 0; s < m.subnet_count(); ++s) subnets.push_back(params_to_json(m.subnet(s)));
  json domain = json::array();
  for (const auto& iv : m.domain) domain.push_back({iv.lo, iv.hi});
  std::vector<double> c(m.c.data(), m.c.data() + m.c.size());
  std::vector<bool> mask = m.boundary_mask;
  return {{"mu", m.mu}, {"horizon", m.horizon}, {"domain", domain}, {"boundary_mask", mask}, {"c", c}, {"subnets", subnets}};
}

/// Overwrites parameters, c and μ of `m` (shapes must agree).
inline void load_model_json(const json& j, TnnModel& m) {
  const auto& subnets = j.at("subnets");
  if (static_cast<int>(subnets.size()) != m.subnet_count()) throw ConfigError("checkpoint: subnet count differs");
  for (int s = 0; s < m.subnet_count(); ++s) {
    SubnetParams p = params_from_json(subnets[static_cast<std::size_t>(s)]);
    if (p.widths() != m.subnet(s).widths()) throw ConfigError("checkpoint: subnet widths differ from the configuration");
    m.subnet(s) = std::move(p);
  }
  const auto c = j.at("c").get<std::vector<double>>();
  if (static_cast<int>(c.size()) != m.rank()) throw ConfigError("checkpoint: coefficient vector has wrong length");
  m.c = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  m.mu = j.at("mu").get<double>();
  m.validate();
}

// ----- Training -----

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  TnnModel model;
  TnnModel best;
  AdamState adam;
  int next_outer = 0;
  long epoch = 0;
  TrainReport report;
};

using LogFn = std::function<void(const std::string&)>;

/// Alternates c-solves with Adam blocks on θ (c frozen). Linear problems
/// use assemble_linear; nonlinear ones run `inner_steps` fixed-point solves
/// with Ĝ linearized about the previous c.
class TrainSession {
 public:
  TrainSession(ProblemSpec problem, TrainConfig config, LogFn log = {})
      : problem_(std::move(problem)), config_(std::move(config)), log_(std::move(log)) {
    config_.validate();
    rules_ = config_.rules(problem_);
    state_.model = make_model(problem_.domain, problem_.horizon, config_.rank, problem_.mu(), config_.seed,
                              rules_.norm_rules(), config_.hidden);
    state_.best = state_.model;
    state_.report.problem_id = problem_.id;
    state_.report.config_echo = to_json(config_);
    assembler_ = std::make_unique<Assembler>(problem_, rules_, state_.model);
  }

  TrainSession(ProblemSpec problem, TrainConfig config, TrainState resume, LogFn log = {})
      : problem_(std::move(problem)), config_(std::move(config)), log_(std::move(log)) {
    config_.validate();
    rules_ = config_.rules(problem_);
    state_ = std::move(resume);
    assembler_ = std::make_unique<Assembler>(problem_, rules_, state_.model);
  }

  [[nodiscard]] bool done() const { return state_.next_outer >= config_.outer_count(); }
  [[nodiscard]] const TrainState& state() const { return state_; }
  [[nodiscard]] const AssemblyRules& rules() const { return rules_; }
  [[nodiscard]] const ProblemSpec& problem() const { return problem_; }
  [[nodiscard]] const TrainConfig& config() const { return config_; }
  Assembler& assembler() { return *assembler_; }

  void run_outer() {
    if (done()) return;
    const auto t0 = std::chrono::steady_clock::now();
    TnnModel& m = state_.model;
    OuterRecord rec;
    rec.index = state_.next_outer;
    rec.epoch = state_.epoch;
    rec.loss_before = assembler_->loss(m);
    if (problem_.linear()) {
      solve_step(rec, nullptr);
    } else {
      inner_iterations(rec);
    }
    rec.loss_after = assembler_->loss(m);
    consider_best(rec.loss_after);
    state_.report.outer.push_back(rec);

    const Eigen::Index n = m.parameter_count();
    if (config_.reset_adam_each_outer) state_.adam = AdamState{};
    for (int s = 0; s < config_.adam_steps_per_outer; ++s) {
      ModelGradient g = zero_gradient(m);
      const double l = assembler_->loss_and_gradient(m, g);
      state_.report.step_loss.push_back(l);
      consider_best(l);
      Eigen::VectorXd theta = m.flat_parameters();
      const Eigen::VectorXd grad = flatten_gradient(g);
      if (grad.size() != n) throw NumericError("gradient length differs from parameter count");
      adam_step(theta, grad, state_.adam, config_.lr_at(state_.epoch));
      m.set_flat_parameters(theta);
      ++state_.epoch;
    }
    ++state_.next_outer;
    if (config_.test_every > 0 && state_.next_outer % config_.test_every == 0) {
      state_.report.test_errors.emplace_back(state_.epoch, relative_l2_test_error(state_.best, problem_));
    }
    state_.report.wall_seconds += seconds_since(t0);
    if (log_) {
      std::ostringstream msg;
      msg << "outer " << rec.index + 1 << "/" << config_.outer_count() << "  epoch " << state_.epoch
          << "  loss " << rec.loss_before << " -> " << rec.loss_after;
      if (!state_.report.step_loss.empty()) msg << "  adam " << state_.report.step_loss.back();
      if (!state_.report.test_errors.empty() && state_.report.test_errors.back().first == state_.epoch) {
        msg << "  e_test " << state_.report.test_errors.back().second;
      }
      log_(msg.str());
    }
  }

  /// Final c-solve, best-model selection and test error. Returns the best model.
  TnnModel finish() {
    const auto t0 = std::chrono::steady_clock::now();
    TnnModel& m = state_.model;
    if (config_.final_solve && config_.adam_steps_per_outer > 0) {
      OuterRecord rec;
      rec.index = state_.next_outer;
      rec.epoch = state_.epoch;
      rec.loss_before = assembler_->loss(m);
      if (problem_.linear()) {
        solve_step(rec, nullptr);
      } else {
        inner_iterations(rec);
      }
      rec.loss_after = assembler_->loss(m);
      consider_best(rec.loss_after);
      state_.report.outer.push_back(rec);
    }
    TrainReport& r = state_.report;
    r.final_loss = assembler_->loss(state_.best);
    r.e_test = relative_l2_test_error(state_.best, problem_);
    r.final_c = state_.best.c;
    r.test_errors.emplace_back(state_.epoch, r.e_test);
    r.wall_seconds += seconds_since(t0);
    if (log_) {
      std::ostringstream msg;
      msg << "done: best loss " << r.best_loss << "  e_test " << r.e_test << "  wall " << r.wall_seconds << " s";
      log_(msg.str());
    }
    return state_.best;
  }

  std::pair<TnnModel, TrainReport> run() {
    while (!done()) run_outer();
    TnnModel best = finish();
    return {std::move(best), state_.report};
  }

 private:
  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  void consider_best(double loss) {
    if (loss < state_.report.best_loss) {
      state_.report.best_loss = loss;
      state_.best = state_.model;
    }
  }

  // One least-squares solve for c; c_prev = nullptr means the linear system.
  void solve_step(OuterRecord& rec, const Eigen::VectorXd* c_prev) {
    TnnModel& m = state_.model;
    GramSystem sys = c_prev == nullptr ? assembler_->assemble_linear(m) : assembler_->assemble_nonlinear(m, *c_prev);
    try {
      const Eigen::VectorXd old = m.c;
      m.c = solve_least_squares(sys, config_.rcond, &old);
    } catch (const DegenerateError& e) {
      rec.degenerate = true;
      state_.report.warnings.push_back("outer " + std::to_string(rec.index) + ": " + e.what() + "; keeping previous c");
    }
    rec.truncated = sys.truncated;
    if (sys.singular_values.size() > 0) {
      rec.sv_max = sys.singular_values[0];
      rec.sv_min = sys.singular_values[sys.singular_values.size() - 1];
    }
  }

  void inner_iterations(OuterRecord& rec) {
    // The first solve is taken as is (like the linear path); later ones only
    // if they improve. A diverging iterate ends the loop.
    TnnModel& m = state_.model;
    Eigen::VectorXd best_c = m.c;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < config_.inner_steps; ++k) {
      const Eigen::VectorXd c_prev = m.c;
      solve_step(rec, &c_prev);
      const double l = assembler_->loss(m);
      rec.inner_losses.push_back(l);
      const bool diverged = !(l <= 10.0 * rec.loss_before);
      if (!diverged && l < best) {
        best = l;
        best_c = m.c;
      }
      if (diverged) {
        rec.inner_stopped = true;
        std::ostringstream msg;
        msg << "outer " << rec.index << ": inner fixed-point iteration diverging (loss " << l << " > 10 x "
            << rec.loss_before << "); stopped after " << k + 1 << " step(s)";
        state_.report.warnings.push_back(msg.str());
        if (log_) log_("warning: " + msg.str());
        break;
      }
    }
    m.c = best_c;
  }

  ProblemSpec problem_;
  TrainConfig config_;
  LogFn log_;
  AssemblyRules rules_;
  TrainState state_;
  std::unique_ptr<Assembler> assembler_;
};

inline std::pair<TnnModel, TrainReport> train_linear(const ProblemSpec& problem, const TrainConfig& config,
                                                     LogFn log = {}) {
  if (!problem.linear()) throw ConfigError("train_linear: problem '" + problem.id + "' is nonlinear");
  return TrainSession(problem, config, std::move(log)).run();
}

/// Outer/inner scheme; on a problem without nonlinearity (Ĝ ≡ 0) every inner
/// step after the first would re-solve the same system, so this reduces to
/// train_linear exactly.
inline std::pair<TnnModel, TrainReport> train_nonlinear(const ProblemSpec& problem, const TrainConfig& config,
                                                        LogFn log = {}) {
  return TrainSession(problem, config, std::move(log)).run();
}

inline std::pair<TnnModel, TrainReport> train(const ProblemSpec& problem, const TrainConfig& config, LogFn log = {}) {
  return problem.linear() ? train_linear(problem, config, std::move(log)) : train_nonlinear(problem, config, std::move(log));
}

// ----- Checkpoints -----

constexpr int kCheckpointSchemaVersion = 1;

inline json checkpoint_to_json(const ProblemSpec& p, const TrainConfig& c, const TrainState& s) {
  std::vector<double> am(s.adam.m.data(), s.adam.m.data() + s.adam.m.size());
  std::vector<double> av(s.adam.v.data(), s.adam.v.data() + s.adam.v.size());
  return {{"schema", "tnnfrac-checkpoint"},
          {"schema_version", kCheckpointSchemaVersion},
          {"problem", {{"id", p.id}, {"params", p.params}}},
          {"orders", p.orders.betas},
          {"seed", c.seed},
          {"train", to_json(c)},
          {"model", model_to_json(s.model)},
          {"best", model_to_json(s.best)},
          {"optimizer", {{"step", s.adam.step}, {"m", am}, {"v", av}}},
          {"progress", {{"next_outer", s.next_outer}, {"epoch", s.epoch}}},
          {"report", to_json(s.report)}};
}

inline void save_checkpoint(const std::string& path, const ProblemSpec& p, const TrainConfig& c, const TrainState& s) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_json(p, c, s).dump(1);
  if (!out) throw ConfigError("failed writing checkpoint '" + path + "'");
}

struct LoadedCheckpoint {
  ProblemSpec problem;
  TrainConfig config;
  TrainState state;
};

inline LoadedCheckpoint checkpoint_from_json(const json& j) {
  if (j.value("schema", std::string()) != "tnnfrac-checkpoint") throw ConfigError("not a checkpoint file");
  if (j.value("schema_version", -1) != kCheckpointSchemaVersion) throw ConfigError("unsupported checkpoint schema version");
  LoadedCheckpoint out;
  const auto params = j.at("problem").at("params").get<std::map<std::string, double>>();
  out.problem = make_problem(j.at("problem").at("id").get<std::string>(), params);
  out.config = train_config_from_json(j.at("train"));
  const AssemblyRules rules = out.config.rules(out.problem);
  out.state.model = make_model(out.problem.domain, out.problem.horizon, out.config.rank, out.problem.mu(),
                               out.config.seed, rules.norm_rules(), out.config.hidden);
  out.state.best = out.state.model;
  load_model_json(j.at("model"), out.state.model);
  load_model_json(j.at("best"), out.state.best);
  const auto& opt = j.at("optimizer");
  out.state.adam.step = opt.at("step").get<long>();
  const auto am = opt.at("m").get<std::vector<double>>();
  const auto av = opt.at("v").get<std::vector<double>>();
  out.state.adam.m = Eigen::Map<const Eigen::VectorXd>(am.data(), static_cast<Eigen::Index>(am.size()));
  out.state.adam.v = Eigen::Map<const Eigen::VectorXd>(av.data(), static_cast<Eigen::Index>(av.size()));
  out.state.next_outer = j.at("progress").at("next_outer").get<int>();
  out.state.epoch = j.at("progress").at("epoch").get<long>();
  out.state.report = report_from_json(j.at("report"));
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace tnnfrac
