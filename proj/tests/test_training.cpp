#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "tnnfrac/training.hpp"

using namespace tnnfrac;

namespace {

TrainConfig tiny_config(std::uint64_t seed = 3) {
  TrainConfig c;
  c.rank = 4;
  c.hidden = {8, 8};
  c.seed = seed;
  c.epochs = 40;
  c.adam_steps_per_outer = 10;
  c.subintervals = 4;
  c.points = 8;
  c.n_tau = 30;
  c.kernel_subintervals = 3;
  c.kernel_points = 8;
  c.kernel_jacobi = 20;
  c.reduced_subintervals = 3;
  c.reduced_points = 6;
  c.test_every = 2;
  return c;
}

double loss_at_zero_c(const ProblemSpec& p, const TrainConfig& cfg, TnnModel m) {
  m.c.setZero();
  Assembler as(p, cfg.rules(p), m);
  return as.loss(m);
}

}  // namespace

TEST(Adam, TwoStepsMatchHandComputedValues) {
  Eigen::VectorXd theta(2);
  theta << 1.0, -2.0;
  AdamState st;
  Eigen::VectorXd g(2);
  g << 0.5, -0.1;
  adam_step(theta, g, st, 0.1);
  EXPECT_NEAR(theta[0], 0.9000000019999999, 1e-15);
  EXPECT_NEAR(theta[1], -1.900000009999999, 1e-15);
  g << 0.2, 0.3;
  adam_step(theta, g, st, 0.05);
  EXPECT_NEAR(theta[0], 0.855071242951464, 1e-14);
  EXPECT_NEAR(theta[1], -1.924709500560032, 1e-14);
  EXPECT_EQ(st.step, 2);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd g(3);
  g << 1e3, -1e-3, 4.0;
  AdamState st;
  adam_step(theta, g, st, 0.01);
  // m̂ = g and v̂ = g² after one step, so Δ = −lr·g/(|g| + ε).
  EXPECT_NEAR(theta[0], -0.01 * 1e3 / (1e3 + 1e-8), 1e-17);
  EXPECT_NEAR(theta[1], 0.01 * 1e-3 / (1e-3 + 1e-8), 1e-17);
  EXPECT_NEAR(theta[2], -0.01 * 4.0 / (4.0 + 1e-8), 1e-17);
}

TEST(Adam, RejectsMismatchedSizes) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  AdamState st;
  EXPECT_THROW(adam_step(theta, Eigen::VectorXd::Zero(2), st, 0.1), ConfigError);
}

TEST(Schedule, CosineEndpointsAndMidpoint) {
  TrainConfig c;
  c.epochs = 1000;
  c.adam_steps_per_outer = 100;
  EXPECT_DOUBLE_EQ(c.lr_at(0), 0.003);
  EXPECT_NEAR(c.lr_at(1000), 1e-4, 1e-18);
  EXPECT_NEAR(c.lr_at(500), 0.5 * (0.003 + 1e-4), 1e-15);
  for (long e = 1; e <= 1000; ++e) EXPECT_LE(c.lr_at(e), c.lr_at(e - 1));
  c.lr_schedule = "constant";
  EXPECT_EQ(c.lr_at(777), 0.003);
}

TEST(Config, JsonRoundTripAndUnknownKeyRejection) {
  TrainConfig c = tiny_config(11);
  c.lr_schedule = "constant";
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  json bad = to_json(c);
  bad["learnig_rate"] = 0.1;
  try {
    (void)train_config_from_json(bad);
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learnig_rate"), std::string::npos);
  }
  json neg = to_json(c);
  neg["rank"] = 0;
  EXPECT_THROW((void)train_config_from_json(neg), ConfigError);
  json wrong_type = to_json(c);
  wrong_type["epochs"] = "many";
  EXPECT_THROW((void)train_config_from_json(wrong_type), ConfigError);
}

TEST(Config, OuterCountFollowsEpochs) {
  TrainConfig c;
  EXPECT_EQ(c.outer_count(), 5000);
  c.epochs = 2000;
  c.adam_steps_per_outer = 100;
  EXPECT_EQ(c.outer_count(), 20);
  c.outer_steps = 3;
  EXPECT_EQ(c.outer_count(), 3);
  EXPECT_EQ(c.total_adam_steps(), 300);
}

TEST(TrainLinear, DeterministicForFixedSeed) {
  const ProblemSpec p = make_problem("diffusion_single");
  const auto [m1, r1] = train_linear(p, tiny_config(5));
  const auto [m2, r2] = train_linear(p, tiny_config(5));
  ASSERT_EQ(r1.step_loss.size(), 40u);
  EXPECT_EQ(r1.step_loss, r2.step_loss);
  EXPECT_EQ(m1.flat_parameters(), m2.flat_parameters());
  EXPECT_EQ(m1.c, m2.c);
  const auto [m3, r3] = train_linear(p, tiny_config(6));
  EXPECT_NE(r1.step_loss, r3.step_loss);
}

TEST(TrainLinear, EverySolveIsMonotoneAndTrainingReducesLoss) {
  for (const std::string id : {"diffusion_single", "diffusion_two_term", "diffusion_high_freq_4pi", "weak_singular_t1"}) {
    const ProblemSpec p = make_problem(id);
    const auto [m, r] = train_linear(p, tiny_config(2));
    EXPECT_EQ(r.monotonicity_violations(), 0) << id;
    ASSERT_FALSE(r.outer.empty());
    EXPECT_LT(r.best_loss, r.outer.front().loss_before) << id;
    EXPECT_LE(r.final_loss, r.outer.front().loss_after) << id;
    EXPECT_TRUE(std::isfinite(r.e_test)) << id;
  }
}

TEST(TrainLinear, SingleProjectionBeatsZeroCoefficients) {
  const ProblemSpec p = make_problem("diffusion_single");
  TrainConfig c = tiny_config(9);
  c.outer_steps = 1;
  c.adam_steps_per_outer = 0;
  TrainSession s(p, c);
  const double zero = loss_at_zero_c(p, c, s.state().model);
  const auto [m, r] = s.run();
  ASSERT_EQ(r.outer.size(), 1u);
  EXPECT_TRUE(r.step_loss.empty());
  EXPECT_LT(r.outer[0].loss_after, zero);
  EXPECT_EQ(r.final_loss, r.outer[0].loss_after);
}

TEST(TrainLinear, RejectsNonlinearProblem) {
  EXPECT_THROW(train_linear(make_problem("fredholm_quadratic"), tiny_config()), ConfigError);
}

TEST(TrainLinear, ReportedTestErrorMatchesFreshEvaluation) {
  const ProblemSpec p = make_problem("diffusion_single");
  const auto [m, r] = train_linear(p, tiny_config(4));
  EXPECT_NEAR(r.e_test, relative_l2_test_error(m, p), 1e-14);
  EXPECT_EQ(r.final_c, m.c);
  const json j = to_json(r);
  EXPECT_EQ(j.at("e_test").get<double>(), r.e_test);
  EXPECT_EQ(j.at("loss_history").size(), r.step_loss.size());
}

// With the nonlinear term switched off the outer/inner scheme must follow
// the linear trajectory.
TEST(TrainNonlinear, ZeroNonlinearityReproducesLinearTrajectory) {
  ProblemSpec nl = make_problem("fredholm_quadratic");
  nl.kernel_sign = 0.0;
  ProblemSpec lin = nl;
  lin.nonlinearity = Nonlinearity::none;
  lin.kernel.kind = KernelKind::none;

  TrainConfig c = tiny_config(7);
  c.inner_steps = 1;
  const auto [ml, rl] = train_linear(lin, c);
  const auto [mn, rn] = train_nonlinear(nl, c);
  EXPECT_EQ(rl.step_loss, rn.step_loss);
  EXPECT_EQ(ml.c, mn.c);

  c.inner_steps = 3;
  const auto [mn3, rn3] = train_nonlinear(nl, c);
  ASSERT_EQ(rl.step_loss.size(), rn3.step_loss.size());
  for (std::size_t k = 0; k < rl.step_loss.size(); ++k) {
    EXPECT_NEAR(rn3.step_loss[k], rl.step_loss[k], 1e-10 * rl.step_loss[k]) << k;
  }
}

TEST(TrainNonlinear, FredholmRunRecordsInnerLosses) {
  const ProblemSpec p = make_problem("fredholm_quadratic");
  TrainConfig c = tiny_config(1);
  c.inner_steps = 3;
  const auto [m, r] = train_nonlinear(p, c);
  ASSERT_FALSE(r.outer.empty());
  for (const auto& o : r.outer) {
    EXPECT_GE(o.inner_losses.size(), 1u);
    EXPECT_LE(o.inner_losses.size(), 3u);
  }
  EXPECT_LT(r.best_loss, r.outer.front().loss_before);
  EXPECT_TRUE(std::isfinite(r.e_test));
}

TEST(TrainNonlinear, DivergingInnerIterationStopsWithWarning) {
  // A strong quadratic kernel term turns the frozen-coefficient iteration
  // into an expanding map.
  ProblemSpec p = make_problem("fredholm_quadratic");
  p.kernel_sign = -400.0;
  TrainConfig c = tiny_config(1);
  c.outer_steps = 1;
  c.adam_steps_per_outer = 0;
  c.inner_steps = 30;
  TrainSession s(p, c);
  s.run_outer();
  const auto& rec = s.state().report.outer.at(0);
  ASSERT_TRUE(rec.inner_stopped);
  EXPECT_LT(rec.inner_losses.size(), 30u);
  EXPECT_FALSE(s.state().report.warnings.empty());
  EXPECT_LE(rec.loss_after, 10.0 * rec.loss_before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ProblemSpec p = make_problem("diffusion_single");
  const TrainConfig c = tiny_config(8);
  TrainSession s(p, c);
  s.run_outer();
  s.run_outer();
  const json j = checkpoint_to_json(p, c, s.state());
  const LoadedCheckpoint back = checkpoint_from_json(json::parse(j.dump()));
  EXPECT_EQ(back.state.model.flat_parameters(), s.state().model.flat_parameters());
  EXPECT_EQ(back.state.model.c, s.state().model.c);
  EXPECT_EQ(back.state.model.mu, s.state().model.mu);
  EXPECT_EQ(back.state.best.flat_parameters(), s.state().best.flat_parameters());
  EXPECT_EQ(back.state.adam.m, s.state().adam.m);
  EXPECT_EQ(back.state.adam.v, s.state().adam.v);
  EXPECT_EQ(back.state.adam.step, s.state().adam.step);
  EXPECT_EQ(back.state.epoch, s.state().epoch);
  EXPECT_EQ(back.problem.orders.betas, p.orders.betas);
  EXPECT_EQ(checkpoint_to_json(back.problem, back.config, back.state).dump(), j.dump());
}

TEST(Checkpoint, ResumedRunContinuesTheSameTrajectory) {
  const ProblemSpec p = make_problem("diffusion_single");
  const TrainConfig c = tiny_config(12);
  const auto [full_model, full] = TrainSession(p, c).run();

  TrainSession first(p, c);
  first.run_outer();
  first.run_outer();
  const std::string path = (std::filesystem::temp_directory_path() / "tnnfrac_resume_test.json").string();
  save_checkpoint(path, p, c, first.state());
  LoadedCheckpoint ck = load_checkpoint(path);
  std::remove(path.c_str());
  TrainSession second(ck.problem, ck.config, std::move(ck.state));
  const auto [m, r] = second.run();
  ASSERT_EQ(r.step_loss.size(), full.step_loss.size());
  for (std::size_t k = 0; k < full.step_loss.size(); ++k) {
    EXPECT_NEAR(r.step_loss[k], full.step_loss[k], 1e-10 * full.step_loss[k]) << k;
  }
  EXPECT_NEAR(r.e_test, full.e_test, 1e-10);
}

TEST(Checkpoint, RejectsForeignFiles) {
  EXPECT_THROW(checkpoint_from_json(json{{"schema", "other"}}), ConfigError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ck.json"), ConfigError);
}

TEST(TrainNonlinear, VolterraSquareRunImprovesOnInitialLoss) {
  const ProblemSpec p = make_problem("volterra_1d");
  const auto [m, r] = train(p, tiny_config(2));
  ASSERT_FALSE(r.outer.empty());
  EXPECT_LT(r.best_loss, r.outer.front().loss_before);
  EXPECT_NEAR(r.e_test, relative_l2_test_error(m, p), 1e-14);
}

TEST(TrainLinear, AdamResetClearsMomentsEachOuterStep) {
  const ProblemSpec p = make_problem("diffusion_single");
  TrainConfig c = tiny_config(3);
  c.reset_adam_each_outer = true;
  TrainSession s(p, c);
  s.run_outer();
  s.run_outer();
  EXPECT_EQ(s.state().adam.step, c.adam_steps_per_outer);
  c.reset_adam_each_outer = false;
  TrainSession t(p, c);
  t.run_outer();
  t.run_outer();
  EXPECT_EQ(t.state().adam.step, 2 * c.adam_steps_per_outer);
}
