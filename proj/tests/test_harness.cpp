#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dsl/harness.hpp"

using namespace dsl;

TEST(Config, RoundTrip) {
  ExperimentConfig c;
  c.solver = "taylor3";
  c.schedule = preset_schedule("cond-i");
  c.steps.kind = "exponential";
  c.steps.N = 17;
  c.steps.terminal_ratio = 0.3;
  c.oracle.kind = "gaussian";
  c.oracle.mean = {0.1, -0.2};
  c.oracle.var = 0.5;
  c.dim = 2;
  c.batch = 9;
  c.seed = 123456789012345ULL;
  c.clip = std::make_pair(-2.0, 3.5);
  c.out = "x.csv";
  const std::string text = emit_config(c);
  const ExperimentConfig back = parse_config(text);
  EXPECT_EQ(back, c);
  EXPECT_EQ(emit_config(back), text);
  EXPECT_EQ(parse_config(emit_config(ExperimentConfig{})), ExperimentConfig{});
}

TEST(Config, MissingKeysKeepDefaults) {
  const auto c = parse_config(R"({"solver": "heun", "steps": {"N": 3}})");
  EXPECT_EQ(c.solver, "heun");
  EXPECT_EQ(c.steps.N, 3u);
  EXPECT_EQ(c.schedule, ScheduleSpec{});
}

TEST(Config, Errors) {
  try {
    parse_config("{\"solver\": ");
    FAIL();
  } catch (const format_error &e) {
    EXPECT_GT(e.offset(), 0u);
  }
  try {
    parse_config(R"({"steps": {"N": "many"}})");
    FAIL();
  } catch (const dsl::invalid_argument &e) {
    EXPECT_EQ(e.field(), "steps.N");
  }
  EXPECT_THROW(parse_config(R"({"clip": [1]})"), dsl::invalid_argument);
  EXPECT_THROW(parse_config("[1, 2]"), dsl::invalid_argument);
  EXPECT_THROW(preset_schedule("cond-iii"), dsl::invalid_argument);
}

TEST(Config, Builders) {
  ExperimentConfig c;
  c.solver = "nope";
  EXPECT_THROW(solver_from(c), dsl::invalid_argument);
  ScheduleSpec s;
  s.kind = "sigmoid";
  EXPECT_THROW(schedule_from(s), dsl::invalid_argument);
  EXPECT_EQ(broadcast({2.0}, 3, "x0"), (Vec{2, 2, 2}));
  EXPECT_THROW(broadcast({1.0, 2.0}, 3, "x0"), dsl::invalid_argument);
  c = ExperimentConfig{};
  c.dim = 4;
  EXPECT_EQ(oracle_from(c).dim(), 4u);
  c.oracle.kind = "mixture";
  c.oracle.points = 5;
  EXPECT_EQ(oracle_from(c).kind(), "mixture");
}

TEST(FitLogLog, ExactPowerLaw) {
  const std::vector<double> h{0.1, 0.05, 0.025, 0.0125};
  std::vector<double> e;
  for (double v : h)
    e.push_back(3 * v * v);
  const auto f = fit_loglog(h, e);
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_EQ(f.used, 4u);
}

TEST(FitLogLog, FloorExcludesPoints) {
  const std::vector<double> h{0.1, 0.05, 0.025, 0.0125};
  const auto f = fit_loglog(h, {1e-3, 1e-4, 1e-5, 1e-13});
  EXPECT_EQ(f.used, 3u);
  EXPECT_THROW(fit_loglog(h, {1e-3, 1e-4, 1e-13, 1e-14}), insufficient_data);
}

TEST(Order, DeterministicSlopes) {
  ExperimentConfig c;
  c.schedule = preset_schedule("cond-ii");
  c.solver = "taylor2";
  const auto e = estimate_order(c, 4);
  EXPECT_EQ(e.N_list, (std::vector<std::size_t>{8, 16, 32, 64, 128}));
  for (std::size_t i = 1; i < e.h_list.size(); ++i)
    EXPECT_LT(e.h_list[i], e.h_list[i - 1]);
  EXPECT_GT(e.slope(), 1.7);
  EXPECT_LT(e.slope(), 2.3);
  c.solver = "taylor3";
  OrderOptions fine;
  fine.reference = Reference::FineStep;
  const double s3 = estimate_order(c, 4, fine).slope();
  EXPECT_GT(s3, 2.6);
  EXPECT_LT(s3, 3.4);
}

TEST(Order, RejectsTooFewHalvings) {
  EXPECT_THROW(estimate_order(ExperimentConfig{}, 2), dsl::invalid_argument);
}

TEST(WeakMoments, IndependentOfThreadCount) {
  const auto sched = fit_tanh_schedule(0.05, 0.95, 1.0);
  const auto steps = make_step_schedule(ConstantSteps{}, 16, 1.0);
  const auto a = weak_moments_matched(SolverKind::ItoTaylor, sched, steps, 1.0, 20000, 3, 1);
  const auto b = weak_moments_matched(SolverKind::ItoTaylor, sched, steps, 1.0, 20000, 3, 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.variance, b.variance);
  // Close to the exact terminal law N(sqrt(1 - nu0) x0, nu0).
  EXPECT_NEAR(a.mean, std::sqrt(0.95), 0.02);
  EXPECT_NEAR(a.variance, 0.05, 0.01);
  EXPECT_THROW(weak_moments_matched(SolverKind::Euler, sched, steps, 1.0, 100, 0),
               dsl::invalid_argument);
}

TEST(Writers, CsvHeaders) {
  const auto sched = fit_tanh_schedule(1e-4, 0.99, 1.0);
  std::ostringstream os;
  write_schedule_csv(os, sched, 3);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "t,lambda,nu,beta,beta_d1,beta_d2");
  ExperimentConfig c;
  c.schedule = preset_schedule("cond-ii");
  std::ostringstream oo;
  write_order_csv(oo, estimate_order(c, 3));
  EXPECT_EQ(oo.str().substr(0, oo.str().find('\n')), "solver,metric,N,h,error,slope,r2");
}
