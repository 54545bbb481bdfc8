#include <gtest/gtest.h>

#include <cmath>

#include "dsl/fpe_lab.hpp"

using namespace dsl;

TEST(Potential, GradientVanishesAtOrigin) {
  const auto pot = GmmPotential::five_well();
  const Point2 g = pot.grad({0.0, 0.0});
  EXPECT_NEAR(g[0], 0.0, 1e-12);
  EXPECT_NEAR(g[1], 0.0, 1e-12);
}

TEST(Potential, GradientMatchesFiniteDifference) {
  const auto pot = GmmPotential::five_well();
  const double eps = 1e-6;
  for (Point2 x : {Point2{0.3, 0.8}, Point2{-0.9, 0.1}, Point2{1.5, -1.2}}) {
    const Point2 g = pot.grad(x);
    const double gx = (pot.U({x[0] + eps, x[1]}) - pot.U({x[0] - eps, x[1]})) / (2 * eps);
    const double gy = (pot.U({x[0], x[1] + eps}) - pot.U({x[0], x[1] - eps})) / (2 * eps);
    EXPECT_NEAR(g[0], gx, 1e-5 * std::max(1.0, std::abs(gx)));
    EXPECT_NEAR(g[1], gy, 1e-5 * std::max(1.0, std::abs(gy)));
  }
}

TEST(Potential, FiniteFarAway) {
  const auto pot = GmmPotential::five_well();
  EXPECT_TRUE(std::isfinite(pot.U({100.0, -100.0})));
  const Point2 g = pot.grad({100.0, -100.0});
  EXPECT_TRUE(std::isfinite(g[0]) && std::isfinite(g[1]));
}

TEST(Potential, NoiselessParticleStaysInItsWell) {
  const auto pot = GmmPotential::five_well(0.1, 0.0);
  for (const auto &c : pot.centers) {
    Point2 x = c;
    for (int s = 0; s < 2000; ++s) {
      const Point2 g = pot.grad(x);
      x[0] -= 1e-4 * g[0];
      x[1] -= 1e-4 * g[1];
    }
    EXPECT_LT(std::hypot(x[0] - c[0], x[1] - c[1]), 1e-6);
  }
}

TEST(Fpe, HeatEquationWidensAndConservesMass) {
  const auto pot = GmmPotential::flat(1.0);
  DensityGrid g(2.0, 64);
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < g.n; ++j) {
      const double x = g.center(i), y = g.center(j);
      g.at(i, j) = std::exp(-(x * x + y * y) / (2 * 0.09));
    }
  g.normalize();
  auto second_moment = [](const DensityGrid &d) {
    double m = 0;
    for (std::size_t i = 0; i < d.n; ++i)
      for (std::size_t j = 0; j < d.n; ++j)
        m += (d.center(i) * d.center(i) + d.center(j) * d.center(j)) * d.at(i, j);
    return m * d.cell() * d.cell();
  };
  const double h = fpe_max_stable_h(pot, 2.0, 64);
  const auto res = fpe_evolve(pot, g, h, 200, 100);
  ASSERT_EQ(res.snapshots.size(), 3u);
  EXPECT_LT(second_moment(res.snapshots[0].grid), second_moment(res.snapshots[1].grid));
  EXPECT_LT(second_moment(res.snapshots[1].grid), second_moment(res.snapshots[2].grid));
  EXPECT_NEAR(res.snapshots.back().grid.mass(), 1.0, 1e-6);
  EXPECT_LT(res.max_step_mass_drift, 1e-6);
}

TEST(Fpe, StationaryDensityBarelyMoves) {
  const auto pot = GmmPotential::five_well();
  const auto p = stationary_grid(pot);
  const auto res = fpe_evolve(pot, p, 5e-5, 1, 0);
  const auto &q = res.snapshots.back().grid;
  double diff = 0, total = 0;
  for (std::size_t c = 0; c < p.values.size(); ++c) {
    diff += std::abs(q.values[c] - p.values[c]);
    total += p.values[c];
  }
  EXPECT_LT(diff / total, 1e-3);
}

TEST(Fpe, MassConservedOnFiveWells) {
  const auto res = fpe_evolve(GmmPotential::five_well(), standard_normal_grid(), 5e-5, 400, 50);
  EXPECT_LT(res.max_step_mass_drift, 1e-6);
  for (const auto &s : res.snapshots)
    EXPECT_NEAR(s.grid.mass(), 1.0, 1e-6);
}

TEST(Fpe, RefusesUnstableStep) {
  const auto pot = GmmPotential::five_well();
  const double hmax = fpe_max_stable_h(pot, 2.0, 64);
  try {
    fpe_evolve(pot, standard_normal_grid(), 2 * hmax, 1);
    FAIL();
  } catch (const dsl::invalid_argument &e) {
    EXPECT_EQ(e.field(), "h");
    EXPECT_NE(std::string(e.what()).find("h <="), std::string::npos);
  }
}

TEST(Langevin, DeterministicAcrossThreads) {
  const auto pot = GmmPotential::five_well();
  const auto a = langevin_simulate(pot, 500, 5e-5, 40, 3, 20, 1);
  const auto b = langevin_simulate(pot, 500, 5e-5, 40, 3, 20, 3);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t k = 0; k < a.size(); ++k)
    EXPECT_EQ(a[k].particles, b[k].particles);
}

TEST(Langevin, ApproachesStationaryDensity) {
  const auto pot = GmmPotential::five_well();
  const std::size_t n = 16;
  const auto target = stationary_grid(pot, 2.0, n);
  const auto snaps = langevin_simulate(pot, 20000, 5e-5, 1600, 7, 400);
  std::vector<double> tv;
  for (std::size_t k : {1, 2, 4})
    tv.push_back(tv_distance(bin_particles(snaps[k].particles, 2.0, n), target));
  EXPECT_GT(tv[0], tv[1]);
  EXPECT_GT(tv[1], tv[2]);
}

TEST(Histogram, CountsOutsideMass) {
  const std::vector<Point2> pts{{0.1, 0.1}, {5.0, 0.0}};
  const auto h = bin_particles(pts, 2.0, 4);
  EXPECT_DOUBLE_EQ(h.outside, 0.5);
  const auto grid = standard_normal_grid(2.0, 4);
  EXPECT_GE(tv_distance(h, grid), 0.5);
  EXPECT_THROW(tv_distance(h, standard_normal_grid(2.0, 8)), dsl::invalid_argument);
}
