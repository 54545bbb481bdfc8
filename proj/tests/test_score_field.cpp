#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "dsl/rng.hpp"
#include "dsl/score_field.hpp"

using namespace dsl;

namespace {

// log p of the noised cloud (up to a constant) at x.
double log_density(const Vec &x, double nu, const PointCloudData &data) {
  const double a = std::sqrt(1 - nu);
  double total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double d2 = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double r = x[j] - a * data.point(i)[j];
      d2 += r * r;
    }
    total += data.weight(i) * std::exp(-d2 / (2 * nu));
  }
  return std::log(total);
}

} // namespace

TEST(ScoreDelta, ClosedForm) {
  const Vec x{1.0, -2.0}, x0{0.5, 0.25};
  const double nu = 0.36;
  const Vec S = score_delta(x, nu, x0);
  EXPECT_NEAR(S[0], (1.0 - 0.8 * 0.5) / 0.6, 1e-15);
  EXPECT_NEAR(S[1], (-2.0 - 0.8 * 0.25) / 0.6, 1e-15);
}

TEST(ScoreDelta, HandExamples) {
  const Vec one{1.0};
  EXPECT_NEAR(score_delta(one, 0.36, one)[0], 1.0 / 3, 1e-15);
  const Vec x0{0.4, -0.2}, scaled{0.8 * 0.4, 0.8 * -0.2}, origin{0.0, 0.0};
  for (double v : score_delta(scaled, 0.36, x0))
    EXPECT_NEAR(v, 0.0, 1e-15);
  const Vec x{1.5, -3.0};
  const Vec S = score_delta(x, 0.25, origin);
  EXPECT_DOUBLE_EQ(S[0], 3.0);
  EXPECT_DOUBLE_EQ(S[1], -6.0);
}

TEST(ScoreDelta, SingularAtZeroNoise) {
  const Vec x{1.0};
  EXPECT_THROW(score_delta(x, 0.0, x), singularity_error);
}

TEST(ScoreDelta, DimensionMismatch) {
  const Vec x{1.0, 2.0}, x0{1.0};
  EXPECT_THROW(score_delta(x, 0.5, x0), dsl::invalid_argument);
}

TEST(ScoreGaussian, ZeroVarianceIsDelta) {
  const Vec x{0.3, -1.2}, m{0.1, 0.4};
  const Vec a = score_gaussian(x, 0.2, m, 0.0), b = score_delta(x, 0.2, m);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(ScoreGaussian, UnitVarianceIsStationary) {
  // N(0, I) data stays N(0, I): S = sqrt(nu) x.
  const Vec x{0.7}, m{0.0};
  EXPECT_NEAR(score_gaussian(x, 0.3, m, 1.0)[0], std::sqrt(0.3) * 0.7, 1e-15);
}

TEST(ScoreGaussian, HandExample) {
  const Vec x{2.0}, m{0.0};
  EXPECT_NEAR(score_gaussian(x, 0.5, m, 1.0)[0], std::sqrt(2.0), 1e-15);
  const Vec at{std::sqrt(0.5) * 0.3}, m3{0.3};
  EXPECT_NEAR(score_gaussian(at, 0.5, m3, 2.0)[0], 0.0, 1e-16);
}

TEST(ScoreMixture, SymmetricPairCancelsAtOrigin) {
  const auto data = PointCloudData::from_points({{0.7, -0.2}, {-0.7, 0.2}});
  const Vec x{0.0, 0.0};
  for (double v : score_mixture_exact(x, 0.3, data))
    EXPECT_NEAR(v, 0.0, 1e-15);
}

// Direct summation of the weighted Gaussian kernels in long double.
TEST(ScoreMixture, MatchesExtendedPrecisionOracle) {
  const auto data = PointCloudData::from_points(
      {{0.1, 0.2}, {0.9, -0.4}, {-0.5, 0.3}, {0.0, 1.0}, {0.6, 0.6}});
  const rng::Stream s(3, rng::Domain::test);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto [u, v] = s.normal_pair(trial, 0, 0);
    const Vec x{u, v};
    const double nu = 0.05 + 0.9 * s.uniform_pair(trial, 1, 0).first;
    const long double a = std::sqrt(1.0L - nu);
    long double z = 0, m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const long double r0 = x[0] - a * data.point(i)[0], r1 = x[1] - a * data.point(i)[1];
      const long double k = std::exp(-(r0 * r0 + r1 * r1) / (2.0L * nu));
      z += k;
      m0 += k * data.point(i)[0];
      m1 += k * data.point(i)[1];
    }
    const long double sd = std::sqrt(static_cast<long double>(nu));
    const long double e0 = (x[0] - a * m0 / z) / sd, e1 = (x[1] - a * m1 / z) / sd;
    const Vec S = score_mixture_exact(x, nu, data);
    EXPECT_NEAR(S[0], static_cast<double>(e0), 1e-10 * std::max(1.0, std::abs(S[0])));
    EXPECT_NEAR(S[1], static_cast<double>(e1), 1e-10 * std::max(1.0, std::abs(S[1])));
  }
}

TEST(PosteriorWeights, HandExamples) {
  const auto one = PointCloudData::from_points({{0.3, 0.3}});
  const Vec x{5.0, -1.0};
  EXPECT_EQ(posterior_weights(x, 0.5, one), Vec{1.0});

  // x = 0 is equidistant from the three scaled points.
  const auto ring = PointCloudData::from_points({{1.0, 0.0}, {-0.5, std::sqrt(0.75)},
                                                 {-0.5, -std::sqrt(0.75)}});
  const Vec origin{0.0, 0.0};
  for (double q : posterior_weights(origin, 0.4, ring))
    EXPECT_NEAR(q, 1.0 / 3, 1e-14);

  // Squared-distance gap about 0.97 at nu = 1e-2: the logits differ by about 48.
  const auto pair = PointCloudData::from_points({{0.0}, {1.0}});
  const Vec near_first{0.01};
  EXPECT_GT(posterior_weights(near_first, 1e-2, pair)[0], 0.999);
}

TEST(ScoreMixture, SinglePointIsDelta) {
  const auto data = PointCloudData::from_points({{0.2, 0.9}});
  const Vec x{1.0, -0.5};
  const Vec a = score_mixture_exact(x, 0.4, data), b = score_delta(x, 0.4, data.point(0));
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(ScoreMixture, MatchesNegativeScaledGradientOfLogDensity) {
  const auto data = PointCloudData::from_points({{0.0, 0.0}, {1.0, 0.5}, {-0.3, 0.8}}, {1, 2, 1});
  const double nu = 0.3, eps = 1e-6;
  const Vec x{0.4, 0.1};
  const Vec S = score_mixture_exact(x, nu, data);
  for (std::size_t j = 0; j < 2; ++j) {
    Vec xp = x, xm = x;
    xp[j] += eps;
    xm[j] -= eps;
    const double grad = (log_density(xp, nu, data) - log_density(xm, nu, data)) / (2 * eps);
    EXPECT_NEAR(S[j], -std::sqrt(nu) * grad, 1e-7);
  }
}

TEST(PosteriorWeights, SumToOneAndSurviveFarPoints) {
  const auto data = PointCloudData::from_points({{0.0}, {1e3}, {-1e3}});
  const Vec x{1e3};
  const Vec q = posterior_weights(x, 1e-4, data);
  double total = 0;
  for (double v : q) {
    EXPECT_TRUE(std::isfinite(v));
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-15);
  EXPECT_NEAR(q[1], 1.0, 1e-12);
}

TEST(PointCloud, RejectsBadInput) {
  EXPECT_THROW(PointCloudData({}, 2), dsl::invalid_argument);
  EXPECT_THROW(PointCloudData({1, 2, 3}, 2), dsl::invalid_argument);
  EXPECT_THROW(PointCloudData({1, 2}, 1, {0, 0}), dsl::invalid_argument);
  EXPECT_THROW(PointCloudData::from_points({{1.0}, {1.0, 2.0}}), dsl::invalid_argument);
}

TEST(PointCloud, WeightsNormalized) {
  const PointCloudData d({0, 1}, 1, {1, 3});
  EXPECT_DOUBLE_EQ(d.weight(0), 0.25);
  EXPECT_DOUBLE_EQ(d.weight(1), 0.75);
}

TEST(ScoreField, WrapsSourcesAndEvaluators) {
  const auto sched = fit_tanh_schedule(1e-4, 0.99, 1.0);
  const ScoreField delta(DeltaScore({0.5}), "delta");
  EXPECT_EQ(delta.dim(), 1u);
  EXPECT_EQ(delta.kind(), "delta");
  const Vec x{0.2};
  EXPECT_NEAR(delta.score(x, 0.5, sched)[0], score_delta(x, 0.5, Vec{0.5}, sched)[0], 1e-15);

  const ScoreField custom(1, "custom", [](std::span<const double> xs, const ScheduleSample &,
                                          std::span<double> out) { out[0] = 2 * xs[0]; });
  EXPECT_DOUBLE_EQ(custom.score(x, 0.5, sched)[0], 0.4);

  const Vec wrong{0.1, 0.2};
  EXPECT_THROW(delta.score(wrong, 0.5, sched), dsl::invalid_argument);
  EXPECT_THROW(ScoreField(0, "empty", [](auto, const auto &, auto) {}), dsl::invalid_argument);
}

TEST(ScoreField, MixtureSourceMatchesFreeFunction) {
  const auto sched = fit_tanh_schedule(1e-4, 0.99, 1.0);
  auto data = std::make_shared<const PointCloudData>(
      PointCloudData::from_points({{0.1, 0.2}, {0.8, 0.6}}));
  const ScoreField field(MixtureScore(data), "mixture");
  const Vec x{0.3, 0.3};
  const Vec a = field.score(x, 0.4, sched), b = score_mixture_exact(x, 0.4, *data, sched);
  EXPECT_EQ(a, b);
}
