#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dosegp/propagation.hpp"

using namespace dosegp;

namespace {

OutcomeClassifier toy_classifier(Eigen::Index dims, std::uint64_t seed, double precision = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(12, dims);
  for (auto& v : x.reshaped()) v = u(rng);
  Eigen::VectorXi y(12);
  for (Eigen::Index i = 0; i < 12; ++i) y[i] = x(i, 0) + 0.3 * u(rng) > 0.6 ? 1 : 0;
  Eigen::VectorXd rates = Eigen::VectorXd::LinSpaced(dims, 1.0, 4.0);
  return OutcomeClassifier::fit(x, y, {rates, precision}, 1e-8);
}

}  // namespace

TEST(EivKernel, Examples) {
  const Eigen::VectorXd s = Eigen::VectorXd::Constant(1, 0.3);
  EXPECT_DOUBLE_EQ(eiv_kernel(s, s, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Constant(1, 0.25)), 0.5);
  EXPECT_THROW(eiv_kernel(s, s, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Constant(1, -1.0)), ValidationError);
  EXPECT_THROW(eiv_kernel(s, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1)),
               ValidationError);
}

TEST(EivKernel, ZeroVarianceIsSeKernelExactly) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0), r(0.01, 100.0);
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd a(5), b(5), rates(5);
    for (Eigen::Index k = 0; k < 5; ++k) {
      a[k] = u(rng);
      b[k] = u(rng);
      rates[k] = r(rng);
    }
    for (auto v : {EivVariant::verbatim, EivVariant::standard}) {
      EXPECT_EQ(eiv_kernel(a, b, rates, Eigen::VectorXd::Zero(5), v), se_kernel(a, b, rates));
    }
  }
}

TEST(EivKernel, AttenuatedAtZeroDistance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0), r(0.01, 100.0);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd a(3), rates(3), var(3);
    for (Eigen::Index k = 0; k < 3; ++k) {
      a[k] = u(rng);
      rates[k] = r(rng);
      var[k] = 0.1 * u(rng);
    }
    for (auto v : {EivVariant::verbatim, EivVariant::standard}) {
      EXPECT_LE(eiv_kernel(a, a, rates, var, v), se_kernel(a, a, rates));
    }
  }
}

TEST(Propagate, ZeroVarianceCollapsesToPredictLogit) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto c = toy_classifier(3, seed);
    std::mt19937_64 rng(seed + 10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
      StatePrediction sp{Eigen::Vector3d(u(rng), u(rng), u(rng)), Eigen::VectorXd::Zero(3)};
      for (bool wc : {false, true}) {
        const auto a = propagate_logit(c, sp, {EivVariant::verbatim, wc});
        const auto b = c.predict(sp.mean, wc);
        EXPECT_NEAR(a.mean, b.mean, 1e-10);
        EXPECT_NEAR(a.variance, b.variance, 1e-10);
      }
    }
  }
}

TEST(Propagate, MatchesDenseOracleIn1D) {
  Eigen::MatrixXd x(6, 1);
  x << 0.0, 0.2, 0.4, 0.6, 0.8, 1.0;
  Eigen::VectorXi y(6);
  y << 0, 0, 1, 0, 1, 1;
  const auto c = OutcomeClassifier::fit(x, y, {Eigen::VectorXd::Constant(1, 8.0), 2.0}, 1e-8);
  const Eigen::MatrixXd kinv = c.gram_matrix.entries().inverse();
  const double beta = c.kernel.rates[0];
  const double lam = c.kernel.precision;
  for (double mu : {0.1, 0.45, 0.8}) {
    for (double var : {0.0, 0.01, 0.2}) {
      Eigen::VectorXd k(c.inputs.rows());
      for (Eigen::Index i = 0; i < k.size(); ++i) {
        const double d = mu - c.inputs(i, 0);
        k[i] = var == 0.0 ? std::exp(-beta * d * d) : std::exp(-d * d / (1.0 / beta + 4.0 * var)) / (1.0 + 4.0 * beta * var);
      }
      const double prior = 1.0 / (1.0 + 4.0 * beta * var);
      const double mean = k.dot(kinv * c.laplace.mode);
      const double variance = std::clamp((prior - k.dot(kinv * k)) / lam, 0.0, prior / lam);
      const auto p = propagate_logit(c, {Eigen::VectorXd::Constant(1, mu), Eigen::VectorXd::Constant(1, var)});
      EXPECT_NEAR(p.mean, mean, 1e-10);
      EXPECT_NEAR(p.variance, variance, 1e-10);
    }
  }
}

TEST(Propagate, InflatedVarianceShrinksLogit) {
  const auto c = toy_classifier(2, 3);
  const Eigen::Vector2d mu(0.9, 0.5);
  const double sharp = std::abs(propagate_logit(c, {mu, Eigen::Vector2d::Zero()}).mean);
  const double blurred = std::abs(propagate_logit(c, {mu, Eigen::Vector2d::Constant(5.0)}).mean);
  EXPECT_GT(sharp, 0.0);
  EXPECT_LT(blurred, sharp);
}

TEST(DeltaMethod, Examples) {
  const auto a = delta_method(0.0, 0.0);
  EXPECT_EQ(a.mean, 0.5);
  EXPECT_EQ(a.variance, 0.0);
  EXPECT_NEAR(delta_method(0.0, 0.16).variance, 0.01, 1e-15);
  const auto sat = delta_method(60.0, 1.0);
  EXPECT_NEAR(sat.mean, 1.0, 1e-15);
  EXPECT_LT(sat.variance, 1e-40);
  EXPECT_THROW(delta_method(0.0, -1.0), ValidationError);
}

TEST(DeltaMethod, VarianceBoundedBySigmaOver16) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> m(-8.0, 8.0), v(0.0, 4.0);
  for (int i = 0; i < 1000; ++i) {
    const double mu = m(rng), sigma = v(rng);
    const auto p = delta_method(mu, sigma);
    EXPECT_GT(p.mean, 0.0);
    EXPECT_LT(p.mean, 1.0);
    EXPECT_LE(p.variance, sigma / 16.0 + 1e-12);
  }
}

TEST(Reward, Anchors) {
  EXPECT_EQ(reward(1.0, 0.0), 3.281);
  EXPECT_NEAR(reward(0.0, 0.0), -6.719, 1e-12);
  EXPECT_NEAR(reward(0.0, 0.57), -10.0 * std::pow(2.0, 1.0 / 8.0) + 3.281, 1e-9);
  EXPECT_NEAR(reward(0.0, 0.57), -7.6243, 5e-4);  // exact value -7.62408
  EXPECT_THROW(reward(1.1, 0.0), ValidationError);
  EXPECT_THROW(reward(0.5, -0.1), ValidationError);
}

TEST(Reward, MonotoneOnLatticeWithUniqueSupremum) {
  int violations = 0;
  int at_supremum = 0;
  for (int i = 0; i <= 100; ++i) {
    for (int j = 0; j <= 100; ++j) {
      const double lc = i / 100.0, rp = j / 100.0;
      const double r = reward(lc, rp);
      if (i < 100 && reward((i + 1) / 100.0, rp) < r) ++violations;
      if (j < 100 && reward(lc, (j + 1) / 100.0) > r) ++violations;
      EXPECT_LE(r, 3.281);
      if (r == 3.281) ++at_supremum;
    }
  }
  EXPECT_EQ(violations, 0);
  EXPECT_EQ(at_supremum, 1);
}

TEST(SampleReward, DegenerateDeterministicAndBounded) {
  OutcomeDistribution d;
  d.outcomes[0].prob_mean = 0.7;
  d.outcomes[1].prob_mean = 0.2;
  const auto flat = sample_reward(d, 50, 3);
  for (double s : flat.samples) EXPECT_EQ(s, reward(0.7, 0.2));
  EXPECT_EQ(flat.std, 0.0);

  d.outcomes[0].prob_variance = 0.09;
  d.outcomes[1].prob_variance = 0.25;
  const auto a = sample_reward(d, 1000, 9);
  EXPECT_EQ(a.samples, sample_reward(d, 1000, 9).samples);
  EXPECT_NE(a.samples, sample_reward(d, 1000, 10).samples);
  const double floor = reward(0.0, 1.0);
  for (double s : a.samples) {
    EXPECT_LE(s, 3.281);
    EXPECT_GE(s, floor);
  }
  double m = 0.0;
  for (double s : a.samples) m += s;
  EXPECT_NEAR(a.mean, m / 1000.0, 1e-12);
}

TEST(SampleReward, SmallVarianceAgreesWithPluginReward) {
  OutcomeDistribution d;
  d.outcomes[0] = {0.0, 0.0, 0.6, 1e-4};
  d.outcomes[1] = {0.0, 0.0, 0.3, 1e-4};
  const auto r = sample_reward(d, 4000, 5);
  EXPECT_NEAR(r.mean, plugin_reward(d), 3.0 * r.std / std::sqrt(4000.0));
}
