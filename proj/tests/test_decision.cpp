#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dosegp/decision.hpp"

using namespace dosegp;

namespace {

OutcomeDistribution outcome_of(double p_lc, double p_rp2, double var_lc = 0.0, double var_rp2 = 0.0) {
  OutcomeDistribution d;
  d.outcomes[0] = {0.0, 0.0, p_lc, var_lc};
  d.outcomes[1] = {0.0, 0.0, p_rp2, var_rp2};
  return d;
}

// Unimodal ground truth with its optimum at 2.8 Gy/fraction.
OutcomeDistribution peaked(double dose) { return outcome_of(1.0 - 0.1 * (dose - 2.8) * (dose - 2.8), 0.0, 1e-3, 1e-3); }

RewardDistribution samples_of(std::vector<double> s) {
  RewardDistribution r;
  r.samples = std::move(s);
  summarize(r);
  return r;
}

Scaling unit_scaling(std::size_t q) {
  Scaling s;
  for (std::size_t k = 0; k < q; ++k) s.variables.push_back({"v" + std::to_string(k), false, 1.0, 0.0, 1.0});
  return s;
}

}  // namespace

TEST(DoseGrid, ValuesAndValidation) {
  EXPECT_EQ(DoseGrid{}.values().size(), 36u);
  EXPECT_EQ((DoseGrid{2.0, 2.0, 0.1}).values(), std::vector<double>{2.0});
  EXPECT_THROW((DoseGrid{0.0, 2.0, 0.1}).validate(), ValidationError);
  EXPECT_THROW((DoseGrid{1.0, 2.0, 0.0}).validate(), ValidationError);
  EXPECT_THROW((DoseGrid{1.0, 2e4, 1.0}).validate(), ValidationError);
}

TEST(OptimizeDose, ConstantModelPicksGridMinimum) {
  const auto opt = optimize_dose([](double) { return outcome_of(0.6, 0.2); }, DoseGrid{});
  EXPECT_EQ(opt.dose, 1.5);
  EXPECT_EQ(opt.index, 0u);
  EXPECT_EQ(opt.curve.size(), 36u);
  const auto single = optimize_dose([](double) { return outcome_of(0.6, 0.2); }, DoseGrid{3.3, 3.3, 0.1});
  EXPECT_EQ(single.dose, 3.3);
}

TEST(OptimizeDose, MatchesExhaustiveGroundTruthOracle) {
  const DoseGrid grid;
  double best_dose = 0.0, best = -INFINITY;
  for (double d : grid.values()) {
    const double p = 1.0 - 0.1 * (d - 2.8) * (d - 2.8);
    const double r = -10.0 * std::pow(std::pow(1.0 - p, 8.0) + std::pow(0.0 / 0.57, 8.0), 1.0 / 8.0) + 3.281;
    if (r > best) {
      best = r;
      best_dose = d;
    }
  }
  const auto opt = optimize_dose(peaked, grid);
  EXPECT_EQ(opt.dose, best_dose);
  EXPECT_NEAR(opt.dose, 2.8, 1e-9);
}

TEST(OptimizeDose, ArgmaxInvariantUnderAffineReward) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const double a = u(rng), b = u(rng), c = 1.5 + 3.5 * u(rng);
    auto model = [&](double d) { return outcome_of(1.0 / (1.0 + std::exp(-4.0 * (d - c))), a * d / 5.0 * b); };
    const auto base = optimize_dose(model, DoseGrid{});
    for (double scale : {0.5, 3.0}) {
      RewardConstants k;
      k.scale *= scale;
      k.offset = k.offset * scale + 7.0;
      EXPECT_EQ(optimize_dose(model, DoseGrid{}, k).index, base.index);
    }
  }
}

TEST(Welch, ClosedFormStatistic) {
  const auto x = samples_of({1.0, 2.0, 4.0, 7.0});
  const auto y = samples_of({0.5, 1.0, 1.5, 2.0, 2.5});
  const double mx = 3.5, my = 1.5;
  const double vx = (6.25 + 2.25 + 0.25 + 12.25) / 3.0 / 4.0;
  const double vy = (1.0 + 0.25 + 0.0 + 0.25 + 1.0) / 4.0 / 5.0;
  const auto r = welch_one_sided(x, y);
  EXPECT_NEAR(r.t, (mx - my) / std::sqrt(vx + vy), 1e-12);
  EXPECT_NEAR(r.df, (vx + vy) * (vx + vy) / (vx * vx / 3.0 + vy * vy / 4.0), 1e-12);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_LT(r.p_value, 0.5);
}

TEST(Welch, SwapGivesComplementaryP) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(40), b(60);
    for (auto& v : a) v = z(rng) + 0.1 * rep / 50.0;
    for (auto& v : b) v = 2.0 * z(rng);
    const auto x = samples_of(a), y = samples_of(b);
    EXPECT_NEAR(welch_one_sided(x, y).p_value + welch_one_sided(y, x).p_value, 1.0, 1e-10);
  }
}

TEST(Welch, ZeroVarianceConvention) {
  const auto same = samples_of({1.0, 1.0, 1.0});
  EXPECT_EQ(welch_one_sided(same, same).p_value, 1.0);
  EXPECT_EQ(welch_one_sided(samples_of({2.0, 2.0}), same).p_value, 0.0);
}

TEST(ComparePrescriptions, IdenticalDoseKeepsPhysician) {
  const DecisionOptions o;
  const double optimum = optimize_dose(peaked, o.grid).dose;
  const auto v = compare_prescriptions(peaked, optimum, 11, o);
  EXPECT_NEAR(v.ai_dose, 2.8, 1e-9);
  EXPECT_EQ(v.ai_reward.samples, v.physician_reward.samples);
  EXPECT_GE(v.p_value, 0.49);
  EXPECT_EQ(v.chosen, Choice::physician);
  EXPECT_EQ(v.sample_count, 1000u);
}

TEST(ComparePrescriptions, ClearlyBetterAiIsChosen) {
  auto model = [](double d) { return d > 4.0 ? outcome_of(0.95, 0.05, 1e-6, 1e-6) : outcome_of(0.3, 0.5, 1e-6, 1e-6); };
  const auto v = compare_prescriptions(model, 2.0, 3, DecisionOptions{});
  EXPECT_GT(v.ai_dose, 4.0);
  EXPECT_GT(v.ai_reward.mean - v.physician_reward.mean, 10.0 * std::max(v.ai_reward.std, v.physician_reward.std));
  EXPECT_LT(v.p_value, 1e-6);
  EXPECT_EQ(v.chosen, Choice::ai);
  EXPECT_THROW(compare_prescriptions(model, 6.0, 3, DecisionOptions{}), ValidationError);
}

TEST(ComparePrescriptions, ChosenIffSignificant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int ai = 0;
  for (int rep = 0; rep < 40; ++rep) {
    const double c = 1.5 + 3.5 * u(rng), var = 0.05 * u(rng);
    auto model = [&](double d) { return outcome_of(1.0 / (1.0 + std::exp(-3.0 * (d - c))), 0.4 * d / 5.0, var, var); };
    DecisionOptions o;
    o.samples = 200;
    const auto v = compare_prescriptions(model, 1.5 + 3.5 * u(rng), static_cast<std::uint64_t>(rep), o);
    EXPECT_EQ(v.chosen == Choice::ai, v.p_value < 0.05);
    ai += v.chosen == Choice::ai ? 1 : 0;
  }
  EXPECT_GT(ai, 0);
  EXPECT_LT(ai, 40);
}

TEST(ComparePrescriptions, ReliabilityFlag) {
  EXPECT_NEAR(interval_width({0.0, 0.0, 0.5, 0.01}), 0.4, 1e-12);
  EXPECT_NEAR(interval_width({0.0, 0.0, 0.95, 0.01}), 0.25, 1e-12);
  EXPECT_FALSE(unreliable(outcome_of(0.5, 0.5, 0.01, 0.01), 0.5));
  EXPECT_TRUE(unreliable(outcome_of(0.5, 0.5, 0.01, 0.02), 0.5));
  auto wide = [](double) { return outcome_of(0.5, 0.2, 0.04, 0.0); };
  EXPECT_TRUE(compare_prescriptions(wide, 2.0, 1, DecisionOptions{}).reliability_flag);
}

TEST(Compensation, RequiresThreeSignificantCases) {
  std::vector<CompensationCase> cases;
  for (int i = 0; i < 10; ++i) cases.push_back({Eigen::Vector2d(0.1 * i, 0.5), 3.0, 2.5, 0.2});
  try {
    fit_compensation(cases, {0, 1}, {"a", "b"}, {});
    FAIL() << "expected InsufficientDataError";
  } catch (const InsufficientDataError& e) {
    EXPECT_STREQ(e.what(), "insufficient AI-superior cases");
  }
}

TEST(Compensation, ConstantShiftAndFilter) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<CompensationCase> cases;
  for (int i = 0; i < 30; ++i) {
    const bool significant = i % 3 != 0;
    cases.push_back({Eigen::Vector3d(u(rng), u(rng), u(rng)), 3.0, significant ? 2.5 : 4.0, significant ? 0.01 : 0.3});
  }
  const auto model = fit_compensation(cases, {0, 2}, {"a", "c"}, {});
  EXPECT_EQ(model.gp.inputs.rows(), 20);
  for (Eigen::Index i = 0; i < model.gp.targets.size(); ++i) EXPECT_EQ(model.gp.targets[i], 0.5);
  for (const auto& c : cases) {
    if (c.p_value < 0.05) {
      EXPECT_NEAR(model.predict(c.state), 0.5, 0.05);
    }
  }
  const auto map = compensation_map(model, "a", "c", 2, unit_scaling(3));
  ASSERT_EQ(map.cells.size(), 4u);
  EXPECT_EQ(map.markers.size(), 20u);
  EXPECT_EQ(map.cells[0].x1, model.gp.inputs.col(0).minCoeff());
  EXPECT_EQ(map.cells[3].x1, model.gp.inputs.col(0).maxCoeff());
  EXPECT_EQ(map.cells[3].x2, model.gp.inputs.col(1).maxCoeff());
  EXPECT_THROW(compensation_map(model, "a", "b", 2, unit_scaling(3)), ValidationError);
  EXPECT_THROW(compensation_map(model, "a", "c", 1, unit_scaling(3)), ValidationError);
}
