#pragma once

// Dose optimisation over a grid, physician-vs-AI adjudication by a one-sided
// Welch test on Monte-Carlo rewards, and the dose-compensation GP.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "dosegp/cohort.hpp"
#include "dosegp/errors.hpp"
#include "dosegp/gp.hpp"
#include "dosegp/propagation.hpp"

namespace dosegp {

struct DoseGrid {
  double min = 1.5;
  double max = 5.0;
  double step = 0.1;

  void validate() const {
    if (!(min > 0.0)) throw ValidationError("dose grid minimum must be positive");
    if (!(step > 0.0)) throw ValidationError("dose grid step must be positive");
    if (!(max >= min)) throw ValidationError("dose grid maximum is below its minimum");
    if ((max - min) / step > 1e4) throw ValidationError("dose grid has more than 10^4 steps");
  }

  std::vector<double> values() const {
    validate();
    const auto steps = static_cast<std::size_t>(std::floor((max - min) / step + 1e-9));
    std::vector<double> v;
    for (std::size_t i = 0; i <= steps; ++i) v.push_back(min + static_cast<double>(i) * step);
    return v;
  }

  bool contains(double dose) const { return dose >= min - 1e-12 && dose <= max + 1e-12; }
};

struct DosePoint {
  double dose = 0.0;
  OutcomeDistribution outcome;
  double reward = 0.0;  // plug-in reward at the probability means
};

struct DoseOptimum {
  double dose = 0.0;
  std::size_t index = 0;
  std::vector<DosePoint> curve;
};

// Argmax of the plug-in reward; the first (lowest) dose wins ties.
template <class OutcomeAt>
DoseOptimum optimize_dose(OutcomeAt&& outcome_at, const DoseGrid& grid, const RewardConstants& constants = {}) {
  DoseOptimum best;
  double best_reward = -std::numeric_limits<double>::infinity();
  for (double dose : grid.values()) {
    DosePoint p{dose, outcome_at(dose), 0.0};
    p.reward = plugin_reward(p.outcome, constants);
    if (best.curve.empty() || p.reward > best_reward) {
      best_reward = p.reward;
      best.dose = dose;
      best.index = best.curve.size();
    }
    best.curve.push_back(std::move(p));
  }
  return best;
}

inline DoseOptimum optimize_dose(const TrainedModels& models, const Eigen::VectorXd& scaled_state, const DoseGrid& grid,
                                 const RewardConstants& constants = {}) {
  return optimize_dose([&](double dose) { return models.outcome(scaled_state, dose); }, grid, constants);
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

// H0: mean(x) <= mean(y) against mean(x) > mean(y).
inline WelchResult welch_one_sided(const RewardDistribution& x, const RewardDistribution& y) {
  const double nx = static_cast<double>(x.samples.size());
  const double ny = static_cast<double>(y.samples.size());
  if (nx < 2 || ny < 2) throw ValidationError("Welch test needs at least 2 samples per group");
  const double vx = x.std * x.std / nx;
  const double vy = y.std * y.std / ny;
  WelchResult r;
  if (vx + vy == 0.0) {
    r.t = x.mean > y.mean ? std::numeric_limits<double>::infinity() : 0.0;
    r.p_value = x.mean > y.mean ? 0.0 : 1.0;
    return r;
  }
  r.t = (x.mean - y.mean) / std::sqrt(vx + vy);
  r.df = (vx + vy) * (vx + vy) /
         ((vx > 0.0 ? vx * vx / (nx - 1.0) : 0.0) + (vy > 0.0 ? vy * vy / (ny - 1.0) : 0.0));
  boost::math::students_t dist(r.df);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

enum class Choice { ai, physician };

inline const char* to_string(Choice c) { return c == Choice::ai ? "AI" : "PHYSICIAN"; }

struct DecisionOptions {
  DoseGrid grid;
  std::size_t samples = 1000;
  double alpha = 0.05;
  double reliability_width = 0.5;
  RewardConstants reward;
};

struct DecisionVerdict {
  double ai_dose = 0.0;
  double physician_dose = 0.0;
  RewardDistribution ai_reward;
  RewardDistribution physician_reward;
  WelchResult test;
  double p_value = 1.0;
  Choice chosen = Choice::physician;
  bool reliability_flag = false;
  std::size_t sample_count = 0;
  OutcomeDistribution ai_outcome;
  OutcomeDistribution physician_outcome;
};

// Width of the +-2 sd probability interval after clipping to [0, 1].
inline double interval_width(const OutcomeMoments& m) {
  const double sd = m.prob_sd();
  return std::min(1.0, m.prob_mean + 2.0 * sd) - std::max(0.0, m.prob_mean - 2.0 * sd);
}

inline bool unreliable(const OutcomeDistribution& d, double width) {
  for (const auto& m : d.outcomes) {
    if (interval_width(m) > width) return true;
  }
  return false;
}

// Both reward samples share the seed.
template <class OutcomeAt>
DecisionVerdict compare_prescriptions(OutcomeAt&& outcome_at, double physician_dose, std::uint64_t seed,
                                      const DecisionOptions& options) {
  if (!options.grid.contains(physician_dose)) {
    throw ValidationError("physician dose " + std::to_string(physician_dose) + " is outside the dose grid [" +
                          std::to_string(options.grid.min) + ", " + std::to_string(options.grid.max) + "]");
  }
  const DoseOptimum opt = optimize_dose(outcome_at, options.grid, options.reward);
  DecisionVerdict v;
  v.ai_dose = opt.dose;
  v.physician_dose = physician_dose;
  v.ai_outcome = opt.curve[opt.index].outcome;
  v.physician_outcome = outcome_at(physician_dose);
  v.ai_reward = sample_reward(v.ai_outcome, options.samples, seed, options.reward);
  v.physician_reward = sample_reward(v.physician_outcome, options.samples, seed, options.reward);
  v.test = welch_one_sided(v.ai_reward, v.physician_reward);
  v.p_value = v.test.p_value;
  v.chosen = v.p_value < options.alpha ? Choice::ai : Choice::physician;
  v.reliability_flag = unreliable(v.ai_outcome, options.reliability_width);
  v.sample_count = options.samples;
  return v;
}

inline DecisionVerdict compare_prescriptions(const TrainedModels& models, const Eigen::VectorXd& scaled_state,
                                             double physician_dose, std::uint64_t seed,
                                             const DecisionOptions& options) {
  return compare_prescriptions([&](double dose) { return models.outcome(scaled_state, dose); }, physician_dose, seed,
                               options);
}

// ---------------------------------------------------------------------------
// Dose compensation

struct CompensationCase {
  Eigen::VectorXd state;  // scaled, all q variables
  double ai_dose = 0.0;
  double physician_dose = 0.0;
  double p_value = 1.0;
};

struct CompensationModel {
  std::vector<std::size_t> variables;  // indices into the state
  std::vector<std::string> names;
  GpRegression gp;  // scaled inputs, targets in Gy/fraction

  double predict(const Eigen::VectorXd& scaled_state) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(variables.size()));
    for (std::size_t i = 0; i < variables.size(); ++i) {
      x[static_cast<Eigen::Index>(i)] = scaled_state[static_cast<Eigen::Index>(variables[i])];
    }
    return gp.mean(x);
  }
};

inline CompensationModel fit_compensation(const std::vector<CompensationCase>& cases,
                                          const std::vector<std::size_t>& variables,
                                          const std::vector<std::string>& names, const HyperparameterSearch& search,
                                          double jitter = 1e-4, double alpha = 0.05) {
  if (variables.empty()) throw ValidationError("compensation needs at least one variable");
  std::vector<const CompensationCase*> kept;
  for (const auto& c : cases) {
    if (c.p_value < alpha) kept.push_back(&c);
  }
  if (kept.size() < 3) throw InsufficientDataError("insufficient AI-superior cases");
  const auto m = static_cast<Eigen::Index>(kept.size());
  const auto d = static_cast<Eigen::Index>(variables.size());
  Eigen::MatrixXd x(m, d);
  Eigen::VectorXd delta(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& c = *kept[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < d; ++k) x(i, k) = c.state[static_cast<Eigen::Index>(variables[static_cast<std::size_t>(k)])];
    delta[i] = c.ai_dose - c.physician_dose;
  }
  GridFit fit = fit_hyperparams(x, delta, search, jitter);
  CompensationModel model;
  model.variables = variables;
  model.names = names;
  model.gp = GpRegression::fit(std::move(x), std::move(delta), fit.params, jitter);
  return model;
}

struct MapCell {
  double x1 = 0.0;  // original units
  double x2 = 0.0;
  double delta = 0.0;  // Gy/fraction
};

struct CompensationMap {
  std::string var1, var2;
  std::size_t resolution = 0;
  std::vector<MapCell> cells;    // row-major, var1 varies fastest
  std::vector<MapCell> markers;  // training points with their observed delta
};

// Lattice over the observed training range of two model variables; any other
// model variables are held at their training mean.
inline CompensationMap compensation_map(const CompensationModel& model, const std::string& var1, const std::string& var2,
                                        std::size_t resolution, const Scaling& scaling) {
  if (resolution < 2) throw ValidationError("map resolution must be at least 2");
  auto position = [&](const std::string& name) {
    const auto key = csv::lower(name);
    for (std::size_t i = 0; i < model.names.size(); ++i) {
      if (csv::lower(model.names[i]) == key) return i;
    }
    throw ValidationError("variable '" + name + "' is not part of the compensation model");
  };
  const std::size_t i1 = position(var1);
  const std::size_t i2 = position(var2);
  if (i1 == i2) throw ValidationError("map variables must differ");
  const Eigen::MatrixXd& x = model.gp.inputs;
  const auto c1 = static_cast<Eigen::Index>(i1);
  const auto c2 = static_cast<Eigen::Index>(i2);
  const double lo1 = x.col(c1).minCoeff(), hi1 = x.col(c1).maxCoeff();
  const double lo2 = x.col(c2).minCoeff(), hi2 = x.col(c2).maxCoeff();
  const Eigen::VectorXd centre = x.colwise().mean().transpose();

  CompensationMap map;
  map.var1 = model.names[i1];
  map.var2 = model.names[i2];
  map.resolution = resolution;
  const double r = static_cast<double>(resolution - 1);
  for (std::size_t b = 0; b < resolution; ++b) {
    for (std::size_t a = 0; a < resolution; ++a) {
      Eigen::VectorXd q = centre;
      q[c1] = lo1 + (hi1 - lo1) * static_cast<double>(a) / r;
      q[c2] = lo2 + (hi2 - lo2) * static_cast<double>(b) / r;
      map.cells.push_back({scaling.inverse(model.variables[i1], q[c1]), scaling.inverse(model.variables[i2], q[c2]),
                           model.gp.mean(q)});
    }
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    map.markers.push_back({scaling.inverse(model.variables[i1], x(i, c1)), scaling.inverse(model.variables[i2], x(i, c2)),
                           model.gp.targets[i]});
  }
  return map;
}

}  // namespace dosegp
