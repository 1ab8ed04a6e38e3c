#pragma once

// Transition f = eta + delta: point predictor plus one GP bias per
// non-constant state dim over joint (state, dose) inputs.

#include <functional>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dosegp/cohort.hpp"
#include "dosegp/errors.hpp"
#include "dosegp/gp.hpp"
#include "dosegp/predictor.hpp"

namespace dosegp {

struct StatePrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

struct DimensionBias {
  std::size_t dim = 0;
  GpRegression gp;  // targets are the residuals observed - eta
};

struct TransitionModel {
  PointPredictor predictor;
  std::vector<DimensionBias> per_dim;
  std::vector<std::size_t> constant_dims;
  std::size_t state_dims = 0;

  const DimensionBias* bias_for(std::size_t dim) const {
    for (const auto& b : per_dim) {
      if (b.dim == dim) return &b;
    }
    return nullptr;
  }
};

struct TransitionOptions {
  HyperparameterSearch search;
  double jitter = 1e-8;
  bool parallel = true;
};

inline std::vector<bool> constant_flags_of(const Scaling& scaling) {
  std::vector<bool> flags;
  for (const auto& v : scaling.variables) flags.push_back(v.constant);
  return flags;
}

inline TransitionModel fit_transition(const TransitionData& data, PointPredictor predictor,
                                      const std::vector<bool>& constant_flags, const TransitionOptions& options) {
  if (data.inputs.rows() < 3) throw InsufficientDataError("transition calibration needs at least 3 pooled transitions");
  TransitionModel model;
  model.state_dims = constant_flags.size();
  const Eigen::MatrixXd eta = predictor.predict_rows(data.inputs);
  model.predictor = std::move(predictor);

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < constant_flags.size(); ++k) {
    (constant_flags[k] ? model.constant_dims : active).push_back(k);
  }

  auto fit_dim = [&](std::size_t dim) {
    const auto j = static_cast<Eigen::Index>(dim);
    Eigen::VectorXd residuals = data.targets.col(j) - eta.col(j);
    GridFit fit = fit_hyperparams(data.inputs, residuals, options.search, options.jitter);
    return DimensionBias{dim, GpRegression::fit(data.inputs, residuals, fit.params, options.jitter)};
  };

  if (options.parallel) {
    std::vector<std::future<DimensionBias>> jobs;
    for (auto dim : active) jobs.push_back(std::async(std::launch::async, fit_dim, dim));
    for (auto& j : jobs) model.per_dim.push_back(j.get());
  } else {
    for (auto dim : active) model.per_dim.push_back(fit_dim(dim));
  }
  return model;
}

inline TransitionModel fit_transition(const ScaledCohort& cohort, PointPredictor predictor,
                                      const TransitionOptions& options) {
  return fit_transition(pooled_transitions(cohort), std::move(predictor), constant_flags_of(cohort.scaling), options);
}

inline StatePrediction predict_next_state(const TransitionModel& model, const Eigen::VectorXd& state, double scaled_dose) {
  if (static_cast<std::size_t>(state.size()) != model.state_dims) {
    throw ValidationError("state has " + std::to_string(state.size()) + " values, expected " +
                          std::to_string(model.state_dims));
  }
  auto in_range = [](double v) { return v >= -0.1 && v <= 1.1; };
  for (const auto& b : model.per_dim) {
    if (!in_range(state[static_cast<Eigen::Index>(b.dim)])) {
      throw ValidationError("state value " + std::to_string(state[static_cast<Eigen::Index>(b.dim)]) + " in dim " +
                            std::to_string(b.dim) + " is outside [-0.1, 1.1]; inputs must be scaled");
    }
  }
  if (!in_range(scaled_dose)) throw ValidationError("dose is outside [-0.1, 1.1]; inputs must be scaled");

  const Eigen::VectorXd x = joint_input(state, scaled_dose);
  StatePrediction out;
  out.mean = model.predictor.predict(x);
  out.variance = Eigen::VectorXd::Zero(state.size());
  for (auto k : model.constant_dims) out.mean[static_cast<Eigen::Index>(k)] = state[static_cast<Eigen::Index>(k)];
  for (const auto& b : model.per_dim) {
    const auto j = static_cast<Eigen::Index>(b.dim);
    out.mean[j] += b.gp.mean(x);
    out.variance[j] = b.gp.variance(x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validated transition error

struct RelativeImprovement {
  std::optional<double> verbatim;  // sum |mu - eta|^2 / sum |eta - s|^2
  std::optional<double> standard;  // (dnn_mse - gp_mse) / dnn_mse
};

inline RelativeImprovement relative_improvement(const Eigen::VectorXd& dnn_preds, const Eigen::VectorXd& gp_means,
                                                const Eigen::VectorXd& truths) {
  if (dnn_preds.size() != gp_means.size() || dnn_preds.size() != truths.size()) {
    throw ValidationError("relative improvement inputs differ in length");
  }
  RelativeImprovement ri;
  const double dnn_sq = (dnn_preds - truths).squaredNorm();
  const double gp_sq = (gp_means - truths).squaredNorm();
  const double shift_sq = (gp_means - dnn_preds).squaredNorm();
  if (dnn_sq > 0.0) {
    ri.verbatim = shift_sq / dnn_sq;
    ri.standard = (dnn_sq - gp_sq) / dnn_sq;
  }
  return ri;
}

struct CvMseRow {
  std::size_t dim = 0;
  std::string variable;
  double dnn_mse = 0.0;
  double gp_mse = 0.0;
  RelativeImprovement ri;
};

// Held-out predictions for every pooled transition of the cohort.
struct HeldOutTransitions {
  Eigen::MatrixXd eta;      // rows aligned with pooled_transitions(cohort)
  Eigen::MatrixXd mean;
  Eigen::MatrixXd variance;
  Eigen::MatrixXd truth;
};

using PredictorFactory = std::function<PointPredictor(const TransitionData&, const std::vector<bool>&)>;

inline HeldOutTransitions held_out_transitions(const ScaledCohort& cohort, const PredictorFactory& make_predictor,
                                               const TransitionOptions& options,
                                               const std::vector<std::vector<std::size_t>>& folds) {
  const std::size_t n = cohort.size();
  const auto q = static_cast<Eigen::Index>(cohort.dims());
  const auto flags = constant_flags_of(cohort.scaling);
  const TransitionData all = pooled_transitions(cohort);
  HeldOutTransitions out;
  out.eta.resize(all.targets.rows(), q);
  out.mean.resize(all.targets.rows(), q);
  out.variance.resize(all.targets.rows(), q);
  out.truth = all.targets;
  const auto nn = static_cast<Eigen::Index>(n);
  for (const auto& fold : folds) {
    const ScaledCohort train = cohort.subset(complement(fold, n));
    const TransitionData train_data = pooled_transitions(train);
    TransitionModel model = fit_transition(train_data, make_predictor(train_data, flags), flags, options);
    for (auto i : fold) {
      for (Eigen::Index t = 0; t + 1 < static_cast<Eigen::Index>(kStages); ++t) {
        const Eigen::Index row = t * nn + static_cast<Eigen::Index>(i);
        const Eigen::VectorXd x = all.inputs.row(row).transpose();
        auto pred = predict_next_state(model, x.head(q), x[q]);
        out.eta.row(row) = model.predictor.predict(x).transpose();
        out.mean.row(row) = pred.mean.transpose();
        out.variance.row(row) = pred.variance.transpose();
      }
    }
  }
  return out;
}

// Per non-constant dim: held-out MSE of eta alone and of the calibrated mean,
// pooled over both predicted stages.
inline std::vector<CvMseRow> cv_mse_table(const HeldOutTransitions& held, const Scaling& scaling) {
  std::vector<CvMseRow> rows;
  const double m = static_cast<double>(held.truth.rows());
  for (std::size_t k = 0; k < scaling.size(); ++k) {
    if (scaling.variables[k].constant) continue;
    const auto j = static_cast<Eigen::Index>(k);
    CvMseRow row;
    row.dim = k;
    row.variable = scaling.variables[k].name;
    row.dnn_mse = (held.eta.col(j) - held.truth.col(j)).squaredNorm() / m;
    row.gp_mse = (held.mean.col(j) - held.truth.col(j)).squaredNorm() / m;
    row.ri = relative_improvement(held.eta.col(j), held.mean.col(j), held.truth.col(j));
    rows.push_back(row);
  }
  return rows;
}

inline std::vector<CvMseRow> cv_mse(const ScaledCohort& cohort, const PredictorFactory& make_predictor,
                                    const TransitionOptions& options,
                                    const std::vector<std::vector<std::size_t>>& folds) {
  return cv_mse_table(held_out_transitions(cohort, make_predictor, options, folds), cohort.scaling);
}

inline PredictorFactory trained_predictor_factory(const PredictorConfig& config) {
  return [config](const TransitionData& data, const std::vector<bool>& flags) {
    return fit_point_predictor(data, flags, config);
  };
}

}  // namespace dosegp
