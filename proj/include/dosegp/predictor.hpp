#pragma once

// Point predictors for the transition mean: a small MLP with a linear skip
// path, an ordinary ridge-regularised linear map, and a lookup of externally
// computed predictions. Inputs are the joint scaled (state, dose) vector;
// constant-flagged state dims are copied from the input.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dosegp/cohort.hpp"
#include "dosegp/errors.hpp"

namespace dosegp {

// Pooled one-step transitions (s_t, a_t) -> s_{t+1}, t = 1..T-1.
struct TransitionData {
  Eigen::MatrixXd inputs;   // m x (q+1), last column is the scaled dose
  Eigen::MatrixXd targets;  // m x q
  std::vector<std::string> patient_ids;
  std::vector<int> stages;  // source stage, 1-based
};

inline Eigen::VectorXd joint_input(const Eigen::Ref<const Eigen::VectorXd>& state, double scaled_dose) {
  Eigen::VectorXd x(state.size() + 1);
  x.head(state.size()) = state;
  x[state.size()] = scaled_dose;
  return x;
}

inline TransitionData pooled_transitions(const ScaledCohort& cohort) {
  const auto n = static_cast<Eigen::Index>(cohort.size());
  const auto q = static_cast<Eigen::Index>(cohort.dims());
  const Eigen::Index pairs = static_cast<Eigen::Index>(kStages - 1);
  TransitionData data;
  data.inputs.resize(n * pairs, q + 1);
  data.targets.resize(n * pairs, q);
  Eigen::Index row = 0;
  for (std::size_t t = 0; t + 1 < kStages; ++t) {
    for (Eigen::Index i = 0; i < n; ++i, ++row) {
      data.inputs.row(row).head(q) = cohort.states[t].row(i);
      data.inputs(row, q) = cohort.doses[t][i];
      data.targets.row(row) = cohort.states[t + 1].row(i);
      data.patient_ids.push_back(cohort.patient_ids[static_cast<std::size_t>(i)]);
      data.stages.push_back(static_cast<int>(t + 1));
    }
  }
  return data;
}

struct MlpConfig {
  std::size_t hidden = 32;
  std::size_t epochs = 2000;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;
};

enum class PredictorKind { mlp, linear, external };

inline const char* to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::mlp: return "mlp";
    case PredictorKind::linear: return "linear";
    case PredictorKind::external: return "external";
  }
  return "?";
}

inline PredictorKind predictor_kind_from_string(const std::string& s) {
  if (s == "mlp") return PredictorKind::mlp;
  if (s == "linear") return PredictorKind::linear;
  if (s == "external") return PredictorKind::external;
  throw ValidationError("unknown predictor kind '" + s + "'");
}

struct PredictorConfig {
  PredictorKind kind = PredictorKind::mlp;
  MlpConfig mlp;
  double ridge = 1e-6;
  std::string external_path;
  // Bootstrap copies appended to the training rows, inputs jittered by
  // augment_noise. Zero disables augmentation.
  std::size_t augment_copies = 0;
  double augment_noise = 0.01;
};

// out = W2 tanh(W1 x + b1) + b2 + S x, trained by full-batch Adam on the
// mean squared error.
struct MlpPredictor {
  Eigen::MatrixXd w1, w2, skip;
  Eigen::VectorXd b1, b2;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    Eigen::VectorXd h = (w1 * x + b1).array().tanh().matrix();
    return w2 * h + b2 + skip * x;
  }
};

struct LinearPredictor {
  Eigen::MatrixXd coef;  // outputs x inputs
  Eigen::VectorXd intercept;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return coef * x + intercept; }
};

// Predictions keyed by the exact joint input they were supplied for.
struct ExternalPredictor {
  std::map<std::vector<double>, Eigen::VectorXd> table;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    auto it = table.find(std::vector<double>(x.data(), x.data() + x.size()));
    if (it == table.end()) {
      throw ValidationError("external predictions cover only the supplied (patient, stage) inputs");
    }
    return it->second;
  }
};

class PointPredictor {
 public:
  using Impl = std::variant<MlpPredictor, LinearPredictor, ExternalPredictor>;

  PointPredictor() = default;
  PointPredictor(Impl impl, std::vector<std::size_t> outputs, std::size_t state_dims,
                 std::map<std::size_t, double> fixed_outputs = {})
      : impl_(std::move(impl)),
        outputs_(std::move(outputs)),
        state_dims_(state_dims),
        fixed_outputs_(std::move(fixed_outputs)) {}

  PredictorKind kind() const { return static_cast<PredictorKind>(impl_.index()); }
  const Impl& impl() const { return impl_; }
  const std::vector<std::size_t>& outputs() const { return outputs_; }
  std::size_t state_dims() const { return state_dims_; }
  const std::map<std::size_t, double>& fixed_outputs() const { return fixed_outputs_; }

  // Full q-vector prediction of the next state.
  Eigen::VectorXd predict(const Eigen::VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != state_dims_ + 1) throw ValidationError("predictor input has wrong size");
    Eigen::VectorXd raw = std::visit([&](const auto& p) { return p(x); }, impl_);
    Eigen::VectorXd out = x.head(static_cast<Eigen::Index>(state_dims_));
    for (std::size_t o = 0; o < outputs_.size(); ++o) out[static_cast<Eigen::Index>(outputs_[o])] = raw[static_cast<Eigen::Index>(o)];
    for (const auto& [dim, value] : fixed_outputs_) out[static_cast<Eigen::Index>(dim)] = value;
    return out;
  }

  Eigen::MatrixXd predict_rows(const Eigen::MatrixXd& inputs) const {
    Eigen::MatrixXd out(inputs.rows(), static_cast<Eigen::Index>(state_dims_));
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) out.row(i) = predict(inputs.row(i).transpose()).transpose();
    return out;
  }

 private:
  Impl impl_;
  std::vector<std::size_t> outputs_;
  std::size_t state_dims_ = 0;
  std::map<std::size_t, double> fixed_outputs_;
};

namespace detail {

inline MlpPredictor train_mlp(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const MlpConfig& cfg) {
  const auto m = x.rows();
  const auto d = x.cols();
  const auto o = y.cols();
  const auto h = static_cast<Eigen::Index>(cfg.hidden);
  std::mt19937_64 rng(cfg.seed);
  auto uniform_fill = [&](Eigen::MatrixXd& w, double a) {
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  };
  MlpPredictor net;
  net.w1.resize(h, d);
  net.w2.resize(o, h);
  uniform_fill(net.w1, std::sqrt(6.0 / static_cast<double>(d + h)));
  uniform_fill(net.w2, std::sqrt(6.0 / static_cast<double>(h + o)));
  net.skip = Eigen::MatrixXd::Zero(o, d);
  net.b1 = Eigen::VectorXd::Zero(h);
  net.b2 = y.colwise().mean().transpose();

  struct Moments {
    Eigen::MatrixXd m, v;
  };
  auto zeros_like = [](const auto& a) { return Moments{Eigen::MatrixXd::Zero(a.rows(), a.cols()), Eigen::MatrixXd::Zero(a.rows(), a.cols())}; };
  Moments mw1 = zeros_like(net.w1), mw2 = zeros_like(net.w2), ms = zeros_like(net.skip);
  Moments mb1 = zeros_like(Eigen::MatrixXd(net.b1)), mb2 = zeros_like(Eigen::MatrixXd(net.b2));
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  const Eigen::MatrixXd xt = x.transpose();  // d x m
  const Eigen::MatrixXd yt = y.transpose();  // o x m
  const double scale = 2.0 / static_cast<double>(m * o);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Eigen::MatrixXd hidden = ((net.w1 * xt).colwise() + net.b1).array().tanh().matrix();  // h x m
    Eigen::MatrixXd out = ((net.w2 * hidden + net.skip * xt).colwise() + net.b2);
    Eigen::MatrixXd d_out = scale * (out - yt);
    Eigen::MatrixXd g_w2 = d_out * hidden.transpose();
    Eigen::MatrixXd g_b2 = d_out.rowwise().sum();
    Eigen::MatrixXd g_skip = d_out * x;
    Eigen::MatrixXd d_hidden = (net.w2.transpose() * d_out).array() * (1.0 - hidden.array().square());
    Eigen::MatrixXd g_w1 = d_hidden * x;
    Eigen::MatrixXd g_b1 = d_hidden.rowwise().sum();

    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(epoch));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(epoch));
    auto step = [&](auto& param, Moments& mom, const Eigen::MatrixXd& g) {
      mom.m = beta1 * mom.m + (1.0 - beta1) * g;
      mom.v = beta2 * mom.v + (1.0 - beta2) * g.cwiseProduct(g);
      Eigen::MatrixXd upd = (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + eps);
      param -= cfg.learning_rate * upd;
    };
    step(net.w1, mw1, g_w1);
    step(net.w2, mw2, g_w2);
    step(net.skip, ms, g_skip);
    step(net.b1, mb1, g_b1);
    step(net.b2, mb2, g_b2);
  }
  return net;
}

inline LinearPredictor train_linear(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double ridge) {
  const auto m = x.rows();
  const auto d = x.cols();
  Eigen::MatrixXd design(m, d + 1);
  design.leftCols(d) = x;
  design.col(d).setOnes();
  Eigen::MatrixXd gram = design.transpose() * design;
  gram.diagonal().head(d).array() += ridge * static_cast<double>(m);
  Eigen::MatrixXd beta = gram.ldlt().solve(design.transpose() * y);  // (d+1) x o
  LinearPredictor lin;
  lin.coef = beta.topRows(d).transpose();
  lin.intercept = beta.row(d).transpose();
  return lin;
}

}  // namespace detail

// External predictions file: patient_id, stage, then one column per
// non-constant variable in original units. A row for stage t holds the
// prediction made from (s_t, a_t).
inline ExternalPredictor load_external_predictions(std::string_view text, const std::vector<PatientRecord>& records,
                                                   const VariableSchema& schema, const Scaling& scaling) {
  auto table = csv::parse(text);
  const auto active = schema.active_dims();
  std::vector<std::string> expected{"patient_id", "stage"};
  for (auto k : active) expected.push_back(csv::lower(schema.names[k]));
  detail::check_header(table, expected, "external predictions file");
  std::map<std::string, const PatientRecord*> by_id;
  for (const auto& r : records) by_id[r.patient_id] = &r;

  ExternalPredictor ext;
  for (const auto& row : table.rows) {
    const auto& id = row.cells[table.column("patient_id")];
    auto it = by_id.find(id);
    if (it == by_id.end()) continue;  // predictions for patients outside this cohort are ignored
    double stage = csv::parse_number(row.cells[table.column("stage")], row.line, "stage");
    if (stage != 1.0 && stage != 2.0 && stage != 3.0) throw ParseError("stage must be 1, 2 or 3", row.line, "stage");
    const auto t = static_cast<std::size_t>(stage) - 1;
    Eigen::VectorXd x = joint_input(scaling.scale_state(it->second->states[t]), scaling.scale_dose(it->second->doses[t]));
    Eigen::VectorXd pred(static_cast<Eigen::Index>(active.size()));
    for (std::size_t o = 0; o < active.size(); ++o) {
      const auto& name = schema.names[active[o]];
      double v = csv::parse_number(row.cells[table.column(csv::lower(name))], row.line, name);
      pred[static_cast<Eigen::Index>(o)] = scaling.scale(active[o], v);
    }
    ext.table[std::vector<double>(x.data(), x.data() + x.size())] = pred;
  }
  return ext;
}

// Trains on the active (non-constant) output dims of the transition data.
// External predictors are built separately and wrapped with
// make_external_predictor.
inline PointPredictor fit_point_predictor(const TransitionData& data, const std::vector<bool>& constant_flags,
                                          const PredictorConfig& config) {
  if (data.inputs.rows() < 2) throw InsufficientDataError("point predictor needs at least 2 transitions");
  const std::size_t q = constant_flags.size();
  std::vector<std::size_t> outputs;
  for (std::size_t k = 0; k < q; ++k) {
    if (!constant_flags[k]) outputs.push_back(k);
  }
  Eigen::MatrixXd x = data.inputs;
  Eigen::MatrixXd y(data.targets.rows(), static_cast<Eigen::Index>(outputs.size()));
  for (std::size_t o = 0; o < outputs.size(); ++o) y.col(static_cast<Eigen::Index>(o)) = data.targets.col(static_cast<Eigen::Index>(outputs[o]));

  std::map<std::size_t, double> fixed;
  for (std::size_t o = 0; o < outputs.size(); ++o) {
    const auto col = y.col(static_cast<Eigen::Index>(o));
    if (col.maxCoeff() == col.minCoeff()) {
      std::clog << "warning: transition targets for dim " << outputs[o] << " are all identical; using a constant predictor\n";
      fixed[outputs[o]] = col[0];
    }
  }

  if (config.augment_copies > 0) {
    const auto m = x.rows();
    Eigen::MatrixXd ax(m * static_cast<Eigen::Index>(config.augment_copies + 1), x.cols());
    Eigen::MatrixXd ay(ax.rows(), y.cols());
    ax.topRows(m) = x;
    ay.topRows(m) = y;
    std::mt19937_64 rng(config.mlp.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<Eigen::Index> pick(0, m - 1);
    std::normal_distribution<double> noise(0.0, config.augment_noise);
    for (Eigen::Index r = m; r < ax.rows(); ++r) {
      const auto src = pick(rng);
      ax.row(r) = x.row(src);
      for (Eigen::Index c = 0; c < ax.cols(); ++c) ax(r, c) += noise(rng);
      ay.row(r) = y.row(src);
    }
    x = std::move(ax);
    y = std::move(ay);
  }

  switch (config.kind) {
    case PredictorKind::mlp:
      return PointPredictor(detail::train_mlp(x, y, config.mlp), outputs, q, fixed);
    case PredictorKind::linear:
      return PointPredictor(detail::train_linear(x, y, config.ridge), outputs, q, fixed);
    case PredictorKind::external:
      throw ValidationError("external predictions are loaded, not trained");
  }
  throw ValidationError("unknown predictor kind");
}

inline PointPredictor make_external_predictor(ExternalPredictor ext, const std::vector<bool>& constant_flags) {
  std::vector<std::size_t> outputs;
  for (std::size_t k = 0; k < constant_flags.size(); ++k) {
    if (!constant_flags[k]) outputs.push_back(k);
  }
  return PointPredictor(std::move(ext), outputs, constant_flags.size());
}

}  // namespace dosegp
