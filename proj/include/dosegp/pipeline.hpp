#pragma once

// End-to-end training, cross-validated evaluation and cohort decisions.

#include <algorithm>
#include <array>
#include <cstdint>
#include <future>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "dosegp/cohort.hpp"
#include "dosegp/config.hpp"
#include "dosegp/decision.hpp"
#include "dosegp/outcome.hpp"
#include "dosegp/predictor.hpp"
#include "dosegp/propagation.hpp"
#include "dosegp/transition.hpp"

namespace dosegp {

struct TrainedPipeline {
  VariableSchema schema;
  TrainedModels models;
  std::optional<CompensationModel> compensation;
  RunConfig config;

  const Scaling& scaling() const { return models.scaling; }
};

// Transition-predicted final states S-hat_{T+1} from (s_T, a_T).
inline Eigen::MatrixXd predicted_final_states(const TransitionModel& model, const ScaledCohort& cohort) {
  const std::size_t last = kStages - 1;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(cohort.size()), static_cast<Eigen::Index>(cohort.dims()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) = predict_next_state(model, cohort.states[last].row(i).transpose(), cohort.doses[last][i]).mean.transpose();
  }
  return out;
}

inline Eigen::MatrixXd point_final_states(const PointPredictor& predictor, const ScaledCohort& cohort) {
  const std::size_t last = kStages - 1;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(cohort.size()), static_cast<Eigen::Index>(cohort.dims()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) = predictor.predict(joint_input(cohort.states[last].row(i).transpose(), cohort.doses[last][i])).transpose();
  }
  return out;
}

namespace detail {

inline PredictorFactory predictor_factory(const RunConfig& config, const std::vector<PatientRecord>& records,
                                          const Scaling& scaling) {
  if (config.predictor.kind != PredictorKind::external) return trained_predictor_factory(config.predictor);
  auto ext = load_external_predictions(csv::read_file(config.external_predictions_path), records, config.schema(), scaling);
  return [ext](const TransitionData&, const std::vector<bool>& flags) { return make_external_predictor(ext, flags); };
}

}  // namespace detail

inline TrainedPipeline train_pipeline(const std::vector<PatientRecord>& records, const RunConfig& config) {
  config.validate();
  const auto schema = config.schema();
  const ScaledCohort cohort = scale_unit_interval(records, schema);
  const auto flags = constant_flags_of(cohort.scaling);
  const TransitionData data = pooled_transitions(cohort);
  PointPredictor predictor = detail::predictor_factory(config, records, cohort.scaling)(data, flags);

  TrainedPipeline p;
  p.schema = schema;
  p.config = config;
  p.models.scaling = cohort.scaling;
  p.models.propagation = config.propagation;
  p.models.transition = fit_transition(data, std::move(predictor), flags, config.transition_options());
  const Eigen::MatrixXd final_states = predicted_final_states(p.models.transition, cohort);
  p.models.evaluation = fit_evaluation(final_states, cohort.labels, config.evaluation_search, config.jitter, config.parallel);
  return p;
}

// ---------------------------------------------------------------------------
// Cross-validated evaluation

struct EvaluationReport {
  std::vector<CvMseRow> cv;
  std::array<double, kOutcomes> calibrated_cross_entropy{};
  std::array<double, kOutcomes> baseline_cross_entropy{};
  std::array<Eigen::VectorXd, kOutcomes> calibrated_probs;
  std::array<Eigen::VectorXd, kOutcomes> baseline_probs;
  std::array<Eigen::VectorXi, kOutcomes> labels;
  std::vector<std::string> patient_ids;
};

// One stratified fold loop. Per fold the transition and evaluation models are
// refit on the training patients; held-out patients get (a) calibrated
// transition predictions for both stages and (b) outcome probabilities from
// the propagated final state. The baseline is the same classifier trained and
// queried on point-predicted (uncalibrated) final states.
inline EvaluationReport evaluate(const std::vector<PatientRecord>& records, const RunConfig& config) {
  config.validate();
  const auto schema = config.schema();
  const ScaledCohort cohort = scale_unit_interval(records, schema);
  const std::size_t n = cohort.size();
  const auto q = static_cast<Eigen::Index>(cohort.dims());
  const auto flags = constant_flags_of(cohort.scaling);
  const auto folds = split_folds(cohort, config.folds, config.seed);
  const auto make_predictor = detail::predictor_factory(config, records, cohort.scaling);
  const TransitionData all = pooled_transitions(cohort);
  const std::size_t last = kStages - 1;

  HeldOutTransitions held;
  held.eta.resize(all.targets.rows(), q);
  held.mean.resize(all.targets.rows(), q);
  held.variance.resize(all.targets.rows(), q);
  held.truth = all.targets;

  EvaluationReport report;
  report.patient_ids = cohort.patient_ids;
  for (std::size_t j = 0; j < kOutcomes; ++j) {
    report.calibrated_probs[j].resize(static_cast<Eigen::Index>(n));
    report.baseline_probs[j].resize(static_cast<Eigen::Index>(n));
    report.labels[j] = cohort.labels[j];
  }

  const auto nn = static_cast<Eigen::Index>(n);
  for (const auto& fold : folds) {
    const ScaledCohort train = cohort.subset(complement(fold, n));
    const TransitionData train_data = pooled_transitions(train);
    TransitionModel transition =
        fit_transition(train_data, make_predictor(train_data, flags), flags, config.transition_options());
    const Eigen::MatrixXd train_final = predicted_final_states(transition, train);
    const EvaluationModel evaluation =
        fit_evaluation(train_final, train.labels, config.evaluation_search, config.jitter, config.parallel);
    const Eigen::MatrixXd train_point = point_final_states(transition.predictor, train);
    const EvaluationModel baseline =
        fit_evaluation(train_point, train.labels, config.evaluation_search, config.jitter, config.parallel);

    for (auto i : fold) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (Eigen::Index t = 0; t + 1 < static_cast<Eigen::Index>(kStages); ++t) {
        const Eigen::Index row = t * nn + ii;
        const Eigen::VectorXd x = all.inputs.row(row).transpose();
        const auto pred = predict_next_state(transition, x.head(q), x[q]);
        held.eta.row(row) = transition.predictor.predict(x).transpose();
        held.mean.row(row) = pred.mean.transpose();
        held.variance.row(row) = pred.variance.transpose();
      }
      const Eigen::VectorXd s = cohort.states[last].row(ii).transpose();
      const double a = cohort.doses[last][ii];
      const auto final_state = predict_next_state(transition, s, a);
      const auto dist = propagate(final_state, evaluation, config.propagation);
      const Eigen::VectorXd eta_final = transition.predictor.predict(joint_input(s, a));
      for (std::size_t j = 0; j < kOutcomes; ++j) {
        report.calibrated_probs[j][ii] = dist.outcomes[j].prob_mean;
        report.baseline_probs[j][ii] = sigmoid(predict_logit(baseline, j, eta_final).mean);
      }
    }
  }
  report.cv = cv_mse_table(held, cohort.scaling);
  for (std::size_t j = 0; j < kOutcomes; ++j) {
    report.calibrated_cross_entropy[j] = cross_entropy(report.calibrated_probs[j], report.labels[j]);
    report.baseline_cross_entropy[j] = cross_entropy(report.baseline_probs[j], report.labels[j]);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Decisions

struct PatientVerdict {
  std::string patient_id;
  Eigen::VectorXd state;  // scaled s_T
  DecisionVerdict verdict;
};

inline std::uint64_t patient_seed(std::uint64_t base, std::size_t index) { return base ^ static_cast<std::uint64_t>(index); }

template <class Fn>
void parallel_for(std::size_t count, bool parallel, Fn&& fn) {
  if (!parallel || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(count, std::thread::hardware_concurrency()));
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    }));
  }
  for (auto& j : jobs) j.get();
}

// The physician dose of each record is its final-stage dose a_T.
inline std::vector<PatientVerdict> decide_cohort(const TrainedPipeline& pipeline, const std::vector<PatientRecord>& records) {
  const auto options = pipeline.config.decision_options();
  const std::size_t last = kStages - 1;
  std::vector<PatientVerdict> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!options.grid.contains(records[i].doses[last])) {
      throw ValidationError("patient " + records[i].patient_id + ": physician dose is outside the dose grid");
    }
  }
  parallel_for(records.size(), pipeline.config.parallel, [&](std::size_t i) {
    const auto& r = records[i];
    PatientVerdict v;
    v.patient_id = r.patient_id;
    v.state = pipeline.scaling().scale_state(r.states[last]);
    v.verdict = compare_prescriptions(pipeline.models, v.state, r.doses[last], patient_seed(pipeline.config.seed, i), options);
    out[i] = std::move(v);
  });
  return out;
}

inline std::vector<CompensationCase> compensation_cases(const std::vector<PatientVerdict>& verdicts) {
  std::vector<CompensationCase> cases;
  for (const auto& v : verdicts) {
    cases.push_back({v.state, v.verdict.ai_dose, v.verdict.physician_dose, v.verdict.p_value});
  }
  return cases;
}

inline CompensationModel fit_pipeline_compensation(const TrainedPipeline& pipeline,
                                                   const std::vector<CompensationCase>& cases) {
  std::vector<std::size_t> idx;
  for (const auto& name : pipeline.config.compensation_variables) idx.push_back(pipeline.schema.require_index(name));
  return fit_compensation(cases, idx, pipeline.config.compensation_variables, pipeline.config.compensation_search,
                          pipeline.config.compensation_jitter, pipeline.config.alpha);
}

// ---------------------------------------------------------------------------
// Tabular reports

inline std::string format_optional(const std::optional<double>& v) { return v ? csv::format_number(*v) : "NA"; }

inline std::string format_cv_table(const EvaluationReport& r) {
  std::string out = "variable,dnn_mse,gp_mse,verbatim_ri,standard_ri\n";
  for (const auto& row : r.cv) {
    out += row.variable + "," + csv::format_number(row.dnn_mse) + "," + csv::format_number(row.gp_mse) + "," +
           format_optional(row.ri.verbatim) + "," + format_optional(row.ri.standard) + "\n";
  }
  return out;
}

inline std::string format_cross_entropy(const EvaluationReport& r) {
  std::string out = "outcome,baseline_cross_entropy,calibrated_cross_entropy\n";
  for (std::size_t j = 0; j < kOutcomes; ++j) {
    out += std::string(kOutcomeNames[j]) + "," + csv::format_number(r.baseline_cross_entropy[j]) + "," +
           csv::format_number(r.calibrated_cross_entropy[j]) + "\n";
  }
  return out;
}

inline std::string format_verdicts(const std::vector<PatientVerdict>& verdicts) {
  std::string out =
      "patient_id,physician_dose,ai_dose,p_value,chosen,reliability_flag,ai_reward_mean,ai_reward_std,"
      "physician_reward_mean,physician_reward_std,samples\n";
  for (const auto& pv : verdicts) {
    const auto& v = pv.verdict;
    out += pv.patient_id + "," + csv::format_number(v.physician_dose) + "," + csv::format_number(v.ai_dose) + "," +
           csv::format_number(v.p_value) + "," + to_string(v.chosen) + "," + (v.reliability_flag ? "1" : "0") + "," +
           csv::format_number(v.ai_reward.mean) + "," + csv::format_number(v.ai_reward.std) + "," +
           csv::format_number(v.physician_reward.mean) + "," + csv::format_number(v.physician_reward.std) + "," +
           std::to_string(v.sample_count) + "\n";
  }
  return out;
}

// Reads back the columns needed for compensation.
struct VerdictRecord {
  std::string patient_id;
  double physician_dose = 0.0;
  double ai_dose = 0.0;
  double p_value = 1.0;
};

inline std::vector<VerdictRecord> parse_verdicts(std::string_view text) {
  auto table = csv::parse(text);
  for (const char* c : {"patient_id", "physician_dose", "ai_dose", "p_value"}) {
    if (table.column(c) < 0) throw ParseError("missing column in verdicts file", 1, c);
  }
  std::vector<VerdictRecord> out;
  for (const auto& row : table.rows) {
    VerdictRecord v;
    v.patient_id = row.cells[static_cast<std::size_t>(table.column("patient_id"))];
    v.physician_dose = csv::parse_number(row.cells[static_cast<std::size_t>(table.column("physician_dose"))], row.line, "physician_dose");
    v.ai_dose = csv::parse_number(row.cells[static_cast<std::size_t>(table.column("ai_dose"))], row.line, "ai_dose");
    v.p_value = csv::parse_number(row.cells[static_cast<std::size_t>(table.column("p_value"))], row.line, "p_value");
    out.push_back(v);
  }
  return out;
}

inline std::string format_map(const CompensationMap& map) {
  std::string out = "kind," + map.var1 + "," + map.var2 + ",delta_gy_per_frac\n";
  for (const auto& c : map.cells) {
    out += "cell," + csv::format_number(c.x1) + "," + csv::format_number(c.x2) + "," + csv::format_number(c.delta) + "\n";
  }
  for (const auto& c : map.markers) {
    out += "marker," + csv::format_number(c.x1) + "," + csv::format_number(c.x2) + "," + csv::format_number(c.delta) + "\n";
  }
  return out;
}

}  // namespace dosegp
