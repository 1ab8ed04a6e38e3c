#pragma once

// Small synthetic pipeline shared by the store, service and CLI tests.

#include <vector>

#include "dosegp/pipeline.hpp"
#include "dosegp/synthetic.hpp"

namespace fixture {

inline dosegp::RunConfig small_config() {
  dosegp::RunConfig c;
  c.truncation_quantile = 1.0;
  c.predictor.kind = dosegp::PredictorKind::linear;
  c.transition_search = {{0.1, 10.0, 3}, {1.0, 100.0, 3}, false, 0};
  c.evaluation_search = {{0.1, 10.0, 3}, {0.1, 10.0, 3}, false, 0};
  c.compensation_search = {{0.1, 10.0, 3}, {0.1, 10.0, 3}, false, 0};
  c.mc_samples = 200;
  c.simulation.patients = 40;
  return c;
}

inline const std::vector<dosegp::PatientRecord>& small_records() {
  static const auto records = [] {
    dosegp::synthetic::CohortOptions o;
    o.patients = 40;
    return dosegp::synthetic::records(dosegp::synthetic::simulate(dosegp::synthetic::World{}, o));
  }();
  return records;
}

inline const dosegp::TrainedPipeline& small_pipeline() {
  static const auto p = dosegp::train_pipeline(small_records(), small_config());
  return p;
}

}  // namespace fixture
