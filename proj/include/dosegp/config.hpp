#pragma once

// Run configuration: a JSON document fully determining a pipeline run.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dosegp/cohort.hpp"
#include "dosegp/csv.hpp"
#include "dosegp/decision.hpp"
#include "dosegp/errors.hpp"
#include "dosegp/gp.hpp"
#include "dosegp/predictor.hpp"
#include "dosegp/propagation.hpp"

namespace dosegp {

using json = nlohmann::ordered_json;

struct SimulationConfig {
  std::size_t patients = 80;
  std::uint64_t seed = 1;
  double transition_noise = 0.0;
};

struct RunConfig {
  std::string states_path;
  std::string outcomes_path;
  std::string external_predictions_path;
  std::uint64_t seed = 1;
  std::size_t folds = 5;
  double truncation_quantile = 0.7;
  std::pair<double, double> dose_bounds{1.5, 5.0};
  PredictorConfig predictor;
  HyperparameterSearch transition_search;
  HyperparameterSearch evaluation_search;
  HyperparameterSearch compensation_search;
  double jitter = 1e-8;
  double compensation_jitter = 1e-4;
  std::size_t mc_samples = 1000;
  DoseGrid dose_grid;
  double alpha = 0.05;
  double reliability_width = 0.5;
  std::vector<std::string> compensation_variables{"tumor_geud", "lung_geud"};
  std::size_t map_resolution = 25;
  PropagationOptions propagation;
  RewardConstants reward;
  SimulationConfig simulation;
  bool parallel = true;

  VariableSchema schema() const {
    auto s = VariableSchema::standard();
    s.truncation_quantile = truncation_quantile;
    s.dose_bounds = dose_bounds;
    return s;
  }

  DecisionOptions decision_options() const {
    DecisionOptions d;
    d.grid = dose_grid;
    d.samples = mc_samples;
    d.alpha = alpha;
    d.reliability_width = reliability_width;
    d.reward = reward;
    return d;
  }

  TransitionOptions transition_options() const { return {transition_search, jitter, parallel}; }

  void validate() const {
    schema().validate();
    if (folds < 2) throw ValidationError("config: folds must be at least 2");
    if (mc_samples < 2) throw ValidationError("config: mc_samples must be at least 2");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("config: alpha must lie in (0, 1)");
    if (!(jitter >= 0.0) || !(compensation_jitter >= 0.0)) throw ValidationError("config: jitter must be nonnegative");
    dose_grid.validate();
    if (dose_grid.min < dose_bounds.first - 1e-12 || dose_grid.max > dose_bounds.second + 1e-12) {
      throw ValidationError("config: dose grid must lie within the dose bounds");
    }
    if (compensation_variables.empty()) throw ValidationError("config: compensation_variables is empty");
    auto s = schema();
    for (const auto& v : compensation_variables) s.require_index(v);
    if (map_resolution < 2) throw ValidationError("config: map_resolution must be at least 2");
    if (predictor.kind == PredictorKind::external && external_predictions_path.empty()) {
      throw ValidationError("config: external predictor needs external_predictions_path");
    }
  }
};

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + " must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw FormatError("unknown key '" + it.key() + "' in " + where);
  }
}

inline json grid_to_json(const LogGrid& g) { return json{{"lo", g.lo}, {"hi", g.hi}, {"points", g.points}}; }

inline LogGrid grid_from_json(const json& j, LogGrid g, const std::string& where) {
  reject_unknown(j, {"lo", "hi", "points"}, where);
  g.lo = j.value("lo", g.lo);
  g.hi = j.value("hi", g.hi);
  g.points = j.value("points", g.points);
  return g;
}

inline json search_to_json(const HyperparameterSearch& s) {
  return json{{"rates", grid_to_json(s.rates)},
              {"precision", grid_to_json(s.precision)},
              {"anisotropic", s.anisotropic},
              {"refine_rounds", s.refine_rounds}};
}

inline HyperparameterSearch search_from_json(const json& j, HyperparameterSearch s, const std::string& where) {
  reject_unknown(j, {"rates", "precision", "anisotropic", "refine_rounds"}, where);
  if (j.contains("rates")) s.rates = grid_from_json(j["rates"], s.rates, where + ".rates");
  if (j.contains("precision")) s.precision = grid_from_json(j["precision"], s.precision, where + ".precision");
  s.anisotropic = j.value("anisotropic", s.anisotropic);
  s.refine_rounds = j.value("refine_rounds", s.refine_rounds);
  return s;
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  const auto& p = c.predictor;
  return json{
      {"states_path", c.states_path},
      {"outcomes_path", c.outcomes_path},
      {"external_predictions_path", c.external_predictions_path},
      {"seed", c.seed},
      {"folds", c.folds},
      {"truncation_quantile", c.truncation_quantile},
      {"dose_bounds", {c.dose_bounds.first, c.dose_bounds.second}},
      {"predictor",
       {{"kind", to_string(p.kind)},
        {"hidden", p.mlp.hidden},
        {"epochs", p.mlp.epochs},
        {"learning_rate", p.mlp.learning_rate},
        {"seed", p.mlp.seed},
        {"ridge", p.ridge},
        {"augment_copies", p.augment_copies},
        {"augment_noise", p.augment_noise}}},
      {"transition_search", detail::search_to_json(c.transition_search)},
      {"evaluation_search", detail::search_to_json(c.evaluation_search)},
      {"compensation_search", detail::search_to_json(c.compensation_search)},
      {"jitter", c.jitter},
      {"compensation_jitter", c.compensation_jitter},
      {"mc_samples", c.mc_samples},
      {"dose_grid", {{"min", c.dose_grid.min}, {"max", c.dose_grid.max}, {"step", c.dose_grid.step}}},
      {"alpha", c.alpha},
      {"reliability_width", c.reliability_width},
      {"compensation_variables", c.compensation_variables},
      {"map_resolution", c.map_resolution},
      {"eiv_variant", to_string(c.propagation.variant)},
      {"w_correction", c.propagation.w_correction},
      {"reward",
       {{"scale", c.reward.scale},
        {"exponent", c.reward.exponent},
        {"rp2_reference", c.reward.rp2_reference},
        {"offset", c.reward.offset}}},
      {"simulation",
       {{"patients", c.simulation.patients},
        {"seed", c.simulation.seed},
        {"transition_noise", c.simulation.transition_noise}}},
      {"parallel", c.parallel},
  };
}

inline RunConfig config_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"states_path", "outcomes_path", "external_predictions_path", "seed", "folds",
                          "truncation_quantile", "dose_bounds", "predictor", "transition_search", "evaluation_search",
                          "compensation_search", "jitter", "compensation_jitter", "mc_samples", "dose_grid", "alpha",
                          "reliability_width", "compensation_variables", "map_resolution", "eiv_variant",
                          "w_correction", "reward", "simulation", "parallel"},
                         "config");
  RunConfig c;
  try {
    c.states_path = j.value("states_path", c.states_path);
    c.outcomes_path = j.value("outcomes_path", c.outcomes_path);
    c.external_predictions_path = j.value("external_predictions_path", c.external_predictions_path);
    c.seed = j.value("seed", c.seed);
    c.folds = j.value("folds", c.folds);
    c.truncation_quantile = j.value("truncation_quantile", c.truncation_quantile);
    if (j.contains("dose_bounds")) {
      const auto& b = j["dose_bounds"];
      if (!b.is_array() || b.size() != 2) throw FormatError("config: dose_bounds must be [min, max]");
      c.dose_bounds = {b[0].get<double>(), b[1].get<double>()};
    }
    if (j.contains("predictor")) {
      const auto& p = j["predictor"];
      detail::reject_unknown(p, {"kind", "hidden", "epochs", "learning_rate", "seed", "ridge", "augment_copies", "augment_noise"},
                             "config.predictor");
      c.predictor.kind = predictor_kind_from_string(p.value("kind", std::string(to_string(c.predictor.kind))));
      c.predictor.mlp.hidden = p.value("hidden", c.predictor.mlp.hidden);
      c.predictor.mlp.epochs = p.value("epochs", c.predictor.mlp.epochs);
      c.predictor.mlp.learning_rate = p.value("learning_rate", c.predictor.mlp.learning_rate);
      c.predictor.mlp.seed = p.value("seed", c.predictor.mlp.seed);
      c.predictor.ridge = p.value("ridge", c.predictor.ridge);
      c.predictor.augment_copies = p.value("augment_copies", c.predictor.augment_copies);
      c.predictor.augment_noise = p.value("augment_noise", c.predictor.augment_noise);
    }
    if (j.contains("transition_search")) {
      c.transition_search = detail::search_from_json(j["transition_search"], c.transition_search, "config.transition_search");
    }
    if (j.contains("evaluation_search")) {
      c.evaluation_search = detail::search_from_json(j["evaluation_search"], c.evaluation_search, "config.evaluation_search");
    }
    if (j.contains("compensation_search")) {
      c.compensation_search =
          detail::search_from_json(j["compensation_search"], c.compensation_search, "config.compensation_search");
    }
    c.jitter = j.value("jitter", c.jitter);
    c.compensation_jitter = j.value("compensation_jitter", c.compensation_jitter);
    c.mc_samples = j.value("mc_samples", c.mc_samples);
    if (j.contains("dose_grid")) {
      const auto& g = j["dose_grid"];
      detail::reject_unknown(g, {"min", "max", "step"}, "config.dose_grid");
      c.dose_grid.min = g.value("min", c.dose_grid.min);
      c.dose_grid.max = g.value("max", c.dose_grid.max);
      c.dose_grid.step = g.value("step", c.dose_grid.step);
    }
    c.alpha = j.value("alpha", c.alpha);
    c.reliability_width = j.value("reliability_width", c.reliability_width);
    c.compensation_variables = j.value("compensation_variables", c.compensation_variables);
    for (auto& v : c.compensation_variables) v = csv::lower(v);
    c.map_resolution = j.value("map_resolution", c.map_resolution);
    c.propagation.variant = eiv_variant_from_string(j.value("eiv_variant", std::string(to_string(c.propagation.variant))));
    c.propagation.w_correction = j.value("w_correction", c.propagation.w_correction);
    if (j.contains("reward")) {
      const auto& r = j["reward"];
      detail::reject_unknown(r, {"scale", "exponent", "rp2_reference", "offset"}, "config.reward");
      c.reward.scale = r.value("scale", c.reward.scale);
      c.reward.exponent = r.value("exponent", c.reward.exponent);
      c.reward.rp2_reference = r.value("rp2_reference", c.reward.rp2_reference);
      c.reward.offset = r.value("offset", c.reward.offset);
    }
    if (j.contains("simulation")) {
      const auto& s = j["simulation"];
      detail::reject_unknown(s, {"patients", "seed", "transition_noise"}, "config.simulation");
      c.simulation.patients = s.value("patients", c.simulation.patients);
      c.simulation.seed = s.value("seed", c.simulation.seed);
      c.simulation.transition_noise = s.value("transition_noise", c.simulation.transition_noise);
    }
    c.parallel = j.value("parallel", c.parallel);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(csv::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace dosegp
