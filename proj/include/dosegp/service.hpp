#pragma once

// HTTP JSON facade. All bodies use original clinical units; there is no
// authentication.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

// Eigen must be parsed before httplib pulls in <resolv.h>, whose `_res` macro
// collides with Eigen parameter names.
#include "dosegp/config.hpp"
#include "dosegp/model_store.hpp"
#include "dosegp/pipeline.hpp"

#include <httplib.h>

namespace dosegp::service {

inline constexpr const char* kVersion = "1.0.0";

enum class JobStatus { queued, running, done, failed };

inline const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

struct CohortEntry {
  std::vector<PatientRecord> records;
  bool training = false;
};

struct ModelEntry {
  std::string cohort_id;
  JobStatus status = JobStatus::queued;
  std::string error;
  std::shared_ptr<const TrainedPipeline> pipeline;
  std::string digest;
  json metrics;
};

struct State {
  std::string artifact_dir;
  std::uint64_t default_seed = 1;
  std::mutex mutex;
  std::map<std::string, CohortEntry> cohorts;
  std::map<std::string, ModelEntry> models;
  std::size_t next_cohort = 1;
  std::size_t next_model = 1;
  std::vector<std::jthread> jobs;

  ~State() {
    for (auto& j : jobs) {
      if (j.joinable()) j.join();
    }
  }
};

namespace detail {

inline void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send(res, status, json{{"error", message}});
}

inline json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("request body is not valid JSON: ") + e.what());
  }
}

inline Eigen::VectorXd parse_state(const json& j, const VariableSchema& schema) {
  if (!j.is_object()) throw ValidationError("state must be an object of named values");
  Eigen::VectorXd s(static_cast<Eigen::Index>(schema.size()));
  for (std::size_t k = 0; k < schema.size(); ++k) {
    const auto& name = schema.names[k];
    if (!j.contains(name) || !j[name].is_number()) throw ValidationError("state is missing numeric value for '" + name + "'");
    s[static_cast<Eigen::Index>(k)] = j[name].get<double>();
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!schema.index_of(it.key())) throw ValidationError("state has unknown variable '" + it.key() + "'");
  }
  return s;
}

inline json band(double mean, double sd, bool clip) {
  double lo = mean - 2.0 * sd, hi = mean + 2.0 * sd;
  if (clip) {
    lo = std::max(0.0, lo);
    hi = std::min(1.0, hi);
  }
  return json{{"mean", mean}, {"lower", lo}, {"upper", hi}};
}

inline json verdict_json(const DecisionVerdict& v, const std::string& digest) {
  auto reward = [](const RewardDistribution& r) {
    return json{{"mean", r.mean}, {"std", r.std}, {"seed", r.seed}, {"sample_count", r.sample_count}};
  };
  auto outcome = [](const OutcomeDistribution& d) {
    return json{{"prob_lc", band(d.lc().prob_mean, d.lc().prob_sd(), true)},
                {"prob_rp2", band(d.rp2().prob_mean, d.rp2().prob_sd(), true)}};
  };
  return json{{"ai_dose", v.ai_dose},
              {"physician_dose", v.physician_dose},
              {"ai_reward", reward(v.ai_reward)},
              {"physician_reward", reward(v.physician_reward)},
              {"ai_outcome", outcome(v.ai_outcome)},
              {"physician_outcome", outcome(v.physician_outcome)},
              {"t_statistic", v.test.t},
              {"degrees_of_freedom", v.test.df},
              {"p_value", v.p_value},
              {"chosen", to_string(v.chosen)},
              {"reliability_flag", v.reliability_flag},
              {"sample_count", v.sample_count},
              {"model_digest", digest}};
}

inline json metrics_json(const EvaluationReport& r, const TrainedPipeline& p) {
  json cv = json::array();
  for (const auto& row : r.cv) {
    cv.push_back({{"variable", row.variable},
                  {"dnn_mse", row.dnn_mse},
                  {"gp_mse", row.gp_mse},
                  {"verbatim_ri", row.ri.verbatim ? json(*row.ri.verbatim) : json(nullptr)},
                  {"standard_ri", row.ri.standard ? json(*row.ri.standard) : json(nullptr)}});
  }
  json ce = json::object();
  for (std::size_t j = 0; j < kOutcomes; ++j) {
    ce[kOutcomeNames[j]] = {{"baseline", r.baseline_cross_entropy[j]}, {"calibrated", r.calibrated_cross_entropy[j]}};
  }
  json hyper{{"transition", json::array()}, {"evaluation", json::object()}};
  for (const auto& b : p.models.transition.per_dim) {
    hyper["transition"].push_back({{"variable", p.schema.names[b.dim]},
                                   {"rates", std::vector<double>(b.gp.kernel.rates.data(),
                                                                 b.gp.kernel.rates.data() + b.gp.kernel.rates.size())},
                                   {"precision", b.gp.kernel.precision}});
  }
  for (std::size_t j = 0; j < kOutcomes; ++j) {
    const auto& k = p.models.evaluation.classifiers[j].kernel;
    hyper["evaluation"][kOutcomeNames[j]] = {
        {"rates", std::vector<double>(k.rates.data(), k.rates.data() + k.rates.size())}, {"precision", k.precision}};
  }
  return json{{"cv_mse", std::move(cv)}, {"cross_entropy", std::move(ce)}, {"hyperparameters", std::move(hyper)}};
}

// Train, evaluate, decide on the training cohort and fit compensation.
inline void run_training(State* state, std::string model_id, std::string cohort_id,
                         std::vector<PatientRecord> records, RunConfig config) {
  {
    std::lock_guard lock(state->mutex);
    state->models[model_id].status = JobStatus::running;
  }
  std::string stage = "cohort-data";
  try {
    stage = "training";
    auto pipeline = std::make_shared<TrainedPipeline>(train_pipeline(records, config));
    stage = "evaluation";
    const auto report = evaluate(records, config);
    stage = "decision";
    const auto verdicts = decide_cohort(*pipeline, records);
    try {
      pipeline->compensation = fit_pipeline_compensation(*pipeline, compensation_cases(verdicts));
    } catch (const InsufficientDataError&) {
    }
    stage = "model-store";
    const std::string bytes = store::serialize(*pipeline);
    const std::string digest = store::digest_of(*pipeline);
    if (!state->artifact_dir.empty()) csv::write_file(state->artifact_dir + "/" + model_id + ".json", bytes);
    json metrics = metrics_json(report, *pipeline);
    std::lock_guard lock(state->mutex);
    auto& m = state->models[model_id];
    m.pipeline = std::move(pipeline);
    m.digest = digest;
    m.metrics = std::move(metrics);
    m.status = JobStatus::done;
    state->cohorts[cohort_id].training = false;
  } catch (const std::exception& e) {
    std::lock_guard lock(state->mutex);
    auto& m = state->models[model_id];
    m.status = JobStatus::failed;
    m.error = stage + ": " + e.what();
    state->cohorts[cohort_id].training = false;
  }
}

inline std::shared_ptr<const TrainedPipeline> ready_model(State& state, const std::string& id, std::string& digest,
                                                          httplib::Response& res) {
  std::lock_guard lock(state.mutex);
  auto it = state.models.find(id);
  if (it == state.models.end()) {
    send_error(res, 404, "unknown model '" + id + "'");
    return nullptr;
  }
  if (it->second.status != JobStatus::done) {
    send_error(res, 409, "model '" + id + "' is " + to_string(it->second.status));
    return nullptr;
  }
  digest = it->second.digest;
  return it->second.pipeline;
}

}  // namespace detail

inline void install_routes(httplib::Server& server, const std::shared_ptr<State>& state) {
  using detail::send;
  using detail::send_error;

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    send(res, 200, json{{"status", "ok"}, {"version", kVersion}});
  });

  server.Post("/cohorts", [state](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_file("states") || !req.has_file("outcomes")) {
      send_error(res, 400, "multipart fields 'states' and 'outcomes' are required");
      return;
    }
    try {
      auto records = parse_cohort(req.get_file_value("states").content, req.get_file_value("outcomes").content,
                                  VariableSchema::standard());
      std::lock_guard lock(state->mutex);
      const std::string id = "c" + std::to_string(state->next_cohort++);
      const auto n = records.size();
      state->cohorts[id] = CohortEntry{std::move(records), false};
      send(res, 201, json{{"cohort_id", id}, {"n", n}, {"validation", {{"ok", true}, {"errors", json::array()}}}});
    } catch (const ParseError& e) {
      send(res, 400, json{{"error", e.what()}, {"row", e.row}, {"column", e.column}});
    } catch (const Error& e) {
      send_error(res, 400, e.what());
    }
  });

  server.Post("/models/train", [state](const httplib::Request& req, httplib::Response& res) {
    try {
      const json body = detail::parse_body(req);
      const auto cohort_id = body.value("cohort_id", std::string());
      json cfg = body.value("config", json::object());
      if (!cfg.contains("seed")) cfg["seed"] = state->default_seed;
      const RunConfig config = config_from_json(cfg);
      std::lock_guard lock(state->mutex);
      auto it = state->cohorts.find(cohort_id);
      if (it == state->cohorts.end()) {
        send_error(res, 404, "unknown cohort '" + cohort_id + "'");
        return;
      }
      if (it->second.training) {
        send_error(res, 409, "a training job for cohort '" + cohort_id + "' is already running");
        return;
      }
      it->second.training = true;
      const std::string id = "m" + std::to_string(state->next_model++);
      ModelEntry entry;
      entry.cohort_id = cohort_id;
      state->models[id] = std::move(entry);
      state->jobs.emplace_back(detail::run_training, state.get(), id, cohort_id, it->second.records, config);
      send(res, 202, json{{"model_id", id}, {"status", "queued"}});
    } catch (const Error& e) {
      send_error(res, 400, e.what());
    }
  });

  server.Get("/models/:id/status", [state](const httplib::Request& req, httplib::Response& res) {
    const auto id = req.path_params.at("id");
    std::lock_guard lock(state->mutex);
    auto it = state->models.find(id);
    if (it == state->models.end()) {
      send_error(res, 404, "unknown model '" + id + "'");
      return;
    }
    const auto& m = it->second;
    json body{{"model_id", id}, {"status", to_string(m.status)}};
    if (m.status == JobStatus::done) {
      body["digest"] = m.digest;
      body["metrics"] = m.metrics;
      body["compensation"] = m.pipeline->compensation.has_value();
    }
    if (m.status == JobStatus::failed) body["error"] = m.error;
    send(res, m.status == JobStatus::failed ? 500 : 200, body);
  });

  server.Post("/models/:id/whatif", [state](const httplib::Request& req, httplib::Response& res) {
    std::string digest;
    auto p = detail::ready_model(*state, req.path_params.at("id"), digest, res);
    if (!p) return;
    try {
      const json body = detail::parse_body(req);
      const Eigen::VectorXd scaled = p->scaling().scale_state(detail::parse_state(body.value("state", json()), p->schema));
      std::vector<double> doses;
      if (body.contains("doses")) {
        doses = body["doses"].get<std::vector<double>>();
      } else if (body.contains("grid")) {
        DoseGrid g{body["grid"].value("min", 0.0), body["grid"].value("max", 0.0), body["grid"].value("step", 0.0)};
        doses = g.values();
      } else {
        doses = p->config.dose_grid.values();
      }
      if (doses.empty()) throw ValidationError("no doses requested");
      const auto [lo, hi] = p->scaling().dose_bounds;
      for (double d : doses) {
        if (d < lo || d > hi) {
          send_error(res, 422, "dose " + csv::format_number(d) + " is outside the model dose bounds [" +
                                   csv::format_number(lo) + ", " + csv::format_number(hi) + "]");
          return;
        }
      }
      const std::uint64_t seed = body.value("seed", state->default_seed);
      json lc = json::array(), rp2 = json::array(), rw = json::array(), lv_lc = json::array(), lv_rp2 = json::array();
      for (std::size_t i = 0; i < doses.size(); ++i) {
        const auto d = p->models.outcome(scaled, doses[i]);
        const auto r = sample_reward(d, p->config.mc_samples, seed, p->config.reward);
        lc.push_back(detail::band(d.lc().prob_mean, d.lc().prob_sd(), true));
        rp2.push_back(detail::band(d.rp2().prob_mean, d.rp2().prob_sd(), true));
        rw.push_back(detail::band(r.mean, r.std, false));
        lv_lc.push_back(d.lc().logit_variance);
        lv_rp2.push_back(d.rp2().logit_variance);
      }
      send(res, 200,
           json{{"doses", doses},
                {"prob_lc", lc},
                {"prob_rp2", rp2},
                {"reward", rw},
                {"logit_variance", {{"lc", lv_lc}, {"rp2", lv_rp2}}},
                {"model_digest", digest},
                {"units", "doses in Gy/fraction; state in original clinical units; bands are mean +- 2 sd"}});
    } catch (const ValidationError& e) {
      send_error(res, 422, e.what());
    } catch (const std::exception& e) {
      send_error(res, 400, e.what());
    }
  });

  server.Post("/models/:id/decide", [state](const httplib::Request& req, httplib::Response& res) {
    std::string digest;
    auto p = detail::ready_model(*state, req.path_params.at("id"), digest, res);
    if (!p) return;
    try {
      const json body = detail::parse_body(req);
      const Eigen::VectorXd scaled = p->scaling().scale_state(detail::parse_state(body.value("state", json()), p->schema));
      if (!body.contains("physician_dose") || !body["physician_dose"].is_number()) {
        throw ValidationError("physician_dose is required");
      }
      const double dose = body["physician_dose"].get<double>();
      const std::uint64_t seed = body.value("seed", state->default_seed);
      const auto v = compare_prescriptions(p->models, scaled, dose, seed, p->config.decision_options());
      send(res, 200, detail::verdict_json(v, digest));
    } catch (const ValidationError& e) {
      send_error(res, 422, e.what());
    } catch (const std::exception& e) {
      send_error(res, 400, e.what());
    }
  });

  server.Get("/models/:id/compensation-map", [state](const httplib::Request& req, httplib::Response& res) {
    std::string digest;
    auto p = detail::ready_model(*state, req.path_params.at("id"), digest, res);
    if (!p) return;
    if (!p->compensation) {
      send_error(res, 409, "insufficient AI-superior cases");
      return;
    }
    try {
      const auto& names = p->compensation->names;
      const std::string v1 = req.has_param("var1") ? req.get_param_value("var1") : names.at(0);
      const std::string v2 = req.has_param("var2") ? req.get_param_value("var2") : names.at(names.size() > 1 ? 1 : 0);
      const std::size_t resolution =
          req.has_param("resolution") ? std::stoul(req.get_param_value("resolution")) : p->config.map_resolution;
      const auto map = compensation_map(*p->compensation, v1, v2, resolution, p->scaling());
      json cells = json::array(), markers = json::array();
      for (const auto& c : map.cells) cells.push_back({{map.var1, c.x1}, {map.var2, c.x2}, {"delta", c.delta}});
      for (const auto& c : map.markers) markers.push_back({{map.var1, c.x1}, {map.var2, c.x2}, {"delta", c.delta}});
      send(res, 200,
           json{{"var1", map.var1},
                {"var2", map.var2},
                {"resolution", map.resolution},
                {"cells", cells},
                {"markers", markers},
                {"units", "axes in original units; delta in Gy/fraction"},
                {"model_digest", digest}});
    } catch (const std::exception& e) {
      send_error(res, 400, e.what());
    }
  });
}

}  // namespace dosegp::service
