// dosegp command-line driver.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dosegp/dosegp.hpp"
#include "dosegp/service.hpp"

namespace fs = std::filesystem;
using namespace dosegp;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string model_path;
  std::string verdicts_path;
};

struct Context {
  RunConfig config;
  fs::path base;  // relative config paths resolve here
  fs::path out;

  std::string snapshot() const { return to_json(config).dump(); }

  fs::path input(const std::string& configured, const char* fallback) const {
    if (configured.empty()) return out / fallback;
    fs::path p(configured);
    return p.is_absolute() ? p : base / p;
  }

  std::vector<PatientRecord> cohort() const {
    return load_cohort(input(config.states_path, "states.csv").string(), input(config.outcomes_path, "outcomes.csv").string(),
                       config.schema());
  }
};

Context make_context(const Options& o) {
  Context c;
  if (!o.config_path.empty()) {
    c.config = load_config(o.config_path);
    c.base = fs::path(o.config_path).parent_path();
  }
  if (o.seed) {
    c.config.seed = *o.seed;
    c.config.simulation.seed = *o.seed;
  }
  if (!c.config.external_predictions_path.empty()) {
    fs::path p(c.config.external_predictions_path);
    if (!p.is_absolute()) c.config.external_predictions_path = (c.base / p).string();
  }
  c.out = o.out;
  fs::create_directories(c.out);
  return c;
}

// Every output carries the run configuration and, when a model exists, its digest.
std::string header(const Context& c, const std::string& digest = "") {
  std::string h = "# config: " + c.snapshot() + "\n";
  if (!digest.empty()) h += "# model_digest: " + digest + "\n";
  return h;
}

void write(const fs::path& path, const std::string& text) {
  csv::write_file(path.string(), text);
  std::cout << "wrote " << path.string() << "\n";
}

std::string model_path(const Options& o, const Context& c) {
  return o.model_path.empty() ? (c.out / "model.json").string() : o.model_path;
}

int cmd_simulate(const Options& o) {
  auto c = make_context(o);
  synthetic::World world;
  world.transition_noise = c.config.simulation.transition_noise;
  const auto patients = synthetic::simulate(world, {c.config.simulation.patients, c.config.simulation.seed});
  const auto records = synthetic::records(patients);
  write(c.out / "states.csv", header(c) + format_states(records, c.config.schema()));
  write(c.out / "outcomes.csv", header(c) + format_outcomes(records));
  return 0;
}

int cmd_preprocess(const Options& o) {
  auto c = make_context(o);
  const auto records = c.cohort();
  const auto cohort = scale_unit_interval(records, c.config.schema());
  std::string text = "patient_id,stage";
  for (const auto& v : cohort.scaling.variables) text += "," + v.name;
  text += ",dose_scaled\n";
  for (std::size_t t = 0; t < kStages; ++t) {
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      text += cohort.patient_ids[i] + "," + std::to_string(t + 1);
      for (Eigen::Index k = 0; k < cohort.states[t].cols(); ++k) text += "," + csv::format_number(cohort.states[t](ii, k));
      text += "," + csv::format_number(cohort.doses[t][ii]) + "\n";
    }
  }
  write(c.out / "scaled_states.csv", header(c) + text);
  std::string scaling = "variable,constant,cap,min,max\n";
  for (const auto& v : cohort.scaling.variables) {
    scaling += v.name + "," + (v.constant ? "1" : "0") + "," + csv::format_number(v.cap) + "," + csv::format_number(v.min) +
               "," + csv::format_number(v.max) + "\n";
  }
  write(c.out / "scaling.csv", header(c) + scaling);
  return 0;
}

int cmd_train(const Options& o) {
  auto c = make_context(o);
  const auto pipeline = train_pipeline(c.cohort(), c.config);
  write(model_path(o, c), store::serialize(pipeline));
  std::cout << "model_digest " << store::digest_of(pipeline) << "\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  auto c = make_context(o);
  const auto report = evaluate(c.cohort(), c.config);
  write(c.out / "cv_mse.csv", header(c) + format_cv_table(report));
  write(c.out / "cross_entropy.csv", header(c) + format_cross_entropy(report));
  std::cout << format_cv_table(report) << format_cross_entropy(report);
  return 0;
}

int cmd_decide(const Options& o) {
  auto c = make_context(o);
  const auto pipeline = store::load(model_path(o, c));
  const auto verdicts = decide_cohort(pipeline, c.cohort());
  write(c.out / "verdicts.csv", header(c, store::digest_of(pipeline)) + format_verdicts(verdicts));
  std::size_t ai = 0;
  for (const auto& v : verdicts) ai += v.verdict.chosen == Choice::ai ? 1 : 0;
  std::cout << ai << " of " << verdicts.size() << " patients: AI recommendation selected\n";
  return 0;
}

int cmd_compensate(const Options& o) {
  auto c = make_context(o);
  auto pipeline = store::load(model_path(o, c));
  const auto records = c.cohort();
  const auto verdict_rows =
      parse_verdicts(csv::read_file(o.verdicts_path.empty() ? (c.out / "verdicts.csv").string() : o.verdicts_path));
  std::map<std::string, const PatientRecord*> by_id;
  for (const auto& r : records) by_id[r.patient_id] = &r;
  std::vector<CompensationCase> cases;
  for (const auto& v : verdict_rows) {
    auto it = by_id.find(v.patient_id);
    if (it == by_id.end()) throw ValidationError("verdict for unknown patient '" + v.patient_id + "'");
    cases.push_back({pipeline.scaling().scale_state(it->second->states[kStages - 1]), v.ai_dose, v.physician_dose, v.p_value});
  }
  pipeline.compensation = fit_pipeline_compensation(pipeline, cases);
  const auto& vars = pipeline.config.compensation_variables;
  const auto map = compensation_map(*pipeline.compensation, vars.at(0), vars.at(vars.size() > 1 ? 1 : 0),
                                    pipeline.config.map_resolution, pipeline.scaling());
  const auto compensated = (c.out / "model_compensated.json").string();
  write(compensated, store::serialize(pipeline));
  write(c.out / "compensation_map.csv", header(c, store::digest_of(pipeline)) + format_map(map));
  return 0;
}

int cmd_serve(const Options& o) {
  auto state = std::make_shared<service::State>();
  const char* bind = std::getenv("DOSEGP_BIND");
  const char* dir = std::getenv("DOSEGP_ARTIFACT_DIR");
  const char* seed = std::getenv("DOSEGP_SEED");
  std::string address = bind ? bind : "127.0.0.1:8080";
  state->artifact_dir = dir ? dir : (o.out.empty() ? "." : o.out);
  fs::create_directories(state->artifact_dir);
  if (seed) state->default_seed = std::stoull(seed);
  if (o.seed) state->default_seed = *o.seed;
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw ValidationError("DOSEGP_BIND must be host:port");
  const std::string host = address.substr(0, colon);
  const int port = std::stoi(address.substr(colon + 1));
  httplib::Server server;
  service::install_routes(server, state);
  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    std::clog << req.method << " " << req.path << " " << res.status << "\n";
  });
  std::cout << "listening on " << host << ":" << port << " (no authentication)\n";
  if (!server.listen(host, port)) throw Error("cannot bind " + address);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GP-calibrated dose decision support"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override the configured seed");
    sub->add_option("--out", o.out, "output directory");
  };
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Command commands[] = {
      {"simulate", "write a synthetic cohort", cmd_simulate},
      {"preprocess", "truncate and scale a cohort", cmd_preprocess},
      {"train", "fit transition and outcome models", cmd_train},
      {"evaluate", "cross-validated transition MSE and outcome cross-entropy", cmd_evaluate},
      {"decide", "physician vs AI verdict per patient", cmd_decide},
      {"compensate", "fit the dose-compensation GP and write its map", cmd_compensate},
      {"serve", "run the HTTP service", cmd_serve},
  };
  int (*selected)(const Options&) = nullptr;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    common(sub);
    if (std::string(c.name) == "decide" || std::string(c.name) == "compensate") {
      sub->add_option("--model", o.model_path, "model artifact (default OUT/model.json)");
    }
    if (std::string(c.name) == "train") sub->add_option("--model", o.model_path, "artifact path (default OUT/model.json)");
    if (std::string(c.name) == "compensate") {
      sub->add_option("--verdicts", o.verdicts_path, "verdict table (default OUT/verdicts.csv)");
    }
    sub->callback([&selected, run = c.run] { selected = run; });
  }
  CLI11_PARSE(app, argc, argv);
  try {
    return selected(o);
  } catch (const ParseError& e) {
    std::cerr << "error: parse: " << e.what() << "\n";
  } catch (const ValidationError& e) {
    std::cerr << "error: validation: " << e.what() << "\n";
  } catch (const FactorizationError& e) {
    std::cerr << "error: factorization: " << e.what() << "\n";
  } catch (const ConvergenceError& e) {
    std::cerr << "error: convergence: " << e.what() << "\n";
  } catch (const InsufficientDataError& e) {
    std::cerr << "error: insufficient data: " << e.what() << "\n";
  } catch (const VersionError& e) {
    std::cerr << "error: version: " << e.what() << "\n";
  } catch (const DigestError& e) {
    std::cerr << "error: digest: " << e.what() << "\n";
  } catch (const FormatError& e) {
    std::cerr << "error: format: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return 1;
}
