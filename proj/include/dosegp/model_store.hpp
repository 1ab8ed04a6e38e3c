#pragma once

// Versioned JSON artifacts for trained pipelines. Factorizations are not
// stored; they are recomputed from the stored inputs on restore, which gives
// the same bits as the original fit.

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "dosegp/config.hpp"
#include "dosegp/errors.hpp"
#include "dosegp/pipeline.hpp"

namespace dosegp::store {

inline constexpr int kFormatVersion = 1;

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

namespace detail {

inline json matrix(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline json vector(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline json ivector(const Eigen::VectorXi& v) { return json(std::vector<int>(v.data(), v.data() + v.size())); }

inline Eigen::MatrixXd to_matrix(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) throw FormatError("matrix payload has the wrong size");
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[k++].get<double>();
  }
  return m;
}

inline Eigen::VectorXd to_vector(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Eigen::VectorXi to_ivector(const json& j) {
  auto v = j.get<std::vector<int>>();
  return Eigen::Map<Eigen::VectorXi>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json kernel(const SEKernelParams& k) { return json{{"rates", vector(k.rates)}, {"precision", k.precision}}; }

inline SEKernelParams to_kernel(const json& j) {
  SEKernelParams k{to_vector(j.at("rates")), j.at("precision").get<double>()};
  k.validate();
  return k;
}

inline json schema(const VariableSchema& s) {
  return json{{"names", s.names},
              {"units", s.units},
              {"constant_flags", s.constant_flags},
              {"truncation_quantile", s.truncation_quantile},
              {"dose_bounds", {s.dose_bounds.first, s.dose_bounds.second}}};
}

inline VariableSchema to_schema(const json& j) {
  VariableSchema s;
  s.names = j.at("names").get<std::vector<std::string>>();
  s.units = j.at("units").get<std::vector<std::string>>();
  s.constant_flags = j.at("constant_flags").get<std::vector<bool>>();
  s.truncation_quantile = j.at("truncation_quantile").get<double>();
  s.dose_bounds = {j.at("dose_bounds").at(0).get<double>(), j.at("dose_bounds").at(1).get<double>()};
  s.validate();
  return s;
}

inline json scaling(const Scaling& s) {
  json vars = json::array();
  for (const auto& v : s.variables) {
    vars.push_back({{"name", v.name}, {"constant", v.constant}, {"cap", v.cap}, {"min", v.min}, {"max", v.max}});
  }
  return json{{"variables", std::move(vars)}, {"dose_bounds", {s.dose_bounds.first, s.dose_bounds.second}}};
}

inline Scaling to_scaling(const json& j) {
  Scaling s;
  for (const auto& v : j.at("variables")) {
    s.variables.push_back({v.at("name").get<std::string>(), v.at("constant").get<bool>(), v.at("cap").get<double>(),
                           v.at("min").get<double>(), v.at("max").get<double>()});
  }
  s.dose_bounds = {j.at("dose_bounds").at(0).get<double>(), j.at("dose_bounds").at(1).get<double>()};
  return s;
}

inline json predictor(const PointPredictor& p) {
  json j{{"kind", to_string(p.kind())}, {"outputs", p.outputs()}, {"state_dims", p.state_dims()}};
  json fixed = json::array();
  for (const auto& [dim, value] : p.fixed_outputs()) fixed.push_back({{"dim", dim}, {"value", value}});
  j["fixed_outputs"] = std::move(fixed);
  std::visit(
      [&](const auto& impl) {
        using T = std::decay_t<decltype(impl)>;
        if constexpr (std::is_same_v<T, MlpPredictor>) {
          j["w1"] = matrix(impl.w1);
          j["b1"] = vector(impl.b1);
          j["w2"] = matrix(impl.w2);
          j["b2"] = vector(impl.b2);
          j["skip"] = matrix(impl.skip);
        } else if constexpr (std::is_same_v<T, LinearPredictor>) {
          j["coef"] = matrix(impl.coef);
          j["intercept"] = vector(impl.intercept);
        } else {
          json rows = json::array();
          for (const auto& [key, value] : impl.table) rows.push_back({{"input", key}, {"prediction", vector(value)}});
          j["table"] = std::move(rows);
        }
      },
      p.impl());
  return j;
}

inline PointPredictor to_predictor(const json& j) {
  const auto kind = predictor_kind_from_string(j.at("kind").get<std::string>());
  const auto outputs = j.at("outputs").get<std::vector<std::size_t>>();
  const auto dims = j.at("state_dims").get<std::size_t>();
  std::map<std::size_t, double> fixed;
  for (const auto& f : j.at("fixed_outputs")) fixed[f.at("dim").get<std::size_t>()] = f.at("value").get<double>();
  switch (kind) {
    case PredictorKind::mlp: {
      MlpPredictor m;
      m.w1 = to_matrix(j.at("w1"));
      m.b1 = to_vector(j.at("b1"));
      m.w2 = to_matrix(j.at("w2"));
      m.b2 = to_vector(j.at("b2"));
      m.skip = to_matrix(j.at("skip"));
      return PointPredictor(std::move(m), outputs, dims, fixed);
    }
    case PredictorKind::linear: {
      LinearPredictor l;
      l.coef = to_matrix(j.at("coef"));
      l.intercept = to_vector(j.at("intercept"));
      return PointPredictor(std::move(l), outputs, dims, fixed);
    }
    case PredictorKind::external: {
      ExternalPredictor e;
      for (const auto& row : j.at("table")) e.table[row.at("input").get<std::vector<double>>()] = to_vector(row.at("prediction"));
      return PointPredictor(std::move(e), outputs, dims, fixed);
    }
  }
  throw FormatError("unknown predictor kind");
}

inline json transition(const TransitionModel& t) {
  json dims = json::array();
  for (const auto& b : t.per_dim) {
    dims.push_back({{"dim", b.dim},
                    {"kernel", kernel(b.gp.kernel)},
                    {"jitter", b.gp.jitter},
                    {"inputs", matrix(b.gp.inputs)},
                    {"residuals", vector(b.gp.targets)}});
  }
  return json{{"predictor", predictor(t.predictor)},
              {"state_dims", t.state_dims},
              {"constant_dims", t.constant_dims},
              {"per_dim", std::move(dims)}};
}

inline TransitionModel to_transition(const json& j) {
  TransitionModel t;
  t.predictor = to_predictor(j.at("predictor"));
  t.state_dims = j.at("state_dims").get<std::size_t>();
  t.constant_dims = j.at("constant_dims").get<std::vector<std::size_t>>();
  for (const auto& d : j.at("per_dim")) {
    t.per_dim.push_back({d.at("dim").get<std::size_t>(),
                         GpRegression::fit(to_matrix(d.at("inputs")), to_vector(d.at("residuals")), to_kernel(d.at("kernel")),
                                           d.at("jitter").get<double>())});
  }
  return t;
}

inline json evaluation(const EvaluationModel& e) {
  json out = json::array();
  for (std::size_t j = 0; j < kOutcomes; ++j) {
    const auto& c = e.classifiers[j];
    out.push_back({{"outcome", kOutcomeNames[j]},
                   {"kernel", kernel(c.kernel)},
                   {"jitter", c.jitter},
                   {"inputs", matrix(c.inputs)},
                   {"labels", ivector(c.labels)},
                   {"latent_mode", vector(c.laplace.mode)},
                   {"psi", c.laplace.psi}});
  }
  return out;
}

inline EvaluationModel to_evaluation(const json& j) {
  if (!j.is_array() || j.size() != kOutcomes) throw FormatError("evaluation payload must hold two classifiers");
  EvaluationModel e;
  for (std::size_t k = 0; k < kOutcomes; ++k) {
    const auto& c = j[k];
    e.classifiers[k] = OutcomeClassifier::fit(to_matrix(c.at("inputs")), to_ivector(c.at("labels")), to_kernel(c.at("kernel")),
                                              c.at("jitter").get<double>());
  }
  return e;
}

inline json compensation(const std::optional<CompensationModel>& c) {
  if (!c) return nullptr;
  return json{{"variables", c->variables},
              {"names", c->names},
              {"kernel", kernel(c->gp.kernel)},
              {"jitter", c->gp.jitter},
              {"inputs", matrix(c->gp.inputs)},
              {"targets", vector(c->gp.targets)}};
}

inline std::optional<CompensationModel> to_compensation(const json& j) {
  if (j.is_null()) return std::nullopt;
  CompensationModel c;
  c.variables = j.at("variables").get<std::vector<std::size_t>>();
  c.names = j.at("names").get<std::vector<std::string>>();
  c.gp = GpRegression::fit(to_matrix(j.at("inputs")), to_vector(j.at("targets")), to_kernel(j.at("kernel")),
                           j.at("jitter").get<double>());
  return c;
}

inline std::string payload_digest(json doc) {
  doc.erase("digest");
  return sha256_hex(doc.dump());
}

}  // namespace detail

inline json to_document(const TrainedPipeline& p) {
  json doc{{"version", kFormatVersion},
           {"schema", detail::schema(p.schema)},
           {"scaling", detail::scaling(p.models.scaling)},
           {"transition", detail::transition(p.models.transition)},
           {"evaluation", detail::evaluation(p.models.evaluation)},
           {"compensation", detail::compensation(p.compensation)},
           {"config", to_json(p.config)}};
  doc["digest"] = detail::payload_digest(doc);
  return doc;
}

inline std::string serialize(const TrainedPipeline& p) { return to_document(p).dump(1) + "\n"; }

inline std::string digest_of(const TrainedPipeline& p) { return to_document(p).at("digest").get<std::string>(); }

inline TrainedPipeline restore(const std::string& bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("artifact is truncated or not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("version") || !doc["version"].is_number_integer()) {
    throw FormatError("artifact has no integer version field");
  }
  const int version = doc["version"].get<int>();
  if (version != kFormatVersion) throw VersionError(version, kFormatVersion);
  if (!doc.contains("digest") || !doc["digest"].is_string()) throw FormatError("artifact has no digest");
  const auto expected = doc["digest"].get<std::string>();
  const auto actual = detail::payload_digest(doc);
  if (expected != actual) throw DigestError("artifact digest mismatch: stored " + expected + ", computed " + actual);
  try {
    TrainedPipeline p;
    p.schema = detail::to_schema(doc.at("schema"));
    p.config = config_from_json(doc.at("config"));
    p.models.scaling = detail::to_scaling(doc.at("scaling"));
    p.models.propagation = p.config.propagation;
    p.models.transition = detail::to_transition(doc.at("transition"));
    p.models.evaluation = detail::to_evaluation(doc.at("evaluation"));
    p.compensation = detail::to_compensation(doc.at("compensation"));
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("artifact payload is malformed: ") + e.what());
  }
}

inline void save(const TrainedPipeline& p, const std::string& path) { csv::write_file(path, serialize(p)); }

inline TrainedPipeline load(const std::string& path) { return restore(csv::read_file(path)); }

}  // namespace dosegp::store
