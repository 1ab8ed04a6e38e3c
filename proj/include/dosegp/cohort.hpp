#pragma once

// Cohort loading, truncation, unit scaling and fold assignment.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dosegp/csv.hpp"
#include "dosegp/errors.hpp"

namespace dosegp {

inline constexpr std::size_t kStages = 3;
inline constexpr std::size_t kOutcomes = 2;  // 0 = LC, 1 = RP2

inline constexpr std::array<const char*, kOutcomes> kOutcomeNames{"lc", "rp2"};

struct VariableSchema {
  std::vector<std::string> names;  // lower-case column identifiers
  std::vector<std::string> units;
  std::vector<bool> constant_flags;
  double truncation_quantile = 0.7;
  std::pair<double, double> dose_bounds{1.5, 5.0};

  // The twelve selected variables. "il5" follows the variable list used for
  // model training; the variable glossary describes it as interleukin 15.
  static VariableSchema standard() {
    VariableSchema s;
    s.names = {"il4",        "il10",       "il5",       "ip10",     "mtv",      "glszm_lzlge",
               "glszm_zsv",  "tumor_geud", "lung_geud", "rs2234671", "rs238406", "rs1047768"};
    s.units = {"pg/mL", "pg/mL", "pg/mL", "pg/mL", "cm^3", "a.u.", "a.u.", "Gy", "Gy",
               "genotype", "genotype", "genotype"};
    s.constant_flags = {false, false, false, false, false, false, false, false, false, true, true, true};
    return s;
  }

  std::size_t size() const { return names.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    auto key = csv::lower(std::string(name));
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == key) return i;
    }
    return std::nullopt;
  }

  std::size_t require_index(std::string_view name) const {
    auto i = index_of(name);
    if (!i) throw ValidationError("unknown variable '" + std::string(name) + "'");
    return *i;
  }

  std::vector<std::size_t> active_dims() const {
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (!constant_flags[i]) dims.push_back(i);
    }
    return dims;
  }

  void validate() const {
    if (names.empty()) throw ValidationError("schema has no variables");
    if (units.size() != names.size() || constant_flags.size() != names.size()) {
      throw ValidationError("schema names, units and constant flags differ in length");
    }
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (!seen.insert(csv::lower(n)).second) throw ValidationError("duplicate variable name '" + n + "'");
    }
    if (!(truncation_quantile > 0.0 && truncation_quantile <= 1.0)) {
      throw ValidationError("truncation quantile must lie in (0, 1]");
    }
    if (!(dose_bounds.first > 0.0 && dose_bounds.first < dose_bounds.second)) {
      throw ValidationError("dose bounds must satisfy 0 < min < max");
    }
  }
};

struct PatientRecord {
  std::string patient_id;
  std::array<Eigen::VectorXd, kStages> states;
  std::array<double, kStages> doses{};
  std::array<int, kOutcomes> outcomes{};
};

namespace detail {

struct StageRow {
  std::size_t line = 0;
  Eigen::VectorXd values;
  double dose = 0.0;
};

inline void check_header(const csv::Table& table, const std::vector<std::string>& expected, const char* file) {
  for (const auto& h : table.header) {
    if (std::find(expected.begin(), expected.end(), h) == expected.end()) {
      throw ParseError(std::string("unknown column in ") + file, 1, h);
    }
  }
  for (const auto& e : expected) {
    if (table.column(e) < 0) throw ParseError(std::string("missing column in ") + file, 1, e);
  }
  std::set<std::string> seen(table.header.begin(), table.header.end());
  if (seen.size() != table.header.size()) throw ParseError(std::string("duplicate column in ") + file, 1, "");
}

}  // namespace detail

// Parses and validates a whole cohort. Any violation rejects everything.
inline std::vector<PatientRecord> parse_cohort(std::string_view states_text, std::string_view outcomes_text,
                                               const VariableSchema& schema) {
  schema.validate();
  const std::size_t q = schema.size();

  auto states = csv::parse(states_text);
  std::vector<std::string> expected{"patient_id", "stage"};
  for (const auto& n : schema.names) expected.push_back(csv::lower(n));
  expected.push_back("dose_gy_per_frac");
  detail::check_header(states, expected, "states file");

  std::vector<std::string> order;
  std::map<std::string, std::array<std::optional<detail::StageRow>, kStages>> by_patient;
  const auto id_col = states.column("patient_id");
  const auto stage_col = states.column("stage");
  const auto dose_col = states.column("dose_gy_per_frac");
  std::vector<std::ptrdiff_t> var_cols;
  for (const auto& n : schema.names) var_cols.push_back(states.column(csv::lower(n)));

  for (const auto& row : states.rows) {
    const auto& id = row.cells[id_col];
    if (id.empty()) throw ParseError("missing patient_id", row.line, "patient_id");
    double stage_value = csv::parse_number(row.cells[stage_col], row.line, "stage");
    if (stage_value != 1.0 && stage_value != 2.0 && stage_value != 3.0) {
      throw ParseError("stage must be 1, 2 or 3", row.line, "stage");
    }
    auto stage = static_cast<std::size_t>(stage_value) - 1;
    detail::StageRow sr;
    sr.line = row.line;
    sr.values.resize(static_cast<Eigen::Index>(q));
    for (std::size_t k = 0; k < q; ++k) {
      double v = csv::parse_number(row.cells[var_cols[k]], row.line, schema.names[k]);
      if (!std::isfinite(v)) throw ParseError("non-finite value", row.line, schema.names[k]);
      sr.values[static_cast<Eigen::Index>(k)] = v;
    }
    sr.dose = csv::parse_number(row.cells[dose_col], row.line, "dose_gy_per_frac");
    if (!(sr.dose > 0.0) || !std::isfinite(sr.dose)) {
      throw ParseError("dose must be positive", row.line, "dose_gy_per_frac");
    }
    auto [it, inserted] = by_patient.try_emplace(id);
    if (inserted) order.push_back(id);
    if (it->second[stage]) {
      throw ParseError("patient " + id + " has more than one row for stage " + std::to_string(stage + 1), row.line,
                       "stage");
    }
    it->second[stage] = std::move(sr);
  }

  auto outcomes = csv::parse(outcomes_text);
  detail::check_header(outcomes, {"patient_id", "lc", "rp2"}, "outcomes file");
  std::map<std::string, std::array<int, kOutcomes>> labels;
  const auto oid = outcomes.column("patient_id");
  for (const auto& row : outcomes.rows) {
    const auto& id = row.cells[oid];
    std::array<int, kOutcomes> y{};
    for (std::size_t j = 0; j < kOutcomes; ++j) {
      const char* name = kOutcomeNames[j];
      double v = csv::parse_number(row.cells[outcomes.column(name)], row.line, name);
      if (v != 0.0 && v != 1.0) throw ParseError("non-binary outcome", row.line, name);
      y[j] = static_cast<int>(v);
    }
    if (!by_patient.count(id)) throw ParseError("outcome for unknown patient " + id, row.line, "patient_id");
    if (!labels.emplace(id, y).second) throw ParseError("duplicate patient_id " + id, row.line, "patient_id");
  }

  std::vector<PatientRecord> records;
  records.reserve(order.size());
  for (const auto& id : order) {
    const auto& rows = by_patient.at(id);
    PatientRecord rec;
    rec.patient_id = id;
    for (std::size_t t = 0; t < kStages; ++t) {
      if (!rows[t]) {
        throw ParseError("patient " + id + " is missing stage " + std::to_string(t + 1), 0, "stage");
      }
      rec.states[t] = rows[t]->values;
      rec.doses[t] = rows[t]->dose;
    }
    for (std::size_t k = 0; k < q; ++k) {
      if (!schema.constant_flags[k]) continue;
      const auto kk = static_cast<Eigen::Index>(k);
      for (std::size_t t = 1; t < kStages; ++t) {
        if (rec.states[t][kk] != rec.states[0][kk]) {
          throw ParseError("constant variable changes across stages for patient " + id, rows[t]->line,
                           schema.names[k]);
        }
      }
    }
    auto lab = labels.find(id);
    if (lab == labels.end()) throw ParseError("patient " + id + " has no outcomes row", 0, "patient_id");
    rec.outcomes = lab->second;
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw ParseError("states file has no patients", 0, "");
  return records;
}

inline std::vector<PatientRecord> load_cohort(const std::string& states_path, const std::string& outcomes_path,
                                              const VariableSchema& schema) {
  return parse_cohort(csv::read_file(states_path), csv::read_file(outcomes_path), schema);
}

inline std::string format_states(const std::vector<PatientRecord>& records, const VariableSchema& schema) {
  std::string out = "patient_id,stage";
  for (const auto& n : schema.names) out += "," + n;
  out += ",dose_gy_per_frac\n";
  for (const auto& r : records) {
    for (std::size_t t = 0; t < kStages; ++t) {
      out += r.patient_id + "," + std::to_string(t + 1);
      for (Eigen::Index k = 0; k < r.states[t].size(); ++k) out += "," + csv::format_number(r.states[t][k]);
      out += "," + csv::format_number(r.doses[t]) + "\n";
    }
  }
  return out;
}

inline std::string format_outcomes(const std::vector<PatientRecord>& records) {
  std::string out = "patient_id,lc,rp2\n";
  for (const auto& r : records) {
    out += r.patient_id + "," + std::to_string(r.outcomes[0]) + "," + std::to_string(r.outcomes[1]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Truncation

// Empirical quantile, linear interpolation between order statistics
// (h = (n-1) q).
inline double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty vector");
  if (!(q > 0.0 && q <= 1.0)) throw ValidationError("quantile fraction must lie in (0, 1]");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

struct Truncation {
  std::vector<std::vector<double>> values;
  std::vector<double> caps;  // constant-flagged variables carry their maximum (a no-op cap)
};

inline Truncation truncate_quantile(std::vector<std::vector<double>> values, double q,
                                    const std::vector<bool>& constant_flags) {
  if (constant_flags.size() != values.size()) throw ValidationError("one constant flag per variable is required");
  Truncation out;
  out.caps.resize(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    auto& v = values[k];
    if (v.empty()) throw ValidationError("cannot truncate an empty variable");
    if (constant_flags[k]) {
      out.caps[k] = *std::max_element(v.begin(), v.end());
      continue;
    }
    const double cap = empirical_quantile(v, q);
    out.caps[k] = cap;
    for (auto& x : v) x = std::min(x, cap);
  }
  out.values = std::move(values);
  return out;
}

// ---------------------------------------------------------------------------
// Scaling

struct VariableScaling {
  std::string name;
  bool constant = false;
  double cap = 0.0;
  double min = 0.0;
  double max = 1.0;
};

struct Scaling {
  std::vector<VariableScaling> variables;
  std::pair<double, double> dose_bounds{1.5, 5.0};

  std::size_t size() const { return variables.size(); }

  // Constant-flagged variables pass through unchanged.
  double scale(std::size_t k, double v) const {
    const auto& s = variables.at(k);
    if (s.constant) return v;
    return (std::min(v, s.cap) - s.min) / (s.max - s.min);
  }

  double inverse(std::size_t k, double x) const {
    const auto& s = variables.at(k);
    if (s.constant) return x;
    return s.min + x * (s.max - s.min);
  }

  double inverse(std::string_view name, double x) const {
    auto key = csv::lower(std::string(name));
    for (std::size_t k = 0; k < variables.size(); ++k) {
      if (variables[k].name == key) return inverse(k, x);
    }
    throw ValidationError("unknown variable '" + std::string(name) + "'");
  }

  double scale_dose(double gy) const { return (gy - dose_bounds.first) / (dose_bounds.second - dose_bounds.first); }
  double inverse_dose(double x) const { return dose_bounds.first + x * (dose_bounds.second - dose_bounds.first); }

  Eigen::VectorXd scale_state(const Eigen::VectorXd& original) const {
    if (static_cast<std::size_t>(original.size()) != variables.size()) {
      throw ValidationError("state has " + std::to_string(original.size()) + " values, expected " +
                            std::to_string(variables.size()));
    }
    Eigen::VectorXd out(original.size());
    for (Eigen::Index k = 0; k < original.size(); ++k) out[k] = scale(static_cast<std::size_t>(k), original[k]);
    return out;
  }

  Eigen::VectorXd inverse_state(const Eigen::VectorXd& scaled) const {
    Eigen::VectorXd out(scaled.size());
    for (Eigen::Index k = 0; k < scaled.size(); ++k) out[k] = inverse(static_cast<std::size_t>(k), scaled[k]);
    return out;
  }
};

inline double inverse_scale(double x, std::string_view variable, const Scaling& scaling) {
  return scaling.inverse(variable, x);
}

struct ScaledCohort {
  std::vector<std::string> patient_ids;
  std::array<Eigen::MatrixXd, kStages> states;  // n x q
  std::array<Eigen::VectorXd, kStages> doses;   // scaled by dose bounds
  std::array<Eigen::VectorXi, kOutcomes> labels;
  Scaling scaling;

  std::size_t size() const { return patient_ids.size(); }
  std::size_t dims() const { return static_cast<std::size_t>(states[0].cols()); }

  ScaledCohort subset(const std::vector<std::size_t>& idx) const {
    ScaledCohort out;
    out.scaling = scaling;
    const auto m = static_cast<Eigen::Index>(idx.size());
    for (std::size_t t = 0; t < kStages; ++t) {
      out.states[t].resize(m, states[t].cols());
      out.doses[t].resize(m);
    }
    for (auto& l : out.labels) l.resize(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto i = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)]);
      out.patient_ids.push_back(patient_ids.at(static_cast<std::size_t>(i)));
      for (std::size_t t = 0; t < kStages; ++t) {
        out.states[t].row(r) = states[t].row(i);
        out.doses[t][r] = doses[t][i];
      }
      for (std::size_t j = 0; j < kOutcomes; ++j) out.labels[j][r] = labels[j][i];
    }
    return out;
  }
};

// Applies already-fitted caps and affine maps.
inline ScaledCohort apply_scaling(const std::vector<PatientRecord>& records, const Scaling& scaling) {
  ScaledCohort out;
  out.scaling = scaling;
  const auto n = static_cast<Eigen::Index>(records.size());
  const auto q = static_cast<Eigen::Index>(scaling.size());
  for (std::size_t t = 0; t < kStages; ++t) {
    out.states[t].resize(n, q);
    out.doses[t].resize(n);
  }
  for (auto& l : out.labels) l.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    out.patient_ids.push_back(r.patient_id);
    for (std::size_t t = 0; t < kStages; ++t) {
      out.states[t].row(i) = scaling.scale_state(r.states[t]).transpose();
      out.doses[t][i] = scaling.scale_dose(r.doses[t]);
    }
    for (std::size_t j = 0; j < kOutcomes; ++j) out.labels[j][i] = r.outcomes[j];
  }
  return out;
}

// Truncation caps and min/max come from all stages pooled.
inline ScaledCohort scale_unit_interval(const std::vector<PatientRecord>& records, const VariableSchema& schema) {
  schema.validate();
  if (records.empty()) throw ValidationError("cannot scale an empty cohort");
  const std::size_t q = schema.size();
  std::vector<std::vector<double>> pooled(q);
  for (const auto& r : records) {
    for (std::size_t t = 0; t < kStages; ++t) {
      for (std::size_t k = 0; k < q; ++k) pooled[k].push_back(r.states[t][static_cast<Eigen::Index>(k)]);
    }
  }
  auto truncated = truncate_quantile(std::move(pooled), schema.truncation_quantile, schema.constant_flags);

  Scaling scaling;
  scaling.dose_bounds = schema.dose_bounds;
  for (std::size_t k = 0; k < q; ++k) {
    VariableScaling vs;
    vs.name = csv::lower(schema.names[k]);
    vs.constant = schema.constant_flags[k];
    vs.cap = truncated.caps[k];
    const auto [mn, mx] = std::minmax_element(truncated.values[k].begin(), truncated.values[k].end());
    vs.min = *mn;
    vs.max = *mx;
    if (!vs.constant && !(vs.min < vs.max)) {
      throw ValidationError("variable '" + vs.name +
                            "' has no spread after truncation; flag it as constant in the schema");
    }
    scaling.variables.push_back(vs);
  }
  return apply_scaling(records, scaling);
}

// ---------------------------------------------------------------------------
// Folds

namespace detail {

inline void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

inline std::vector<std::vector<std::size_t>> deal(const std::vector<std::size_t>& order, std::size_t k) {
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < order.size(); ++i) folds[i % k].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

inline void check_folds(std::size_t n, std::size_t k) {
  if (k < 2) throw ValidationError("at least 2 folds are required");
  if (k > n) throw ValidationError("fold count " + std::to_string(k) + " exceeds sample count " + std::to_string(n));
}

}  // namespace detail

inline std::vector<std::vector<std::size_t>> split_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  detail::check_folds(n, k);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  detail::shuffle(order, rng);
  return detail::deal(order, k);
}

// Stratified on the (lc, rp2) label pair; strata are dealt consecutively so
// fold sizes still differ by at most one.
inline std::vector<std::vector<std::size_t>> split_folds(const ScaledCohort& cohort, std::size_t k,
                                                         std::uint64_t seed) {
  const std::size_t n = cohort.size();
  detail::check_folds(n, k);
  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, 4> strata;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    strata[static_cast<std::size_t>(2 * cohort.labels[0][ii] + cohort.labels[1][ii])].push_back(i);
  }
  std::vector<std::size_t> order;
  for (auto& s : strata) {
    detail::shuffle(s, rng);
    order.insert(order.end(), s.begin(), s.end());
  }
  return detail::deal(order, k);
}

inline std::vector<std::size_t> complement(const std::vector<std::size_t>& fold, std::size_t n) {
  std::vector<bool> in(n, false);
  for (auto i : fold) in[i] = true;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!in[i]) out.push_back(i);
  }
  return out;
}

}  // namespace dosegp
