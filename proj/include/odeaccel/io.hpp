/**
 * @file io.hpp
 * @brief Data files, run configuration and versioned reports.
 *
 * Data files are comma-separated tables with a `t,x1,...,xd` header. Run
 * configurations are flat JSON objects with typed keys; any unknown key is
 * rejected. Reports are JSON documents tagged with a schema name and version.
 */
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "odeaccel/accel.hpp"
#include "odeaccel/dataset.hpp"
#include "odeaccel/errors.hpp"
#include "odeaccel/mc.hpp"
#include "odeaccel/models.hpp"
#include "odeaccel/nls.hpp"
#include "odeaccel/ode_core.hpp"

namespace odeaccel {

using Json = nlohmann::json;

inline constexpr int kReportSchemaVersion = 1;
inline constexpr std::string_view kEstimateSchema = "odeaccel.estimate";
inline constexpr std::string_view kStudySchema = "odeaccel.mc";

// ---------------------------------------------------------------- data files

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

inline double parse_real(const std::string& text, std::size_t row, std::size_t col) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (text.empty() || used != text.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ", column " + std::to_string(col + 1) +
                                           ": '" + text + "' is not a finite real number");
  }
  return v;
}

}  // namespace detail

/// Parses a data table. Rows are numbered from 1 at the header line.
[[nodiscard]] inline Dataset parse_data_csv(std::istream& in, std::optional<std::size_t> expected_dim = {}) {
  std::string line;
  std::size_t row = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      header = detail::split_fields(line);
      break;
    }
  }
  if (header.size() < 2 || header[0] != "t") {
    throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": header must be t,x1,...,xd");
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t i = 0; i < d; ++i) {
    if (header[i + 1] != "x" + std::to_string(i + 1)) {
      throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": column " + std::to_string(i + 2) +
                                             " must be named x" + std::to_string(i + 1));
    }
  }
  if (expected_dim && *expected_dim != d) {
    throw Error(ErrorKind::ParseError, "data has " + std::to_string(d) + " state columns but the model has " +
                                           std::to_string(*expected_dim));
  }
  std::vector<double> times;
  std::vector<std::vector<double>> cols;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const auto fields = detail::split_fields(line);
    if (fields.size() != d + 1) {
      throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": expected " + std::to_string(d + 1) +
                                             " fields, found " + std::to_string(fields.size()));
    }
    const double t = detail::parse_real(fields[0], row, 0);
    if (t < 0.0) {
      throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": time must be nonnegative");
    }
    if (!times.empty() && !(t > times.back())) {
      throw Error(ErrorKind::ParseError, "row " + std::to_string(row) + ": times must be strictly increasing");
    }
    times.push_back(t);
    std::vector<double> values(d);
    for (std::size_t i = 0; i < d; ++i) {
      values[i] = detail::parse_real(fields[i + 1], row, i + 1);
    }
    cols.push_back(std::move(values));
  }
  if (times.empty()) {
    throw Error(ErrorKind::ParseError, "data file has no observations");
  }
  Dataset data;
  data.times = std::move(times);
  data.observations.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (std::size_t i = 0; i < d; ++i) {
      data.observations(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j][i];
    }
  }
  return data;
}

[[nodiscard]] inline Dataset load_data_csv(const std::string& path, std::optional<std::size_t> expected_dim = {}) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::ParseError, "cannot open data file '" + path + "'");
  }
  try {
    return parse_data_csv(in, expected_dim);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

inline void write_data_csv(std::ostream& out, const Dataset& data) {
  out << "t";
  for (std::size_t i = 0; i < data.dim(); ++i) {
    out << ",x" << (i + 1);
  }
  out << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t j = 0; j < data.size(); ++j) {
    out << data.times[j];
    for (Eigen::Index i = 0; i < data.observations.rows(); ++i) {
      out << ',' << data.observations(i, static_cast<Eigen::Index>(j));
    }
    out << '\n';
  }
}

inline void save_data_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorKind::ParseError, "cannot write '" + path + "'");
  }
  write_data_csv(out, data);
}

// ---------------------------------------------------------------- run config

/// Flat run configuration. Every field is optional; absent fields fall back
/// to the model catalog or the scenario preset.
struct RunConfig {
  std::optional<std::string> model;
  std::optional<std::string> preset;
  std::optional<std::string> estimator;  // "accel" or "nls" for fit
  std::optional<std::vector<double>> xi;
  std::optional<std::vector<double>> theta;
  std::optional<std::vector<bool>> estimate;
  std::optional<bool> known_xi;
  std::optional<std::vector<double>> bandwidth_constants;
  std::optional<std::vector<double>> bandwidths;
  std::optional<int> degree;
  std::optional<double> level;
  std::optional<double> rtol;
  std::optional<double> atol;
  std::optional<std::size_t> max_steps;
  std::optional<std::size_t> eval_points;
  std::optional<std::size_t> fisher_points;
  std::optional<FisherDesign> fisher_design;
  std::optional<bool> rescale_time;
  std::optional<std::size_t> nls_max_iterations;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> design;
  std::optional<std::vector<double>> times;
  std::optional<double> t_end;
  std::optional<std::size_t> n;
  std::optional<std::vector<double>> sigma;
  std::optional<std::size_t> replications;
  std::optional<std::size_t> replicate;
  std::optional<std::vector<std::string>> estimators;
  std::optional<std::size_t> jobs;
  std::optional<std::string> data;
  std::optional<std::string> out;
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& key, const std::string& what) {
  throw Error(ErrorKind::ParseError, "config key '" + key + "': " + what);
}

inline double json_real(const Json& v, const std::string& key) {
  if (!v.is_number()) {
    config_error(key, "expected a number");
  }
  const double x = v.get<double>();
  if (!std::isfinite(x)) {
    config_error(key, "expected a finite number");
  }
  return x;
}

inline std::size_t json_count(const Json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    config_error(key, "expected a nonnegative integer");
  }
  return v.get<std::size_t>();
}

inline std::vector<double> json_reals(const Json& v, const std::string& key) {
  if (v.is_number()) {
    return {json_real(v, key)};
  }
  if (!v.is_array()) {
    config_error(key, "expected an array of numbers");
  }
  std::vector<double> out;
  for (const auto& e : v) {
    out.push_back(json_real(e, key));
  }
  return out;
}

}  // namespace detail

[[nodiscard]] inline RunConfig parse_run_config(const Json& j) {
  using detail::config_error;
  if (!j.is_object()) {
    throw Error(ErrorKind::ParseError, "config must be a JSON object");
  }
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    auto str = [&]() {
      if (!v.is_string()) {
        config_error(key, "expected a string");
      }
      return v.get<std::string>();
    };
    auto boolean = [&]() {
      if (!v.is_boolean()) {
        config_error(key, "expected true or false");
      }
      return v.get<bool>();
    };
    if (key == "model") {
      c.model = str();
    } else if (key == "preset") {
      c.preset = str();
    } else if (key == "estimator") {
      c.estimator = str();
      if (*c.estimator != "accel" && *c.estimator != "nls") {
        config_error(key, "expected \"accel\" or \"nls\"");
      }
    } else if (key == "xi") {
      c.xi = detail::json_reals(v, key);
    } else if (key == "theta") {
      c.theta = detail::json_reals(v, key);
    } else if (key == "estimate") {
      if (!v.is_array()) {
        config_error(key, "expected an array of booleans");
      }
      std::vector<bool> mask;
      for (const auto& e : v) {
        if (!e.is_boolean()) {
          config_error(key, "expected an array of booleans");
        }
        mask.push_back(e.get<bool>());
      }
      c.estimate = mask;
    } else if (key == "known_xi") {
      c.known_xi = boolean();
    } else if (key == "bandwidth_constants") {
      c.bandwidth_constants = detail::json_reals(v, key);
    } else if (key == "bandwidths") {
      c.bandwidths = detail::json_reals(v, key);
    } else if (key == "degree") {
      c.degree = static_cast<int>(detail::json_count(v, key));
    } else if (key == "level") {
      c.level = detail::json_real(v, key);
    } else if (key == "rtol") {
      c.rtol = detail::json_real(v, key);
    } else if (key == "atol") {
      c.atol = detail::json_real(v, key);
    } else if (key == "max_steps") {
      c.max_steps = detail::json_count(v, key);
    } else if (key == "eval_points") {
      c.eval_points = detail::json_count(v, key);
    } else if (key == "fisher_points") {
      c.fisher_points = detail::json_count(v, key);
    } else if (key == "fisher_design") {
      const std::string v_str = str();
      if (v_str != "observed" && v_str != "uniform") {
        config_error(key, "expected \"observed\" or \"uniform\"");
      }
      c.fisher_design = v_str == "observed" ? FisherDesign::Observed : FisherDesign::Uniform;
    } else if (key == "rescale_time") {
      c.rescale_time = boolean();
    } else if (key == "nls_max_iterations") {
      c.nls_max_iterations = detail::json_count(v, key);
    } else if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(detail::json_count(v, key));
    } else if (key == "design") {
      c.design = str();
      if (*c.design != "grid" && *c.design != "equidistant" && *c.design != "uniform_random") {
        config_error(key, "expected \"grid\", \"equidistant\" or \"uniform_random\"");
      }
    } else if (key == "times") {
      c.times = detail::json_reals(v, key);
    } else if (key == "t_end") {
      c.t_end = detail::json_real(v, key);
    } else if (key == "n") {
      c.n = detail::json_count(v, key);
    } else if (key == "sigma") {
      c.sigma = detail::json_reals(v, key);
    } else if (key == "replications") {
      c.replications = detail::json_count(v, key);
    } else if (key == "replicate") {
      c.replicate = detail::json_count(v, key);
    } else if (key == "estimators") {
      if (!v.is_array() || v.empty()) {
        config_error(key, "expected a nonempty array of estimator names");
      }
      std::vector<std::string> names;
      for (const auto& e : v) {
        if (!e.is_string() || (e.get<std::string>() != "accel" && e.get<std::string>() != "nls")) {
          config_error(key, "entries must be \"accel\" or \"nls\"");
        }
        names.push_back(e.get<std::string>());
      }
      c.estimators = names;
    } else if (key == "jobs") {
      c.jobs = detail::json_count(v, key);
    } else if (key == "data") {
      c.data = str();
    } else if (key == "out") {
      c.out = str();
    } else {
      throw Error(ErrorKind::ParseError, "unknown config key '" + key + "'");
    }
  }
  return c;
}

[[nodiscard]] inline RunConfig parse_run_config_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::ParseError, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

[[nodiscard]] inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::ParseError, "cannot open config file '" + path + "'");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config_text(ss.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

namespace detail {

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void apply_parameters(const RunConfig& c, ParameterVector& p) {
  if (c.xi) {
    if (c.xi->size() != static_cast<std::size_t>(p.xi.size())) {
      config_error("xi", "needs " + std::to_string(p.xi.size()) + " values");
    }
    p.xi = to_vector(*c.xi);
  }
  if (c.theta) {
    if (c.theta->size() != static_cast<std::size_t>(p.theta.size())) {
      config_error("theta", "needs " + std::to_string(p.theta.size()) + " values");
    }
    p.theta = to_vector(*c.theta);
  }
  if (c.estimate && c.known_xi) {
    config_error("known_xi", "cannot be combined with 'estimate'");
  }
  if (c.estimate) {
    if (c.estimate->size() != p.size()) {
      config_error("estimate", "needs " + std::to_string(p.size()) + " entries");
    }
    p.estimate_mask = *c.estimate;
  }
  if (c.known_xi) {
    for (std::size_t k = 0; k < static_cast<std::size_t>(p.xi.size()); ++k) {
      p.estimate_mask[k] = !*c.known_xi;
    }
  }
  // Re-validate through the checking constructor.
  p = ParameterVector(p.xi, p.theta, p.estimate_mask);
}

inline void apply_accel_settings(const RunConfig& c, AccelConfig& a) {
  if (c.bandwidth_constants) {
    a.bandwidth_constants = *c.bandwidth_constants;
  }
  if (c.bandwidths) {
    a.bandwidths = *c.bandwidths;
  }
  if (c.degree) {
    a.degree = *c.degree;
  }
  if (c.level) {
    a.level = *c.level;
  }
  if (c.rtol) {
    a.tol.rtol = *c.rtol;
  }
  if (c.atol) {
    a.tol.atol = *c.atol;
  }
  if (c.max_steps) {
    a.tol.max_steps = *c.max_steps;
  }
  if (c.eval_points) {
    a.eval_points = *c.eval_points;
  }
  if (c.fisher_points) {
    a.fisher_points = *c.fisher_points;
  }
  if (c.fisher_design) {
    a.fisher_design = *c.fisher_design;
  }
  if (c.rescale_time) {
    a.rescale_time = *c.rescale_time;
  }
}

}  // namespace detail

/// Estimator settings for `fit`: known components come from xi/theta/estimate.
struct FitSetup {
  ModelCatalogEntry entry;
  AccelConfig accel;
  std::string estimator = "accel";
  std::size_t nls_max_iterations = 200;
};

[[nodiscard]] inline FitSetup fit_setup(const RunConfig& c) {
  if (!c.model) {
    throw Error(ErrorKind::ParseError, "no model given (use --model or the 'model' config key)");
  }
  FitSetup s{catalog_get(*c.model), {}, c.estimator.value_or("accel"), c.nls_max_iterations.value_or(200)};
  ParameterVector ref = s.entry.default_eta;
  detail::apply_parameters(c, ref);
  s.accel.reference = ref;
  detail::apply_accel_settings(c, s.accel);
  return s;
}

/// Scenario for `simulate` and `mc`: a preset (or the catalog defaults of the
/// model) with any explicitly given keys overriding it.
[[nodiscard]] inline ScenarioSpec scenario_from_config(const RunConfig& c) {
  ScenarioSpec s;
  if (c.preset) {
    s = scenario_preset(*c.preset);
    if (c.model && *c.model != s.model) {
      detail::config_error("model", "conflicts with preset '" + *c.preset + "'");
    }
  } else {
    if (!c.model) {
      throw Error(ErrorKind::ParseError, "no model or preset given");
    }
    const auto entry = catalog_get(*c.model);
    s.name = entry.name;
    s.model = entry.name;
    s.truth = entry.default_eta;
    s.t_end = entry.default_horizon;
    s.design = TimeDesign::Equidistant;
    s.n = 21;
    s.sigma = {0.05};
    s.replications = 100;
    s.seed = 1;
  }
  detail::apply_parameters(c, s.truth);
  detail::apply_accel_settings(c, s.accel);
  if (c.level) {
    s.level = *c.level;
  }
  if (c.design) {
    s.design = *c.design == "grid" ? TimeDesign::Grid
               : *c.design == "equidistant" ? TimeDesign::Equidistant
                                            : TimeDesign::UniformRandom;
  }
  if (c.times) {
    s.grid = *c.times;
    if (!c.design) {
      s.design = TimeDesign::Grid;
    }
    if (!c.t_end && !s.grid.empty()) {
      s.t_end = s.grid.back();
    }
  }
  if (c.t_end) {
    s.t_end = *c.t_end;
  }
  if (c.n) {
    s.n = *c.n;
  }
  if (c.sigma) {
    s.sigma = *c.sigma;
  }
  if (c.replications) {
    s.replications = *c.replications;
  }
  if (c.seed) {
    s.seed = *c.seed;
  }
  if (c.nls_max_iterations) {
    s.nls_max_iterations = *c.nls_max_iterations;
  }
  if (c.estimators) {
    s.run_accel = s.run_nls = false;
    for (const auto& e : *c.estimators) {
      (e == "accel" ? s.run_accel : s.run_nls) = true;
    }
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ParseError, std::string("invalid scenario: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------- reports

namespace detail {

inline Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    a.push_back(v(k));
  }
  return a;
}

inline Json real_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline double real_from(const Json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

inline Json parameters_json(const ParameterVector& p) {
  return {{"xi", vector_json(p.xi)}, {"theta", vector_json(p.theta)}, {"estimate", p.estimate_mask}};
}

inline void check_schema(const Json& j, std::string_view schema) {
  if (!j.is_object() || !j.contains("schema") || !j.contains("schema_version")) {
    throw Error(ErrorKind::ParseError, "document has no schema tag");
  }
  if (j.at("schema").get<std::string>() != schema) {
    throw Error(ErrorKind::ParseError, "expected a '" + std::string(schema) + "' document");
  }
  if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != kReportSchemaVersion) {
    throw Error(ErrorKind::ParseError, "unsupported schema version " + j.at("schema_version").dump());
  }
}

inline const char* method_name(PreliminaryMethod m) {
  return m == PreliminaryMethod::IntegralSme ? "integral_sme" : "derivative_sme";
}

}  // namespace detail

[[nodiscard]] inline Json report_to_json(const EstimateReport& r) {
  using detail::real_or_null;
  const auto d = static_cast<std::size_t>(r.eta_accel.xi.size());
  Json ci = Json::array();
  for (const auto& c : r.ci) {
    ci.push_back({{"index", c.index},
                  {"label", eta_label(c.index, d)},
                  {"point", c.point},
                  {"lower", c.lower},
                  {"upper", c.upper},
                  {"variance", c.variance}});
  }
  Json bw = Json::array();
  for (const auto& b : r.bandwidths) {
    bw.push_back({{"bandwidth", b.bandwidth},
                  {"ok", b.ok},
                  {"rss", real_or_null(b.rss)},
                  {"jacobian_condition", real_or_null(b.jacobian_condition)},
                  {"error", b.error}});
  }
  Json fisher = Json::array();
  for (Eigen::Index a = 0; a < r.fisher.matrix.rows(); ++a) {
    Json row = Json::array();
    for (Eigen::Index b = 0; b < r.fisher.matrix.cols(); ++b) {
      row.push_back(real_or_null(r.fisher.matrix(a, b)));
    }
    fisher.push_back(row);
  }
  return {{"schema", kEstimateSchema},
          {"schema_version", kReportSchemaVersion},
          {"model", r.model_name},
          {"estimator", r.estimator},
          {"n", r.n},
          {"level", r.level},
          {"preliminary_method", detail::method_name(r.prelim_method)},
          {"selected_bandwidth", r.selected_bandwidth},
          {"eta_preliminary", detail::parameters_json(r.eta_prelim)},
          {"eta", detail::parameters_json(r.eta_accel)},
          {"rss", r.rss},
          {"sigma2_hat", r.sigma2_hat},
          {"jacobian_condition", real_or_null(r.jacobian_condition)},
          {"finite_difference_derivatives", r.finite_difference_derivatives},
          {"fisher", fisher},
          {"intervals", ci},
          {"bandwidths", bw},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"status", r.status}};
}

namespace detail {

inline ParameterVector parameters_from(const Json& j) {
  auto vec_of = [](const Json& a) {
    const auto v = a.get<std::vector<double>>();
    return to_vector(v);
  };
  return {vec_of(j.at("xi")), vec_of(j.at("theta")), j.at("estimate").get<std::vector<bool>>()};
}

}  // namespace detail

/// Inverse of report_to_json. Throws ParseError on a wrong schema or version.
[[nodiscard]] inline EstimateReport report_from_json(const Json& j) {
  detail::check_schema(j, kEstimateSchema);
  try {
    EstimateReport r;
    r.model_name = j.at("model").get<std::string>();
    r.estimator = j.at("estimator").get<std::string>();
    r.n = j.at("n").get<std::size_t>();
    r.level = j.at("level").get<double>();
    r.prelim_method = j.at("preliminary_method").get<std::string>() == "integral_sme"
                          ? PreliminaryMethod::IntegralSme
                          : PreliminaryMethod::DerivativeSme;
    r.selected_bandwidth = j.at("selected_bandwidth").get<double>();
    r.eta_prelim = detail::parameters_from(j.at("eta_preliminary"));
    r.eta_accel = detail::parameters_from(j.at("eta"));
    r.rss = j.at("rss").get<double>();
    r.sigma2_hat = j.at("sigma2_hat").get<double>();
    r.jacobian_condition = detail::real_from(j.at("jacobian_condition"));
    r.finite_difference_derivatives = j.at("finite_difference_derivatives").get<bool>();
    const auto& f = j.at("fisher");
    r.fisher.matrix.resize(static_cast<Eigen::Index>(f.size()), static_cast<Eigen::Index>(f.size()));
    for (std::size_t a = 0; a < f.size(); ++a) {
      for (std::size_t b = 0; b < f.size(); ++b) {
        r.fisher.matrix(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            detail::real_from(f.at(a).at(b));
      }
    }
    r.fisher.sigma2 = r.sigma2_hat;
    for (const auto& c : j.at("intervals")) {
      ConfidenceInterval ci;
      ci.index = c.at("index").get<std::size_t>();
      ci.point = c.at("point").get<double>();
      ci.lower = c.at("lower").get<double>();
      ci.upper = c.at("upper").get<double>();
      ci.variance = c.at("variance").get<double>();
      r.fisher.indices.push_back(ci.index);
      r.ci.push_back(ci);
    }
    for (const auto& b : j.at("bandwidths")) {
      BandwidthDiagnostic bd;
      bd.bandwidth = b.at("bandwidth").get<double>();
      bd.ok = b.at("ok").get<bool>();
      bd.rss = detail::real_from(b.at("rss"));
      bd.jacobian_condition = detail::real_from(b.at("jacobian_condition"));
      bd.error = b.at("error").get<std::string>();
      r.bandwidths.push_back(bd);
    }
    r.iterations = j.at("iterations").get<std::size_t>();
    r.converged = j.at("converged").get<bool>();
    r.status = j.at("status").get<std::string>();
    return r;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("malformed estimate report: ") + e.what());
  }
}

[[nodiscard]] inline Json study_to_json(const McSummary& s) {
  Json est = Json::array();
  for (const auto& e : s.estimators) {
    Json params = Json::array();
    for (const auto& p : e.parameters) {
      params.push_back({{"index", p.index},
                        {"label", p.label},
                        {"truth", p.truth},
                        {"mean", p.mean},
                        {"coverage", p.coverage},
                        {"ste", p.ste},
                        {"asym", p.asym}});
    }
    est.push_back({{"estimator", e.estimator},
                   {"successes", e.successes},
                   {"failures", e.failures},
                   {"failure_warning", e.failure_warning},
                   {"sample_errors", e.sample_errors},
                   {"parameters", params}});
  }
  return {{"schema", kStudySchema},
          {"schema_version", kReportSchemaVersion},
          {"scenario", s.scenario},
          {"model", s.model},
          {"replications", s.replications},
          {"level", s.level},
          {"estimators", est}};
}

[[nodiscard]] inline McSummary study_from_json(const Json& j) {
  detail::check_schema(j, kStudySchema);
  try {
    McSummary s;
    s.scenario = j.at("scenario").get<std::string>();
    s.model = j.at("model").get<std::string>();
    s.replications = j.at("replications").get<std::size_t>();
    s.level = j.at("level").get<double>();
    for (const auto& e : j.at("estimators")) {
      EstimatorSummary es;
      es.estimator = e.at("estimator").get<std::string>();
      es.successes = e.at("successes").get<std::size_t>();
      es.failures = e.at("failures").get<std::size_t>();
      es.failure_warning = e.at("failure_warning").get<bool>();
      es.sample_errors = e.at("sample_errors").get<std::vector<std::string>>();
      for (const auto& p : e.at("parameters")) {
        ParameterSummary ps;
        ps.index = p.at("index").get<std::size_t>();
        ps.label = p.at("label").get<std::string>();
        ps.truth = p.at("truth").get<double>();
        ps.mean = p.at("mean").get<double>();
        ps.coverage = p.at("coverage").get<double>();
        ps.ste = p.at("ste").get<double>();
        ps.asym = p.at("asym").get<double>();
        es.parameters.push_back(ps);
      }
      s.estimators.push_back(es);
    }
    return s;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("malformed study report: ") + e.what());
  }
}

// ---------------------------------------------------------------- tables

/// Four significant digits, switching to e-notation for small or large values.
[[nodiscard]] inline std::string format_sig(double v) {
  if (!std::isfinite(v)) {
    return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

namespace detail {

inline void table_row(std::ostream& out, const std::vector<std::string>& cells, std::size_t first, std::size_t rest) {
  for (std::size_t k = 0; k < cells.size(); ++k) {
    out << std::setw(static_cast<int>(k == 0 ? first : rest)) << (k == 0 ? std::left : std::right) << cells[k];
  }
  out << std::right << '\n';
}

}  // namespace detail

inline void render_estimate_table(std::ostream& out, const EstimateReport& r) {
  const auto d = static_cast<std::size_t>(r.eta_accel.xi.size());
  out << "model " << r.model_name << ", estimator " << r.estimator << ", n = " << r.n << ", level "
      << format_sig(r.level) << '\n';
  detail::table_row(out, {"", "Point", "CI(L)", "CI(R)"}, 10, 13);
  for (const auto& c : r.ci) {
    detail::table_row(out, {eta_label(c.index, d), format_sig(c.point), format_sig(c.lower), format_sig(c.upper)}, 10,
                      13);
  }
  out << "sigma2_hat " << format_sig(r.sigma2_hat) << ", RSS " << format_sig(r.rss);
  if (r.estimator == "accel") {
    out << ", bandwidth " << format_sig(r.selected_bandwidth) << " (" << detail::method_name(r.prelim_method) << ")";
  } else {
    out << ", iterations " << r.iterations << " (" << r.status << ")";
  }
  out << '\n';
  if (r.finite_difference_derivatives) {
    out << "note: model derivatives were approximated by finite differences\n";
  }
}

inline void render_study_tables(std::ostream& out, const McSummary& s) {
  out << "scenario " << s.scenario << " (" << s.model << "), R = " << s.replications << '\n';
  std::vector<std::string> head{""};
  for (const auto& e : s.estimators) {
    head.push_back(e.estimator + " Mean");
    head.push_back(e.estimator + " Coverage");
  }
  detail::table_row(out, head, 10, 16);
  const std::size_t rows = s.estimators.empty() ? 0 : s.estimators.front().parameters.size();
  for (std::size_t k = 0; k < rows; ++k) {
    std::vector<std::string> cells{s.estimators.front().parameters[k].label};
    for (const auto& e : s.estimators) {
      cells.push_back(format_sig(e.parameters[k].mean));
      cells.push_back(format_sig(e.parameters[k].coverage));
    }
    detail::table_row(out, cells, 10, 16);
  }
  out << '\n';
  head = {""};
  for (const auto& e : s.estimators) {
    head.push_back(e.estimator + " STE");
    head.push_back(e.estimator + " ASYM");
  }
  detail::table_row(out, head, 10, 16);
  for (std::size_t k = 0; k < rows; ++k) {
    std::vector<std::string> cells{s.estimators.front().parameters[k].label};
    for (const auto& e : s.estimators) {
      cells.push_back(format_sig(e.parameters[k].ste));
      cells.push_back(format_sig(e.parameters[k].asym));
    }
    detail::table_row(out, cells, 10, 16);
  }
  for (const auto& e : s.estimators) {
    if (e.failures > 0) {
      out << e.estimator << ": " << e.failures << " failed replications"
          << (e.failure_warning ? " (warning: above 1%)" : "") << '\n';
    }
  }
}

}  // namespace odeaccel
