/**
 * @file mc.hpp
 * @brief Synthetic data generation and Monte Carlo coverage studies.
 *
 * Replicate i of a study draws its noise from a generator seeded with
 * (seed, i) only, so datasets and summaries do not depend on how
 * replications are scheduled across workers.
 */
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "odeaccel/accel.hpp"
#include "odeaccel/dataset.hpp"
#include "odeaccel/errors.hpp"
#include "odeaccel/models.hpp"
#include "odeaccel/nls.hpp"
#include "odeaccel/ode_core.hpp"

namespace odeaccel {

enum class TimeDesign { Grid, Equidistant, UniformRandom };

[[nodiscard]] inline const char* to_string(TimeDesign d) {
  switch (d) {
    case TimeDesign::Grid: return "grid";
    case TimeDesign::Equidistant: return "equidistant";
    case TimeDesign::UniformRandom: return "uniform_random";
  }
  return "grid";
}

struct ScenarioSpec {
  std::string name;
  std::string model;
  ParameterVector truth;  // estimate_mask marks the estimated components
  TimeDesign design = TimeDesign::Equidistant;
  std::vector<double> grid;  // explicit times for TimeDesign::Grid
  double t_end = 1.0;
  std::size_t n = 0;         // number of times for equidistant / random designs
  std::vector<double> sigma; // one entry (shared) or one per state
  std::size_t replications = 1;
  std::uint64_t seed = 1;
  bool run_accel = true;
  bool run_nls = false;
  double level = 0.95;
  std::size_t nls_max_iterations = 200;
  AccelConfig accel;  // reference and level are overwritten from the scenario

  void validate() const {
    if (replications < 1) {
      throw Error(ErrorKind::InvalidArgument, "replications must be at least 1");
    }
    for (double s : sigma) {
      if (!(s >= 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "noise levels must be nonnegative");
      }
    }
    if (sigma.empty()) {
      throw Error(ErrorKind::InvalidArgument, "scenario needs a noise level");
    }
    if (design == TimeDesign::Grid) {
      if (grid.empty()) {
        throw Error(ErrorKind::InvalidArgument, "grid design needs explicit times");
      }
      for (std::size_t j = 0; j < grid.size(); ++j) {
        if (grid[j] < 0.0 || grid[j] > t_end || (j > 0 && !(grid[j] > grid[j - 1]))) {
          throw Error(ErrorKind::InvalidArgument, "grid times must be increasing within [0, t_end]");
        }
      }
    } else if (n < 2) {
      throw Error(ErrorKind::InvalidArgument, "design needs at least two time points");
    }
    if (!(t_end > 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "t_end must be positive");
    }
    if (!run_accel && !run_nls) {
      throw Error(ErrorKind::InvalidArgument, "scenario requests no estimator");
    }
  }
};

namespace detail {

inline std::mt19937_64 replicate_rng(std::uint64_t seed, std::size_t index) {
  const auto idx = static_cast<std::uint64_t>(index);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(idx), static_cast<std::uint32_t>(idx >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

inline ToleranceSpec truth_tolerance() { return {1e-11, 1e-13, 1000000}; }

}  // namespace detail

[[nodiscard]] inline std::vector<double> design_times(const ScenarioSpec& spec, std::mt19937_64& rng) {
  switch (spec.design) {
    case TimeDesign::Grid:
      return spec.grid;
    case TimeDesign::Equidistant:
      return linspace(0.0, spec.t_end, spec.n);
    case TimeDesign::UniformRandom: {
      std::uniform_real_distribution<double> u(0.0, spec.t_end);
      std::vector<double> t(spec.n);
      for (auto& v : t) {
        v = u(rng);
      }
      std::sort(t.begin(), t.end());
      return t;
    }
  }
  return {};
}

/// Y_ij = x_i(eta_0, t_j) + eps_ij with eps_ij ~ N(0, sigma_i^2).
[[nodiscard]] inline Dataset simulate_dataset(const ScenarioSpec& spec, std::size_t replicate_index) {
  spec.validate();
  const ModelCatalogEntry entry = catalog_get(spec.model);
  check_dimensions(entry.model, spec.truth);
  const auto d = static_cast<Eigen::Index>(entry.model.dim_state);
  if (spec.sigma.size() != 1 && spec.sigma.size() != static_cast<std::size_t>(d)) {
    throw Error(ErrorKind::DimensionMismatch, "sigma must have one entry or one per state");
  }
  auto rng = detail::replicate_rng(spec.seed, replicate_index);
  std::vector<double> times = design_times(spec, rng);
  const Trajectory traj = integrate(entry.model, spec.truth, spec.t_end, detail::truth_tolerance());
  Matrix y = traj.at(times);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double s = spec.sigma.size() == 1 ? spec.sigma[0] : spec.sigma[static_cast<std::size_t>(i)];
      const double eps = normal(rng);
      y(i, j) += s * eps;
    }
  }
  return {std::move(times), std::move(y)};
}

/// One estimator's output on one replicate, over the estimated components.
struct ReplicateOutcome {
  bool ok = false;
  std::string error;
  Vector estimate;
  Vector lower;
  Vector upper;
  Vector variance;
};

struct ReplicateRecord {
  std::size_t index = 0;
  ReplicateOutcome accel;
  ReplicateOutcome nls;
};

struct ParameterSummary {
  std::size_t index = 0;
  std::string label;
  double truth = 0.0;
  double mean = 0.0;
  double coverage = 0.0;
  double ste = 0.0;
  double asym = 0.0;
};

struct EstimatorSummary {
  std::string estimator;
  std::vector<ParameterSummary> parameters;
  std::size_t successes = 0;
  std::size_t failures = 0;
  bool failure_warning = false;  // failures above 1% of replications
  std::vector<std::string> sample_errors;
};

struct McSummary {
  std::string scenario;
  std::string model;
  std::size_t replications = 0;
  double level = 0.95;
  std::vector<EstimatorSummary> estimators;
  std::vector<ReplicateRecord> records;
};

namespace detail {

inline ReplicateOutcome outcome_from(const EstimateReport& report) {
  ReplicateOutcome o;
  const auto u = static_cast<Eigen::Index>(report.ci.size());
  o.estimate.resize(u);
  o.lower.resize(u);
  o.upper.resize(u);
  o.variance.resize(u);
  for (Eigen::Index a = 0; a < u; ++a) {
    const auto& ci = report.ci[static_cast<std::size_t>(a)];
    o.estimate(a) = ci.point;
    o.lower(a) = ci.lower;
    o.upper(a) = ci.upper;
    o.variance(a) = ci.variance;
  }
  o.ok = o.estimate.allFinite() && o.lower.allFinite() && o.upper.allFinite();
  if (!o.ok) {
    o.error = "non-finite estimate or interval";
  }
  return o;
}

inline AccelConfig scenario_accel_config(const ScenarioSpec& spec) {
  AccelConfig cfg = spec.accel;
  cfg.reference = spec.truth;
  // Values of the estimated components must not leak into the estimators.
  for (std::size_t k = 0; k < cfg.reference.size(); ++k) {
    if (cfg.reference.estimate_mask[k]) {
      const auto d = static_cast<std::size_t>(cfg.reference.xi.size());
      if (k < d) {
        cfg.reference.xi(static_cast<Eigen::Index>(k)) = 0.0;
      } else {
        cfg.reference.theta(static_cast<Eigen::Index>(k - d)) = 0.0;
      }
    }
  }
  cfg.level = spec.level;
  return cfg;
}

inline EstimatorSummary summarize(const std::string& name, const ScenarioSpec& spec,
                                  const std::vector<ReplicateRecord>& records, bool accel) {
  EstimatorSummary s;
  s.estimator = name;
  const auto idx = spec.truth.estimated_indices();
  const auto d = static_cast<std::size_t>(spec.truth.xi.size());
  std::vector<const ReplicateOutcome*> good;
  for (const auto& r : records) {
    const ReplicateOutcome& o = accel ? r.accel : r.nls;
    if (o.ok) {
      good.push_back(&o);
    } else {
      ++s.failures;
      if (s.sample_errors.size() < 5) {
        s.sample_errors.push_back("replicate " + std::to_string(r.index) + ": " + o.error);
      }
    }
  }
  s.successes = good.size();
  s.failure_warning = static_cast<double>(s.failures) > 0.01 * static_cast<double>(records.size());
  for (std::size_t a = 0; a < idx.size(); ++a) {
    ParameterSummary p;
    p.index = idx[a];
    p.label = eta_label(idx[a], d);
    p.truth = spec.truth[idx[a]];
    const auto ai = static_cast<Eigen::Index>(a);
    double sum = 0.0;
    double var_sum = 0.0;
    std::size_t covered = 0;
    for (const auto* o : good) {
      sum += o->estimate(ai);
      var_sum += o->variance(ai);
      if (o->lower(ai) <= p.truth && p.truth <= o->upper(ai)) {
        ++covered;
      }
    }
    const double m = good.empty() ? 0.0 : static_cast<double>(good.size());
    p.mean = good.empty() ? 0.0 : sum / m;
    p.coverage = good.empty() ? 0.0 : static_cast<double>(covered) / m;
    p.asym = good.empty() ? 0.0 : std::sqrt(var_sum / m);
    if (good.size() > 1) {
      double ss = 0.0;
      for (const auto* o : good) {
        const double dev = o->estimate(ai) - p.mean;
        ss += dev * dev;
      }
      p.ste = std::sqrt(ss / (m - 1.0));
    }
    s.parameters.push_back(p);
  }
  return s;
}

}  // namespace detail

/// Runs one replicate: simulate, then each requested estimator on the same data.
[[nodiscard]] inline ReplicateRecord run_replicate(const ScenarioSpec& spec, std::size_t index) {
  ReplicateRecord rec;
  rec.index = index;
  const ModelCatalogEntry entry = catalog_get(spec.model);
  Dataset data;
  try {
    data = simulate_dataset(spec, index);
  } catch (const Error& e) {
    rec.accel.error = rec.nls.error = e.what();
    return rec;
  }
  const AccelConfig cfg = detail::scenario_accel_config(spec);
  if (spec.run_accel) {
    try {
      rec.accel = detail::outcome_from(fit(entry.model, data, cfg));
    } catch (const Error& e) {
      rec.accel.error = e.what();
    }
  }
  if (spec.run_nls) {
    try {
      NlsConfig nc;
      nc.settings = cfg;
      nc.settings.rescale_time = false;
      nc.max_iterations = spec.nls_max_iterations;
      rec.nls = detail::outcome_from(nls_fit(entry.model, data, nc));
    } catch (const Error& e) {
      rec.nls.error = e.what();
    }
  }
  return rec;
}

/// Monte Carlo study over `spec.replications` replicates on `jobs` threads
/// (0 = hardware concurrency). Throws StudyAborted when more than 20% of the
/// replications of any requested estimator fail.
[[nodiscard]] inline McSummary run_study(const ScenarioSpec& spec, std::size_t jobs = 0) {
  spec.validate();
  (void)catalog_get(spec.model);
  const std::size_t r = spec.replications;
  std::vector<ReplicateRecord> records(r);
  if (jobs == 0) {
    jobs = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }
  jobs = std::min(jobs, r);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < r; i = next.fetch_add(1)) {
      records[i] = run_replicate(spec, i);
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
      pool.emplace_back(worker);
    }
  }

  McSummary out;
  out.scenario = spec.name;
  out.model = spec.model;
  out.replications = r;
  out.level = spec.level;
  if (spec.run_accel) {
    out.estimators.push_back(detail::summarize("accel", spec, records, true));
  }
  if (spec.run_nls) {
    out.estimators.push_back(detail::summarize("nls", spec, records, false));
  }
  for (const auto& est : out.estimators) {
    if (static_cast<double>(est.failures) > 0.2 * static_cast<double>(r)) {
      std::ostringstream msg;
      msg << est.estimator << " failed on " << est.failures << " of " << r << " replications";
      for (const auto& e : est.sample_errors) {
        msg << "; " << e;
      }
      throw Error(ErrorKind::StudyAborted, msg.str());
    }
  }
  out.records = std::move(records);
  return out;
}

namespace detail {

inline std::vector<double> step_grid(double start, double step, double stop) {
  std::vector<double> g;
  const auto count = static_cast<std::size_t>(std::llround((stop - start) / step));
  for (std::size_t k = 0; k <= count; ++k) {
    g.push_back(start + step * static_cast<double>(k));
  }
  g.back() = stop;
  return g;
}

inline ScenarioSpec base_scenario(std::string name, const std::string& model) {
  ScenarioSpec s;
  s.name = std::move(name);
  s.model = model;
  const auto entry = catalog_get(model);
  s.truth = entry.default_eta;
  s.t_end = entry.default_horizon;
  s.replications = 500;
  s.seed = 20160101;
  return s;
}

}  // namespace detail

[[nodiscard]] inline std::vector<std::string> scenario_preset_names() {
  return {"linear_A_n21", "linear_B_n21", "linear_C_n21", "linear_D_n21", "linear_A_n51", "linear_B_n51",
          "linear_C_n51", "linear_D_n51", "linear_var_n101", "lotka_n21",  "lotka_n51",    "nitro_n21",
          "barnes_n11",   "alpha_a002",   "alpha_a01",    "smoke"};
}

/// Named scenarios mirroring the published simulation designs.
[[nodiscard]] inline ScenarioSpec scenario_preset(std::string_view name) {
  using detail::base_scenario;
  using detail::step_grid;
  if (name.starts_with("linear_") && name.size() == 12 && name.substr(8, 2) == "_n") {
    const char setup = name[7];
    const std::string n = std::string(name.substr(10));
    if ((setup >= 'A' && setup <= 'D') && (n == "21" || n == "51")) {
      ScenarioSpec s = base_scenario(std::string(name), "linear");
      const double xi = (setup == 'A' || setup == 'B') ? 0.5 : 1.0;
      const double theta = (setup == 'A' || setup == 'C') ? -1.0 : 1.0;
      s.truth = ParameterVector(detail::vec({xi}), detail::vec({theta}));
      s.design = TimeDesign::Grid;
      s.grid = step_grid(0.0, n == "21" ? 0.5 : 0.2, 10.0);
      s.t_end = 10.0;
      s.sigma = {0.05};
      s.run_nls = true;
      return s;
    }
  }
  if (name == "linear_var_n101") {
    ScenarioSpec s = base_scenario(std::string(name), "linear");
    s.design = TimeDesign::Grid;
    s.grid = step_grid(0.0, 0.1, 10.0);
    s.sigma = {0.05};
    s.run_nls = true;
    return s;
  }
  if (name == "lotka_n21" || name == "lotka_n51") {
    ScenarioSpec s = base_scenario(std::string(name), "lotka_volterra");
    s.design = TimeDesign::Equidistant;
    s.n = name == "lotka_n21" ? 21 : 51;
    s.sigma = {0.05};
    s.run_nls = true;
    return s;
  }
  if (name == "nitro_n21") {
    ScenarioSpec s = base_scenario(std::string(name), "nitrogen_oxide");
    s.design = TimeDesign::Grid;
    s.grid = step_grid(0.0, 2.0, 40.0);
    s.sigma = {0.5};  // variance 0.25
    s.run_nls = true;
    return s;
  }
  if (name == "barnes_n11") {
    ScenarioSpec s = base_scenario(std::string(name), "barnes");
    s.truth.estimate_mask = {false, false, true, true, true};
    s.design = TimeDesign::Equidistant;
    s.n = 11;
    s.sigma = {0.05};
    s.run_nls = true;
    return s;
  }
  if (name == "alpha_a002" || name == "alpha_a01") {
    ScenarioSpec s = base_scenario(std::string(name), "alpha_pinene");
    s.truth.estimate_mask = {false, false, false, false, false, true, true, true, true, true};
    s.design = TimeDesign::Grid;
    s.grid = {1230.0, 3060.0, 4920.0, 7800.0, 10680.0, 15030.0, 22620.0, 36420.0};
    s.t_end = s.grid.back();
    const double a = name == "alpha_a002" ? 0.02 : 0.1;
    for (double v : {44.6833, 36.4111, 4.9570, 1.6339, 12.4147}) {
      s.sigma.push_back(a * v);
    }
    return s;
  }
  if (name == "smoke") {
    ScenarioSpec s = scenario_preset("linear_A_n21");
    s.name = "smoke";
    s.replications = 1;
    return s;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown scenario preset '" + std::string(name) + "'");
}

}  // namespace odeaccel
