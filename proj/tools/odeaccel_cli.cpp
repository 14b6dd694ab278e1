/**
 * @file odeaccel_cli.cpp
 * @brief Command-line front end: fit, simulate, mc and report.
 *
 * Exit codes: 0 success, 2 parse/configuration errors, 3 estimation failure.
 */
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "odeaccel/odeaccel.hpp"

namespace {

using namespace odeaccel;

constexpr int kExitParse = 2;
constexpr int kExitEstimation = 3;

struct Options {
  std::string model;
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 0;
  std::optional<double> level;
  std::string input;  // report
};

RunConfig gather_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (!o.model.empty()) {
    if (c.model && *c.model != o.model) {
      throw Error(ErrorKind::ParseError, "--model '" + o.model + "' conflicts with config model '" + *c.model + "'");
    }
    c.model = o.model;
  }
  if (!o.data.empty()) {
    c.data = o.data;
  }
  if (!o.out.empty()) {
    c.out = o.out;
  }
  if (o.seed) {
    c.seed = o.seed;
  }
  if (o.level) {
    c.level = o.level;
  }
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) {
    throw Error(ErrorKind::ParseError, "cannot write '" + path + "'");
  }
  f << text;
}

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) {
    throw Error(ErrorKind::ParseError, "cannot open '" + path + "'");
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int fail(const std::string& stage, const Error& e) {
  std::cerr << "error [" << stage << "]: " << to_string(e.kind()) << ": " << e.what() << '\n';
  return e.kind() == ErrorKind::ParseError || e.kind() == ErrorKind::UnknownModel ? kExitParse : kExitEstimation;
}

int run_fit(const Options& o) {
  FitSetup setup;
  Dataset data;
  try {
    const RunConfig c = gather_config(o);
    setup = fit_setup(c);
    if (!c.data) {
      throw Error(ErrorKind::ParseError, "no data file given (use --data)");
    }
    data = load_data_csv(*c.data, setup.entry.model.dim_state);
  } catch (const Error& e) {
    std::cerr << "error [input]: " << e.what() << '\n';
    return kExitParse;
  }
  EstimateReport report;
  try {
    if (setup.estimator == "nls") {
      NlsConfig nc;
      nc.settings = setup.accel;
      nc.settings.rescale_time = false;
      nc.max_iterations = setup.nls_max_iterations;
      report = nls_fit(setup.entry.model, data, nc);
    } else {
      report = fit(setup.entry.model, data, setup.accel);
    }
  } catch (const Error& e) {
    std::cerr << "error [estimation]: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return kExitEstimation;
  }
  render_estimate_table(std::cout, report);
  if (!o.out.empty()) {
    write_text(o.out, report_to_json(report).dump(2) + "\n");
  }
  return 0;
}

int run_simulate(const Options& o) {
  ScenarioSpec spec;
  std::size_t replicate = 0;
  std::string out;
  try {
    const RunConfig c = gather_config(o);
    spec = scenario_from_config(c);
    replicate = c.replicate.value_or(0);
    if (!c.out) {
      throw Error(ErrorKind::ParseError, "no output path given (use --out)");
    }
    out = *c.out;
  } catch (const Error& e) {
    std::cerr << "error [input]: " << e.what() << '\n';
    return kExitParse;
  }
  try {
    save_data_csv(out, simulate_dataset(spec, replicate));
  } catch (const Error& e) {
    return fail("simulate", e);
  }
  return 0;
}

int run_mc(const Options& o) {
  ScenarioSpec spec;
  std::size_t jobs = o.jobs;
  try {
    const RunConfig c = gather_config(o);
    spec = scenario_from_config(c);
    if (jobs == 0 && c.jobs) {
      jobs = *c.jobs;
    }
  } catch (const Error& e) {
    std::cerr << "error [input]: " << e.what() << '\n';
    return kExitParse;
  }
  McSummary summary;
  try {
    summary = run_study(spec, jobs);
  } catch (const Error& e) {
    std::cerr << "error [study]: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return kExitEstimation;
  }
  for (const auto& e : summary.estimators) {
    if (e.failure_warning) {
      std::cerr << "warning: " << e.estimator << " failed on " << e.failures << " of " << summary.replications
                << " replications\n";
    }
  }
  render_study_tables(std::cout, summary);
  if (!o.out.empty()) {
    write_text(o.out, study_to_json(summary).dump(2) + "\n");
  }
  return 0;
}

int run_report(const Options& o) {
  const std::string path = !o.input.empty() ? o.input : o.data;
  try {
    if (path.empty()) {
      throw Error(ErrorKind::ParseError, "no report file given");
    }
    Json j;
    try {
      j = Json::parse(read_text(path));
    } catch (const Json::parse_error& e) {
      throw Error(ErrorKind::ParseError, path + " is not valid JSON: " + e.what());
    }
    const std::string schema = j.is_object() && j.contains("schema") && j["schema"].is_string()
                                   ? j["schema"].get<std::string>()
                                   : std::string();
    std::ostringstream table;
    if (schema == kEstimateSchema) {
      render_estimate_table(table, report_from_json(j));
    } else if (schema == kStudySchema) {
      render_study_tables(table, study_from_json(j));
    } else {
      throw Error(ErrorKind::ParseError, path + ": unknown document schema '" + schema + "'");
    }
    std::cout << table.str();
    if (!o.out.empty()) {
      write_text(o.out, table.str());
    }
  } catch (const Error& e) {
    std::cerr << "error [report]: " << e.what() << '\n';
    return kExitParse;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter estimation for ordinary differential equations"};
  app.require_subcommand(1);
  Options o;
  double level = 0.95;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "catalog model name");
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--out", o.out, "output path");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--level", level, "confidence level (default 0.95)")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--jobs", o.jobs, "worker threads (0 = all cores)");
  };

  auto* fit_cmd = app.add_subcommand("fit", "estimate parameters from a data file");
  common(fit_cmd);
  fit_cmd->add_option("--data", o.data, "CSV with header t,x1,...,xd");
  auto* sim_cmd = app.add_subcommand("simulate", "write one simulated dataset");
  common(sim_cmd);
  auto* mc_cmd = app.add_subcommand("mc", "run a Monte Carlo study");
  common(mc_cmd);
  auto* report_cmd = app.add_subcommand("report", "render a saved JSON report as tables");
  report_cmd->add_option("input", o.input, "report file");
  report_cmd->add_option("--data", o.data, "report file");
  report_cmd->add_option("--out", o.out, "write the table here as well");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitParse;
  }

  for (auto* sub : {fit_cmd, sim_cmd, mc_cmd}) {
    if (sub->parsed()) {
      if (sub->count("--seed") > 0) {
        o.seed = seed;
      }
      if (sub->count("--level") > 0) {
        o.level = level;
      }
    }
  }

  try {
    if (fit_cmd->parsed()) {
      return run_fit(o);
    }
    if (sim_cmd->parsed()) {
      return run_simulate(o);
    }
    if (mc_cmd->parsed()) {
      return run_mc(o);
    }
    return run_report(o);
  } catch (const Error& e) {
    return fail("output", e);
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << '\n';
    return kExitEstimation;
  }
}
