// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: experiment runs, estimator benchmarks, gradient
// checks and multi-seed comparisons.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsgd/model.hpp"
#include "dsgd/optimize.hpp"

namespace dsgd::cli {

/// Flattened configuration: "section.key" -> value text.
using ConfigMap = std::map<std::string, std::string>;

/// Config-file grammar (one item per line):
///   [section]          starts a section
///   key = value        assignment inside the current section
///   # ... or ; ...     comment line
/// Keys before the first section header belong to section "run".
ConfigMap parse_ini(const std::string& text, const std::string& source = "<config>");
/// JSON objects of objects; arrays become comma-separated text.
ConfigMap parse_json(const std::string& text, const std::string& source = "<config>");
/// Picks the format from the extension (.json) or a leading '{'.
ConfigMap read_config_file(const std::string& path);

/// Builds a ModelSpec from [model], [transform], [box] and [init] sections.
ModelSpec model_from_config(const ConfigMap& cfg, const std::string& source = "<config>");
ModelSpec load_model_file(const std::string& path);

struct RunConfig {
  std::string model = "example11";
  std::string model_file;
  std::string estimator = "dsgd";
  std::string optimizer = "adam";
  double alpha = 0.001;
  double gamma0 = 0.1;
  std::string gamma_rule = "harmonic";
  std::optional<std::string> eta_anchor;  // "<eta>@<k>"
  std::optional<double> eta0;
  std::optional<double> eta_exponent;
  double eta_floor = kDefaultEtaFloor;
  double sharpness = 1.0;
  std::uint64_t iters = 10000;
  std::size_t mc = 16;
  std::uint64_t diag_interval = 100;
  std::size_t diag_samples = 1000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string output;
  bool timing = true;
};

/// Applies every `run.*` entry of `cfg` on top of `base`.
RunConfig run_config_from(const ConfigMap& cfg, RunConfig base = {});

struct ResolvedRun {
  ModelSpec model;
  RunOptions options;
};

/// Validates the configuration and resolves the model and schedules.
ResolvedRun resolve(const RunConfig& cfg);

/// Checkpoint rows in the run CSV schema.
std::string trajectory_csv(const Trajectory& tr, bool timing = true);

/// Entry point of the dsgd_lab tool; returns the process exit code.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dsgd::cli
