#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "formats.hpp"

namespace strata::cli {

enum ExitCode : int { kExitOk = 0, kExitDomain = 2, kExitUsage = 64, kExitInternal = 70 };

struct CheckOptions {
  fs::path design;
  fs::path out;
  bool force = false;
};

struct SimulateOptions {
  std::optional<fs::path> config;
  std::optional<std::string> scenario;
  std::optional<long> n;
  std::optional<std::uint64_t> seed;
  bool a_error = false;
  bool households = false;
  bool oracle = false;
  bool cells = false;
  fs::path out;
  bool force = false;
};

struct OracleOptions {
  fs::path params;
  fs::path out;
  std::string mode = "auto";
  std::optional<double> known_sn_Y;
  bool force = false;
};

struct FitOptions {
  fs::path data;
  fs::path out;
  std::optional<fs::path> priors;
  std::optional<std::string> shape;  // "n_z,n_r,n_a,n_x"
  std::optional<std::string> a_kernel;  // "default" or a JSON matrix file
  std::optional<std::string> rule;
  std::optional<fs::path> draws;
  SamplerConfig sampler;
  bool strict_design = false;
  bool force = false;
};

struct PowerOptions {
  std::string scenario = "two_arm_severe";
  std::vector<long> n_grid;
  int reps = 100;
  std::optional<std::string> rule;
  std::optional<int> jobs;
  std::uint64_t seed = 1;
  bool a_error = false;
  SamplerConfig sampler;
  fs::path out;
  bool force = false;
};

int cmd_check(const CheckOptions& o, std::ostream& log);
int cmd_simulate(const SimulateOptions& o, std::ostream& log);
int cmd_oracle(const OracleOptions& o, std::ostream& log);
int cmd_fit(const FitOptions& o, std::ostream& log);
int cmd_power(const PowerOptions& o, std::ostream& log);

/// Parses argv, dispatches and maps exceptions onto exit codes.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Sidecar manifest path for single-file outputs: report.json -> report.manifest.json.
fs::path manifest_path_for(const fs::path& out);

}  // namespace strata::cli
