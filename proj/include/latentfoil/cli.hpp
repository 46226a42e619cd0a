#pragma once

// Command-line front end: configuration, provenance and the subcommands
// gen-data, train, sample, analyze, optimize, gradcheck and report.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latentfoil/corpus.hpp"

namespace latentfoil::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kNumericalFailure = 2, kGradcheckFailure = 3 };

struct GeometrySection {
  std::size_t d = 40;
  std::size_t n_panels = 200;
  std::string base = "0012";  // NACA 4-digit code or a coordinate file path
  double fit_ridge = corpus::kCorpusRidge;
  corpus::SweepConfig sweep;
};

struct ScheduleSection {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int infer_steps = 50;
};

struct TrainSection {
  double lr = 1e-3;
  std::size_t batch = 16;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  double ema_decay = 0.995;
  std::size_t log_every = 100;
  std::size_t channels = 32;
  std::size_t depth = 2;
  std::size_t time_embed_dim = 64;
};

struct ProblemSection {
  std::string objective = "target_cp";  // target_cp, max_cl or cm
  std::string target = "0009";          // target_cp only: NACA code or coordinate file
  std::optional<double> cl_bound = 0.30;
  std::optional<double> tc_bound = 0.105;
  double alpha = 2.31;  // degrees
  std::string mode = "hh";
  std::string init = "encode";  // latent mode: encode (the base shape) or gaussian
  std::uint64_t seed = 0;
  std::size_t max_gradient_evals = 100;
  std::size_t max_evaluations = 1000;
  std::size_t encode_steps = 200;
  double scaled_fraction = 0.05;
  // Nonempty grids make optimize run every (cl_bound, tc_bound) pair into its
  // own subdirectory of paths.output.
  std::vector<double> cl_grid;
  std::vector<double> tc_grid;
};

struct PathsSection {
  std::string dataset = "data";
  std::string checkpoint = "model.bin";
  std::string output = "out";
  std::string user_shapes;  // directory of .dat files; empty for none
};

struct RunConfig {
  GeometrySection geometry;
  ScheduleSection schedule;
  TrainSection train;
  ProblemSection problem;
  PathsSection paths;

  // Missing keys keep their defaults; unknown keys and wrong types throw InvalidArgument.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

// Empty path gives the defaults.
RunConfig load_config(const std::string& path);

std::string sha256_hex(std::string_view bytes);

// Runs one command line. Returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace latentfoil::cli
