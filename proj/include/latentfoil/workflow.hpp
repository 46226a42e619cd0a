#pragma once

// Pipeline steps shared by the command-line tool and the acceptance run:
// configuration to library objects, training, optimization runs, result
// files and the comparison report.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentfoil/cli.hpp"
#include "latentfoil/corpus.hpp"
#include "latentfoil/design.hpp"
#include "latentfoil/diffusion.hpp"

namespace latentfoil::workflow {

inline constexpr const char* kResultSchema = "latentfoil.result/1";

// NACA 4-digit code ("0012") or a coordinate file path.
geometry::AirfoilShape load_shape(const std::string& spec);

nn::DenoiserConfig denoiser_config(const cli::RunConfig& config);
diffusion::TrainConfig train_config(const cli::RunConfig& config);
diffusion::NoiseSchedule noise_schedule(const cli::RunConfig& config);

struct TrainOutcome {
  diffusion::TrainResult result;
  diffusion::NoiseSchedule schedule;
  double windowed_200 = 0.0;
  double windowed_final = 0.0;

  double relative_drop() const { return 1.0 - windowed_final / windowed_200; }
};

TrainOutcome train_model(const cli::RunConfig& config, const corpus::Corpus& corpus,
                         const std::function<void(const diffusion::LossRecord&)>& on_log = {});

// n latent draws, draw k from latent_gaussian(d, seed + k).
std::vector<std::vector<double>> gaussian_latents(std::size_t n, std::size_t d, std::uint64_t seed);

struct OptimizeOutcome {
  optim::OptimResult result;
  optim::DesignPoint point;
  optim::DesignSetup setup;
  std::vector<double> x0;
  std::optional<optim::LatentInit> init;
  std::size_t primal_solves = 0;
  std::size_t function_gradients = 0;
};

// The design problem of `config.problem`: target Cp from a direct solve on
// the target shape, hh boxes from the corpus box, latent box [-3, 3]^d.
// `checkpoint` is required in latent mode.
optim::DesignSetup design_setup(const cli::RunConfig& config, optim::Mode mode, const geometry::NormalizationBox& box,
                                const diffusion::Checkpoint* checkpoint);

// Starts from the base shape: delta = 0 in hh modes, its encoding (or a
// seeded gaussian with init = "gaussian") in latent mode.
OptimizeOutcome optimize(const cli::RunConfig& config, optim::Mode mode, const geometry::NormalizationBox& box,
                         const diffusion::Checkpoint* checkpoint,
                         const std::function<void(const optim::IterateLog&)>& on_iterate = {});

// "target_cp:0009 cl>=0.3 tc>=0.105 alpha=2.31"
std::string problem_label(const cli::ProblemSection& problem);

nlohmann::json result_json(const cli::RunConfig& config, optim::Mode mode, const OptimizeOutcome& outcome);

// panel,xm,ym,cp[,target_cp] at the optimized shape.
void write_flow_csv(std::ostream& out, const OptimizeOutcome& outcome);

// Throws MalformedInput naming the file on a missing or mistyped field.
nlohmann::json read_result(const std::string& path);

struct ReportEntry {
  std::string file;
  std::string problem;
  std::string mode;
  std::size_t evaluations = 0;
  std::size_t gradients = 0;
  double cl = 0.0;
  double tc = 0.0;
  double objective = 0.0;
  double eps_rel = 0.0;
  std::optional<double> cl_bound;
  std::optional<double> tc_bound;
};

ReportEntry report_entry(const std::string& path);

struct Report {
  std::string text;
  std::string csv;
};

// Rows are problems in order of first appearance; each mode contributes the
// columns #J, #gradJ, Cl, t/c, J, eps_rel. Cl and t/c cells violating their
// bound by more than 2e-3 (relative), and eps_rel above 2e-3, carry '*'.
Report build_report(const std::vector<ReportEntry>& entries);

}  // namespace latentfoil::workflow
