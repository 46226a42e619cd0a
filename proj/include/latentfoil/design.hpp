#pragma once

// Airfoil design problems for the optimizer: target-Cp (or lift / moment)
// objectives under lift and thickness constraints, posed either directly on
// Hicks-Henne coefficients or on the latent vector of the diffusion model.
//
// Constraints are lower bounds q >= bound, stored as c = bound - q and handed
// to the solver in relative form (bound - q) / |bound|.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "latentfoil/diffusion.hpp"
#include "latentfoil/flow.hpp"
#include "latentfoil/geometry.hpp"
#include "latentfoil/optimizer.hpp"

namespace latentfoil::optim {

enum class Mode { hh, latent, hh_scaled };
std::string to_string(Mode mode);
// "hh", "latent" or "hh-scaled".
Mode parse_mode(std::string_view text);

struct Constraint {
  enum class Quantity { cl, tc } quantity = Quantity::cl;
  double bound = 0.0;
};
std::string to_string(Constraint::Quantity q);

// max_i (bound_i - achieved_i) / bound_i, clamped below at 0.
double epsilon_rel(std::span<const Constraint> constraints, std::span<const double> achieved);

// Freezes coefficients whose bump peak lies within `fraction` of either end of
// the chord, on both surfaces.
std::vector<bool> scaled_mask(std::size_t d, double fraction = 0.05);

inline constexpr double kLatentBound = 3.0;

// x = denormalize(G(z)) with the DDIM map on a fixed step list.
struct LatentDecoder {
  const nn::NoisePredictor* model = nullptr;
  diffusion::NoiseSchedule schedule;
  std::vector<int> steps;
  geometry::NormalizationBox box;

  std::vector<double> decode(std::span<const double> z) const;
  // z-gradient of a function of delta from its delta-gradient.
  std::vector<double> pullback(std::span<const double> z, std::span<const double> delta_gradient) const;
};

struct DesignSetup {
  flow::ObjectiveSpec objective;
  std::vector<Constraint> constraints;
  flow::FlowConditions conditions;
  Mode mode = Mode::hh;
  std::size_t n_panels = 200;
  geometry::AirfoilShape base;
  geometry::BumpBasis basis;
  // Box on the decision vector.
  std::vector<double> lower, upper;
  double scaled_fraction = 0.05;
  std::optional<LatentDecoder> decoder;  // required in latent mode
};

struct DesignPoint {
  std::vector<double> delta;
  geometry::AirfoilShape shape;
  bool self_intersecting = false;
  bool ok = false;
  std::string failure;
  double objective = 0.0;
  double cl = 0.0;
  double cm = 0.0;
  double tc = 0.0;
  std::vector<double> constraints;  // bound - quantity
};

class DesignProblem : public Problem {
 public:
  explicit DesignProblem(DesignSetup setup);

  const DesignSetup& setup() const { return setup_; }
  std::size_t dim() const override;
  std::size_t num_constraints() const override { return setup_.constraints.size(); }
  std::vector<double> lower() const override { return setup_.lower; }
  std::vector<double> upper() const override { return setup_.upper; }
  std::vector<bool> frozen() const override { return frozen_; }

  // Hicks-Henne coefficients the decision vector stands for.
  std::vector<double> delta_of(std::span<const double> v) const;
  // Full evaluation; counts one primal solve.
  DesignPoint point(std::span<const double> v);

  // extras = {Cl, t/c}.
  Evaluation evaluate(std::span<const double> v) override;
  GradientSet gradient(std::span<const double> v) override;

  // Raw (not relative) gradients with respect to delta: objective first, then one per constraint.
  std::vector<std::vector<double>> delta_gradients(std::span<const double> v);

  std::size_t primal_solves() const { return primal_solves_; }
  // Function gradients, one per objective or constraint per call.
  std::size_t function_gradients() const { return function_gradients_; }

 private:
  struct Cache {
    std::vector<double> v;
    std::vector<double> delta;
    flow::PanelSystem system;
    Eigen::VectorXd u;
  };
  const Cache& solve_at(std::span<const double> v);

  DesignSetup setup_;
  flow::ShapeChain chain_;
  std::vector<bool> frozen_;
  std::optional<Cache> cache_;
  std::size_t primal_solves_ = 0;
  std::size_t function_gradients_ = 0;
};

// Box for hh modes: the corpus normalization box widened to contain delta = 0.
void hh_box(const geometry::NormalizationBox& box, std::vector<double>& lower, std::vector<double>& upper);

struct LatentInit {
  std::vector<double> z;
  double residual_rms = 0.0;  // normalized units; 0 for gaussian
  bool warning = false;       // residual above 0.05
};

LatentInit latent_gaussian(std::size_t d, std::uint64_t seed);
// Pseudo-inverse of G: 200 quasi-Newton steps on 1/2 ||G(z) - normalize(fit(shape))||^2
// from a gaussian start, inside the latent box.
LatentInit latent_encode(const LatentDecoder& decoder, std::span<const double> target_unit, std::uint64_t seed,
                         std::size_t steps = 200);

}  // namespace latentfoil::optim
