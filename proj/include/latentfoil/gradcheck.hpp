#pragma once

// Central finite-difference checks of reverse-mode gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "latentfoil/autodiff.hpp"

namespace latentfoil::gradcheck {

inline constexpr double kStep = 1e-6;

struct Row {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t trials = 0;

  bool pass() const { return max_rel_error < tolerance; }
};

// ||analytic - numeric||_inf / max(||numeric||_inf, floor).
double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-12);

// Largest |a_i - n_i| / |n_i| over components where |a_i| exceeds `threshold`.
double componentwise_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                    double threshold = 1e-10);

// Central differences of a scalar function of a vector.
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h = kStep);

using Builder = std::function<ad::Var(std::span<const ad::Var>)>;

// Records `build` on leaves holding `inputs`, contracts the output with a
// random seed and compares the adjoints against central differences.
double check_builder(const Builder& build, const std::vector<ad::Tensor>& inputs, std::uint64_t seed,
                     double h = kStep);

// One row per registered autodiff op, `trials` random instances each.
std::vector<Row> autodiff_ops(std::size_t trials = 100, std::uint64_t seed = 1, double tolerance = 1e-5);

}  // namespace latentfoil::gradcheck
