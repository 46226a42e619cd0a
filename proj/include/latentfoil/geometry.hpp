#pragma once

// Airfoil contours and the Hicks-Henne bump parameterization.
//
// Shapes are chord-normalized: both surfaces run from the leading edge at
// x = 0 to the trailing edge at x = 1 with strictly increasing abscissae.
// A design vector of length d holds d/2 upper-surface coefficients followed
// by d/2 lower-surface coefficients; bump n adds
//     delta_n * sin^3(pi * x^e_n),   e_n = log(0.5) / log(x_n),
// which peaks with value 1 at x_n and vanishes at both ends of the chord.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace latentfoil::geometry {

inline constexpr std::size_t kDefaultDesignDim = 40;
inline constexpr std::size_t kFitPoints = 200;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct AirfoilShape {
  std::vector<Point> upper;
  std::vector<Point> lower;
};

// Throws MalformedInput when the endpoint or monotonicity invariants fail.
void validate(const AirfoilShape& shape);

// True when the lower surface rises above the upper one (beyond 1e-9) on the
// shared cosine abscissae of both surfaces.
bool self_intersecting(const AirfoilShape& shape, std::size_t samples = kFitPoints);

struct HicksHenneVector {
  std::vector<double> delta;

  HicksHenneVector() = default;
  explicit HicksHenneVector(std::size_t d) : delta(d, 0.0) {}
  explicit HicksHenneVector(std::vector<double> values) : delta(std::move(values)) {}

  std::size_t size() const { return delta.size(); }
  std::size_t half() const { return delta.size() / 2; }
  std::span<const double> upper() const { return std::span(delta).first(half()); }
  std::span<const double> lower() const { return std::span(delta).subspan(half()); }
};

class BumpBasis {
 public:
  BumpBasis() = default;
  explicit BumpBasis(std::vector<double> peaks);

  // Bumps per surface.
  std::size_t size() const { return peaks_.size(); }
  std::size_t design_dim() const { return 2 * peaks_.size(); }
  const std::vector<double>& peaks() const { return peaks_; }
  const std::vector<double>& exponents() const { return exponents_; }

  // f_n(x); exact zero at both ends. Throws InvalidArgument outside [0, 1].
  double operator()(std::size_t n, double x) const;

 private:
  std::vector<double> peaks_;
  std::vector<double> exponents_;
};

// d/2 equidistant interior peaks per surface at k / (d/2 + 1).
BumpBasis bump_basis(std::size_t d = kDefaultDesignDim);

inline double evaluate_bump(const BumpBasis& basis, std::size_t n, double x) { return basis(n, x); }

struct DeformResult {
  AirfoilShape shape;
  bool self_intersecting = false;
};

// Adds the bump deformation to both surfaces, leaving abscissae untouched.
DeformResult deform(const AirfoilShape& base, const HicksHenneVector& delta, const BumpBasis& basis);

// Max of (upper - lower) over 200 shared cosine abscissae. Chord is 1.
double thickness_to_chord(const AirfoilShape& shape);

// d t_c(deform(base, delta)) / d delta. Exact wherever the thickness peak is
// unique and sits on a node of the base, e.g. a base sampled on the
// kFitPoints cosine abscissae.
std::vector<double> thickness_gradient(const AirfoilShape& base, const HicksHenneVector& delta,
                                       const BumpBasis& basis);

struct ThicknessPeak {
  double value = 0.0;
  double x = 0.0;
};
// Thickness and its location on `samples` cosine abscissae.
ThicknessPeak max_thickness(const AirfoilShape& shape, std::size_t samples = kFitPoints);

// x_i = (1 - cos(pi i / (n - 1))) / 2, i = 0..n-1.
std::vector<double> cosine_spacing(std::size_t n);

// Monotone cubic (PCHIP) resampling of each surface onto cosine abscissae.
AirfoilShape resample(const AirfoilShape& shape, std::size_t n);

// NACA 4-digit section, closed trailing edge, `n` cosine points per surface.
AirfoilShape naca4(std::string_view code, std::size_t n = kFitPoints);
// Same family with continuous parameters: camber m, camber position p,
// thickness t, all fractions of chord.
AirfoilShape naca4(double m, double p, double t, std::size_t n = kFitPoints);

struct FitResult {
  HicksHenneVector delta;
  double rms_residual = 0.0;
};

// Linear least-squares inverse of deform(): finds delta such that
// deform(base, delta) best matches `target` at 200 cosine points per surface.
// A positive ridge adds ridge * ||delta||^2 per surface, which trades a small
// residual increase for bounded coefficients on shapes outside the span.
FitResult fit_hicks_henne(const AirfoilShape& target, const AirfoilShape& base, const BumpBasis& basis,
                          std::size_t points = kFitPoints, double ridge = 0.0);

struct NormalizationBox {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t size() const { return lo.size(); }
  void validate() const;
  // Componentwise min/max over a set of vectors.
  static NormalizationBox from_samples(std::span<const std::vector<double>> samples);
};

std::vector<double> normalize(std::span<const double> delta, const NormalizationBox& box);
std::vector<double> denormalize(std::span<const double> unit, const NormalizationBox& box);

// Reads Selig (single loop) or Lednicer (two blocks) coordinate text.
AirfoilShape parse_coordinates(std::string_view text);
AirfoilShape read_coordinates_file(const std::string& path);

// Two-column CSV "x,y", single Selig loop: upper TE -> LE, then lower LE -> TE.
void write_shape_csv(std::ostream& out, const AirfoilShape& shape);

}  // namespace latentfoil::geometry
