#pragma once

// Training corpus: NACA 4-digit sweeps and user coordinate files fitted to
// Hicks-Henne vectors, plus the unit-box normalization used by the model.
//
// A dataset directory holds
//     vectors.csv     name,rms,d0..d{n-1}   raw fitted coefficients
//     normalized.csv  name,u0..u{n-1}       normalize(raw, box)
//     box.csv         component,lo,hi
// Lines starting with '#' are comments.

#include <cstddef>
#include <string>
#include <vector>

#include "latentfoil/geometry.hpp"

namespace latentfoil::corpus {

struct SweepConfig {
  double camber_min = 0.0;
  double camber_max = 0.06;
  std::size_t cambers = 8;
  double position_min = 0.2;
  double position_max = 0.6;
  std::size_t positions = 8;
  double thickness_min = 0.08;
  double thickness_max = 0.18;
  std::size_t thicknesses = 8;

  void validate() const;
  std::size_t size() const { return cambers * positions * thicknesses; }
};

struct NamedShape {
  std::string name;
  geometry::AirfoilShape shape;
};

// Camber-major grid, endpoints inclusive. Names look like "naca_m0.0200_p0.400_t0.120".
std::vector<NamedShape> naca_sweep(const SweepConfig& config);

struct UserShapes {
  std::vector<NamedShape> shapes;
  std::vector<std::string> skipped;  // "file: reason"
};

// Every *.dat file in `dir`, sorted by name. Unreadable files are skipped and
// reported. A missing directory yields an empty result.
UserShapes read_user_shapes(const std::string& dir);

struct Corpus {
  std::vector<std::string> names;
  std::vector<std::vector<double>> raw;
  std::vector<double> residuals;  // fit RMS per entry
  geometry::NormalizationBox box;

  std::size_t size() const { return raw.size(); }
  std::vector<std::vector<double>> normalized() const;
};

// Ridge of the corpus fits. Plain least squares reaches coefficients of 1e4
// on NACA shapes through cancelling neighbours; 1e-4 bounds them near 0.1 at
// a residual cost of about 10%.
inline constexpr double kCorpusRidge = 1e-4;

Corpus build_corpus(const std::vector<NamedShape>& shapes, const geometry::AirfoilShape& base,
                    const geometry::BumpBasis& basis, double ridge = kCorpusRidge);

struct ResidualSummary {
  double min = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};
ResidualSummary summarize_residuals(const std::vector<double>& residuals);

// A nonempty comment is written as a leading '#' line of every file.
void write_corpus(const std::string& dir, const Corpus& corpus, const std::string& comment = "");
// Throws InvalidArgument naming the missing file, MalformedInput on bad content.
Corpus read_corpus(const std::string& dir);

}  // namespace latentfoil::corpus
