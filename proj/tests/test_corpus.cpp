#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "latentfoil/corpus.hpp"
#include "latentfoil/errors.hpp"

using namespace latentfoil;
using namespace latentfoil::corpus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("latentfoil_corpus_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string selig_text(const geometry::AirfoilShape& s) {
  std::ostringstream out;
  out.precision(17);
  out << "test airfoil\n";
  for (auto it = s.upper.rbegin(); it != s.upper.rend(); ++it) out << it->x << " " << it->y << "\n";
  for (std::size_t i = 1; i < s.lower.size(); ++i) out << s.lower[i].x << " " << s.lower[i].y << "\n";
  return out.str();
}

SweepConfig small_sweep() {
  SweepConfig c;
  c.cambers = 2;
  c.positions = 2;
  c.thicknesses = 3;
  return c;
}

}  // namespace

TEST_CASE("sweep size and naming") {
  SweepConfig c;
  c.cambers = 8;
  c.positions = 5;
  c.thicknesses = 11;
  const auto shapes = naca_sweep(c);
  CHECK(shapes.size() == 440);
  CHECK(c.size() == 440);
  CHECK(shapes.front().name == "naca_m0.0000_p0.200_t0.080");
  CHECK(shapes.back().name == "naca_m0.0600_p0.600_t0.180");
  CHECK(naca_sweep(SweepConfig{}).size() == 512);

  SweepConfig bad;
  bad.thickness_min = 0.0;
  CHECK_THROWS_AS(naca_sweep(bad), InvalidArgument);
  bad = SweepConfig{};
  bad.cambers = 0;
  CHECK_THROWS_AS(naca_sweep(bad), InvalidArgument);
}

TEST_CASE("fitted corpus residuals and normalization") {
  const auto c = build_corpus(naca_sweep(small_sweep()), geometry::naca4("0012"), geometry::bump_basis());
  REQUIRE(c.size() == 12);
  for (double r : c.residuals) CHECK(r < 2e-3);
  for (const auto& v : c.raw) {
    for (double x : v) CHECK(std::abs(x) < 0.2);
  }
  const auto summary = summarize_residuals(c.residuals);
  CHECK(summary.min <= summary.median);
  CHECK(summary.median <= summary.p95);
  CHECK(summary.p95 <= summary.max);
  for (const auto& u : c.normalized()) {
    for (double v : u) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK_THROWS_AS(build_corpus({}, geometry::naca4("0012"), geometry::bump_basis()), InvalidArgument);
}

TEST_CASE("dataset files round trip") {
  const auto c = build_corpus(naca_sweep(small_sweep()), geometry::naca4("0012"), geometry::bump_basis());
  const auto dir = scratch("roundtrip");
  write_corpus(dir.string(), c, "provenance line");
  CHECK(fs::exists(dir / "vectors.csv"));
  CHECK(fs::exists(dir / "normalized.csv"));
  CHECK(fs::exists(dir / "box.csv"));
  const auto back = read_corpus(dir.string());
  CHECK(back.names == c.names);
  CHECK(back.raw == c.raw);
  CHECK(back.residuals == c.residuals);
  CHECK(back.box.lo == c.box.lo);
  CHECK(back.box.hi == c.box.hi);
  std::string first;
  std::getline(std::ifstream(dir / "box.csv") >> std::ws, first);
  CHECK(first == "# provenance line");

  std::ofstream(dir / "vectors.csv", std::ios::app) << "broken,row\n";
  CHECK_THROWS_AS(read_corpus(dir.string()), MalformedInput);
  fs::remove(dir / "box.csv");
  CHECK_THROWS_AS(read_corpus(dir.string()), InvalidArgument);
  fs::remove_all(dir);
}

TEST_CASE("user coordinate files") {
  CHECK(read_user_shapes("").shapes.empty());
  CHECK(read_user_shapes("/nonexistent/latentfoil").shapes.empty());

  const auto dir = scratch("user");
  CHECK(read_user_shapes(dir.string()).shapes.empty());
  std::ofstream(dir / "b_good.dat") << selig_text(geometry::naca4("2412", 81));
  std::ofstream(dir / "a_bad.dat") << "title\n1.0 0.0\n0.5 oops\n";
  std::ofstream(dir / "notes.txt") << "ignored\n";
  const auto user = read_user_shapes(dir.string());
  REQUIRE(user.shapes.size() == 1);
  CHECK(user.shapes[0].name == "b_good");
  REQUIRE(user.skipped.size() == 1);
  CHECK(user.skipped[0].rfind("a_bad.dat: ", 0) == 0);
  CHECK(std::abs(geometry::thickness_to_chord(user.shapes[0].shape) - 0.12) < 1e-3);
  fs::remove_all(dir);
}
