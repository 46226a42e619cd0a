#include "latentfoil/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "latentfoil/errors.hpp"

namespace latentfoil::corpus {

namespace fs = std::filesystem;

namespace {

double grid(double lo, double hi, std::size_t n, std::size_t k) {
  return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
}

void check_range(const char* what, double lo, double hi, std::size_t n, double min, double max) {
  if (n == 0 || !(lo >= min && hi <= max && lo <= hi)) {
    throw InvalidArgument(std::string("sweep ") + what + " range is empty or outside [" + std::to_string(min) + ", " +
                          std::to_string(max) + "]");
  }
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_double(const std::string& s, const std::string& file, std::size_t line) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) {
    throw MalformedInput(file + " line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("dataset file '" + path.string() + "' does not exist or is unreadable");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() != '#') rows.push_back(split(line));
  }
  if (rows.empty()) throw MalformedInput(path.string() + " is empty");
  return rows;
}

std::string format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void SweepConfig::validate() const {
  check_range("camber", camber_min, camber_max, cambers, 0.0, 0.095);
  check_range("camber position", position_min, position_max, positions, 0.1, 0.9);
  check_range("thickness", thickness_min, thickness_max, thicknesses, 0.01, 0.4);
}

std::vector<NamedShape> naca_sweep(const SweepConfig& config) {
  config.validate();
  std::vector<NamedShape> out;
  out.reserve(config.size());
  for (std::size_t i = 0; i < config.cambers; ++i) {
    const double m = grid(config.camber_min, config.camber_max, config.cambers, i);
    for (std::size_t j = 0; j < config.positions; ++j) {
      const double p = grid(config.position_min, config.position_max, config.positions, j);
      for (std::size_t k = 0; k < config.thicknesses; ++k) {
        const double t = grid(config.thickness_min, config.thickness_max, config.thicknesses, k);
        char name[64];
        std::snprintf(name, sizeof name, "naca_m%.4f_p%.3f_t%.3f", m, p, t);
        out.push_back({name, geometry::naca4(m, p, t)});
      }
    }
  }
  return out;
}

UserShapes read_user_shapes(const std::string& dir) {
  UserShapes out;
  if (dir.empty() || !fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".dat") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      out.shapes.push_back({f.stem().string(), geometry::read_coordinates_file(f.string())});
    } catch (const std::exception& e) {
      out.skipped.push_back(f.filename().string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::vector<double>> Corpus::normalized() const {
  std::vector<std::vector<double>> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(geometry::normalize(r, box));
  return out;
}

Corpus build_corpus(const std::vector<NamedShape>& shapes, const geometry::AirfoilShape& base,
                    const geometry::BumpBasis& basis, double ridge) {
  if (shapes.empty()) throw InvalidArgument("corpus needs at least one shape");
  Corpus c;
  for (const auto& s : shapes) {
    auto fit = geometry::fit_hicks_henne(s.shape, base, basis, geometry::kFitPoints, ridge);
    c.names.push_back(s.name);
    c.raw.push_back(std::move(fit.delta.delta));
    c.residuals.push_back(fit.rms_residual);
  }
  c.box = geometry::NormalizationBox::from_samples(c.raw);
  return c;
}

ResidualSummary summarize_residuals(const std::vector<double>& residuals) {
  if (residuals.empty()) throw InvalidArgument("no residuals to summarize");
  auto v = residuals;
  std::sort(v.begin(), v.end());
  auto at = [&](double q) { return v[static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)))]; };
  return {v.front(), at(0.5), at(0.95), v.back()};
}

void write_corpus(const std::string& dir, const Corpus& corpus, const std::string& comment) {
  fs::create_directories(dir);
  const std::size_t d = corpus.box.size();
  std::ofstream vec(fs::path(dir) / "vectors.csv"), norm(fs::path(dir) / "normalized.csv"),
      box(fs::path(dir) / "box.csv");
  if (!vec || !norm || !box) throw InvalidArgument("cannot write dataset files under '" + dir + "'");
  if (!comment.empty()) {
    for (auto* f : {&vec, &norm, &box}) *f << "# " << comment << '\n';
  }
  vec << "name,rms";
  norm << "name";
  for (std::size_t i = 0; i < d; ++i) {
    vec << ",d" << i;
    norm << ",u" << i;
  }
  vec << '\n';
  norm << '\n';
  const auto unit = corpus.normalized();
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    vec << corpus.names[k] << ',' << format(corpus.residuals[k]);
    norm << corpus.names[k];
    for (std::size_t i = 0; i < d; ++i) {
      vec << ',' << format(corpus.raw[k][i]);
      norm << ',' << format(unit[k][i]);
    }
    vec << '\n';
    norm << '\n';
  }
  box << "component,lo,hi\n";
  for (std::size_t i = 0; i < d; ++i) box << i << ',' << format(corpus.box.lo[i]) << ',' << format(corpus.box.hi[i]) << '\n';
}

Corpus read_corpus(const std::string& dir) {
  const auto vec_path = fs::path(dir) / "vectors.csv";
  const auto box_path = fs::path(dir) / "box.csv";
  const auto rows = read_csv(vec_path);
  const auto box_rows = read_csv(box_path);
  if (rows.front().size() < 3 || rows.front()[0] != "name") throw MalformedInput(vec_path.string() + ": bad header");
  const std::size_t d = rows.front().size() - 2;
  Corpus c;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != d + 2) throw MalformedInput(vec_path.string() + " line " + std::to_string(r + 1) + ": wrong column count");
    c.names.push_back(rows[r][0]);
    c.residuals.push_back(parse_double(rows[r][1], vec_path.string(), r + 1));
    std::vector<double> v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = parse_double(rows[r][i + 2], vec_path.string(), r + 1);
    c.raw.push_back(std::move(v));
  }
  if (c.raw.empty()) throw MalformedInput(vec_path.string() + " has no entries");
  if (box_rows.size() != d + 1) throw MalformedInput(box_path.string() + ": expected " + std::to_string(d) + " components");
  c.box.lo.resize(d);
  c.box.hi.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    if (box_rows[i + 1].size() != 3) throw MalformedInput(box_path.string() + " line " + std::to_string(i + 2) + ": wrong column count");
    c.box.lo[i] = parse_double(box_rows[i + 1][1], box_path.string(), i + 2);
    c.box.hi[i] = parse_double(box_rows[i + 1][2], box_path.string(), i + 2);
  }
  c.box.validate();
  return c;
}

}  // namespace latentfoil::corpus
