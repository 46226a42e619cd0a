#include "latentfoil/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cctype>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>
#include <boost/math/special_functions/fpclassify.hpp>
#include <boost/math/interpolators/pchip.hpp>

#include "latentfoil/errors.hpp"

namespace latentfoil::geometry {

namespace {

constexpr double kEndpointTol = 1e-9;
constexpr double kRankThreshold = 1e-14;
constexpr double kTrailingEdgeMerge = 1e-3;

std::vector<double> xs_of(const std::vector<Point>& pts) {
  std::vector<double> out(pts.size());
  std::transform(pts.begin(), pts.end(), out.begin(), [](const Point& p) { return p.x; });
  return out;
}

std::vector<double> ys_of(const std::vector<Point>& pts) {
  std::vector<double> out(pts.size());
  std::transform(pts.begin(), pts.end(), out.begin(), [](const Point& p) { return p.y; });
  return out;
}

// Monotone cubic interpolation of one surface at the given abscissae.
std::vector<double> interpolate_surface(const std::vector<Point>& pts, std::span<const double> xs) {
  auto px = xs_of(pts);
  auto py = ys_of(pts);
  std::vector<double> out(xs.size());
  if (pts.size() < 4) {
    throw MalformedInput("surface needs at least 4 points for interpolation");
  }
  boost::math::interpolators::pchip<std::vector<double>> spline(std::move(px), std::move(py));
  const double x0 = pts.front().x;
  const double x1 = pts.back().x;
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = spline(std::clamp(xs[i], x0, x1));
  return out;
}

void validate_surface(const std::vector<Point>& pts, const char* name) {
  if (pts.size() < 2) throw MalformedInput(std::string(name) + " surface has fewer than 2 points");
  if (std::abs(pts.front().x) > kEndpointTol || std::abs(pts.back().x - 1.0) > kEndpointTol) {
    throw MalformedInput(std::string(name) + " surface must span x = 0 .. 1");
  }
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (!(pts[i].x > pts[i - 1].x)) {
      throw MalformedInput(std::string(name) + " surface abscissae not strictly increasing at point " +
                           std::to_string(i));
    }
  }
}

}  // namespace

void validate(const AirfoilShape& shape) {
  validate_surface(shape.upper, "upper");
  validate_surface(shape.lower, "lower");
}

bool self_intersecting(const AirfoilShape& shape, std::size_t samples) {
  const auto xs = cosine_spacing(samples);
  const auto yu = interpolate_surface(shape.upper, xs);
  const auto yl = interpolate_surface(shape.lower, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (yu[i] - yl[i] < -kEndpointTol) return true;
  }
  return false;
}

BumpBasis::BumpBasis(std::vector<double> peaks) : peaks_(std::move(peaks)) {
  exponents_.reserve(peaks_.size());
  for (double xn : peaks_) {
    if (!(xn > 0.0 && xn < 1.0)) throw InvalidArgument("bump peak must lie in (0, 1)");
    exponents_.push_back(std::log(0.5) / std::log(xn));
  }
}

double BumpBasis::operator()(std::size_t n, double x) const {
  if (n >= peaks_.size()) throw InvalidArgument("bump index out of range");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("bump abscissa outside [0, 1]");
  if (x == 0.0 || x == 1.0) return 0.0;
  const double s = std::sin(std::numbers::pi * std::pow(x, exponents_[n]));
  return s * s * s;
}

BumpBasis bump_basis(std::size_t d) {
  if (d < 2 || d % 2 != 0) throw InvalidArgument("design dimension must be even and >= 2");
  const std::size_t half = d / 2;
  std::vector<double> peaks(half);
  for (std::size_t k = 1; k <= half; ++k) peaks[k - 1] = static_cast<double>(k) / static_cast<double>(half + 1);
  return BumpBasis(std::move(peaks));
}

DeformResult deform(const AirfoilShape& base, const HicksHenneVector& delta, const BumpBasis& basis) {
  if (delta.size() != basis.design_dim()) {
    throw InvalidArgument("design vector length " + std::to_string(delta.size()) + " does not match basis dimension " +
                          std::to_string(basis.design_dim()));
  }
  DeformResult out{base, false};
  const auto up = delta.upper();
  const auto lo = delta.lower();
  for (auto& p : out.shape.upper) {
    for (std::size_t n = 0; n < basis.size(); ++n) p.y += up[n] * basis(n, p.x);
  }
  for (auto& p : out.shape.lower) {
    for (std::size_t n = 0; n < basis.size(); ++n) p.y += lo[n] * basis(n, p.x);
  }
  out.self_intersecting = self_intersecting(out.shape);
  return out;
}

std::vector<double> cosine_spacing(std::size_t n) {
  if (n < 2) throw InvalidArgument("cosine spacing needs at least 2 points");
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1)));
  }
  xs.front() = 0.0;
  xs.back() = 1.0;
  return xs;
}

ThicknessPeak max_thickness(const AirfoilShape& shape, std::size_t samples) {
  validate(shape);
  const auto xs = cosine_spacing(samples);
  const auto yu = interpolate_surface(shape.upper, xs);
  const auto yl = interpolate_surface(shape.lower, xs);
  ThicknessPeak best{yu[0] - yl[0], xs[0]};
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (yu[i] - yl[i] > best.value) best = {yu[i] - yl[i], xs[i]};
  }
  return best;
}

double thickness_to_chord(const AirfoilShape& shape) { return max_thickness(shape, kFitPoints).value; }

std::vector<double> thickness_gradient(const AirfoilShape& base, const HicksHenneVector& delta,
                                       const BumpBasis& basis) {
  const auto peak = max_thickness(deform(base, delta, basis).shape, kFitPoints);
  std::vector<double> g(basis.design_dim());
  const std::size_t half = basis.size();
  for (std::size_t n = 0; n < half; ++n) {
    g[n] = basis(n, peak.x);
    g[half + n] = -g[n];
  }
  return g;
}

AirfoilShape resample(const AirfoilShape& shape, std::size_t n) {
  if (n < 10) throw InvalidArgument("resample needs at least 10 points per surface");
  validate(shape);
  const auto xs = cosine_spacing(n);
  const auto yu = interpolate_surface(shape.upper, xs);
  const auto yl = interpolate_surface(shape.lower, xs);
  AirfoilShape out;
  out.upper.resize(n);
  out.lower.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.upper[i] = {xs[i], yu[i]};
    out.lower[i] = {xs[i], yl[i]};
  }
  return out;
}

AirfoilShape naca4(double m, double p, double t, std::size_t n) {
  if (n < 10) throw InvalidArgument("NACA section needs at least 10 points per surface");
  if (!(t >= 0.0) || !(m >= 0.0) || (m > 0.0 && !(p > 0.0 && p < 1.0))) {
    throw InvalidArgument("invalid NACA 4-digit parameters");
  }
  const auto xs = cosine_spacing(n);
  AirfoilShape out;
  out.upper.resize(n);
  out.lower.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = xs[i];
    const double yt =
        5.0 * t * (0.2969 * std::sqrt(x) - 0.1260 * x - 0.3516 * x * x + 0.2843 * x * x * x - 0.1036 * x * x * x * x);
    double yc = 0.0;
    if (m > 0.0) {
      yc = x < p ? m / (p * p) * (2.0 * p * x - x * x)
                 : m / ((1.0 - p) * (1.0 - p)) * ((1.0 - 2.0 * p) + 2.0 * p * x - x * x);
    }
    out.upper[i] = {x, yc + yt};
    out.lower[i] = {x, yc - yt};
  }
  // The closed-TE polynomial leaves a residue of order 1e-17 at x = 1.
  out.upper.back().y = out.lower.back().y = 0.5 * (out.upper.back().y + out.lower.back().y);
  return out;
}

AirfoilShape naca4(std::string_view code, std::size_t n) {
  if (code.size() != 4 || !std::all_of(code.begin(), code.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw InvalidArgument("NACA code must be exactly four digits, got '" + std::string(code) + "'");
  }
  const double m = (code[0] - '0') / 100.0;
  const double p = (code[1] - '0') / 10.0;
  const double t = ((code[2] - '0') * 10 + (code[3] - '0')) / 100.0;
  if (m > 0.0 && p == 0.0) throw InvalidArgument("cambered NACA code needs a nonzero camber position");
  return naca4(m, p, t, n);
}

FitResult fit_hicks_henne(const AirfoilShape& target, const AirfoilShape& base, const BumpBasis& basis,
                          std::size_t points, double ridge) {
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw InvalidArgument("fit ridge must be finite and nonnegative");
  const auto t = resample(target, points);
  const auto b = resample(base, points);
  const std::size_t nb = basis.size();
  const auto xs = cosine_spacing(points);

  Eigen::MatrixXd phi(points, nb);
  for (std::size_t i = 0; i < points; ++i) {
    for (std::size_t n = 0; n < nb; ++n) phi(i, n) = basis(n, xs[i]);
  }
  // The bumps overlap strongly (cond(phi) ~ 4e8 for d = 40), so the least
  // squares problem is solved by QR on phi itself rather than through the
  // squared normal matrix. The ridge enters as extra rows sqrt(ridge) I.
  const Eigen::Index rows = static_cast<Eigen::Index>(points + (ridge > 0.0 ? nb : 0));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(nb));
  a.topRows(static_cast<Eigen::Index>(points)) = phi;
  if (ridge > 0.0) a.bottomRows(static_cast<Eigen::Index>(nb)).diagonal().setConstant(std::sqrt(ridge));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(kRankThreshold);
  if (qr.rank() < static_cast<Eigen::Index>(nb)) {
    throw NumericalFailure("Hicks-Henne basis matrix is rank deficient");
  }

  FitResult out{HicksHenneVector(2 * nb), 0.0};
  double sq = 0.0;
  auto solve_surface = [&](const std::vector<Point>& tgt, const std::vector<Point>& ref, std::size_t offset) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(rows);
    for (std::size_t i = 0; i < points; ++i) r(static_cast<Eigen::Index>(i)) = tgt[i].y - ref[i].y;
    const Eigen::VectorXd d = qr.solve(r);
    if (!d.allFinite()) throw NumericalFailure("Hicks-Henne fit produced non-finite coefficients");
    for (std::size_t n = 0; n < nb; ++n) out.delta.delta[offset + n] = d(static_cast<Eigen::Index>(n));
    sq += (phi * d - r.head(static_cast<Eigen::Index>(points))).squaredNorm();
  };
  solve_surface(t.upper, b.upper, 0);
  solve_surface(t.lower, b.lower, nb);
  out.rms_residual = std::sqrt(sq / static_cast<double>(2 * points));
  return out;
}

void NormalizationBox::validate() const {
  if (lo.size() != hi.size() || lo.empty()) throw InvalidArgument("normalization box bounds have mismatched sizes");
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(hi[i] > lo[i])) throw InvalidArgument("normalization box needs hi > lo at component " + std::to_string(i));
  }
}

NormalizationBox NormalizationBox::from_samples(std::span<const std::vector<double>> samples) {
  if (samples.empty()) throw InvalidArgument("normalization box needs at least one sample");
  NormalizationBox box{samples.front(), samples.front()};
  for (const auto& s : samples) {
    if (s.size() != box.lo.size()) throw InvalidArgument("samples have inconsistent length");
    for (std::size_t i = 0; i < s.size(); ++i) {
      box.lo[i] = std::min(box.lo[i], s[i]);
      box.hi[i] = std::max(box.hi[i], s[i]);
    }
  }
  box.validate();
  return box;
}

std::vector<double> normalize(std::span<const double> delta, const NormalizationBox& box) {
  box.validate();
  if (delta.size() != box.size()) throw InvalidArgument("normalize: dimension mismatch");
  std::vector<double> out(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) out[i] = (delta[i] - box.lo[i]) / (box.hi[i] - box.lo[i]);
  return out;
}

std::vector<double> denormalize(std::span<const double> unit, const NormalizationBox& box) {
  box.validate();
  if (unit.size() != box.size()) throw InvalidArgument("denormalize: dimension mismatch");
  std::vector<double> out(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i) out[i] = box.lo[i] + unit[i] * (box.hi[i] - box.lo[i]);
  return out;
}

namespace {

struct Line {
  std::size_t number;
  std::vector<std::string_view> tokens;
};

std::vector<Line> tokenize(std::string_view text) {
  std::vector<Line> lines;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view raw = text.substr(pos, end - pos);
    ++number;
    Line line{number, {}};
    std::size_t i = 0;
    while (i < raw.size()) {
      while (i < raw.size() && (std::isspace(static_cast<unsigned char>(raw[i])) || raw[i] == ',')) ++i;
      const std::size_t start = i;
      while (i < raw.size() && !std::isspace(static_cast<unsigned char>(raw[i])) && raw[i] != ',') ++i;
      if (i > start) line.tokens.push_back(raw.substr(start, i - start));
    }
    lines.push_back(std::move(line));
    if (end == text.size()) break;
    pos = end + 1;
  }
  return lines;
}

bool parse_number(std::string_view tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

bool numeric_line(const Line& line) {
  double v = 0.0;
  return !line.tokens.empty() &&
         std::all_of(line.tokens.begin(), line.tokens.end(), [&](std::string_view t) { return parse_number(t, v); });
}

double mean_y(const std::vector<Point>& pts) {
  double s = 0.0;
  for (const auto& p : pts) s += p.y;
  return s / static_cast<double>(pts.size());
}

std::vector<Point> drop_repeats(const std::vector<Point>& pts) {
  std::vector<Point> out;
  for (const auto& p : pts) {
    if (!out.empty() && p.x == out.back().x && p.y == out.back().y) continue;
    out.push_back(p);
  }
  return out;
}

}  // namespace

AirfoilShape parse_coordinates(std::string_view text) {
  const auto lines = tokenize(text);
  std::vector<Line> body;
  bool header_seen = false;
  for (const auto& line : lines) {
    if (line.tokens.empty()) {
      if (!body.empty()) body.push_back(line);  // block separator
      continue;
    }
    if (!header_seen && body.empty() && !numeric_line(line)) {
      header_seen = true;
      continue;
    }
    if (!numeric_line(line)) throw ParseError("non-numeric token in coordinate data", line.number);
    if (line.tokens.size() != 2) throw ParseError("expected two values per line", line.number);
    body.push_back(line);
  }
  while (!body.empty() && body.back().tokens.empty()) body.pop_back();
  if (body.empty()) throw ParseError("no coordinate data", 0);

  auto point_of = [](const Line& l) {
    Point p;
    parse_number(l.tokens[0], p.x);
    parse_number(l.tokens[1], p.y);
    return p;
  };

  std::vector<Point> first;
  std::vector<Point> second;
  const Point head = point_of(body.front());
  const bool lednicer = head.x > 1.5 && head.y > 1.5 && head.x == std::floor(head.x) && head.y == std::floor(head.y);
  if (lednicer) {
    const auto nu = static_cast<std::size_t>(head.x);
    const auto nl = static_cast<std::size_t>(head.y);
    std::vector<Point> pts;
    for (std::size_t i = 1; i < body.size(); ++i) {
      if (!body[i].tokens.empty()) pts.push_back(point_of(body[i]));
    }
    if (pts.size() != nu + nl) {
      throw MalformedInput("Lednicer header announces " + std::to_string(nu + nl) + " points, found " +
                           std::to_string(pts.size()));
    }
    first.assign(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(nu));
    second.assign(pts.begin() + static_cast<std::ptrdiff_t>(nu), pts.end());
  } else {
    std::vector<Point> loop;
    for (const auto& l : body) {
      if (!l.tokens.empty()) loop.push_back(point_of(l));
    }
    loop = drop_repeats(loop);
    if (loop.size() < 3) throw MalformedInput("too few coordinate points");
    const auto le = static_cast<std::size_t>(std::distance(
        loop.begin(), std::min_element(loop.begin(), loop.end(), [](const Point& a, const Point& b) { return a.x < b.x; })));
    first.assign(loop.begin(), loop.begin() + static_cast<std::ptrdiff_t>(le) + 1);
    std::reverse(first.begin(), first.end());
    second.assign(loop.begin() + static_cast<std::ptrdiff_t>(le), loop.end());
  }
  first = drop_repeats(first);
  second = drop_repeats(second);
  if (first.size() < 10 || second.size() < 10) throw MalformedInput("fewer than 10 points on a surface");
  if (mean_y(first) < mean_y(second)) std::swap(first, second);

  // Shared leading edge.
  const Point le = first.front().x <= second.front().x ? first.front() : second.front();
  if (first.front().x != le.x || first.front().y != le.y) first.insert(first.begin(), le);
  if (second.front().x != le.x || second.front().y != le.y) second.insert(second.begin(), le);

  const double chord = std::max(first.back().x, second.back().x) - le.x;
  if (!(chord > 0.0)) throw MalformedInput("degenerate chord");
  AirfoilShape shape{std::move(first), std::move(second)};
  for (auto* surf : {&shape.upper, &shape.lower}) {
    for (auto& p : *surf) p = {(p.x - le.x) / chord, (p.y - le.y) / chord};
    surf->front() = {0.0, 0.0};
    if (1.0 - surf->back().x > kTrailingEdgeMerge) throw MalformedInput("surface does not reach the trailing edge");
    surf->back().x = 1.0;
  }
  if (std::abs(shape.upper.back().y - shape.lower.back().y) <= kTrailingEdgeMerge) {
    const double te = 0.5 * (shape.upper.back().y + shape.lower.back().y);
    shape.upper.back().y = shape.lower.back().y = te;
  }
  validate(shape);
  return shape;
}

AirfoilShape read_coordinates_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open coordinate file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_coordinates(buf.str());
}

void write_shape_csv(std::ostream& out, const AirfoilShape& shape) {
  out << "x,y\n";
  out.precision(17);
  for (auto it = shape.upper.rbegin(); it != shape.upper.rend(); ++it) out << it->x << ',' << it->y << '\n';
  for (std::size_t i = 1; i < shape.lower.size(); ++i) out << shape.lower[i].x << ',' << shape.lower[i].y << '\n';
}

}  // namespace latentfoil::geometry
