#include "latentfoil/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "latentfoil/checks.hpp"
#include "latentfoil/design.hpp"
#include "latentfoil/errors.hpp"
#include "latentfoil/manifold.hpp"
#include "latentfoil/workflow.hpp"

namespace latentfoil::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- config parsing --------------------------------------------------------

class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (!root.contains(name)) return;
    obj_ = &root.at(name);
    if (!obj_->is_object()) throw InvalidArgument("config section '" + name + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (obj_ == nullptr || std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.count(key)) throw InvalidArgument("unknown config key '" + name_ + "." + key + "'");
    }
  }

  template <class T>
  void get(const std::string& key, T& field) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    try {
      field = obj_->at(key).get<T>();
    } catch (const json::exception&) {
      throw InvalidArgument("config key '" + name_ + "." + key + "' has the wrong type");
    }
  }
  void get(const std::string& key, std::optional<double>& field) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    const auto& v = obj_->at(key);
    if (v.is_null()) {
      field.reset();
    } else if (v.is_number()) {
      field = v.get<double>();
    } else {
      throw InvalidArgument("config key '" + name_ + "." + key + "' must be a number or null");
    }
  }
  const json* child(const std::string& key) {
    seen_.insert(key);
    return obj_ != nullptr && obj_->contains(key) ? &obj_->at(key) : nullptr;
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

const std::set<std::string> kSections{"geometry", "schedule", "train", "problem", "paths"};

// ---- provenance ------------------------------------------------------------

struct Provenance {
  std::string command;
  json config;
  std::string input_sha256;

  std::string comment() const { return "latentfoil " + command + " input_sha256=" + input_sha256 + " config=" + config.dump(); }
  json to_json() const { return {{"command", command}, {"input_sha256", input_sha256}, {"config", config}}; }
};

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Hash of the config echo followed by every input file in the given order.
Provenance provenance(const std::string& command, const RunConfig& config, const std::vector<std::string>& inputs) {
  Provenance p{command, config.to_json(), {}};
  std::string blob = p.config.dump();
  for (const auto& path : inputs) {
    blob += '\0' + path + '\0';
    blob += read_bytes(path);
  }
  p.input_sha256 = sha256_hex(blob);
  return p;
}

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path.string() + "'");
  out << std::setprecision(17);
  return out;
}

void write_json(const fs::path& path, const json& j) { open_output(path) << j.dump(2) << '\n'; }

std::vector<std::string> dataset_files(const std::string& dir) {
  std::vector<std::string> files;
  for (const char* name : {"vectors.csv", "box.csv"}) {
    const auto p = fs::path(dir) / name;
    if (!fs::exists(p)) {
      throw InvalidArgument("dataset file '" + p.string() + "' not found; run 'latentfoil gen-data' first");
    }
    files.push_back(p.string());
  }
  return files;
}

void require_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw InvalidArgument("checkpoint '" + path + "' not found; run 'latentfoil train' first");
}

// ---- commands --------------------------------------------------------------

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool dump_flow = false;
  double tau = manifold::kDefaultTau;
  std::optional<std::string> mode;
  std::size_t n = 0;
  std::size_t trials = 100;
  std::string points;
  std::vector<std::string> results;
  bool use_checkpoint = false;
};

std::string format_g(double v, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  auto shapes = corpus::naca_sweep(cfg.geometry.sweep);
  const auto user = corpus::read_user_shapes(cfg.paths.user_shapes);
  std::vector<std::string> inputs;
  for (const auto& s : user.shapes) {
    inputs.push_back((fs::path(cfg.paths.user_shapes) / (s.name + ".dat")).string());
    shapes.push_back(s);
  }
  for (const auto& s : user.skipped) err << "skipped " << s << '\n';
  if (fs::is_regular_file(cfg.geometry.base)) inputs.push_back(cfg.geometry.base);
  const auto prov = provenance("gen-data", cfg, inputs);
  const auto c = corpus::build_corpus(shapes, workflow::load_shape(cfg.geometry.base),
                                      geometry::bump_basis(cfg.geometry.d), cfg.geometry.fit_ridge);
  corpus::write_corpus(cfg.paths.dataset, c, prov.comment());
  const auto r = corpus::summarize_residuals(c.residuals);
  auto meta = prov.to_json();
  meta["size"] = c.size();
  meta["user_shapes"] = user.shapes.size();
  meta["skipped"] = user.skipped;
  meta["fit_rms"] = {{"min", r.min}, {"median", r.median}, {"p95", r.p95}, {"max", r.max}};
  write_json(fs::path(cfg.paths.dataset) / "dataset.json", meta);
  out << "wrote " << c.size() << " vectors (" << user.shapes.size() << " user, " << user.skipped.size()
      << " skipped) to " << cfg.paths.dataset << "\n"
      << "fit RMS residual: min " << format_g(r.min, 3) << ", median " << format_g(r.median, 3) << ", p95 "
      << format_g(r.p95, 3) << ", max " << format_g(r.max, 3) << '\n';
  return kSuccess;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto prov = provenance("train", cfg, dataset_files(cfg.paths.dataset));
  const auto c = corpus::read_corpus(cfg.paths.dataset);
  const auto outcome = workflow::train_model(cfg, c, [&](const diffusion::LossRecord& r) {
    out << "step " << r.step << "  loss " << format_g(r.loss, 5) << "  ema " << format_g(r.ema_loss, 5) << '\n';
  });
  diffusion::save_checkpoint(cfg.paths.checkpoint, outcome.result.ema, outcome.schedule, prov.to_json().dump());
  const fs::path dir(cfg.paths.output);
  auto csv = open_output(dir / "loss.csv");
  csv << "# " << prov.comment() << '\n';
  diffusion::write_loss_csv(csv, outcome.result.curve);
  auto meta = prov.to_json();
  meta["steps"] = cfg.train.steps;
  meta["windowed_loss_200"] = outcome.windowed_200;
  meta["windowed_loss_final"] = outcome.windowed_final;
  meta["relative_drop"] = outcome.relative_drop();
  meta["checkpoint"] = cfg.paths.checkpoint;
  write_json(dir / "train.json", meta);
  out << "saved EMA weights to " << cfg.paths.checkpoint << "; windowed loss " << format_g(outcome.windowed_200, 4)
      << " (step 200) -> " << format_g(outcome.windowed_final, 4) << " (step " << cfg.train.steps << ")\n";
  return kSuccess;
}

int cmd_sample(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  require_checkpoint(cfg.paths.checkpoint);
  auto inputs = dataset_files(cfg.paths.dataset);
  inputs.push_back(cfg.paths.checkpoint);
  auto prov = provenance("sample", cfg, inputs);
  const std::size_t n = opt.n == 0 ? 8 : opt.n;
  prov.config["sample"] = {{"n", n}, {"seed", cfg.problem.seed}};
  const auto ck = diffusion::load_checkpoint(cfg.paths.checkpoint);
  const auto c = corpus::read_corpus(cfg.paths.dataset);
  const auto steps = diffusion::strided_steps(ck.schedule.T, cfg.schedule.infer_steps);
  const auto base = workflow::load_shape(cfg.geometry.base);
  const auto basis = geometry::bump_basis(ck.model.dim());

  const fs::path dir(cfg.paths.output);
  auto vec = open_output(dir / "samples.csv");
  auto shp = open_output(dir / "shapes.csv");
  vec << "# " << prov.comment() << "\nsample";
  for (std::size_t i = 0; i < ck.model.dim(); ++i) vec << ",d" << i;
  vec << '\n';
  shp << "# " << prov.comment() << "\nsample,x,y\n";
  std::size_t crossing = 0;
  const auto zs = workflow::gaussian_latents(n, ck.model.dim(), cfg.problem.seed);
  for (std::size_t k = 0; k < n; ++k) {
    const auto delta = geometry::denormalize(diffusion::generate(ck.model, zs[k], ck.schedule, steps), c.box);
    vec << k;
    for (double v : delta) vec << ',' << v;
    vec << '\n';
    const auto shape = geometry::deform(base, geometry::HicksHenneVector(delta), basis);
    crossing += shape.self_intersecting;
    std::ostringstream loop;
    loop << std::setprecision(17);
    geometry::write_shape_csv(loop, shape.shape);
    std::istringstream lines(loop.str());
    std::string line;
    while (std::getline(lines, line)) {
      if (!line.empty() && (std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '-')) shp << k << ',' << line << '\n';
    }
  }
  out << "wrote " << n << " samples to " << (dir / "samples.csv").string() << " (" << crossing << " self-intersecting)\n";
  return kSuccess;
}

std::vector<std::vector<double>> read_points_csv(const std::string& path, const geometry::NormalizationBox& box) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("points file '" + path + "' not found");
  std::vector<std::vector<double>> points;
  std::string line;
  bool header = true;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<double> delta;
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    while (std::getline(cells, cell, ',')) {
      try {
        delta.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("'" + path + "': bad number '" + cell + "'", number);
      }
    }
    if (delta.size() != box.size()) throw ParseError("'" + path + "': expected " + std::to_string(box.size()) + " values", number);
    points.push_back(geometry::normalize(delta, box));
  }
  return points;
}

int cmd_analyze(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  require_checkpoint(cfg.paths.checkpoint);
  auto inputs = dataset_files(cfg.paths.dataset);
  inputs.push_back(cfg.paths.checkpoint);
  if (!opt.points.empty()) inputs.push_back(opt.points);
  for (const auto& r : opt.results) inputs.push_back(r);
  auto prov = provenance("analyze", cfg, inputs);
  const std::size_t n = opt.n == 0 ? 20 : opt.n;
  prov.config["analyze"] = {{"tau", opt.tau}, {"n", n}, {"seed", cfg.problem.seed}};

  const auto ck = diffusion::load_checkpoint(cfg.paths.checkpoint);
  const auto c = corpus::read_corpus(cfg.paths.dataset);
  std::vector<std::vector<double>> points;
  std::vector<std::string> labels;
  if (!opt.points.empty()) {
    points = read_points_csv(opt.points, c.box);
    for (std::size_t k = 0; k < points.size(); ++k) labels.push_back(opt.points + "#" + std::to_string(k));
  }
  for (const auto& path : opt.results) {
    const auto j = workflow::read_result(path);
    points.push_back(geometry::normalize(j.at("delta").get<std::vector<double>>(), c.box));
    labels.push_back(path);
  }
  if (points.empty()) {
    const auto steps = diffusion::strided_steps(ck.schedule.T, cfg.schedule.infer_steps);
    for (const auto& z : workflow::gaussian_latents(n, ck.model.dim(), cfg.problem.seed)) {
      points.push_back(diffusion::generate(ck.model, z, ck.schedule, steps));
      labels.push_back("sample " + std::to_string(labels.size()));
    }
  }
  const auto sweep = manifold::spectrum_sweep(ck.model, points, ck.schedule, opt.tau);
  const fs::path dir(cfg.paths.output);
  auto csv = open_output(dir / "spectrum.csv");
  csv << "# " << prov.comment() << '\n';
  manifold::write_spectrum_csv(csv, sweep.reports);
  auto svg = open_output(dir / "spectrum.svg");
  std::ostringstream body;
  manifold::write_spectrum_svg(body, sweep.reports);
  std::string text = body.str();
  std::string comment = prov.comment();
  for (std::size_t pos; (pos = comment.find("--")) != std::string::npos;) comment.replace(pos, 2, "- -");
  const auto close = text.find('>');
  svg << text.substr(0, close + 1) << "<!-- " << comment << " -->" << text.substr(close + 1);

  auto meta = prov.to_json();
  meta["median_rank"] = sweep.median_rank;
  meta["min_gap"] = sweep.min_gap;
  meta["max_gap"] = sweep.max_gap;
  json rows = json::array();
  for (std::size_t k = 0; k < sweep.reports.size(); ++k) {
    const auto& r = sweep.reports[k];
    rows.push_back({{"point", labels[k]}, {"rank", r.rank}, {"rank_gap_ratio", r.rank_gap_ratio}, {"gap_index", r.gap_index},
                    {"gap_ratio", r.gap_ratio}});
  }
  meta["points"] = rows;
  write_json(dir / "analyze.json", meta);
  out << sweep.reports.size() << " points, tau " << opt.tau << ": median rank " << sweep.median_rank << " of "
      << ck.model.dim() << ", largest gap ratio " << format_g(sweep.max_gap, 4) << '\n';
  return kSuccess;
}

void optimize_one(const RunConfig& cfg, optim::Mode mode, const corpus::Corpus& c, const diffusion::Checkpoint* ck,
                  const Provenance& prov, bool dump_flow, std::ostream& out) {
  const fs::path dir(cfg.paths.output);
  auto log = open_output(dir / "log.csv");
  log << "# " << prov.comment() << '\n';
  const auto outcome = workflow::optimize(cfg, mode, c.box, ck, [&](const optim::IterateLog& e) {
    if (e.iterate == 0) {
      log << "iterate,outer,objective";
      for (std::size_t i = 0; i < e.constraints.size(); ++i) log << ",c" << i;
      log << ",cl,tc,eps_rel,evaluations,gradients,step_norm\n";
    }
    log << e.iterate << ',' << e.outer << ',' << e.objective;
    for (double v : e.constraints) log << ',' << v;
    for (double v : e.extras) log << ',' << v;
    log << ',' << e.eps_rel << ',' << e.evaluations << ',' << e.gradients << ',' << e.step_norm << '\n';
  });

  auto result = workflow::result_json(cfg, mode, outcome);
  result["provenance"] = prov.to_json();
  write_json(dir / "result.json", result);
  auto shape = open_output(dir / "shape.csv");
  shape << "# " << prov.comment() << '\n';
  geometry::write_shape_csv(shape, outcome.point.shape);
  if (dump_flow) {
    auto flow_csv = open_output(dir / "flow.csv");
    flow_csv << "# " << prov.comment() << '\n';
    workflow::write_flow_csv(flow_csv, outcome);
  }
  if (outcome.init && outcome.init->warning) {
    out << "warning: latent encoding residual " << format_g(outcome.init->residual_rms, 3) << " exceeds 0.05\n";
  }
  out << workflow::problem_label(cfg.problem) << " [" << optim::to_string(mode)
      << "]: " << optim::to_string(outcome.result.termination) << ", J " << format_g(outcome.point.objective)
      << ", Cl " << format_g(outcome.point.cl, 5) << ", t/c " << format_g(outcome.point.tc, 5) << ", eps_rel "
      << format_g(outcome.result.eps_rel, 3) << ", #J " << outcome.result.evaluations << ", #gradJ "
      << outcome.result.gradients << " -> " << (dir / "result.json").string() << '\n';
}

int cmd_optimize(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  const auto mode = optim::parse_mode(cfg.problem.mode);
  auto inputs = dataset_files(cfg.paths.dataset);
  if (mode == optim::Mode::latent) {
    require_checkpoint(cfg.paths.checkpoint);
    inputs.push_back(cfg.paths.checkpoint);
  }
  for (const auto* s : {&cfg.geometry.base, &cfg.problem.target}) {
    if (fs::is_regular_file(*s)) inputs.push_back(*s);
  }
  const auto prov = provenance("optimize", cfg, inputs);
  const auto c = corpus::read_corpus(cfg.paths.dataset);
  std::optional<diffusion::Checkpoint> ck;
  if (mode == optim::Mode::latent) ck = diffusion::load_checkpoint(cfg.paths.checkpoint);
  const auto* model = ck ? &*ck : nullptr;

  if (cfg.problem.cl_grid.empty() && cfg.problem.tc_grid.empty()) {
    optimize_one(cfg, mode, c, model, prov, opt.dump_flow, out);
    return kSuccess;
  }
  std::vector<std::optional<double>> cls(cfg.problem.cl_grid.begin(), cfg.problem.cl_grid.end());
  std::vector<std::optional<double>> tcs(cfg.problem.tc_grid.begin(), cfg.problem.tc_grid.end());
  if (cls.empty()) cls.push_back(cfg.problem.cl_bound);
  if (tcs.empty()) tcs.push_back(cfg.problem.tc_bound);
  for (const auto& cl : cls) {
    for (const auto& tc : tcs) {
      RunConfig cell = cfg;
      cell.problem.cl_bound = cl;
      cell.problem.tc_bound = tc;
      std::string name = "cl" + (cl ? format_g(*cl, 6) : std::string("none")) + "_tc" +
                         (tc ? format_g(*tc, 6) : std::string("none"));
      cell.paths.output = (fs::path(cfg.paths.output) / name).string();
      optimize_one(cell, mode, c, model, prov, opt.dump_flow, out);
    }
  }
  return kSuccess;
}

int cmd_gradcheck(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  std::vector<std::string> inputs;
  if (opt.use_checkpoint) {
    require_checkpoint(cfg.paths.checkpoint);
    inputs = dataset_files(cfg.paths.dataset);
    inputs.push_back(cfg.paths.checkpoint);
  }
  const auto prov = provenance("gradcheck", cfg, inputs);
  std::vector<gradcheck::Row> rows = gradcheck::autodiff_ops(opt.trials, cfg.problem.seed + 1);
  for (auto& r : checks::flow_adjoint()) rows.push_back(std::move(r));

  const auto schedule = diffusion::linear_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end);
  if (opt.use_checkpoint) {
    const auto ck = diffusion::load_checkpoint(cfg.paths.checkpoint);
    const auto c = corpus::read_corpus(cfg.paths.dataset);
    rows.push_back(checks::sampler_vjp(ck.model, ck.schedule));
    rows.push_back(checks::chain_gradient(ck.model, ck.schedule, c.box));
  } else {
    const auto net = nn::Denoiser::init(workflow::denoiser_config(cfg));
    rows.push_back(checks::sampler_vjp(net, schedule));
    // Untrained weights leave x0 at O(100) in unit space; a box of half-width
    // 1e-5 maps that to deltas of order 1e-3, inside the range the flow accepts.
    geometry::NormalizationBox box;
    box.lo.assign(net.dim(), -1e-5);
    box.hi.assign(net.dim(), 1e-5);
    rows.push_back(checks::chain_gradient(net, schedule, box));
  }

  const fs::path dir(cfg.paths.output);
  auto csv = open_output(dir / "gradcheck.csv");
  csv << "# " << prov.comment() << "\ncheck,trials,max_error,tolerance,pass\n";
  bool all = true;
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  for (const auto& r : rows) {
    all = all && r.pass();
    csv << '"' << r.name << "\"," << r.trials << ',' << r.max_rel_error << ',' << r.tolerance << ',' << (r.pass() ? 1 : 0) << '\n';
    out << std::left << std::setw(static_cast<int>(width) + 2) << r.name << std::right << std::setw(6) << r.trials
        << "  " << std::setw(11) << std::scientific << std::setprecision(3) << r.max_rel_error << "  < "
        << std::setw(9) << r.tolerance << std::defaultfloat << "  " << (r.pass() ? "PASS" : "FAIL") << '\n';
  }
  out << (all ? "all checks passed" : "gradient check FAILED") << '\n';
  return all ? kSuccess : kGradcheckFailure;
}

int cmd_report(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  if (opt.results.empty()) throw InvalidArgument("report needs at least one result file");
  const auto prov = provenance("report", cfg, opt.results);
  std::vector<workflow::ReportEntry> entries;
  for (const auto& path : opt.results) entries.push_back(workflow::report_entry(path));
  const auto table = workflow::build_report(entries);
  out << table.text;
  const fs::path dir(cfg.paths.output);
  auto csv = open_output(dir / "report.csv");
  csv << "# " << prov.comment() << '\n' << table.csv;
  return kSuccess;
}

}  // namespace

// ---- config ------------------------------------------------------------------

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kSections.count(key)) throw InvalidArgument("unknown config section '" + key + "'");
  }
  RunConfig c;
  {
    Section s(j, "geometry");
    s.get("d", c.geometry.d);
    s.get("n_panels", c.geometry.n_panels);
    s.get("base", c.geometry.base);
    s.get("fit_ridge", c.geometry.fit_ridge);
    if (const auto* sweep = s.child("sweep")) {
      const json wrapper{{"sweep", *sweep}};
      Section w(wrapper, "sweep");
      auto& sw = c.geometry.sweep;
      w.get("camber_min", sw.camber_min);
      w.get("camber_max", sw.camber_max);
      w.get("cambers", sw.cambers);
      w.get("position_min", sw.position_min);
      w.get("position_max", sw.position_max);
      w.get("positions", sw.positions);
      w.get("thickness_min", sw.thickness_min);
      w.get("thickness_max", sw.thickness_max);
      w.get("thicknesses", sw.thicknesses);
    }
  }
  {
    Section s(j, "schedule");
    s.get("T", c.schedule.T);
    s.get("beta_start", c.schedule.beta_start);
    s.get("beta_end", c.schedule.beta_end);
    s.get("infer_steps", c.schedule.infer_steps);
  }
  {
    Section s(j, "train");
    s.get("lr", c.train.lr);
    s.get("batch", c.train.batch);
    s.get("steps", c.train.steps);
    s.get("seed", c.train.seed);
    s.get("ema_decay", c.train.ema_decay);
    s.get("log_every", c.train.log_every);
    s.get("channels", c.train.channels);
    s.get("depth", c.train.depth);
    s.get("time_embed_dim", c.train.time_embed_dim);
  }
  {
    Section s(j, "problem");
    s.get("objective", c.problem.objective);
    s.get("target", c.problem.target);
    s.get("cl_bound", c.problem.cl_bound);
    s.get("tc_bound", c.problem.tc_bound);
    s.get("alpha", c.problem.alpha);
    s.get("mode", c.problem.mode);
    s.get("init", c.problem.init);
    s.get("seed", c.problem.seed);
    s.get("max_gradient_evals", c.problem.max_gradient_evals);
    s.get("max_evaluations", c.problem.max_evaluations);
    s.get("encode_steps", c.problem.encode_steps);
    s.get("scaled_fraction", c.problem.scaled_fraction);
    s.get("cl_grid", c.problem.cl_grid);
    s.get("tc_grid", c.problem.tc_grid);
  }
  {
    Section s(j, "paths");
    s.get("dataset", c.paths.dataset);
    s.get("checkpoint", c.paths.checkpoint);
    s.get("output", c.paths.output);
    s.get("user_shapes", c.paths.user_shapes);
  }
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  const auto& sw = geometry.sweep;
  auto bound = [](const std::optional<double>& b) { return b ? json(*b) : json(nullptr); };
  return {
      {"geometry",
       {{"d", geometry.d},
        {"n_panels", geometry.n_panels},
        {"base", geometry.base},
        {"fit_ridge", geometry.fit_ridge},
        {"sweep",
         {{"camber_min", sw.camber_min},
          {"camber_max", sw.camber_max},
          {"cambers", sw.cambers},
          {"position_min", sw.position_min},
          {"position_max", sw.position_max},
          {"positions", sw.positions},
          {"thickness_min", sw.thickness_min},
          {"thickness_max", sw.thickness_max},
          {"thicknesses", sw.thicknesses}}}}},
      {"schedule",
       {{"T", schedule.T}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end},
        {"infer_steps", schedule.infer_steps}}},
      {"train",
       {{"lr", train.lr},
        {"batch", train.batch},
        {"steps", train.steps},
        {"seed", train.seed},
        {"ema_decay", train.ema_decay},
        {"log_every", train.log_every},
        {"channels", train.channels},
        {"depth", train.depth},
        {"time_embed_dim", train.time_embed_dim}}},
      {"problem",
       {{"objective", problem.objective},
        {"target", problem.target},
        {"cl_bound", bound(problem.cl_bound)},
        {"tc_bound", bound(problem.tc_bound)},
        {"alpha", problem.alpha},
        {"mode", problem.mode},
        {"init", problem.init},
        {"seed", problem.seed},
        {"max_gradient_evals", problem.max_gradient_evals},
        {"max_evaluations", problem.max_evaluations},
        {"encode_steps", problem.encode_steps},
        {"scaled_fraction", problem.scaled_fraction},
        {"cl_grid", problem.cl_grid},
        {"tc_grid", problem.tc_grid}}},
      {"paths",
       {{"dataset", paths.dataset},
        {"checkpoint", paths.checkpoint},
        {"output", paths.output},
        {"user_shapes", paths.user_shapes}}},
  };
}

void RunConfig::validate() const {
  if (geometry.d == 0 || geometry.d % 2 != 0) throw InvalidArgument("geometry.d must be a positive even number");
  if (geometry.n_panels < 32 || geometry.n_panels % 2 != 0) throw InvalidArgument("geometry.n_panels must be even and >= 32");
  if (!(geometry.fit_ridge >= 0.0)) throw InvalidArgument("geometry.fit_ridge must be nonnegative");
  geometry.sweep.validate();
  if (schedule.T < 1 || !(schedule.beta_start > 0.0 && schedule.beta_start < schedule.beta_end && schedule.beta_end < 1.0)) {
    throw InvalidArgument("schedule needs T >= 1 and 0 < beta_start < beta_end < 1");
  }
  if (schedule.infer_steps < 1 || schedule.infer_steps > schedule.T) {
    throw InvalidArgument("schedule.infer_steps must lie in [1, T]");
  }
  if (!(train.lr > 0.0) || train.batch == 0 || train.steps == 0 || !(train.ema_decay >= 0.0 && train.ema_decay < 1.0) ||
      train.log_every == 0 || train.channels == 0 || train.depth == 0 || train.time_embed_dim == 0 ||
      train.time_embed_dim % 2 != 0) {
    throw InvalidArgument("train section out of range (positive lr, batch, steps, widths; even time_embed_dim; ema_decay in [0, 1))");
  }
  if (problem.objective != "target_cp" && problem.objective != "max_cl" && problem.objective != "cm") {
    throw InvalidArgument("problem.objective must be target_cp, max_cl or cm");
  }
  optim::parse_mode(problem.mode);
  if (problem.init != "encode" && problem.init != "gaussian") throw InvalidArgument("problem.init must be encode or gaussian");
  std::vector<std::optional<double>> bounds{problem.cl_bound, problem.tc_bound};
  bounds.insert(bounds.end(), problem.cl_grid.begin(), problem.cl_grid.end());
  bounds.insert(bounds.end(), problem.tc_grid.begin(), problem.tc_grid.end());
  for (const auto& b : bounds) {
    if (b && (*b == 0.0 || !std::isfinite(*b))) throw InvalidArgument("constraint bounds must be finite and nonzero (null disables)");
  }
  if (problem.max_gradient_evals == 0 || problem.max_evaluations == 0) throw InvalidArgument("problem budgets must be positive");
  if (!(problem.scaled_fraction >= 0.0 && problem.scaled_fraction < 0.5)) {
    throw InvalidArgument("problem.scaled_fraction must lie in [0, 0.5)");
  }
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config file '" + path + "' not found");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalFailure("SHA-256 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"latentfoil: airfoil shape optimization on a diffusion-model latent space"};
  app.name("latentfoil");
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed, "overrides train.seed and problem.seed");
  app.add_option("--out", opt.out, "overrides paths.output");
  app.add_flag("--dump-flow", opt.dump_flow, "optimize: also write panel Cp to flow.csv");
  app.add_option("--tau", opt.tau, "analyze: rank threshold relative to sigma_1")->check(CLI::Range(0.0, 1.0));
  app.add_option("--mode", opt.mode, "optimize: overrides problem.mode")->check(CLI::IsMember({"hh", "latent", "hh-scaled"}));

  auto* gen = app.add_subcommand("gen-data", "fit the NACA sweep and user .dat files, write the dataset");
  auto* train = app.add_subcommand("train", "train the noise predictor and save a checkpoint");
  auto* sample = app.add_subcommand("sample", "generate shapes from the checkpoint");
  sample->add_option("-n", opt.n, "number of samples (default 8)");
  auto* analyze = app.add_subcommand("analyze", "singular values of the t = 1 score Jacobian");
  analyze->add_option("-n", opt.n, "generated points when no inputs are given (default 20)");
  analyze->add_option("--points", opt.points, "CSV of coefficient vectors (first column is a label)");
  analyze->add_option("--results", opt.results, "optimize result files whose designs are analyzed");
  auto* optimize = app.add_subcommand("optimize", "constrained airfoil design");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of every gradient");
  gradcheck->add_option("--trials", opt.trials, "random trials per autodiff op")->check(CLI::PositiveNumber);
  gradcheck->add_flag("--checkpoint", opt.use_checkpoint, "use the trained checkpoint instead of fresh weights");
  auto* report = app.add_subcommand("report", "compare optimize results");
  report->add_option("results", opt.results, "result.json files")->required();
  for (auto* sub : {gen, train, sample, analyze, optimize, gradcheck, report}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << "run 'latentfoil --help' for usage\n";
    return kUsageError;
  }

  try {
    RunConfig cfg = load_config(opt.config_path);
    if (opt.seed) {
      cfg.train.seed = *opt.seed;
      cfg.problem.seed = *opt.seed;
    }
    if (opt.out) cfg.paths.output = *opt.out;
    if (opt.mode) cfg.problem.mode = *opt.mode;
    if (*gen) return cmd_gen_data(cfg, out, err);
    if (*train) return cmd_train(cfg, out);
    if (*sample) return cmd_sample(cfg, opt, out);
    if (*analyze) return cmd_analyze(cfg, opt, out);
    if (*optimize) return cmd_optimize(cfg, opt, out);
    if (*gradcheck) return cmd_gradcheck(cfg, opt, out);
    return cmd_report(cfg, opt, out);
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const GeometryError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

}  // namespace latentfoil::cli
