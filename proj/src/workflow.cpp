#include "latentfoil/workflow.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include "latentfoil/errors.hpp"

namespace latentfoil::workflow {

using nlohmann::json;

namespace {

bool is_naca_code(const std::string& s) {
  return s.size() == 4 && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

std::string format_g(double v, int digits) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

geometry::AirfoilShape load_shape(const std::string& spec) {
  if (is_naca_code(spec)) return geometry::naca4(spec);
  return geometry::read_coordinates_file(spec);
}

nn::DenoiserConfig denoiser_config(const cli::RunConfig& config) {
  nn::DenoiserConfig c;
  c.d = config.geometry.d;
  c.channels = config.train.channels;
  c.depth = config.train.depth;
  c.time_embed_dim = config.train.time_embed_dim;
  c.num_timesteps = config.schedule.T;
  c.seed = config.train.seed;
  return c;
}

diffusion::TrainConfig train_config(const cli::RunConfig& config) {
  diffusion::TrainConfig c;
  c.learning_rate = config.train.lr;
  c.batch_size = config.train.batch;
  c.num_steps = config.train.steps;
  c.ema_decay = config.train.ema_decay;
  c.seed = config.train.seed;
  c.log_every = config.train.log_every;
  return c;
}

diffusion::NoiseSchedule noise_schedule(const cli::RunConfig& config) {
  return diffusion::linear_schedule(config.schedule.T, config.schedule.beta_start, config.schedule.beta_end);
}

TrainOutcome train_model(const cli::RunConfig& config, const corpus::Corpus& corpus,
                         const std::function<void(const diffusion::LossRecord&)>& on_log) {
  if (corpus.box.size() != config.geometry.d) {
    throw InvalidArgument("dataset has " + std::to_string(corpus.box.size()) + " coefficients but geometry.d is " +
                          std::to_string(config.geometry.d));
  }
  auto schedule = noise_schedule(config);
  const auto data = corpus.normalized();
  auto result = diffusion::train(nn::Denoiser::init(denoiser_config(config)), data, train_config(config), schedule,
                                 on_log);
  const auto steps = config.train.steps;
  const double w200 = diffusion::windowed_loss(result.step_losses, std::min<std::size_t>(200, steps));
  const double wend = diffusion::windowed_loss(result.step_losses, steps);
  return {std::move(result), std::move(schedule), w200, wend};
}

std::vector<std::vector<double>> gaussian_latents(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::vector<std::vector<double>> zs;
  for (std::size_t k = 0; k < n; ++k) zs.push_back(optim::latent_gaussian(d, seed + k).z);
  return zs;
}

optim::DesignSetup design_setup(const cli::RunConfig& config, optim::Mode mode, const geometry::NormalizationBox& box,
                                const diffusion::Checkpoint* checkpoint) {
  const auto& p = config.problem;
  const std::size_t d = config.geometry.d;
  if (box.size() != d) {
    throw InvalidArgument("dataset has " + std::to_string(box.size()) + " coefficients but geometry.d is " +
                          std::to_string(d));
  }
  optim::DesignSetup s;
  s.conditions = {radians(p.alpha), 1.0};
  s.mode = mode;
  s.n_panels = config.geometry.n_panels;
  s.base = load_shape(config.geometry.base);
  s.basis = geometry::bump_basis(d);
  s.scaled_fraction = p.scaled_fraction;
  if (p.objective == "target_cp") {
    const auto system = flow::assemble(load_shape(p.target), s.n_panels, s.conditions);
    const auto cp = flow::cp(system, flow::solve_direct(system));
    s.objective = flow::ObjectiveSpec::target(std::vector<double>(cp.data(), cp.data() + cp.size()));
  } else if (p.objective == "max_cl") {
    s.objective = flow::ObjectiveSpec::max_lift();
  } else {
    s.objective = flow::ObjectiveSpec::moment();
  }
  if (p.cl_bound) s.constraints.push_back({optim::Constraint::Quantity::cl, *p.cl_bound});
  if (p.tc_bound) s.constraints.push_back({optim::Constraint::Quantity::tc, *p.tc_bound});
  if (mode == optim::Mode::latent) {
    if (checkpoint == nullptr) throw InvalidArgument("latent mode needs a checkpoint");
    if (checkpoint->model.dim() != d) {
      throw InvalidArgument("checkpoint dimension " + std::to_string(checkpoint->model.dim()) +
                            " does not match geometry.d = " + std::to_string(d));
    }
    s.decoder = optim::LatentDecoder{&checkpoint->model, checkpoint->schedule,
                                     diffusion::strided_steps(checkpoint->schedule.T, config.schedule.infer_steps), box};
    s.lower.assign(d, -optim::kLatentBound);
    s.upper.assign(d, optim::kLatentBound);
  } else {
    optim::hh_box(box, s.lower, s.upper);
  }
  return s;
}

OptimizeOutcome optimize(const cli::RunConfig& config, optim::Mode mode, const geometry::NormalizationBox& box,
                         const diffusion::Checkpoint* checkpoint,
                         const std::function<void(const optim::IterateLog&)>& on_iterate) {
  OptimizeOutcome out;
  out.setup = design_setup(config, mode, box, checkpoint);
  const std::size_t d = config.geometry.d;
  if (mode == optim::Mode::latent) {
    if (config.problem.init == "gaussian") {
      out.init = optim::latent_gaussian(d, config.problem.seed);
      for (auto& v : out.init->z) v = std::clamp(v, -optim::kLatentBound, optim::kLatentBound);
    } else {
      const auto unit = geometry::normalize(std::vector<double>(d, 0.0), box);
      out.init = optim::latent_encode(*out.setup.decoder, unit, config.problem.seed, config.problem.encode_steps);
    }
    out.x0 = out.init->z;
  } else {
    out.x0.assign(d, 0.0);
  }
  optim::SolverConfig solver;
  solver.max_gradient_evals = config.problem.max_gradient_evals;
  solver.max_evaluations = config.problem.max_evaluations;
  optim::DesignProblem problem(out.setup);
  out.result = optim::solve(problem, out.x0, solver, on_iterate);
  out.primal_solves = problem.primal_solves();
  out.function_gradients = problem.function_gradients();
  out.point = problem.point(out.result.x);
  return out;
}

std::string problem_label(const cli::ProblemSection& p) {
  std::string s = p.objective;
  if (p.objective == "target_cp") s += ":" + p.target;
  if (p.cl_bound) s += " cl>=" + format_g(*p.cl_bound, 6);
  if (p.tc_bound) s += " tc>=" + format_g(*p.tc_bound, 6);
  return s + " alpha=" + format_g(p.alpha, 6);
}

json result_json(const cli::RunConfig& config, optim::Mode mode, const OptimizeOutcome& o) {
  const auto& p = config.problem;
  auto bound = [](const std::optional<double>& b) { return b ? json(*b) : json(nullptr); };
  json j{
      {"schema", kResultSchema},
      {"problem", problem_label(p)},
      {"objective_kind", p.objective},
      {"cl_bound", bound(p.cl_bound)},
      {"tc_bound", bound(p.tc_bound)},
      {"alpha_deg", p.alpha},
      {"mode", optim::to_string(mode)},
      {"termination", optim::to_string(o.result.termination)},
      {"objective", o.point.objective},
      {"cl", o.point.cl},
      {"tc", o.point.tc},
      {"cm", o.point.cm},
      {"eps_rel", o.result.eps_rel},
      {"first_order", o.result.first_order},
      {"evaluations", o.result.evaluations},
      {"gradients", o.result.gradients},
      {"function_gradients", o.function_gradients},
      {"primal_solves", o.primal_solves},
      {"multipliers", o.result.multipliers},
      {"self_intersecting", o.point.self_intersecting},
      {"x0", o.x0},
      {"x", o.result.x},
      {"delta", o.point.delta},
  };
  if (o.init) j["latent_init"] = {{"kind", p.init}, {"residual_rms", o.init->residual_rms}, {"warning", o.init->warning}};
  return j;
}

void write_flow_csv(std::ostream& out, const OptimizeOutcome& o) {
  const auto chain = flow::ShapeChain::build(o.setup.base, o.setup.basis, o.setup.n_panels);
  const auto system = flow::assemble(chain.loop(o.point.delta), o.setup.conditions);
  const auto cp = flow::cp(system, flow::solve_direct(system));
  const bool target = o.setup.objective.kind == flow::ObjectiveKind::target_cp;
  out << "panel,xm,ym,cp" << (target ? ",target_cp" : "") << '\n';
  for (Eigen::Index i = 0; i < cp.size(); ++i) {
    out << i << ',' << system.xm[i] << ',' << system.ym[i] << ',' << cp[i];
    if (target) out << ',' << o.setup.objective.target_cp[static_cast<std::size_t>(i)];
    out << '\n';
  }
}

json read_result(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("result file '" + path + "' not found");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw MalformedInput("'" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object() || j.value("schema", std::string()) != kResultSchema) {
    throw MalformedInput("'" + path + "' is not a " + std::string(kResultSchema) + " file");
  }
  const std::vector<std::pair<const char*, json::value_t>> fields{
      {"problem", json::value_t::string},          {"mode", json::value_t::string},
      {"objective", json::value_t::number_float},  {"cl", json::value_t::number_float},
      {"tc", json::value_t::number_float},         {"eps_rel", json::value_t::number_float},
      {"evaluations", json::value_t::number_unsigned}, {"gradients", json::value_t::number_unsigned},
      {"delta", json::value_t::array},
  };
  for (const auto& [name, type] : fields) {
    const bool numeric = type == json::value_t::number_float || type == json::value_t::number_unsigned;
    const bool ok = j.contains(name) && (numeric ? (type == json::value_t::number_float ? j.at(name).is_number()
                                                                                        : j.at(name).is_number_unsigned())
                                                 : j.at(name).type() == type);
    if (!ok) throw MalformedInput("'" + path + "': field '" + name + "' is missing or has the wrong type");
  }
  for (const char* name : {"cl_bound", "tc_bound"}) {
    if (!j.contains(name) || !(j.at(name).is_null() || j.at(name).is_number())) {
      throw MalformedInput("'" + path + "': field '" + std::string(name) + "' is missing or has the wrong type");
    }
  }
  return j;
}

ReportEntry report_entry(const std::string& path) {
  const auto j = read_result(path);
  ReportEntry e;
  e.file = path;
  e.problem = j.at("problem").get<std::string>();
  e.mode = j.at("mode").get<std::string>();
  e.evaluations = j.at("evaluations").get<std::size_t>();
  e.gradients = j.at("gradients").get<std::size_t>();
  e.cl = j.at("cl").get<double>();
  e.tc = j.at("tc").get<double>();
  e.objective = j.at("objective").get<double>();
  e.eps_rel = j.at("eps_rel").get<double>();
  if (j.at("cl_bound").is_number()) e.cl_bound = j.at("cl_bound").get<double>();
  if (j.at("tc_bound").is_number()) e.tc_bound = j.at("tc_bound").get<double>();
  return e;
}

Report build_report(const std::vector<ReportEntry>& entries) {
  if (entries.empty()) throw InvalidArgument("report needs at least one result");
  constexpr double kFlag = 2e-3;
  std::vector<std::string> problems, modes;
  std::map<std::pair<std::string, std::string>, const ReportEntry*> cell;
  for (const auto& e : entries) {
    if (std::find(problems.begin(), problems.end(), e.problem) == problems.end()) problems.push_back(e.problem);
    if (std::find(modes.begin(), modes.end(), e.mode) == modes.end()) modes.push_back(e.mode);
    if (!cell.emplace(std::make_pair(e.problem, e.mode), &e).second) {
      throw InvalidArgument("'" + e.file + "' repeats problem '" + e.problem + "' in mode " + e.mode);
    }
  }
  auto flagged = [&](double value, const std::optional<double>& bound, int digits) {
    std::string s = format_g(value, digits);
    if (bound && (*bound - value) / std::abs(*bound) > kFlag) s += "*";
    return s;
  };

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"problem"};
  for (const auto& m : modes) {
    for (const char* c : {"#J", "#gradJ", "Cl", "t/c", "J", "eps_rel"}) header.push_back(m + " " + c);
  }
  rows.push_back(header);
  for (const auto& p : problems) {
    std::vector<std::string> row{p};
    for (const auto& m : modes) {
      const auto it = cell.find({p, m});
      if (it == cell.end()) {
        row.insert(row.end(), 6, "-");
        continue;
      }
      const auto& e = *it->second;
      row.push_back(std::to_string(e.evaluations));
      row.push_back(std::to_string(e.gradients));
      row.push_back(flagged(e.cl, e.cl_bound, 4));
      row.push_back(flagged(e.tc, e.tc_bound, 4));
      row.push_back(format_g(e.objective, 5));
      row.push_back(format_g(e.eps_rel, 3) + (e.eps_rel > kFlag ? "*" : ""));
    }
    rows.push_back(row);
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.size(); ++k) width[k] = std::max(width[k], r[k].size());
  }
  std::ostringstream text, csv;
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (k == 0) {
        text << std::left << std::setw(static_cast<int>(width[k])) << r[k];
      } else {
        text << "  " << std::right << std::setw(static_cast<int>(width[k])) << r[k];
      }
      csv << (k ? "," : "") << '"' << r[k] << '"';
    }
    text << '\n';
    csv << '\n';
  }
  text << "* constraint violated by more than " << kFlag << " (relative)\n";
  return {text.str(), csv.str()};
}

}  // namespace latentfoil::workflow
