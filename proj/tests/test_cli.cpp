#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <json.hpp>

#include "latentfoil/cli.hpp"
#include "latentfoil/errors.hpp"
#include "latentfoil/workflow.hpp"

using namespace latentfoil;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Contents after the provenance line, which names the output directory.
std::string body(const fs::path& p) {
  const auto s = slurp(p);
  return s.substr(s.find('\n'));
}

json tiny_config(const fs::path& dir) {
  return {
      {"geometry", {{"sweep", {{"cambers", 3}, {"positions", 2}, {"thicknesses", 4}}}}},
      {"schedule", {{"infer_steps", 10}}},
      {"train", {{"steps", 300}, {"batch", 8}, {"channels", 8}, {"time_embed_dim", 16}, {"log_every", 20}}},
      {"problem", {{"max_gradient_evals", 3}, {"encode_steps", 20}}},
      {"paths",
       {{"dataset", (dir / "data").string()},
        {"checkpoint", (dir / "model.bin").string()},
        {"output", (dir / "out").string()}}},
  };
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  const auto p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

struct Workspace {
  fs::path dir;
  std::string config;

  Workspace() {
    dir = fs::temp_directory_path() / "latentfoil_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    config = write_config(dir, tiny_config(dir)).string();
  }
  ~Workspace() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("config defaults, overrides and rejection") {
  const auto defaults = cli::RunConfig::from_json(json::object());
  CHECK(defaults.geometry.d == 40);
  CHECK(defaults.geometry.n_panels == 200);
  CHECK(defaults.schedule.T == 1000);
  CHECK(defaults.problem.cl_bound == 0.30);
  CHECK(defaults.problem.tc_bound == 0.105);
  CHECK(defaults.geometry.sweep.size() == 512);

  const auto echo = defaults.to_json();
  CHECK(cli::RunConfig::from_json(echo).to_json() == echo);

  const auto c = cli::RunConfig::from_json({{"problem", {{"cl_bound", nullptr}, {"alpha", 4.0}}}});
  CHECK_FALSE(c.problem.cl_bound.has_value());
  CHECK(c.problem.alpha == 4.0);

  CHECK_THROWS_AS(cli::RunConfig::from_json({{"trian", json::object()}}), InvalidArgument);
  CHECK_THROWS_AS(cli::RunConfig::from_json({{"train", {{"learning_rate", 1.0}}}}), InvalidArgument);
  CHECK_THROWS_AS(cli::RunConfig::from_json({{"geometry", {{"sweep", {{"camber", 2}}}}}}), InvalidArgument);
  CHECK_THROWS_AS(cli::RunConfig::from_json({{"train", {{"steps", "many"}}}}), InvalidArgument);
  CHECK_THROWS_AS(cli::RunConfig::from_json({{"problem", {{"mode", "fast"}}}}), InvalidArgument);
  CHECK_THROWS_AS(cli::RunConfig::from_json({{"problem", {{"tc_bound", 0.0}}}}), InvalidArgument);
  CHECK_THROWS_AS(cli::RunConfig::from_json({{"schedule", {{"infer_steps", 2000}}}}), InvalidArgument);
}

TEST_CASE("sha256 of known messages") {
  CHECK(cli::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("usage and configuration errors exit with 1") {
  CHECK(run({}).code == cli::kUsageError);
  CHECK(run({"bogus"}).code == cli::kUsageError);
  CHECK(run({"--config", "/nonexistent/latentfoil.json", "train"}).code == cli::kUsageError);
  CHECK(run({"--help"}).code == cli::kSuccess);

  Workspace w;
  const auto bad = write_config(w.dir, {{"train", {{"bogus", 1}}}}, "bad.json");
  const auto r = run({"--config", bad.string(), "train"});
  CHECK(r.code == cli::kUsageError);
  CHECK(r.err.find("train.bogus") != std::string::npos);

  const auto missing = run({"--config", w.config, "train"});
  CHECK(missing.code == cli::kUsageError);
  CHECK(missing.err.find((w.dir / "data" / "vectors.csv").string()) != std::string::npos);
  const auto no_ck = run({"--config", w.config, "sample"});
  CHECK(no_ck.code == cli::kUsageError);
  CHECK(no_ck.err.find((w.dir / "model.bin").string()) != std::string::npos);
}

TEST_CASE("non-finite training exits with 2") {
  Workspace w;
  REQUIRE(run({"--config", w.config, "gen-data"}).code == 0);
  auto j = tiny_config(w.dir);
  j["train"]["lr"] = 1e300;
  const auto cfg = write_config(w.dir, j, "diverge.json");
  const auto r = run({"--config", cfg.string(), "train"});
  CHECK(r.code == cli::kNumericalFailure);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("pipeline artifacts, provenance and determinism") {
  Workspace w;
  const auto gen = run({"--config", w.config, "gen-data"});
  REQUIRE(gen.code == 0);
  CHECK(gen.out.find("wrote 24 vectors") != std::string::npos);
  const auto box = slurp(w.dir / "data" / "box.csv");
  CHECK(box.rfind("# latentfoil gen-data input_sha256=", 0) == 0);
  CHECK(box.find("config={\"geometry\"") != std::string::npos);
  const auto meta = json::parse(slurp(w.dir / "data" / "dataset.json"));
  CHECK(meta.at("size") == 24);
  CHECK(meta.at("fit_rms").at("max").get<double>() < 2e-3);

  REQUIRE(run({"--config", w.config, "train"}).code == 0);
  const auto ck = diffusion::load_checkpoint((w.dir / "model.bin").string());
  const auto echo = json::parse(ck.run_config);
  CHECK(echo.at("command") == "train");
  CHECK(echo.at("config").at("train").at("steps") == 300);
  REQUIRE(run({"--config", w.config, "--out", (w.dir / "again").string(), "train"}).code == 0);
  CHECK(body(w.dir / "again" / "loss.csv") == body(w.dir / "out" / "loss.csv"));

  REQUIRE(run({"--config", w.config, "--out", (w.dir / "s1").string(), "sample", "-n", "3"}).code == 0);
  REQUIRE(run({"--config", w.config, "--out", (w.dir / "s2").string(), "sample", "-n", "3"}).code == 0);
  CHECK(body(w.dir / "s1" / "shapes.csv") == body(w.dir / "s2" / "shapes.csv"));
  CHECK(body(w.dir / "s1" / "samples.csv") == body(w.dir / "s2" / "samples.csv"));

  const auto an = run({"--config", w.config, "--out", (w.dir / "an").string(), "--tau", "0.05", "analyze", "--points",
                       (w.dir / "s1" / "samples.csv").string()});
  REQUIRE(an.code == 0);
  const auto spectrum = json::parse(slurp(w.dir / "an" / "analyze.json"));
  CHECK(spectrum.at("points").size() == 3);
  CHECK(spectrum.at("config").at("analyze").at("tau") == 0.05);
  CHECK(slurp(w.dir / "an" / "spectrum.svg").find("<!-- latentfoil analyze") != std::string::npos);
}

TEST_CASE("optimize in both modes feeds the report") {
  Workspace w;
  REQUIRE(run({"--config", w.config, "gen-data"}).code == 0);
  REQUIRE(run({"--config", w.config, "train"}).code == 0);
  const auto hh = w.dir / "hh";
  const auto lat = w.dir / "latent";
  REQUIRE(run({"--config", w.config, "--out", hh.string(), "--dump-flow", "optimize"}).code == 0);
  const auto latent = run({"--config", w.config, "--out", lat.string(), "--mode", "latent", "optimize"});
  INFO(latent.err);
  REQUIRE(latent.code == 0);
  for (const auto& dir : {hh, lat}) {
    const auto r = json::parse(slurp(dir / "result.json"));
    CHECK(r.at("schema") == workflow::kResultSchema);
    CHECK(r.at("gradients").get<std::size_t>() <= 3);
    CHECK(r.at("provenance").at("input_sha256").get<std::string>().size() == 64);
    CHECK(fs::exists(dir / "log.csv"));
    CHECK(fs::exists(dir / "shape.csv"));
  }
  CHECK(fs::exists(hh / "flow.csv"));
  CHECK_FALSE(fs::exists(lat / "flow.csv"));
  CHECK(json::parse(slurp(lat / "result.json")).contains("latent_init"));

  const auto rep = run({"--config", w.config, "--out", w.dir.string(), "report", (hh / "result.json").string(),
                        (lat / "result.json").string()});
  REQUIRE(rep.code == 0);
  CHECK(rep.out.find("hh #J") != std::string::npos);
  CHECK(rep.out.find("latent eps_rel") != std::string::npos);
  CHECK(std::count(rep.out.begin(), rep.out.end(), '\n') == 3);
  CHECK(fs::exists(w.dir / "report.csv"));

  std::ofstream(w.dir / "broken.json") << R"({"schema": "latentfoil.result/1", "problem": "p"})";
  const auto bad = run({"report", (w.dir / "broken.json").string()});
  CHECK(bad.code == cli::kUsageError);
  CHECK(bad.err.find("broken.json") != std::string::npos);
}

TEST_CASE("report flags violations with an asterisk") {
  workflow::ReportEntry e;
  e.file = "a.json";
  e.problem = "p";
  e.mode = "hh";
  e.cl = 0.29;
  e.cl_bound = 0.30;
  e.tc = 0.1051;
  e.tc_bound = 0.105;
  e.eps_rel = 0.0333;
  const auto r = workflow::build_report({e});
  CHECK(r.text.find("0.29*") != std::string::npos);
  CHECK(r.text.find("0.1051*") == std::string::npos);
  CHECK(r.text.find("0.0333*") != std::string::npos);
  CHECK(std::count(r.csv.begin(), r.csv.end(), '\n') == 2);

  auto ok = e;
  ok.problem = "q";
  ok.cl = 0.2995;
  ok.eps_rel = 1.7e-3;
  const auto two = workflow::build_report({e, ok});
  CHECK(two.text.find("0.2995*") == std::string::npos);
  CHECK(two.text.find("0.0017*") == std::string::npos);
  CHECK_THROWS_AS(workflow::build_report({e, e}), InvalidArgument);
}

TEST_CASE("bound grid runs every pair") {
  Workspace w;
  REQUIRE(run({"--config", w.config, "gen-data"}).code == 0);
  auto j = tiny_config(w.dir);
  j["problem"]["cl_grid"] = {0.3, 0.4, 0.5};
  j["problem"]["tc_grid"] = {0.105, 0.12};
  j["problem"]["max_gradient_evals"] = 1;
  const auto cfg = write_config(w.dir, j, "grid.json");
  REQUIRE(run({"--config", cfg.string(), "optimize"}).code == 0);
  std::vector<std::string> results;
  for (const char* cl : {"0.3", "0.4", "0.5"}) {
    for (const char* tc : {"0.105", "0.12"}) {
      const auto p = w.dir / "out" / (std::string("cl") + cl + "_tc" + tc) / "result.json";
      CHECK(fs::exists(p));
      results.push_back(p.string());
    }
  }
  std::vector<std::string> args{"--out", w.dir.string(), "report"};
  args.insert(args.end(), results.begin(), results.end());
  const auto rep = run(args);
  REQUIRE(rep.code == 0);
  CHECK(std::count(rep.out.begin(), rep.out.end(), '\n') == 8);
}

TEST_CASE("gradcheck on fresh weights passes") {
  Workspace w;
  const auto r = run({"--config", w.config, "--out", w.dir.string(), "gradcheck", "--trials", "20"});
  CHECK(r.code == cli::kSuccess);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("end-to-end dJ/dz") != std::string::npos);
  CHECK(slurp(w.dir / "gradcheck.csv").rfind("# latentfoil gradcheck", 0) == 0);
}
