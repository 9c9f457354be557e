#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "levy/experiments.hpp"

using namespace levy;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("levy_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunContext context(const fs::path& out) {
  RunContext ctx;
  ctx.out_dir = out.string();
  return ctx;
}

int run(const std::string& cmd, const std::string& text, const fs::path& out) {
  std::ostringstream err;
  const int code = run_command(cmd, Config::from_text(text), context(out), err);
  if (code != kExitOk) MESSAGE(cmd << ": " << err.str());
  return code;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::string kPairEstimate = R"(
[run]
seed = 3
[system]
name = nose-hoover-pair
[observable]
kind = random
equivariance = 1 0 ; 0 -1
degree = 2
seed = 2
[estimate]
duration = 3000
t_max = 10
batches = 10
)";

}  // namespace

TEST_CASE("config parsing") {
  const Config c = Config::from_text("[a]\nm = 1 2 ; 3 4\nlist = x ; y z ;w\nn = 1e6\nflag = true\n");
  const Matrix m = c.get_matrix("a.m");
  CHECK(m.rows() == 2);
  CHECK(m(1, 0) == 3.0);
  const auto list = c.get_list("a.list");
  REQUIRE(list.size() == 3);
  CHECK(list[1] == "y z");
  CHECK(c.get_size("a.n", 0) == 1000000);
  CHECK(c.get_bool("a.flag", false));
  CHECK(c.get_double("a.missing", 2.5) == 2.5);
  CHECK_THROWS_AS(c.get_double("a.list"), ConfigError);
  CHECK_THROWS_AS(c.get_string("b.none"), ConfigError);
  CHECK_THROWS_AS(Config::from_file("/nonexistent/levy.ini"), ConfigError);
  for (const auto& name : preset_names()) {
    const Config p = Config::load(name);
    CHECK_NOTHROW(validate_config(p));
    CHECK(p.get_seed("run.seed", 0) == 1);
  }
}

TEST_CASE("configuration errors exit with 2") {
  const fs::path out = scratch("errors");
  std::ostringstream err;
  const auto code = [&](const std::string& cmd, const std::string& text) {
    return run_command(cmd, Config::from_text(text), context(out), err);
  };
  CHECK(code("check-symmetry", "[system]\nname = nose-hoover\n[observable]\nkind = polynomial\ncomponents = q ; p\nequivariance = 2 0 ; 0 1\n") == kExitConfig);
  CHECK(code("check-symmetry", "[system]\nname = nose-hoover-pair\n[observable]\nkind = identity\n[slow]\nkind = section6\ns = 2 0 ; 0 1\n") == kExitConfig);
  CHECK(code("estimate", "[system]\nname = no-such-system\n") == kExitConfig);
  CHECK(code("compare", "[system]\nname = nose-hoover\n") == kExitConfig);
  CHECK(code("report", "") == kExitConfig);
  CHECK(code("no-such-command", "") == kExitConfig);
}

TEST_CASE("check-symmetry") {
  const fs::path out = scratch("symmetry");
  CHECK(run("check-symmetry", R"(
[system]
name = nose-hoover-pair
[observable]
kind = random
equivariance = 1 0 ; 0 -1
degree = 2
seed = 4
[slow]
kind = section6
d = 3
fixed = 1 ; 2
i = 2
j = 3
)", out) == kExitOk);
  const auto j = read_json(out / "symmetry.json");
  CHECK(j["passed"] == true);
  for (const auto& c : j["checks"]) {
    const std::string name = c["name"];
    if (name.rfind("slow_", 0) == 0) CHECK(c["value"].get<double>() <= 1e-10);
  }
  CHECK(fs::exists(out / "symmetry.csv"));

  // a mis-specified reversal is a symmetry failure, not a config error
  CHECK(run("check-symmetry", "[system]\nname = nose-hoover\nreversal = -1 1 1\n[observable]\nkind = polynomial\ncomponents = q ; p\nequivariance = 1 0 ; 0 -1\n", out) == kExitFailed);
}

TEST_CASE("estimate") {
  const fs::path out = scratch("estimate");
  CHECK(run("estimate", "[run]\nseed = 2\n[system]\nname = ou\ngamma = 1 -1 ; 1 1\nnoise = 1.4142135623730951 0 ; 0 1.4142135623730951\n[observable]\nkind = identity\n[estimate]\npoints = 100000\nt_max = 8\nlag_stride = 4\nbatches = 20\n", out) == kExitOk);
  auto j = read_json(out / "estimate.json");
  CHECK(j["passed"] == true);
  CHECK(fs::exists(out / "correlogram.csv"));
  CHECK(slurp(out / "blocks.csv").rfind("quantity,row,col,value,expected,se,passed", 0) == 0);

  // a scalar observable has E = 0 exactly
  CHECK(run("estimate", "[system]\nname = nose-hoover\n[observable]\nkind = polynomial\ncomponents = q^2 - 1\n[estimate]\nduration = 2000\nt_max = 5\nbatches = 10\n", out) == kExitOk);
  j = read_json(out / "estimate.json");
  for (const auto& c : j["checks"])
    if (c["name"] == "scalar_e_zero") CHECK(c["value"].get<double>() == 0.0);

  CHECK(run("estimate", kPairEstimate, out) == kExitOk);
  CHECK(read_json(out / "estimate.json")["passed"] == true);
}

TEST_CASE("construct with a zero target") {
  const fs::path out = scratch("construct");
  CHECK(run("construct", R"(
[system]
name = nose-hoover-pair
[estimate]
t_max = 10
batches = 10
[construct]
target = 0
calib_duration = 20000
verify_duration = 5000
telescoping_runs = 1
)", out) == kExitOk);
  const auto j = read_json(out / "construct.json");
  CHECK(j["passed"] == true);
  CHECK(fs::exists(out / "observable.json"));
  CHECK(fs::exists(out / "telescoping.csv"));
}

TEST_CASE("compare reduces to the slow flow without coupling") {
  const fs::path out = scratch("compare");
  CHECK(run("compare", R"(
[system]
name = nose-hoover-pair
[observable]
kind = polynomial
components = 0 ; 0
[slow]
kind = zero
d = 2
drift = -0.5 1 ; -1 0.2
[homogenise]
sigma = 0 0 ; 0 0
epsilons = 0.2
members = 4
sde_members = 4
xi = 1 -0.5
sde_step = 0.001
)", out) != kExitConfig);
  const auto j = read_json(out / "compare.json");
  for (const auto& t : j["trend"]) CHECK(t["flow_deviation"].get<double>() <= 1e-6);
  CHECK(j["flow_deviation_sde"].get<double>() <= 1e-6);
  CHECK(fs::exists(out / "histograms.csv"));
  CHECK(fs::exists(out / "compare.gp"));

  CHECK(run("report", "", out) != kExitConfig);
  CHECK(fs::exists(out / "summary.csv"));
  CHECK(fs::exists(out / "summary.txt"));
}

TEST_CASE("reruns are identical") {
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  CHECK(run("estimate", kPairEstimate, a) == kExitOk);
  CHECK(run("estimate", kPairEstimate, b) == kExitOk);
  CHECK(slurp(a / "correlogram.csv") == slurp(b / "correlogram.csv"));
  CHECK(slurp(a / "blocks.csv") == slurp(b / "blocks.csv"));
}

TEST_CASE("binary") {
  const fs::path out = scratch("binary");
  const std::string bin = LEVYAREA_BIN;
  const auto sh = [&](const std::string& args) {
    const int status = std::system((bin + " " + args + " > " + (out / "log").string() + " 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  CHECK(sh("--help") == 0);
  CHECK(sh("") == kExitConfig);
  CHECK(sh("estimate") == kExitConfig);
  CHECK(sh("estimate --config /nonexistent.ini") == kExitConfig);
  CHECK(sh("check-symmetry --config nose-hoover --quiet --out " + out.string()) == kExitOk);
  CHECK(fs::exists(out / "symmetry.json"));
  CHECK(sh("check-symmetry --config nose-hoover --threads 0") == kExitConfig);
}
