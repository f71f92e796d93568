#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shf/checkpoint.hpp"
#include "shf/config.hpp"

using namespace shf;
namespace fs = std::filesystem;

namespace {

#ifndef SHF_CLI_PATH
#define SHF_CLI_PATH "shf"
#endif

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SHF_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// trace files are reproducible modulo the wall_time column
std::string strip_wall_time(const std::string& csv) {
  std::stringstream in(csv), out;
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.rfind(',');
    out << (pos == std::string::npos ? line : line.substr(0, pos)) << "\n";
  }
  return out.str();
}

const char* kSmokeConfig = R"({
  "model": {"kind": "gaussian_location", "c": 1.0},
  "data": {"synthetic": {"n": 80, "d": 1, "seed": 3}},
  "coreset": {"size": 6, "seed": 1},
  "flow": {"n_blocks": 2, "leapfrogs_per_block": 4, "initial_step_size": 0.05},
  "train": {"n_iters": 120, "learning_rate": 0.005, "minibatch": 10,
            "eval_every": 40, "seed": 7, "n_mc_eval": 40},
  "eval": {"n_samples": 100, "seed": 11, "step_trace_mc": 40},
  "output_dir": "cli_run"
})";

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("shf_cli_test_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config schema validation") {
  SUBCASE("valid config parses") {
    RunConfig cfg = parse_run_config(kSmokeConfig);
    CHECK(cfg.coreset.size == 6);
    CHECK(cfg.flow.n_blocks == 2);
    CHECK(cfg.train.n_iters == 120);
  }
  SUBCASE("unknown keys rejected everywhere") {
    CHECK_THROWS_AS(parse_run_config(R"({"nope": 1})"), config_error);
    CHECK_THROWS_AS(
        parse_run_config(
            R"({"data": {"synthetic": {"n": 5, "d": 1}}, "train": {"bogus": 2}})"),
        config_error);
    CHECK_THROWS_AS(
        parse_run_config(R"({"data": {"synthetic": {"n": 5, "d": 1, "extra": 0}}})"),
        config_error);
  }
  SUBCASE("data section is mandatory and exclusive") {
    CHECK_THROWS_AS(parse_run_config(R"({"model": {"kind": "linreg"}})"),
                    config_error);
    CHECK_THROWS_AS(
        parse_run_config(
            R"({"data": {"csv": "x.csv", "synthetic": {"n": 5, "d": 1}}})"),
        config_error);
  }
  SUBCASE("bad enum values rejected") {
    CHECK_THROWS_AS(
        parse_run_config(
            R"({"model": {"kind": "poisson"}, "data": {"synthetic": {"n": 5, "d": 1}}})"),
        config_error);
    CHECK_THROWS_AS(
        parse_run_config(
            R"({"data": {"synthetic": {"n": 5, "d": 1}}, "flow": {"kind": "nf"}})"),
        config_error);
    CHECK_THROWS_AS(
        parse_run_config(
            R"({"data": {"synthetic": {"n": 5, "d": 1}}, "eval": {"metrics": ["mmd"]}})"),
        config_error);
  }
  SUBCASE("step size overrides validated at build time") {
    RunConfig cfg = parse_run_config(R"({
      "model": {"kind": "linreg"},
      "data": {"synthetic": {"n": 20, "p": 2, "seed": 1}},
      "flow": {"initial_step_size": 0.02,
               "step_size_overrides": [{"dim": 3, "value": 0.0002}]}
    })");
    TrainConfig tc = build_train_config(cfg, 4);
    CHECK(tc.initial_step_sizes(3) == doctest::Approx(0.0002));
    CHECK(tc.initial_step_sizes(0) == doctest::Approx(0.02));
    RunConfig bad = cfg;
    bad.flow.step_size_overrides[0].first = 9;
    CHECK_THROWS_AS(build_train_config(bad, 4), config_error);
  }
  SUBCASE("config hash is stable under key reordering") {
    const auto a = config_hash(R"({"b": 1, "a": 2})");
    const auto b = config_hash(R"({"a": 2, "b": 1})");
    CHECK(a == b);
  }
}

TEST_CASE("checkpoint round trip") {
  Checkpoint ckpt;
  ckpt.flow_kind = "shf";
  ckpt.params.log_weights = Vec::Constant(3, 1.5);
  ckpt.params.log_step_sizes = Vec::Constant(2, -4.0);
  ckpt.params.leapfrogs_per_block = 7;
  ckpt.params.refreshments = {MarginalRefresh{Vec::Ones(2), Vec::Zero(2)}};
  ckpt.coreset.indices = {4, 9, 2};
  ckpt.coreset.weights = Vec::Constant(3, 10.0);
  ckpt.reference.position_mean = Vec::Zero(2);
  ckpt.reference.position_diag_cov = Vec::Ones(2);
  ckpt.config_hash = 12345;
  ckpt.seed = 99;

  TempDir tmp;
  const std::string path = (tmp.path / "ckpt.json").string();
  save_checkpoint(path, ckpt);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.flow_kind == "shf");
  CHECK((back.params.log_weights - ckpt.params.log_weights).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(back.params.leapfrogs_per_block == 7);
  CHECK(back.coreset.indices == ckpt.coreset.indices);
  CHECK(back.config_hash == 12345);

  SUBCASE("tempered checkpoints round trip too") {
    Checkpoint t;
    t.flow_kind = "tempered";
    t.tempered.log_weights = Vec::Constant(2, 2.0);
    t.tempered.log_step_sizes = Vec::Constant(1, -3.0);
    t.tempered.schedule.alphas = Vec::Ones(3);
    t.tempered.leapfrogs_per_block = 5;
    t.coreset.indices = {0, 1};
    t.coreset.weights = Vec::Constant(2, 5.0);
    t.reference.position_mean = Vec::Zero(1);
    t.reference.position_diag_cov = Vec::Ones(1);
    const std::string tpath = (tmp.path / "tempered.json").string();
    save_checkpoint(tpath, t);
    Checkpoint tb = load_checkpoint(tpath);
    CHECK(tb.flow_kind == "tempered");
    CHECK(tb.tempered.schedule.alphas.size() == 3);
  }
}

TEST_CASE("cli end to end") {
  TempDir tmp;
  const auto old = fs::current_path();
  fs::current_path(tmp.path);

  std::ofstream("smoke.json") << kSmokeConfig;

  SUBCASE("gen-data determinism: identical bytes for identical seeds") {
    REQUIRE(run_cli("gen-data --kind gaussian --n 50 --d 2 --c 1 --seed 5 "
                    "--out a.csv") == 0);
    REQUIRE(run_cli("gen-data --kind gaussian --n 50 --d 2 --c 1 --seed 5 "
                    "--out b.csv") == 0);
    CHECK(slurp("a.csv") == slurp("b.csv"));
    CHECK(slurp("a.csv").substr(0, 8) == "x1,x2,y\n");
    CHECK(fs::exists("a.csv.manifest.json"));
  }
  SUBCASE("gen-data n=0 writes a header-only file") {
    REQUIRE(run_cli("gen-data --kind gaussian --n 0 --d 2 --out e.csv") == 0);
    CHECK(slurp("e.csv") == "x1,x2,y\n");
  }
  SUBCASE("train, sample, eval round trip") {
    REQUIRE(run_cli("train --config smoke.json") == 0);
    CHECK(fs::exists("cli_run/checkpoint.json"));
    CHECK(fs::exists("cli_run/trace.csv"));
    CHECK(fs::exists("cli_run/manifest.json"));

    REQUIRE(run_cli("sample --checkpoint cli_run/checkpoint.json --config "
                    "smoke.json --n 7 --seed 3 --out s.csv") == 0);
    std::ifstream s("s.csv");
    std::string header;
    std::getline(s, header);
    CHECK(header == "theta1,log_density");
    int rows = 0;
    std::string line;
    while (std::getline(s, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 7);

    // n = 0 gives a header-only sample file
    REQUIRE(run_cli("sample --checkpoint cli_run/checkpoint.json --config "
                    "smoke.json --n 0 --out s0.csv") == 0);
    CHECK(slurp("s0.csv") == "theta1,log_density\n");

    REQUIRE(run_cli("eval --checkpoint cli_run/checkpoint.json --config "
                    "smoke.json --out rep.json") == 0);
    const std::string rep = slurp("rep.json");
    CHECK(rep.find("gaussian_kl") != std::string::npos);
    CHECK(rep.find("ksd") != std::string::npos);
    CHECK(fs::exists("rep.json.elbo_steps.csv"));

    // deterministic rerun reproduces the trace (modulo wall-time fields)
    const std::string trace1 = strip_wall_time(slurp("cli_run/trace.csv"));
    REQUIRE(run_cli("train --config smoke.json --output-dir cli_run2") == 0);
    CHECK(strip_wall_time(slurp("cli_run2/trace.csv")) == trace1);
  }
  SUBCASE("replicates fan out to isolated directories") {
    REQUIRE(run_cli("train --config smoke.json --output-dir reps --replicates 2") ==
            0);
    CHECK(fs::exists("reps/rep_0/checkpoint.json"));
    CHECK(fs::exists("reps/rep_1/checkpoint.json"));
    CHECK(strip_wall_time(slurp("reps/rep_0/trace.csv")) !=
          strip_wall_time(slurp("reps/rep_1/trace.csv")));
  }
  SUBCASE("schema violations exit with code 2") {
    std::ofstream("bad.json") << R"({"bad_key": 1,
      "data": {"synthetic": {"n": 5, "d": 1}}})";
    CHECK(run_cli("train --config bad.json") == 2);
    CHECK(run_cli("train --config does_not_exist.json") == 2);
  }
  SUBCASE("eval without reference fails for non-Gaussian models") {
    std::ofstream("lin.json") << R"({
      "model": {"kind": "linreg"},
      "data": {"synthetic": {"n": 40, "p": 1, "seed": 2}},
      "coreset": {"size": 5, "seed": 1},
      "flow": {"n_blocks": 1, "leapfrogs_per_block": 2,
               "initial_step_size": 0.01},
      "train": {"n_iters": 5, "eval_every": 5, "seed": 1, "n_mc_eval": 10,
                "minibatch": 5},
      "output_dir": "lin_run"
    })";
    REQUIRE(run_cli("train --config lin.json") == 0);
    CHECK(run_cli("eval --checkpoint lin_run/checkpoint.json --config "
                  "lin.json --out lr.json") == 2);
  }
  SUBCASE("metric keys match the requested list exactly") {
    std::ofstream("one_metric.json") << R"({
      "model": {"kind": "gaussian_location", "c": 1.0},
      "data": {"synthetic": {"n": 80, "d": 1, "seed": 3}},
      "coreset": {"size": 6, "seed": 1},
      "flow": {"n_blocks": 2, "leapfrogs_per_block": 4,
               "initial_step_size": 0.05},
      "train": {"n_iters": 10, "eval_every": 10, "seed": 7, "n_mc_eval": 10,
                "minibatch": 10},
      "eval": {"metrics": ["mean_err"], "n_samples": 50, "seed": 11},
      "output_dir": "one_run"
    })";
    REQUIRE(run_cli("train --config one_metric.json") == 0);
    REQUIRE(run_cli("eval --checkpoint one_run/checkpoint.json --config "
                    "one_metric.json --out one.json") == 0);
    const std::string rep = slurp("one.json");
    CHECK(rep.find("mean_err") != std::string::npos);
    CHECK(rep.find("cov_err") == std::string::npos);
    CHECK(rep.find("gaussian_kl") == std::string::npos);
  }
  SUBCASE("training lowers the KL against the untrained flow") {
    REQUIRE(run_cli("train --config smoke.json --output-dir trained") == 0);
    std::string untrained_cfg = kSmokeConfig;
    const auto pos = untrained_cfg.find("\"n_iters\": 120");
    REQUIRE(pos != std::string::npos);
    untrained_cfg.replace(pos, std::strlen("\"n_iters\": 120"), "\"n_iters\": 0");
    std::ofstream("untrained.json") << untrained_cfg;
    REQUIRE(run_cli("train --config untrained.json --output-dir untrained") == 0);
    REQUIRE(run_cli("eval --checkpoint trained/checkpoint.json --config "
                    "smoke.json --out t.json") == 0);
    REQUIRE(run_cli("eval --checkpoint untrained/checkpoint.json --config "
                    "smoke.json --out u.json") == 0);
    auto kl_of = [](const std::string& path) {
      const std::string rep = slurp(path);
      const auto p = rep.find("\"gaussian_kl\": ");
      REQUIRE(p != std::string::npos);
      return std::stod(rep.substr(p + 15));
    };
    CHECK(kl_of("t.json") < kl_of("u.json"));
  }
  SUBCASE("theory subcommand emits a pass/fail report") {
    REQUIRE(run_cli("theory --check refresh-identity --d 2 --out th.json") == 0);
    const std::string rep = slurp("th.json");
    CHECK(rep.find("\"status\": \"pass\"") != std::string::npos);
    CHECK(rep.find("margin") != std::string::npos);
  }

  fs::current_path(old);
}
