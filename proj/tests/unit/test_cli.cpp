#include <doctest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "lodl/cli/commands.hpp"
#include "lodl/cli/config.hpp"
#include "lodl/common/io.hpp"

using namespace lodl::cli;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lodl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lodl-cli-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Small linear problem so every stage finishes in well under a second.
std::vector<std::string> small(const std::filesystem::path& out, std::vector<std::string> args) {
  for (const char* s : {"data.n_train=10", "data.n_val=5", "data.n_test=10", "run.seeds=0,1", "run.inits=1",
                        "run.random_draws=5", "run.methods=optimal,2-stage,dwmse"}) {
    args.push_back("--set");
    args.push_back(s);
  }
  for (const char* s : {"--domain", "linear", "-K", "30", "--steps", "20"}) args.push_back(s);
  args.push_back("--output");
  args.push_back(out.string());
  return args;
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("config files parse sections, comments and whitespace") {
  const auto s = parse_config("# top\n[run]\nseed = 3 ; trailing\n\n[sampling]\n  samples=70\n");
  CHECK(s.at("run.seed") == "3");
  CHECK(s.at("sampling.samples") == "70");
  CHECK(s.size() == 2);
}

TEST_CASE("unknown keys are rejected by name") {
  try {
    parse_config("[sampling]\nalpa = 0.1\n", "my.ini");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(contains(e.what(), "alpa"));
    CHECK(contains(e.what(), "my.ini:2"));
  }
  Settings s;
  CHECK_THROWS_WITH_AS(set_value(s, "train.stepz", "3"), doctest::Contains("train.stepz"), ConfigError);
}

TEST_CASE("type mismatches name the key") {
  Settings s;
  CHECK_THROWS_WITH_AS(set_value(s, "run.seed", "seven"), doctest::Contains("run.seed"), ConfigError);
  CHECK_THROWS_WITH_AS(set_value(s, "sampling.alpha", "nan"), doctest::Contains("sampling.alpha"), ConfigError);
  CHECK_THROWS_WITH_AS(set_value(s, "train.early_stopping", "maybe"), doctest::Contains("train.early_stopping"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(set_value(s, "run.seeds", "1,x"), doctest::Contains("run.seeds"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run\n"), ConfigError);
}

TEST_CASE("missing or unknown domain lists the valid domains") {
  Settings s;
  CHECK_THROWS_WITH_AS(resolve(s), doctest::Contains("linear, webadv, portfolio"), ConfigError);
  set_value(s, "data.domain", "stocks");
  CHECK_THROWS_WITH_AS(resolve(s), doctest::Contains("linear, webadv, portfolio"), ConfigError);
}

TEST_CASE("enum values and ranges are checked at resolve time") {
  Settings s;
  set_value(s, "data.domain", "webadv");
  set_value(s, "fit.family", "cubic");
  CHECK_THROWS_WITH_AS(resolve(s), doctest::Contains("fit.family"), ConfigError);
  s.erase("fit.family");
  set_value(s, "data.items", "50");
  CHECK_THROWS_WITH_AS(resolve(s), doctest::Contains("items"), ConfigError);
}

TEST_CASE("documented defaults match the library defaults") {
  Settings s;
  set_value(s, "data.domain", "portfolio");
  const RunConfig cfg = resolve(s);
  const lodl::loss::FitConfig fit;
  const lodl::models::TrainConfig train;
  const lodl::sampling::SamplingConfig sampling;
  CHECK(cfg.fit.steps == fit.steps);
  CHECK(cfg.fit.learning_rate == fit.learning_rate);
  CHECK(cfg.fit.w_min == fit.w_min);
  CHECK(cfg.fit.rank == fit.rank);
  CHECK(cfg.fit.hidden == fit.hidden);
  CHECK(cfg.fit.hidden_layers == fit.hidden_layers);
  CHECK(cfg.fit.batch == fit.batch);
  CHECK(cfg.fit.nn_learning_rate == fit.nn_learning_rate);
  CHECK(cfg.train.steps == train.steps);
  CHECK(cfg.train.eval_every == train.eval_every);
  CHECK(cfg.train.early_stopping == train.early_stopping);
  CHECK(cfg.train.rate_for(lodl::models::Regime::kDFL) == 0.005);
  CHECK(cfg.sampling.samples == sampling.samples);
  CHECK(cfg.sampling.strategy == sampling.strategy);
  CHECK(cfg.sampling.alpha == lodl::sampling::default_alpha(lodl::domains::DomainKind::kPortfolio));
  CHECK(lodl::domains::config_key(cfg.domain) ==
        lodl::domains::config_key(lodl::domains::DomainConfig::defaults(lodl::domains::DomainKind::kPortfolio)));
  CHECK(cfg.seeds.size() == 5);
  CHECK(cfg.inits == 3);
}

TEST_CASE("flags override the config file and the resolved config is printed") {
  const auto dir = fresh_dir("precedence");
  lodl::write_file_atomic(dir / "run.ini", "[run]\nseed = 3\n[data]\ndomain = linear\nn_train = 10\n");
  auto r = run_cli({"gen-data", "-c", (dir / "run.ini").string(), "--seed", "7", "-o", (dir / "out").string()});
  CHECK(r.code == kExitOk);
  CHECK(contains(r.out, "\nseed = 7\n"));
  CHECK(contains(r.out, "\nn_train = 10\n"));
  CHECK(contains(r.out, "linear-seed7"));
  auto bad = run_cli({"gen-data", "--domain", "linear", "--set", "sampling.alpa=1"});
  CHECK(bad.code == kExitConfig);
  CHECK(contains(bad.err, "alpa"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("help lists every flag with its default") {
  auto r = run_cli({"--help"});
  CHECK(r.code == kExitOk);
  for (const char* f : {"--seed TEXT [0]", "--workers TEXT [1]", "--domain TEXT [required]", "--samples TEXT [5000]",
                        "--steps TEXT [500]", "--output TEXT [runs]", "--alpha TEXT [per domain]"}) {
    CHECK_MESSAGE(contains(r.out, f), f);
  }
  for (const auto& k : schema()) CHECK_MESSAGE(contains(r.out, k.name), k.name);
  CHECK(run_cli({"no-such-command"}).code == kExitConfig);
  CHECK(run_cli({}).code == kExitConfig);
}

TEST_CASE("stages depend on their inputs and fail with the stage name") {
  const auto dir = fresh_dir("deps");
  auto fit = run_cli(small(dir, {"fit", "--family", "quadratic"}));
  CHECK(fit.code == kExitStage);
  CHECK(contains(fit.err, "missing sample table"));
  auto sample = run_cli(small(dir, {"sample"}));
  CHECK(sample.code == kExitStage);
  CHECK(contains(sample.err, "sample: missing dataset"));
  auto train = run_cli(small(dir, {"train", "--method", "dwmse"}));
  CHECK(contains(train.err, "train: missing dataset"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("stage pipeline runs end to end and reports cache hits") {
  const auto dir = fresh_dir("pipeline");
  REQUIRE(run_cli(small(dir, {"gen-data"})).code == kExitOk);
  auto first = run_cli(small(dir, {"sample"}));
  REQUIRE(first.code == kExitOk);
  CHECK(contains(first.out, "cache hit: no"));
  CHECK(contains(first.out, "oracle calls: 310"));  // 10 instances x (30 + 1)
  auto second = run_cli(small(dir, {"sample"}));
  CHECK(contains(second.out, "cache hit: yes"));
  CHECK(contains(second.out, "oracle calls: 0"));

  auto missing = run_cli(small(dir, {"train", "--method", "dwmse"}));
  CHECK(missing.code == kExitStage);
  CHECK(contains(missing.err, "missing fitted losses"));
  REQUIRE(run_cli(small(dir, {"fit", "--family", "dwmse"})).code == kExitOk);
  auto train = run_cli(small(dir, {"train", "--method", "dwmse"}));
  REQUIRE(train.code == kExitOk);
  CHECK(contains(train.out, "oracle calls: 0"));
  auto eval = run_cli(small(dir, {"eval", "--method", "dwmse"}));
  REQUIRE(eval.code == kExitOk);
  CHECK(contains(eval.out, "normalized DQ: "));
  for (const char* p : {"models/linear-seed0-dwmse-init0.json", "reports/train-linear-seed0-dwmse-init0.csv",
                        "reports/eval-linear-seed0-dwmse-init0.csv",
                        "reports/eval-linear-seed0-dwmse-init0-summary.csv"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / p), p);
  }
  CHECK(run_cli(small(dir, {"eval", "--method", "dfl"})).code == kExitStage);
  std::filesystem::remove_all(dir);
}

TEST_CASE("reruns write byte-identical CSVs") {
  const auto a = fresh_dir("rerun-a");
  const auto b = fresh_dir("rerun-b");
  REQUIRE(run_cli(small(a, {"reproduce-table1"})).code == kExitOk);
  REQUIRE(run_cli(small(b, {"reproduce-table1"})).code == kExitOk);
  const auto csv_a = lodl::read_file(a / "reports/table1-linear.csv");
  CHECK(csv_a == lodl::read_file(b / "reports/table1-linear.csv"));
  // A rerun in place hits every cache and still writes the same bytes.
  REQUIRE(run_cli(small(a, {"reproduce-table1"})).code == kExitOk);
  CHECK(csv_a == lodl::read_file(a / "reports/table1-linear.csv"));
  CHECK(std::filesystem::exists(a / "reports/table1-linear.txt"));
  CHECK(std::filesystem::exists(a / "reports/table1-linear-timing.json"));

  for (const auto& dir : {a, b}) {
    REQUIRE(run_cli(small(dir, {"gen-data"})).code == kExitOk);
    REQUIRE(run_cli(small(dir, {"train", "--method", "2-stage"})).code == kExitOk);
    REQUIRE(run_cli(small(dir, {"eval", "--method", "2-stage"})).code == kExitOk);
  }
  for (const char* p : {"reports/train-linear-seed0-2-stage-init0.csv", "reports/eval-linear-seed0-2-stage-init0.csv"}) {
    CHECK(lodl::read_file(a / p) == lodl::read_file(b / p));
  }
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("ablate and benchmark subcommands write their reports") {
  const auto dir = fresh_dir("reports");
  auto abl = small(dir, {"ablate"});
  for (const char* s : {"ablate.samples=20,40", "ablate.strategies=one,all", "ablate.families=wmse"}) {
    abl.push_back("--set");
    abl.push_back(s);
  }
  REQUIRE(run_cli(abl).code == kExitOk);
  CHECK(std::filesystem::exists(dir / "reports/ablation-linear.csv"));
  auto bench = small(dir, {"bench-amortize", "--set", "bench.models=1,2", "--set", "bench.family=wmse"});
  REQUIRE(run_cli(bench).code == kExitOk);
  CHECK(std::filesystem::exists(dir / "reports/bench-amortize-linear-seed0.json"));
  auto par = small(dir, {"bench-parallel", "--set", "bench.workers=1", "--set", "bench.family=wmse"});
  REQUIRE(run_cli(par).code == kExitOk);
  CHECK(std::filesystem::exists(dir / "reports/bench-parallel-linear-seed0.json"));
  std::filesystem::remove_all(dir);
}
