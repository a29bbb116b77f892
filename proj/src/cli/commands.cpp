#include "lodl/cli/commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "lodl/cli/config.hpp"
#include "lodl/common/io.hpp"
#include "lodl/common/parallel.hpp"
#include "lodl/harness/harness.hpp"

namespace lodl::cli {

namespace {

namespace fs = std::filesystem;

std::string stem(const RunConfig& cfg) {
  return std::string(domains::domain_name(cfg.domain.kind)) + "-seed" + std::to_string(cfg.seed);
}

fs::path data_dir(const RunConfig& cfg) {
  return cfg.output / "data" / (stem(cfg) + "-" + domains::config_key(cfg.domain).substr(0, 8));
}

fs::path model_path(const RunConfig& cfg) {
  return cfg.output / "models" /
         (stem(cfg) + "-" + harness::method_name(cfg.method) + "-init" + std::to_string(cfg.init) + ".json");
}

fs::path report_path(const RunConfig& cfg, const std::string& name) { return cfg.output / "reports" / name; }

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

domains::Dataset load_data(const RunConfig& cfg, const char* stage) {
  const fs::path dir = data_dir(cfg);
  if (!fs::exists(dir / "meta.json")) {
    throw StageError(stage, "missing dataset " + dir.string() + " (run gen-data first)");
  }
  return domains::read_dataset(dir);
}

std::vector<sampling::SampleTable> load_tables(const RunConfig& cfg, const char* stage) {
  const fs::path path = harness::table_path(cfg.output, cfg.domain, cfg.sampling);
  if (!fs::exists(path)) throw StageError(stage, "missing sample table " + path.string() + " (run sample first)");
  return sampling::read_tables(path);
}

int gen_data(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = data_dir(cfg);
  if (fs::exists(dir / "meta.json")) {
    out << "dataset: " << dir.string() << " (exists, unchanged)\n";
    return kExitOk;
  }
  auto data = domains::generate_dataset(cfg.domain);
  domains::write_dataset(data, dir);
  out << "dataset: " << dir.string() << " (" << data.train.size() << " train, " << data.val.size() << " val, "
      << data.test.size() << " test)\n";
  return kExitOk;
}

int sample(const RunConfig& cfg, std::ostream& out) {
  auto data = load_data(cfg, "sample");
  auto problem = domains::make_problem(data);
  const fs::path path = harness::table_path(cfg.output, cfg.domain, cfg.sampling);
  fs::create_directories(path.parent_path());
  auto result = sampling::load_or_build_tables(path, data.train, *problem, cfg.sampling, cfg.workers);
  out << "samples: " << path.string() << "\n"
      << "cache hit: " << (result.cache_hit ? "yes" : "no") << "\n"
      << "oracle calls: " << problem->oracle_calls() << "\n";
  return kExitOk;
}

int fit(const RunConfig& cfg, std::ostream& out) {
  auto tables = load_tables(cfg, "fit");
  const fs::path path = harness::loss_path(cfg.output, cfg.domain, cfg.sampling, cfg.family, cfg.fit);
  if (fs::exists(path)) {
    out << "losses: " << path.string() << " (exists, unchanged)\n";
    return kExitOk;
  }
  std::vector<loss::FittedLoss> losses;
  try {
    losses = loss::fit_all(tables, cfg.family, cfg.fit, cfg.workers);
  } catch (const std::exception& e) {
    throw StageError("fit", e.what());
  }
  loss::write_losses(path, losses);
  double objective = 0.0;
  for (const auto& l : losses) objective += l.objective;
  out << "losses: " << path.string() << "\n"
      << "family: " << loss::family_name(cfg.family) << "\n"
      << "mean fit error: " << format_double(objective / static_cast<double>(losses.size())) << "\n";
  return kExitOk;
}

int train(const RunConfig& cfg, const Settings& settings, std::ostream& out) {
  using Kind = harness::Method::Kind;
  if (cfg.method.kind == Kind::kOptimal || cfg.method.kind == Kind::kRandom) {
    throw StageError("train", "method '" + harness::method_name(cfg.method) + "' has no model to train");
  }
  auto data = load_data(cfg, "train");
  std::vector<loss::FittedLoss> losses;
  if (cfg.method.kind == Kind::kLODL) {
    const fs::path lpath = harness::loss_path(cfg.output, cfg.domain, cfg.sampling, cfg.method.family, cfg.fit);
    if (!fs::exists(lpath)) {
      throw StageError("train", "missing fitted losses " + lpath.string() + " (run fit --family " +
                                    std::string(loss::family_name(cfg.method.family)) + " first)");
    }
    losses = loss::read_losses(lpath);
  }
  auto problem = domains::make_problem(data);
  auto val_problem = domains::make_problem(data);
  auto model = models::init_model(models::default_model(data), cfg.train.seed);
  auto validator = models::dq_validator(data.val, *val_problem);
  models::TrainResult result;
  try {
    switch (cfg.method.kind) {
      case Kind::kTwoStage: result = models::train_two_stage(model, data.train, cfg.train, validator); break;
      case Kind::kLODL: result = models::train_with_lodl(model, data.train, losses, cfg.train, validator); break;
      default: result = models::train_dfl(model, data.train, *problem, cfg.train, validator); break;
    }
  } catch (const std::exception& e) {
    throw StageError("train", e.what());
  }

  nlohmann::json snapshot = {{"seed", cfg.seed}, {"init", cfg.init}, {"method", harness::method_name(cfg.method)}};
  for (const auto& [k, v] : settings) snapshot["settings"][k] = v;
  const fs::path mpath = model_path(cfg);
  models::write_model(mpath, result.model, snapshot);

  std::ostringstream csv;
  csv << "domain,method,seed,init,step,train_loss,val_dq\n";
  for (std::size_t step = 0; step < result.loss_curve.size(); ++step) {
    std::string val;
    for (std::size_t i = 0; i < result.eval_steps.size(); ++i) {
      if (result.eval_steps[i] == step) val = format_double(result.val_dq[i]);
    }
    csv << domains::domain_name(cfg.domain.kind) << ',' << harness::method_name(cfg.method) << ',' << cfg.seed << ','
        << cfg.init << ',' << step << ',' << format_double(result.loss_curve[step]) << ',' << val << '\n';
  }
  const fs::path rpath = report_path(cfg, "train-" + mpath.stem().string() + ".csv");
  write_file_atomic(rpath, csv.str());
  out << "model: " << mpath.string() << "\n"
      << "curve: " << rpath.string() << "\n"
      << "best step: " << result.best_step << "\n"
      << "oracle calls: " << problem->oracle_calls() << "\n"
      << "surrogate solves: " << problem->surrogate_calls() << "\n"
      << "seconds: " << fmt(result.seconds, "%.2f") << "\n";
  return kExitOk;
}

int eval(const RunConfig& cfg, std::ostream& out) {
  auto data = load_data(cfg, "eval");
  auto problem = domains::make_problem(data);
  const auto refs = harness::test_references(data, *problem, cfg.random_draws);
  models::DqReport report;
  using Kind = harness::Method::Kind;
  if (cfg.method.kind == Kind::kOptimal) {
    report = models::optimal_dq(data.test, *problem);
  } else if (cfg.method.kind == Kind::kRandom) {
    throw StageError("eval", "the random method is a reference, not a model; see random_ref in any eval report");
  } else {
    const fs::path mpath = model_path(cfg);
    if (!fs::exists(mpath)) throw StageError("eval", "missing model " + mpath.string() + " (run train first)");
    report = models::evaluate_dq(models::read_model(mpath), data.test, *problem);
  }
  const double normalized = harness::normalize_dq(report.per_instance, refs.random, refs.optimal);
  const std::string name = stem(cfg) + "-" + harness::method_name(cfg.method) + "-init" + std::to_string(cfg.init);

  std::ostringstream per;
  per << "domain,method,seed,init,instance,dq\n";
  for (std::size_t n = 0; n < data.test.size(); ++n) {
    per << domains::domain_name(cfg.domain.kind) << ',' << harness::method_name(cfg.method) << ',' << cfg.seed << ','
        << cfg.init << ',' << data.test[n].id << ',' << format_double(report.per_instance[n]) << '\n';
  }
  std::ostringstream summary;
  summary << "domain,method,seed,init,normalized_dq,raw_dq,random_ref,optimal_ref\n"
          << domains::domain_name(cfg.domain.kind) << ',' << harness::method_name(cfg.method) << ',' << cfg.seed
          << ',' << cfg.init << ',' << format_double(normalized) << ',' << format_double(report.mean) << ','
          << format_double(refs.random) << ',' << format_double(refs.optimal) << '\n';
  write_file_atomic(report_path(cfg, "eval-" + name + ".csv"), per.str());
  write_file_atomic(report_path(cfg, "eval-" + name + "-summary.csv"), summary.str());
  out << "normalized DQ: " << fmt(normalized) << "\n"
      << "report: " << report_path(cfg, "eval-" + name + "-summary.csv").string() << "\n";
  return kExitOk;
}

harness::BenchConfig bench_config(const RunConfig& cfg) {
  harness::BenchConfig b;
  b.domain = cfg.domain;
  b.family = cfg.bench_family;
  b.sampling = cfg.sampling;
  b.fit = cfg.fit;
  b.train = cfg.train;
  return b;
}

int bench_parallel(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  for (std::size_t p : cfg.bench_workers) {
    if (p > hardware_workers()) {
      err << "warning: " << p << " workers requested on a machine with " << hardware_workers()
          << " hardware threads; speedups above that will not show\n";
    }
  }
  auto records = harness::benchmark_parallel(bench_config(cfg), cfg.bench_workers);
  nlohmann::json j = {{"domain", domains::domain_name(cfg.domain.kind)},
                      {"seed", cfg.seed},
                      {"family", loss::family_name(cfg.bench_family)},
                      {"hardware_threads", hardware_workers()},
                      {"points", nlohmann::json::array()}};
  out << "P  sampling_s  fitting_s  lodl_train_s  pipeline_s  dfl_s\n";
  for (const auto& r : records) {
    j["points"].push_back({{"workers", r.workers}, {"steps", r.steps}, {"samples", r.samples},
                           {"instances", r.instances}, {"sampling_seconds", r.sampling_seconds},
                           {"fitting_seconds", r.fitting_seconds}, {"lodl_training_seconds", r.lodl_training_seconds},
                           {"pipeline_seconds", r.pipeline_seconds}, {"dfl_seconds", r.dfl_seconds},
                           {"t_model", r.t_model}, {"t_oracle", r.t_oracle}, {"t_surrogate", r.t_surrogate},
                           {"t_lodl", r.t_lodl}});
    out << r.workers << "  " << fmt(r.sampling_seconds, "%.3f") << "  " << fmt(r.fitting_seconds, "%.3f") << "  "
        << fmt(r.lodl_training_seconds, "%.3f") << "  " << fmt(r.pipeline_seconds, "%.3f") << "  "
        << fmt(r.dfl_seconds, "%.3f") << "\n";
  }
  const fs::path path = report_path(cfg, "bench-parallel-" + stem(cfg) + ".json");
  write_file_atomic(path, j.dump(2) + "\n");
  out << "report: " << path.string() << "\n";
  return kExitOk;
}

int bench_amortize(const RunConfig& cfg, std::ostream& out) {
  auto points = harness::benchmark_amortization(bench_config(cfg), cfg.bench_models, cfg.workers);
  nlohmann::json j = {{"domain", domains::domain_name(cfg.domain.kind)},
                      {"seed", cfg.seed},
                      {"family", loss::family_name(cfg.bench_family)},
                      {"workers", cfg.workers},
                      {"points", nlohmann::json::array()}};
  out << "m  lodl_per_model_s  two_stage_per_model_s  dfl_per_model_s\n";
  for (const auto& p : points) {
    j["points"].push_back({{"models", p.models}, {"lodl_per_model", p.lodl_per_model},
                           {"two_stage_per_model", p.two_stage_per_model}, {"dfl_per_model", p.dfl_per_model}});
    out << p.models << "  " << fmt(p.lodl_per_model, "%.3f") << "  " << fmt(p.two_stage_per_model, "%.3f") << "  "
        << fmt(p.dfl_per_model, "%.3f") << "\n";
  }
  const fs::path path = report_path(cfg, "bench-amortize-" + stem(cfg) + ".json");
  write_file_atomic(path, j.dump(2) + "\n");
  out << "report: " << path.string() << "\n";
  return kExitOk;
}

int ablate(const RunConfig& cfg, std::ostream& out) {
  harness::AblationConfig a;
  a.domain = cfg.domain;
  a.strategies = cfg.ablate_strategies;
  a.sample_counts = cfg.ablate_samples;
  a.families = cfg.ablate_families;
  a.seeds = cfg.seeds;
  a.alpha = cfg.sampling.alpha;
  a.fit = cfg.fit;
  a.train = cfg.train;
  a.workers = cfg.workers;
  auto records = harness::ablation_suite(a);
  const std::string name = "ablation-" + std::string(domains::domain_name(cfg.domain.kind));
  write_file_atomic(report_path(cfg, name + ".csv"), harness::ablation_csv(records));
  const std::string table = harness::ablation_table(records);
  write_file_atomic(report_path(cfg, name + ".txt"), table);
  out << table << "report: " << report_path(cfg, name + ".csv").string() << "\n";
  for (const auto& r : records) {
    if (!r.error.empty()) throw StageError("ablate", "some cells failed; see the status column of the CSV");
  }
  return kExitOk;
}

int reproduce_table1(const RunConfig& cfg, std::ostream& out) {
  harness::GridConfig g;
  g.domains = {cfg.domain};
  g.methods = cfg.methods;
  g.seeds = cfg.seeds;
  g.inits = cfg.inits;
  g.sampling = cfg.sampling;
  g.fit = cfg.fit;
  g.train = cfg.train;
  g.random_draws = cfg.random_draws;
  g.workers = cfg.workers;
  g.cache_dir = cfg.output;
  auto records = harness::run_experiment(g);
  const std::string name = "table1-" + std::string(domains::domain_name(cfg.domain.kind));
  write_file_atomic(report_path(cfg, name + ".csv"), harness::records_csv(records));
  const std::string table = harness::summary_table(records);
  write_file_atomic(report_path(cfg, name + ".txt"), table);
  write_file_atomic(report_path(cfg, name + "-timing.json"), harness::timing_json(records).dump(2) + "\n");
  out << table << "report: " << report_path(cfg, name + ".csv").string() << "\n";
  std::size_t failed = 0;
  for (const auto& r : records) failed += !r.ok();
  if (failed) {
    throw StageError("reproduce-table1", std::to_string(failed) + " run(s) failed; see the status column of the CSV");
  }
  return kExitOk;
}

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

constexpr Flag kFlags[] = {
    {"--seed", "run.seed", "top-level seed"},
    {"--workers", "run.workers", "worker thread cap"},
    {"--domain", "data.domain", "linear, webadv or portfolio"},
    {"--method", "run.method", "method for train/eval"},
    {"--family", "fit.family", "loss family for fit"},
    {"--samples,-K", "sampling.samples", "samples per instance"},
    {"--alpha", "sampling.alpha", "sampling noise scale"},
    {"--steps", "train.steps", "training steps"},
    {"--output,-o", "run.output", "output root"},
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learn per-instance decision losses and train predict-then-optimize models with them."};
  app.require_subcommand(1);
  app.footer(schema_help());
  std::string config_path;
  app.add_option("--config,-c", config_path, "config file (INI-style sections; flags override it)");
  std::vector<std::string> flag_values(std::size(kFlags));
  std::vector<CLI::Option*> flag_opts;
  for (std::size_t i = 0; i < std::size(kFlags); ++i) {
    const KeySpec* spec = find_key(kFlags[i].key);
    std::string def = spec->default_value.empty() ? (spec->name == "data.domain" ? "required" : "per domain")
                                                  : spec->default_value;
    flag_opts.push_back(app.add_option(kFlags[i].name, flag_values[i], std::string(kFlags[i].help) + " (" +
                                                                            kFlags[i].key + ")")
                            ->default_str(def));
  }
  std::vector<std::string> sets;
  app.add_option("--set", sets, "override any config key: section.key=value (repeatable)");

  const std::pair<const char*, const char*> commands[] = {
      {"gen-data", "generate a dataset into data/"},
      {"sample", "build sample tables into samples/ (needs gen-data)"},
      {"fit", "fit one loss family into losses/ (needs sample)"},
      {"train", "train one model into models/ (needs fit for loss-family methods)"},
      {"eval", "evaluate a trained model on the test split into reports/"},
      {"bench-parallel", "time the pipeline at several worker counts"},
      {"bench-amortize", "time per-model cost when losses are reused across models"},
      {"ablate", "sampling strategy x sample count x family grid"},
      {"reproduce-table1", "full method grid over seeds and inits"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  Settings settings;
  RunConfig cfg;
  try {
    if (!config_path.empty()) settings = read_config(config_path);
    for (std::size_t i = 0; i < std::size(kFlags); ++i) {
      if (flag_opts[i]->count()) set_value(settings, kFlags[i].key, flag_values[i]);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      set_value(settings, s.substr(0, eq), s.substr(eq + 1));
    }
    cfg = resolve(settings);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  out << "# " << command << ", resolved config\n" << render_resolved(settings, cfg) << "\n";

  try {
    if (command == "gen-data") return gen_data(cfg, out);
    if (command == "sample") return sample(cfg, out);
    if (command == "fit") return fit(cfg, out);
    if (command == "train") return train(cfg, settings, out);
    if (command == "eval") return eval(cfg, out);
    if (command == "bench-parallel") return bench_parallel(cfg, out, err);
    if (command == "bench-amortize") return bench_amortize(cfg, out);
    if (command == "ablate") return ablate(cfg, out);
    return reproduce_table1(cfg, out);
  } catch (const StageError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << command << ": " << e.what() << "\n";
  }
  return kExitStage;
}

}  // namespace lodl::cli
