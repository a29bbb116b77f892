#include "lodl/harness/harness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lodl/common/io.hpp"
#include "lodl/common/parallel.hpp"
#include "lodl/common/rng.hpp"
#include "lodl/common/stopwatch.hpp"

namespace lodl::harness {

using domains::DomainKind;
using loss::Family;

double normalize_dq(std::span<const double> raw, double random_ref, double optimal_ref) {
  if (!(optimal_ref > random_ref)) {
    throw std::invalid_argument("normalize_dq: optimal reference " + format_double(optimal_ref) +
                                " is not above random reference " + format_double(random_ref));
  }
  if (raw.empty()) throw std::invalid_argument("normalize_dq: no decision qualities");
  return (mean(raw) - random_ref) / (optimal_ref - random_ref);
}

double random_reference(std::span<const domains::InstanceRecord> instances, const domains::DecisionProblem& problem,
                        DomainKind kind, std::uint64_t seed, std::size_t draws) {
  if (instances.empty() || draws == 0) throw std::invalid_argument("random_reference: nothing to draw");
  const double lo = kind == DomainKind::kPortfolio ? -1.0 : 0.0;
  double total = 0.0;
  std::vector<double> yhat(problem.dim_y());
  for (const auto& inst : instances) {
    SplitMix64 rng(derive_seed(seed, {inst.id}));
    double sum = 0.0;
    for (std::size_t r = 0; r < draws; ++r) {
      for (double& v : yhat) v = lo + (1.0 - lo) * rng.uniform();
      sum += problem.decision_quality(yhat, inst.y);
    }
    total += sum / static_cast<double>(draws);
  }
  return total / static_cast<double>(instances.size());
}

std::string method_name(const Method& m) {
  switch (m.kind) {
    case Method::Kind::kOptimal: return "optimal";
    case Method::Kind::kRandom: return "random";
    case Method::Kind::kTwoStage: return "2-stage";
    case Method::Kind::kDFL: return "dfl";
    case Method::Kind::kLODL: return std::string(loss::family_name(m.family));
  }
  return "?";
}

std::vector<Method> all_methods() {
  std::vector<Method> out = {{Method::Kind::kRandom}, {Method::Kind::kOptimal}, {Method::Kind::kTwoStage},
                             {Method::Kind::kDFL}};
  for (Family f : loss::kAllFamilies) out.push_back({Method::Kind::kLODL, f});
  return out;
}

Method parse_method(std::string_view name) {
  for (const Method& m : all_methods()) {
    if (method_name(m) == name) return m;
  }
  std::string valid;
  for (const Method& m : all_methods()) valid += (valid.empty() ? "" : ", ") + method_name(m);
  throw std::invalid_argument("unknown method '" + std::string(name) + "' (valid: " + valid + ")");
}

void GridConfig::validate() const {
  if (domains.empty()) throw std::invalid_argument("grid: no domains");
  if (methods.empty()) throw std::invalid_argument("grid: no methods");
  if (seeds.empty()) throw std::invalid_argument("grid: no seeds");
  if (inits == 0) throw std::invalid_argument("grid: inits must be positive");
  if (random_draws == 0) throw std::invalid_argument("grid: random_draws must be positive");
  if (workers == 0) throw std::invalid_argument("grid: workers must be positive");
  for (const auto& d : domains) d.validate();
  sampling::SamplingConfig s = sampling;
  if (s.alpha <= 0.0) s.alpha = 1.0;
  s.validate();
  fit.validate();
  train.validate();
}

std::uint64_t fit_seed(std::uint64_t seed) { return derive_seed(seed, {0xf17}); }
std::uint64_t init_seed(std::uint64_t seed, std::size_t init) { return derive_seed(seed, {0x1417, init}); }
std::uint64_t reference_seed(std::uint64_t seed) { return derive_seed(seed, {0x7a4d}); }

sampling::SamplingConfig resolve_sampling(sampling::SamplingConfig s, DomainKind kind, std::uint64_t seed) {
  if (s.alpha <= 0.0) s.alpha = sampling::default_alpha(kind);
  s.seed = seed;
  return s;
}

namespace {

std::string stem(const domains::DomainConfig& dc) {
  return std::string(domains::domain_name(dc.kind)) + "-seed" + std::to_string(dc.seed);
}

}  // namespace

std::filesystem::path table_path(const std::filesystem::path& root, const domains::DomainConfig& dc,
                                 const sampling::SamplingConfig& sc) {
  std::string name = sampling::table_cache_name(dc, sc);  // tables-<hash>.bin
  return root / "samples" / (stem(dc) + "-" + name.substr(name.find('-') + 1));
}

std::filesystem::path loss_path(const std::filesystem::path& root, const domains::DomainConfig& dc,
                                const sampling::SamplingConfig& sc, Family family, const loss::FitConfig& fc) {
  std::ostringstream key;
  key << sampling::table_cache_name(dc, sc) << '|' << loss::family_name(family) << '|' << fc.steps << '|'
      << format_double(fc.learning_rate) << '|' << static_cast<int>(fc.optimizer) << '|' << format_double(fc.w_min)
      << '|' << fc.rank << '|' << fc.hidden << '|' << fc.hidden_layers << '|' << fc.batch << '|'
      << format_double(fc.nn_learning_rate) << '|' << fc.seed;
  return root / "losses" /
         (stem(dc) + "-" + std::string(loss::family_name(family)) + "-" + hex64(fnv1a(key.str())) + ".txt");
}

References test_references(const domains::Dataset& data, const domains::DecisionProblem& problem,
                           std::size_t draws) {
  References r;
  r.optimal = models::optimal_dq(data.test, problem).mean;
  r.random = random_reference(data.test, problem, data.config.kind, reference_seed(data.config.seed), draws);
  return r;
}

namespace {

bool needs_tables(std::span<const Method> methods) {
  return std::any_of(methods.begin(), methods.end(), [](const Method& m) { return m.kind == Method::Kind::kLODL; });
}

struct Tables {
  std::vector<sampling::SampleTable> tables;
  bool cache_hit = false;
  std::uint64_t oracle_calls = 0;
  double seconds = 0.0;
};

Tables get_tables(const domains::Dataset& data, const sampling::SamplingConfig& sc, const std::filesystem::path& cache,
                  std::size_t workers) {
  auto problem = domains::make_problem(data);
  Tables out;
  Stopwatch sw;
  if (cache.empty()) {
    out.tables = sampling::build_sample_tables(data.train, *problem, sc, workers);
  } else {
    const auto path = table_path(cache, data.config, sc);
    std::filesystem::create_directories(path.parent_path());
    auto cached = sampling::load_or_build_tables(path, data.train, *problem, sc, workers);
    out.tables = std::move(cached.tables);
    out.cache_hit = cached.cache_hit;
  }
  out.seconds = sw.seconds();
  out.oracle_calls = problem->oracle_calls();
  return out;
}

struct Losses {
  std::vector<loss::FittedLoss> losses;
  bool cache_hit = false;
  double seconds = 0.0;
};

Losses get_losses(const domains::Dataset& data, const sampling::SamplingConfig& sc,
                  std::span<const sampling::SampleTable> tables, Family family, const loss::FitConfig& fc,
                  const std::filesystem::path& cache, std::size_t workers) {
  Losses out;
  Stopwatch sw;
  std::filesystem::path path;
  if (!cache.empty()) {
    path = loss_path(cache, data.config, sc, family, fc);
    std::filesystem::create_directories(path.parent_path());
    if (std::filesystem::exists(path)) {
      auto read = loss::read_losses(path);
      bool matches = read.size() == tables.size();
      for (std::size_t i = 0; matches && i < read.size(); ++i) {
        matches = read[i].instance_id == tables[i].instance_id && loss::family_of(read[i].params) == family;
      }
      if (matches) {
        out.losses = std::move(read);
        out.cache_hit = true;
        out.seconds = sw.seconds();
        return out;
      }
    }
  }
  out.losses = loss::fit_all(tables, family, fc, workers);
  if (!path.empty()) loss::write_losses(path, out.losses);
  out.seconds = sw.seconds();
  return out;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// Everything one domain x seed cell needs, shared by its methods and inits.
struct Cell {
  domains::DomainConfig domain;
  std::uint64_t seed = 0;
  domains::Dataset data;
  double random_ref = 0.0;
  double optimal_ref = 0.0;
  std::string setup_error;
  sampling::SamplingConfig sampling;
  std::optional<Tables> tables;
  std::string table_error;
  std::map<Family, Losses> losses;
  std::map<Family, std::string> loss_errors;
};

void prepare_cell(Cell& cell, const GridConfig& cfg, std::size_t workers) {
  try {
    cell.domain.seed = cell.seed;
    cell.data = domains::generate_dataset(cell.domain);
    auto problem = domains::make_problem(cell.data);
    const References refs = test_references(cell.data, *problem, cfg.random_draws);
    cell.optimal_ref = refs.optimal;
    cell.random_ref = refs.random;
    if (!(cell.optimal_ref > cell.random_ref)) {
      throw std::runtime_error("optimal reference does not exceed random reference");
    }
  } catch (const std::exception& e) {
    cell.setup_error = std::string("data: ") + one_line(e.what());
    return;
  }
  if (!needs_tables(cfg.methods)) return;
  cell.sampling = resolve_sampling(cfg.sampling, cell.domain.kind, cell.seed);
  try {
    cell.tables = get_tables(cell.data, cell.sampling, cfg.cache_dir, workers);
  } catch (const std::exception& e) {
    cell.table_error = std::string("sample: ") + one_line(e.what());
    return;
  }
  for (const Method& m : cfg.methods) {
    if (m.kind != Method::Kind::kLODL || cell.losses.count(m.family) || cell.loss_errors.count(m.family)) continue;
    try {
      loss::FitConfig fc = cfg.fit;
      fc.seed = fit_seed(cell.seed);
      cell.losses.emplace(m.family,
                          get_losses(cell.data, cell.sampling, cell.tables->tables, m.family, fc, cfg.cache_dir, workers));
    } catch (const std::exception& e) {
      cell.loss_errors[m.family] = std::string("fit: ") + one_line(e.what());
    }
  }
}

RunRecord run_job(const Cell& cell, const GridConfig& cfg, const Method& method, std::size_t init) {
  RunRecord rec;
  rec.domain = std::string(domains::domain_name(cell.domain.kind));
  rec.method = method_name(method);
  rec.seed = cell.seed;
  rec.init = init;
  rec.random_ref = cell.random_ref;
  rec.optimal_ref = cell.optimal_ref;
  if (!cell.setup_error.empty()) {
    rec.error = cell.setup_error;
    return rec;
  }
  if (method.kind == Method::Kind::kOptimal) {
    rec.raw_dq = cell.optimal_ref;
    rec.normalized_dq = 1.0;
    return rec;
  }
  if (method.kind == Method::Kind::kRandom) {
    rec.raw_dq = cell.random_ref;
    rec.normalized_dq = 0.0;
    return rec;
  }

  const domains::Dataset& data = cell.data;
  const Losses* losses = nullptr;
  if (method.kind == Method::Kind::kLODL) {
    if (!cell.table_error.empty()) {
      rec.error = cell.table_error;
      return rec;
    }
    if (auto it = cell.loss_errors.find(method.family); it != cell.loss_errors.end()) {
      rec.error = it->second;
      return rec;
    }
    losses = &cell.losses.at(method.family);
    rec.tables_cached = true;
  }

  auto train_problem = domains::make_problem(data);
  auto val_problem = domains::make_problem(data);
  models::TrainConfig tc = cfg.train;
  tc.seed = init_seed(cell.seed, init);
  auto model = models::init_model(models::default_model(data), tc.seed);
  auto validator = models::dq_validator(data.val, *val_problem);
  models::TrainResult result;
  try {
    switch (method.kind) {
      case Method::Kind::kTwoStage: result = models::train_two_stage(model, data.train, tc, validator); break;
      case Method::Kind::kLODL:
        result = models::train_with_lodl(model, data.train, losses->losses, tc, validator);
        break;
      case Method::Kind::kDFL: result = models::train_dfl(model, data.train, *train_problem, tc, validator); break;
      default: break;
    }
  } catch (const std::exception& e) {
    rec.error = std::string("train: ") + one_line(e.what());
    return rec;
  }
  rec.seconds.training = result.seconds;
  rec.best_step = result.best_step;
  rec.train_oracle_calls = train_problem->oracle_calls();
  rec.surrogate_calls = train_problem->surrogate_calls();

  auto eval_problem = domains::make_problem(data);
  try {
    Stopwatch sw;
    auto report = models::evaluate_dq(result.model, data.test, *eval_problem);
    rec.seconds.evaluation = sw.seconds();
    rec.raw_dq = report.mean;
    rec.normalized_dq = normalize_dq(report.per_instance, cell.random_ref, cell.optimal_ref);
    rec.eval_oracle_calls = eval_problem->oracle_calls();
    if (!std::isfinite(rec.normalized_dq)) throw std::runtime_error("non-finite decision quality");
  } catch (const std::exception& e) {
    rec.error = std::string("eval: ") + one_line(e.what());
  }
  return rec;
}

}  // namespace

std::vector<RunRecord> run_experiment(const GridConfig& cfg) {
  cfg.validate();
  std::vector<Cell> cells;
  for (const auto& d : cfg.domains) {
    for (std::uint64_t seed : cfg.seeds) {
      Cell c;
      c.domain = d;
      c.seed = seed;
      cells.push_back(std::move(c));
    }
  }
  const std::size_t outer = std::min(cfg.workers, cells.size());
  const std::size_t inner = std::max<std::size_t>(1, cfg.workers / outer);
  const std::size_t per_cell = cfg.inits * cfg.methods.size();
  std::vector<RunRecord> records(cells.size() * per_cell);

  parallel_for(cells.size(), outer, [&](std::size_t c) {
    Cell& cell = cells[c];
    prepare_cell(cell, cfg, inner);
    parallel_for(per_cell, inner, [&](std::size_t j) {
      records[c * per_cell + j] = run_job(cell, cfg, cfg.methods[j % cfg.methods.size()], j / cfg.methods.size());
    });
    // Shared stage costs go to the first record that used them, in grid order.
    bool tables_charged = false;
    std::map<Family, bool> fit_charged;
    for (std::size_t j = 0; j < per_cell; ++j) {
      RunRecord& rec = records[c * per_cell + j];
      const Method& m = cfg.methods[j % cfg.methods.size()];
      if (m.kind != Method::Kind::kLODL || !cell.tables) continue;
      if (!tables_charged) {
        tables_charged = true;
        rec.tables_cached = cell.tables->cache_hit;
        rec.seconds.sampling = cell.tables->seconds;
        rec.sampling_oracle_calls = cell.tables->oracle_calls;
      }
      if (auto it = cell.losses.find(m.family); it != cell.losses.end() && !fit_charged[m.family]) {
        fit_charged[m.family] = true;
        rec.seconds.fitting = it->second.seconds;
      }
    }
    cell.data = {};
    cell.tables.reset();
    cell.losses.clear();
  });
  return records;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string records_csv(std::span<const RunRecord> records) {
  std::ostringstream out;
  out << "domain,method,seed,init,normalized_dq,raw_dq,random_ref,optimal_ref,best_step,train_oracle_calls,"
         "surrogate_calls,eval_oracle_calls,status\n";
  for (const auto& r : records) {
    out << r.domain << ',' << r.method << ',' << r.seed << ',' << r.init << ',' << format_double(r.normalized_dq)
        << ',' << format_double(r.raw_dq) << ',' << format_double(r.random_ref) << ','
        << format_double(r.optimal_ref) << ',' << r.best_step << ',' << r.train_oracle_calls << ','
        << r.surrogate_calls << ',' << r.eval_oracle_calls << ',' << csv_field(r.ok() ? "ok" : r.error) << '\n';
  }
  return out.str();
}

namespace {

std::string mean_std(std::span<const double> v) {
  if (v.empty()) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean(v), v.size() > 1 ? stddev(v) : 0.0);
  return buf;
}

template <class T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

// Pads by code points so "±" lines up.
std::string pad(const std::string& s, std::size_t width) {
  std::size_t cps = 0;
  for (unsigned char ch : s) cps += (ch & 0xC0) != 0x80;
  return s + std::string(width > cps ? width - cps : 0, ' ');
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    widths.resize(std::max(widths.size(), row.size()));
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::size_t cps = 0;
      for (unsigned char ch : row[c]) cps += (ch & 0xC0) != 0x80;
      widths[c] = std::max(widths[c], cps);
    }
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < rows[r].size(); ++c) line += "| " + pad(rows[r][c], widths[c]) + " ";
    out += line + "|\n";
    if (r == 0) {
      for (std::size_t c = 0; c < widths.size(); ++c) out += "|" + std::string(widths[c] + 2, '-');
      out += "|\n";
    }
  }
  return out;
}

}  // namespace

std::string summary_table(std::span<const RunRecord> records) {
  std::vector<std::string> methods, doms;
  for (const auto& r : records) {
    push_unique(methods, r.method);
    push_unique(doms, r.domain);
  }
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"method"});
  for (const auto& d : doms) rows[0].push_back(d);
  std::size_t failures = 0;
  for (const auto& m : methods) {
    std::vector<std::string> row = {m};
    for (const auto& d : doms) {
      std::vector<double> v;
      for (const auto& r : records) {
        if (r.method != m || r.domain != d) continue;
        if (r.ok()) v.push_back(r.normalized_dq);
        else ++failures;
      }
      row.push_back(mean_std(v));
    }
    rows.push_back(std::move(row));
  }
  std::string out = "Normalized test decision quality (mean ± std over seeds and inits)\n\n" + render(rows);
  if (failures) out += "\n" + std::to_string(failures) + " run(s) failed; see the status column of the CSV.\n";
  return out;
}

nlohmann::json timing_json(std::span<const RunRecord> records) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : records) {
    runs.push_back({{"domain", r.domain},
                    {"method", r.method},
                    {"seed", r.seed},
                    {"init", r.init},
                    {"sampling_seconds", r.seconds.sampling},
                    {"fitting_seconds", r.seconds.fitting},
                    {"training_seconds", r.seconds.training},
                    {"evaluation_seconds", r.seconds.evaluation},
                    {"sampling_oracle_calls", r.sampling_oracle_calls},
                    {"train_oracle_calls", r.train_oracle_calls},
                    {"surrogate_calls", r.surrogate_calls},
                    {"eval_oracle_calls", r.eval_oracle_calls},
                    {"tables_cached", r.tables_cached},
                    {"status", r.ok() ? "ok" : r.error}});
  }
  return {{"runs", runs}};
}

namespace {

const loss::FittedLoss& loss_for(std::span<const loss::FittedLoss> losses, std::size_t id) {
  for (const auto& l : losses) {
    if (l.instance_id == id) return l;
  }
  throw std::invalid_argument("no fitted loss for instance " + std::to_string(id));
}

}  // namespace

double mae_gaussian_neighborhood(std::span<const loss::FittedLoss> losses,
                                 std::span<const sampling::SampleTable> fresh) {
  if (fresh.empty()) throw std::invalid_argument("mae_gaussian_neighborhood: no tables");
  double total = 0.0;
  for (const auto& t : fresh) {
    const auto& l = loss_for(losses, t.instance_id);
    double sum = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) sum += std::abs(loss::eval_loss(l.params, t.row(k), t.y) - t.target(k));
    total += sum / static_cast<double>(std::max<std::size_t>(1, t.size()));
  }
  return total / static_cast<double>(fresh.size());
}

double mae_empirical_neighborhood(std::span<const loss::FittedLoss> losses,
                                  std::span<const domains::InstanceRecord> train,
                                  std::span<const models::Model> checkpoints,
                                  const domains::DecisionProblem& problem) {
  if (checkpoints.empty()) throw std::invalid_argument("mae_empirical_neighborhood: no checkpoints recorded");
  if (train.empty()) throw std::invalid_argument("mae_empirical_neighborhood: no instances");
  std::vector<double> at_truth(train.size());
  for (std::size_t n = 0; n < train.size(); ++n) at_truth[n] = problem.decision_quality(train[n].y, train[n].y);
  double total = 0.0;
  for (const auto& model : checkpoints) {
    auto preds = models::predict_all(model, train);
    for (std::size_t n = 0; n < train.size(); ++n) {
      const auto& l = loss_for(losses, train[n].id);
      double target = at_truth[n] - problem.decision_quality(preds[n], train[n].y);
      total += std::abs(loss::eval_loss(l.params, preds[n], train[n].y) - target);
    }
  }
  return total / static_cast<double>(checkpoints.size() * train.size());
}

std::vector<NeighborhoodRow> neighborhood_report(const NeighborhoodConfig& cfg) {
  auto data = domains::generate_dataset(cfg.domain);
  auto problem = domains::make_problem(data);
  const std::uint64_t seed = cfg.domain.seed;
  auto sc = resolve_sampling(cfg.sampling, cfg.domain.kind, seed);
  auto tables = sampling::build_sample_tables(data.train, *problem, sc, cfg.workers);
  auto fresh_cfg = sc;
  fresh_cfg.seed = seed + cfg.heldout_seed_offset;
  auto fresh = sampling::build_sample_tables(data.train, *problem, fresh_cfg, cfg.workers);
  const References refs = test_references(data, *problem);
  const double opt = refs.optimal, rnd = refs.random;

  std::vector<NeighborhoodRow> rows(cfg.families.size());
  parallel_for(cfg.families.size(), cfg.workers, [&](std::size_t i) {
    NeighborhoodRow& row = rows[i];
    row.family = cfg.families[i];
    loss::FitConfig fc = cfg.fit;
    fc.seed = fit_seed(seed);
    auto losses = loss::fit_all(tables, row.family, fc, 1);
    auto local = domains::make_problem(data);
    auto val_problem = domains::make_problem(data);
    models::TrainConfig tc = cfg.train;
    tc.seed = init_seed(seed, 0);
    tc.keep_checkpoints = true;
    auto result = models::train_with_lodl(models::init_model(models::default_model(data), tc.seed), data.train,
                                          losses, tc, models::dq_validator(data.val, *val_problem));
    row.mae_gaussian = mae_gaussian_neighborhood(losses, fresh);
    row.mae_empirical = mae_empirical_neighborhood(losses, data.train, result.checkpoints, *local);
    row.normalized_dq = normalize_dq(models::evaluate_dq(result.model, data.test, *local).per_instance, rnd, opt);
  });
  return rows;
}

namespace {

struct PipelineTimes {
  double sampling = 0.0;
  double fitting = 0.0;
  std::vector<loss::FittedLoss> losses;
};

PipelineTimes time_pipeline(const domains::Dataset& data, const BenchConfig& cfg, std::size_t workers) {
  PipelineTimes out;
  auto problem = domains::make_problem(data);
  auto sc = resolve_sampling(cfg.sampling, cfg.domain.kind, cfg.domain.seed);
  Stopwatch sw;
  auto tables = sampling::build_sample_tables(data.train, *problem, sc, workers);
  out.sampling = sw.seconds();
  sw.reset();
  loss::FitConfig fc = cfg.fit;
  fc.seed = fit_seed(cfg.domain.seed);
  out.losses = loss::fit_all(tables, cfg.family, fc, workers);
  out.fitting = sw.seconds();
  return out;
}

models::TrainConfig bench_train(const BenchConfig& cfg, std::size_t init) {
  models::TrainConfig tc = cfg.train;
  tc.seed = init_seed(cfg.domain.seed, init);
  tc.early_stopping = false;
  return tc;
}

}  // namespace

std::vector<TimingRecord> benchmark_parallel(const BenchConfig& cfg, std::span<const std::size_t> worker_counts) {
  auto data = domains::generate_dataset(cfg.domain);
  const auto spec = models::default_model(data);
  std::vector<TimingRecord> out;
  for (std::size_t p : worker_counts) {
    if (p == 0) throw std::invalid_argument("benchmark_parallel: worker count must be positive");
    TimingRecord rec;
    rec.workers = p;
    rec.steps = cfg.train.steps;
    rec.samples = cfg.sampling.samples;
    rec.instances = data.train.size();
    auto pipe = time_pipeline(data, cfg, p);
    rec.sampling_seconds = pipe.sampling;
    rec.fitting_seconds = pipe.fitting;
    auto tc = bench_train(cfg, 0);
    auto lodl = models::train_with_lodl(models::init_model(spec, tc.seed), data.train, pipe.losses, tc);
    rec.lodl_training_seconds = lodl.seconds;
    rec.pipeline_seconds = pipe.sampling + pipe.fitting + lodl.seconds;
    // DFL gets the same worker budget but has nothing to spread over it.
    auto problem = domains::make_problem(data);
    auto dfl = models::train_dfl(models::init_model(spec, tc.seed), data.train, *problem, tc);
    rec.dfl_seconds = dfl.seconds;

    const double n = static_cast<double>(rec.instances);
    const double steps = static_cast<double>(std::max<std::size_t>(1, rec.steps));
    rec.t_model = lodl.seconds / steps;
    rec.t_oracle = pipe.sampling / (n * static_cast<double>(rec.samples + 1));
    rec.t_surrogate = dfl.surrogate_seconds / (n * steps);
    rec.t_lodl = pipe.fitting / n;
    out.push_back(rec);
  }
  return out;
}

std::vector<AmortizationPoint> benchmark_amortization(const BenchConfig& cfg, std::span<const std::size_t> model_counts,
                                                      std::size_t workers) {
  if (model_counts.empty()) throw std::invalid_argument("benchmark_amortization: no model counts");
  const std::size_t max_m = *std::max_element(model_counts.begin(), model_counts.end());
  if (*std::min_element(model_counts.begin(), model_counts.end()) == 0) {
    throw std::invalid_argument("benchmark_amortization: model count must be at least 1");
  }
  auto data = domains::generate_dataset(cfg.domain);
  const auto spec = models::default_model(data);
  auto pipe = time_pipeline(data, cfg, workers);
  const double fixed = pipe.sampling + pipe.fitting;

  auto tc = bench_train(cfg, 0);
  const double two_stage = models::train_two_stage(models::init_model(spec, tc.seed), data.train, tc).seconds;
  auto problem = domains::make_problem(data);
  const double dfl = models::train_dfl(models::init_model(spec, tc.seed), data.train, *problem, tc).seconds;

  std::vector<double> cumulative(max_m + 1, 0.0);
  for (std::size_t i = 0; i < max_m; ++i) {
    auto ti = bench_train(cfg, i);
    cumulative[i + 1] =
        cumulative[i] + models::train_with_lodl(models::init_model(spec, ti.seed), data.train, pipe.losses, ti).seconds;
  }
  std::vector<AmortizationPoint> out;
  for (std::size_t m : model_counts) {
    out.push_back({m, (fixed + cumulative[m]) / static_cast<double>(m), two_stage, dfl});
  }
  return out;
}

std::vector<AblationRecord> ablation_suite(const AblationConfig& cfg) {
  cfg.fit.validate();
  cfg.train.validate();
  if (cfg.strategies.empty() || cfg.sample_counts.empty() || cfg.families.empty() || cfg.seeds.empty()) {
    throw std::invalid_argument("ablation_suite: empty grid axis");
  }
  const std::size_t per_seed = cfg.strategies.size() * cfg.sample_counts.size() * cfg.families.size();
  std::vector<AblationRecord> out(cfg.seeds.size() * per_seed);
  const std::size_t outer = std::min(cfg.workers, cfg.seeds.size());
  const std::size_t inner = std::max<std::size_t>(1, cfg.workers / outer);

  parallel_for(cfg.seeds.size(), outer, [&](std::size_t si) {
    const std::uint64_t seed = cfg.seeds[si];
    auto dc = cfg.domain;
    dc.seed = seed;
    auto data = domains::generate_dataset(dc);
    auto problem = domains::make_problem(data);
    auto val_problem = domains::make_problem(data);
    const References refs = test_references(data, *problem);
    const double opt = refs.optimal, rnd = refs.random;
    const auto spec = models::default_model(data);
    std::size_t idx = si * per_seed;
    for (auto strategy : cfg.strategies) {
      for (std::size_t k : cfg.sample_counts) {
        sampling::SamplingConfig sc;
        sc.strategy = strategy;
        sc.samples = k;
        sc.alpha = cfg.alpha;
        sc = resolve_sampling(sc, dc.kind, seed);
        std::vector<sampling::SampleTable> tables;
        std::string table_error;
        try {
          tables = sampling::build_sample_tables(data.train, *problem, sc, inner);
        } catch (const std::exception& e) {
          table_error = std::string("sample: ") + one_line(e.what());
        }
        for (Family f : cfg.families) {
          AblationRecord& rec = out[idx++];
          rec.strategy = strategy;
          rec.samples = k;
          rec.family = f;
          rec.seed = seed;
          if (!table_error.empty()) {
            rec.error = table_error;
            continue;
          }
          try {
            loss::FitConfig fc = cfg.fit;
            fc.seed = fit_seed(seed);
            auto losses = loss::fit_all(tables, f, fc, inner);
            models::TrainConfig tc = cfg.train;
            tc.seed = init_seed(seed, 0);
            auto result = models::train_with_lodl(models::init_model(spec, tc.seed), data.train, losses, tc,
                                                  models::dq_validator(data.val, *val_problem));
            rec.normalized_dq =
                normalize_dq(models::evaluate_dq(result.model, data.test, *problem).per_instance, rnd, opt);
          } catch (const std::exception& e) {
            rec.error = one_line(e.what());
          }
        }
      }
    }
  });
  return out;
}

std::string ablation_csv(std::span<const AblationRecord> records) {
  std::ostringstream out;
  out << "strategy,samples,family,seed,normalized_dq,status\n";
  for (const auto& r : records) {
    out << sampling::strategy_name(r.strategy) << ',' << r.samples << ',' << loss::family_name(r.family) << ','
        << r.seed << ',' << format_double(r.normalized_dq) << ',' << csv_field(r.error.empty() ? "ok" : r.error)
        << '\n';
  }
  return out.str();
}

std::string ablation_table(std::span<const AblationRecord> records) {
  std::vector<sampling::Strategy> strategies;
  std::vector<std::size_t> counts;
  std::vector<Family> families;
  for (const auto& r : records) {
    push_unique(strategies, r.strategy);
    push_unique(counts, r.samples);
    push_unique(families, r.family);
  }
  auto cell = [&](sampling::Strategy s, std::size_t k, Family f) {
    std::vector<double> v;
    for (const auto& r : records) {
      if (r.strategy == s && r.samples == k && r.family == f && r.error.empty()) v.push_back(r.normalized_dq);
    }
    return mean_std(v);
  };
  std::string out;
  for (std::size_t k : counts) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"family"});
    for (auto s : strategies) rows[0].push_back(std::string(sampling::strategy_name(s)) + "-perturbed");
    for (Family f : families) {
      std::vector<std::string> row = {std::string(loss::family_name(f))};
      for (auto s : strategies) row.push_back(cell(s, k, f));
      rows.push_back(std::move(row));
    }
    out += "Normalized DQ by sampling strategy, K = " + std::to_string(k) + "\n\n" + render(rows) + "\n";
  }
  for (auto s : strategies) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"family"});
    for (std::size_t k : counts) rows[0].push_back("K=" + std::to_string(k));
    for (Family f : families) {
      std::vector<std::string> row = {std::string(loss::family_name(f))};
      for (std::size_t k : counts) row.push_back(cell(s, k, f));
      rows.push_back(std::move(row));
    }
    out += "Normalized DQ by sample count, " + std::string(sampling::strategy_name(s)) + "-perturbed\n\n" +
           render(rows) + "\n";
  }
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two equal-length samples");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw std::invalid_argument("pearson: constant sample");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace lodl::harness
