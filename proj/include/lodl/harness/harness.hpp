#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lodl/domains/dataset.hpp"
#include "lodl/loss/loss.hpp"
#include "lodl/models/model.hpp"
#include "lodl/sampling/sampling.hpp"

namespace lodl::harness {

/// (mean(raw) - random_ref) / (optimal_ref - random_ref). Throws
/// std::invalid_argument unless optimal_ref > random_ref.
double normalize_dq(std::span<const double> raw, double random_ref, double optimal_ref);

/// Mean test DQ of `draws` uniform random predictions per instance: [0, 1]
/// per entry for selection domains, [-1, 1] for portfolio.
double random_reference(std::span<const domains::InstanceRecord> instances, const domains::DecisionProblem& problem,
                        domains::DomainKind kind, std::uint64_t seed, std::size_t draws = 100);

/// Stream seeds derived from a run seed, shared by the grid runner and the
/// single-stage commands so their caches line up.
std::uint64_t fit_seed(std::uint64_t seed);
std::uint64_t init_seed(std::uint64_t seed, std::size_t init);
std::uint64_t reference_seed(std::uint64_t seed);

/// Fills in the domain's default alpha when alpha <= 0 and sets the seed.
sampling::SamplingConfig resolve_sampling(sampling::SamplingConfig s, domains::DomainKind kind, std::uint64_t seed);

/// <root>/samples/<domain>-seed<S>-<hash>.bin and <root>/losses/<domain>-seed<S>-<family>-<hash>.txt; the hashes
/// cover every setting that changes the file.
std::filesystem::path table_path(const std::filesystem::path& root, const domains::DomainConfig& dc,
                                 const sampling::SamplingConfig& sc);
std::filesystem::path loss_path(const std::filesystem::path& root, const domains::DomainConfig& dc,
                                const sampling::SamplingConfig& sc, loss::Family family, const loss::FitConfig& fc);

/// Mean random and optimal test DQ for one dataset.
struct References {
  double random = 0.0;
  double optimal = 0.0;
};
References test_references(const domains::Dataset& data, const domains::DecisionProblem& problem,
                           std::size_t draws = 100);

struct Method {
  enum class Kind { kOptimal, kRandom, kTwoStage, kLODL, kDFL };
  Kind kind = Kind::kTwoStage;
  loss::Family family = loss::Family::kWeightedMSE;  // LODL only

  bool operator==(const Method&) const = default;
};

/// optimal, random, 2-stage, dfl, or a loss family name (wmse, dwmse, ...).
std::string method_name(const Method& m);
Method parse_method(std::string_view name);  // throws std::invalid_argument listing valid names
/// The Table-1 rows in order: random, optimal, 2-stage, dfl, then every family.
std::vector<Method> all_methods();

struct GridConfig {
  std::vector<domains::DomainConfig> domains;  // seed fields are overwritten per cell
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t inits = 3;
  sampling::SamplingConfig sampling;  // alpha <= 0 picks the domain default; seed follows the cell
  loss::FitConfig fit;
  models::TrainConfig train;
  std::size_t random_draws = 100;
  std::size_t workers = 1;
  std::filesystem::path cache_dir;  // samples/ and losses/ caches; empty keeps everything in memory

  void validate() const;
};

struct StageTimes {
  double sampling = 0.0;
  double fitting = 0.0;
  double training = 0.0;
  double evaluation = 0.0;
};

struct RunRecord {
  std::string domain;
  std::string method;
  std::uint64_t seed = 0;
  std::size_t init = 0;
  double normalized_dq = 0.0;
  double raw_dq = 0.0;
  double random_ref = 0.0;
  double optimal_ref = 0.0;
  std::size_t best_step = 0;
  // Exact-oracle calls made by sample generation for this record; zero when
  // the tables came from a cache or an earlier method in the same cell.
  std::uint64_t sampling_oracle_calls = 0;
  std::uint64_t train_oracle_calls = 0;  // excludes validation
  std::uint64_t surrogate_calls = 0;
  std::uint64_t eval_oracle_calls = 0;
  bool tables_cached = false;
  StageTimes seconds;
  std::string error;  // "stage: message" when a stage failed

  bool ok() const { return error.empty(); }
};

/// Generates data, samples, fits, trains and evaluates every domain x seed x
/// init x method cell. Tables and fitted losses are built once per domain and
/// seed and shared by every method and init. A failing stage marks the
/// affected records and the grid carries on.
std::vector<RunRecord> run_experiment(const GridConfig& cfg);

/// Fixed columns, one row per record, no wall times; identical inputs give
/// identical bytes.
std::string records_csv(std::span<const RunRecord> records);
/// Methods down, domains across, "mean ± std" of normalized DQ.
std::string summary_table(std::span<const RunRecord> records);
nlohmann::json timing_json(std::span<const RunRecord> records);

struct NeighborhoodRow {
  loss::Family family = loss::Family::kWeightedMSE;
  double mae_gaussian = 0.0;
  double mae_empirical = 0.0;
  double normalized_dq = 0.0;
};

/// Mean over instances of the mean |loss(yhat_k) - target_k| over a table's
/// rows. Tables and losses are matched by instance id.
double mae_gaussian_neighborhood(std::span<const loss::FittedLoss> losses,
                                 std::span<const sampling::SampleTable> fresh);

/// Same error measured at the predictions each checkpointed model makes on
/// the training instances, with targets from the exact oracle. Throws
/// std::invalid_argument when there are no checkpoints.
double mae_empirical_neighborhood(std::span<const loss::FittedLoss> losses,
                                  std::span<const domains::InstanceRecord> train,
                                  std::span<const models::Model> checkpoints,
                                  const domains::DecisionProblem& problem);

struct NeighborhoodConfig {
  domains::DomainConfig domain;
  std::vector<loss::Family> families = {std::begin(loss::kAllFamilies), std::end(loss::kAllFamilies)};
  sampling::SamplingConfig sampling;
  loss::FitConfig fit;
  models::TrainConfig train;
  std::uint64_t heldout_seed_offset = 1000003;  // fresh tables use seed + offset
  std::size_t workers = 1;
};

std::vector<NeighborhoodRow> neighborhood_report(const NeighborhoodConfig& cfg);

/// Per-unit costs: T_M one training step, T_O one exact solve, T'_O one
/// surrogate solve, T_LODL fitting one instance's loss.
struct TimingRecord {
  std::size_t workers = 1;
  std::size_t steps = 0;
  std::size_t samples = 0;
  std::size_t instances = 0;
  double sampling_seconds = 0.0;
  double fitting_seconds = 0.0;
  double lodl_training_seconds = 0.0;
  double dfl_seconds = 0.0;
  double pipeline_seconds = 0.0;  // sampling + fitting + LODL training
  double t_model = 0.0;
  double t_oracle = 0.0;
  double t_surrogate = 0.0;
  double t_lodl = 0.0;
};

struct BenchConfig {
  domains::DomainConfig domain;
  loss::Family family = loss::Family::kDirectedQuadratic;
  sampling::SamplingConfig sampling;
  loss::FitConfig fit;
  models::TrainConfig train;
};

/// Runs the LODL pipeline and a DFL training once per worker count.
std::vector<TimingRecord> benchmark_parallel(const BenchConfig& cfg, std::span<const std::size_t> worker_counts);

struct AmortizationPoint {
  std::size_t models = 1;
  double lodl_per_model = 0.0;  // (sampling + fitting + m trainings) / m
  double two_stage_per_model = 0.0;
  double dfl_per_model = 0.0;
};

/// Trains max(model_counts) LODL models from different inits on one set of
/// tables and losses, timing each; DFL and two-stage costs are per model and
/// do not depend on m.
std::vector<AmortizationPoint> benchmark_amortization(const BenchConfig& cfg, std::span<const std::size_t> model_counts,
                                                      std::size_t workers = 1);

struct AblationConfig {
  domains::DomainConfig domain;
  std::vector<sampling::Strategy> strategies = {sampling::Strategy::kOnePerturbed, sampling::Strategy::kTwoPerturbed,
                                                sampling::Strategy::kAllPerturbed};
  std::vector<std::size_t> sample_counts = {50, 500, 5000};
  std::vector<loss::Family> families = {std::begin(loss::kAllFamilies), std::end(loss::kAllFamilies)};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  double alpha = -1.0;  // <= 0 picks the domain default
  loss::FitConfig fit;
  models::TrainConfig train;
  std::size_t workers = 1;
};

struct AblationRecord {
  sampling::Strategy strategy = sampling::Strategy::kAllPerturbed;
  std::size_t samples = 0;
  loss::Family family = loss::Family::kWeightedMSE;
  std::uint64_t seed = 0;
  double normalized_dq = 0.0;
  std::string error;
};

std::vector<AblationRecord> ablation_suite(const AblationConfig& cfg);
std::string ablation_csv(std::span<const AblationRecord> records);
/// One block per sample count (strategies across) and one per strategy at
/// the largest count (families down), "mean ± std".
std::string ablation_table(std::span<const AblationRecord> records);

double mean(std::span<const double> v);
double stddev(std::span<const double> v);  // sample (n - 1)
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace lodl::harness
