#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lodl/domains/dataset.hpp"
#include "lodl/domains/problem.hpp"

namespace lodl::sampling {

enum class Strategy { kAllPerturbed, kOnePerturbed, kTwoPerturbed };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);  // "all", "one", "two"

struct SamplingConfig {
  Strategy strategy = Strategy::kAllPerturbed;
  std::size_t samples = 5000;  // K
  double alpha = 1.0;          // noise scale in label units
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SamplingConfig&) const = default;
};

/// Default noise scale per domain.
double default_alpha(domains::DomainKind kind);

/// Perturbed labels around one instance's y, plus the decision quality each
/// induces. Maximization domains store decision qualities; the fitting target
/// for row k is dq_at_truth - dq[k] >= 0.
struct SampleTable {
  std::size_t instance_id = 0;
  std::size_t dim = 0;
  double dq_at_truth = 0.0;
  std::vector<double> y;     // [dim]
  std::vector<double> yhat;  // [K, dim]
  std::vector<double> dq;    // [K]
  SamplingConfig config;

  std::size_t size() const { return dq.size(); }
  std::span<const double> row(std::size_t k) const { return std::span<const double>(yhat).subspan(k * dim, dim); }
  double target(std::size_t k) const { return dq_at_truth - dq[k]; }

  bool operator==(const SampleTable&) const = default;
};

/// K perturbed copies of y, flattened [K, dim]. Row k depends only on
/// (seed, instance_id, k).
std::vector<double> sample_labels(std::span<const double> y, const SamplingConfig& cfg, std::size_t instance_id);

/// Evaluates the exact oracle at y and at each sample (K + 1 calls), spread
/// over `workers` threads. Output does not depend on the worker count.
SampleTable build_sample_table(const domains::InstanceRecord& instance, const domains::DecisionProblem& problem,
                               const SamplingConfig& cfg, std::size_t workers = 1);

std::vector<SampleTable> build_sample_tables(std::span<const domains::InstanceRecord> instances,
                                             const domains::DecisionProblem& problem, const SamplingConfig& cfg,
                                             std::size_t workers = 1);

inline constexpr std::uint32_t kTableFormatVersion = 1;

/// Binary layout (little-endian host order): magic "LODLSMPL", u32 version,
/// u64 table count, then per table: u32 strategy, u64 K, f64 alpha, u64 seed,
/// u64 instance id, u64 K, u64 dim, f64 dq_at_truth, f64[dim] y, then K rows
/// of (f64[dim] yhat, f64 dq).
void write_tables(const std::filesystem::path& path, std::span<const SampleTable> tables);
std::vector<SampleTable> read_tables(const std::filesystem::path& path);

void write_table(const std::filesystem::path& path, const SampleTable& table);
SampleTable read_table(const std::filesystem::path& path);

/// Cache file name for the training tables of a dataset under a config.
std::string table_cache_name(const domains::DomainConfig& data_cfg, const SamplingConfig& cfg);

struct CachedTables {
  std::vector<SampleTable> tables;
  bool cache_hit = false;
};

/// Reads `path` if it exists and matches the instances, else builds and writes it.
CachedTables load_or_build_tables(const std::filesystem::path& path,
                                  std::span<const domains::InstanceRecord> instances,
                                  const domains::DecisionProblem& problem, const SamplingConfig& cfg,
                                  std::size_t workers);

}  // namespace lodl::sampling
