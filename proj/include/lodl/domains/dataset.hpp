#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "lodl/domains/problem.hpp"

namespace lodl::domains {

enum class DomainKind { kLinear, kWebAdv, kPortfolio };

std::string_view domain_name(DomainKind kind);
DomainKind parse_domain(std::string_view name);  // throws std::invalid_argument listing valid names

struct DomainConfig {
  DomainKind kind = DomainKind::kLinear;
  std::size_t items = 50;  // resources, websites or stocks
  std::size_t users = 10;  // webadv only
  std::size_t budget = 1;
  double risk_aversion = 0.1;
  std::size_t n_train = 200;
  std::size_t n_val = 200;
  std::size_t n_test = 400;
  std::uint64_t seed = 0;

  // Linear: feature range for x.
  double feature_low = -1.0;
  double feature_high = 1.0;
  // Webadv: CTR scale, and the power applied to the uniform per-pair affinity
  // (larger makes CTR matrices sparser).
  double ctr_scale = 0.2;
  double affinity_power = 4.0;
  // Portfolio: return window length and latent factor count.
  std::size_t window = 20;
  std::size_t factors = 5;

  static DomainConfig defaults(DomainKind kind);
  void validate() const;  // throws std::invalid_argument naming the field
};

/// One (features, labels) pair. Features are [items, feature_dim] row-major.
struct InstanceRecord {
  std::size_t id = 0;
  std::vector<double> features;
  std::vector<double> y;

  bool operator==(const InstanceRecord&) const = default;
};

struct Dataset {
  DomainConfig config;
  std::size_t items = 0;
  std::size_t feature_dim = 0;
  std::size_t outputs_per_item = 0;
  std::vector<InstanceRecord> train, val, test;
  std::vector<double> q;  // portfolio correlation, items x items

  std::size_t dim_y() const { return items * outputs_per_item; }
};

/// The cubic utility used by the linear domain.
inline double linear_utility(double x) { return 10.0 * x * x * x - 6.5 * x; }

Dataset generate_dataset(const DomainConfig& cfg);
std::unique_ptr<DecisionProblem> make_problem(const Dataset& data);

/// data.tsv (split, id, features, y) plus meta.json (config, seed, shapes, Q).
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

/// Stable fingerprint of a config for cache keys.
std::string config_key(const DomainConfig& cfg);

}  // namespace lodl::domains
