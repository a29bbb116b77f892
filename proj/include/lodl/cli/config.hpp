#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lodl/domains/dataset.hpp"
#include "lodl/harness/harness.hpp"
#include "lodl/loss/loss.hpp"
#include "lodl/models/model.hpp"
#include "lodl/sampling/sampling.hpp"

namespace lodl::cli {

/// Bad config file, flag or value. The message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueType { kString, kUInt, kFloat, kBool, kUIntList, kStringList };

struct KeySpec {
  std::string name;           // "section.key"
  ValueType type;
  std::string default_value;  // empty: required, or per-domain default (see help)
  std::string help;
};

/// Every accepted key, grouped by section in display order.
const std::vector<KeySpec>& schema();
const KeySpec* find_key(std::string_view name);

/// section.key -> raw value, as written in the file or on the command line.
using Settings = std::map<std::string, std::string, std::less<>>;

/// Type-checks and stores one value; throws ConfigError for unknown keys or
/// values of the wrong type.
void set_value(Settings& settings, std::string_view key, std::string_view value);

/// INI-style: "[section]" headers, "key = value" lines, '#' or ';' comments.
Settings parse_config(std::string_view text, std::string_view origin = "config");
Settings read_config(const std::filesystem::path& path);

/// Typed, fully validated view of the merged settings.
struct RunConfig {
  domains::DomainConfig domain;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::filesystem::path output;
  std::vector<std::uint64_t> seeds;
  std::size_t inits = 3;
  std::size_t init = 0;
  std::vector<harness::Method> methods;
  harness::Method method;
  sampling::SamplingConfig sampling;  // alpha and seed resolved
  loss::Family family = loss::Family::kDirectedQuadratic;
  loss::FitConfig fit;                // seed resolved
  models::TrainConfig train;          // seed resolved for `init`
  std::size_t random_draws = 100;
  std::vector<std::size_t> bench_workers;
  std::vector<std::size_t> bench_models;
  loss::Family bench_family = loss::Family::kDirectedQuadratic;
  std::vector<sampling::Strategy> ablate_strategies;
  std::vector<std::size_t> ablate_samples;
  std::vector<loss::Family> ablate_families;
};

/// Throws ConfigError naming the key on a missing required value or an
/// out-of-range one.
RunConfig resolve(const Settings& settings);

/// One "section.key = value" line per schema key, defaults filled in.
std::string render_resolved(const Settings& settings, const RunConfig& cfg);
/// Key reference for --help: name, default and description.
std::string schema_help();

}  // namespace lodl::cli
