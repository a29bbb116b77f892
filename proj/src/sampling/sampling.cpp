#include "lodl/sampling/sampling.hpp"

#include <cstring>
#include <random>
#include <stdexcept>

#include "lodl/common/io.hpp"
#include "lodl/common/parallel.hpp"
#include "lodl/common/rng.hpp"

namespace lodl::sampling {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kAllPerturbed: return "all";
    case Strategy::kOnePerturbed: return "one";
    case Strategy::kTwoPerturbed: return "two";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "all") return Strategy::kAllPerturbed;
  if (name == "one") return Strategy::kOnePerturbed;
  if (name == "two") return Strategy::kTwoPerturbed;
  throw std::invalid_argument("unknown sampling strategy '" + std::string(name) + "' (valid: all, one, two)");
}

void SamplingConfig::validate() const {
  if (samples < 1) throw std::invalid_argument("sampling config: samples must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("sampling config: alpha must be > 0");
}

double default_alpha(domains::DomainKind kind) {
  switch (kind) {
    case domains::DomainKind::kLinear: return 1.0;
    case domains::DomainKind::kWebAdv: return 0.05;
    case domains::DomainKind::kPortfolio: return 0.05;
  }
  return 1.0;
}

namespace {

void perturb_row(std::span<const double> y, const SamplingConfig& cfg, std::size_t instance_id, std::size_t k,
                 std::span<double> out) {
  SplitMix64 rng(derive_seed(cfg.seed, {instance_id, k}));
  std::normal_distribution<double> noise(0.0, cfg.alpha);
  std::copy(y.begin(), y.end(), out.begin());
  const std::size_t d = y.size();
  switch (cfg.strategy) {
    case Strategy::kAllPerturbed:
      for (std::size_t i = 0; i < d; ++i) out[i] += noise(rng);
      break;
    case Strategy::kOnePerturbed: {
      std::uniform_int_distribution<std::size_t> pick(0, d - 1);
      out[pick(rng)] += noise(rng);
      break;
    }
    case Strategy::kTwoPerturbed: {
      if (d < 2) throw std::invalid_argument("two-perturbed sampling needs dim >= 2");
      std::uniform_int_distribution<std::size_t> first(0, d - 1);
      std::uniform_int_distribution<std::size_t> second(0, d - 2);
      const std::size_t i = first(rng);
      std::size_t j = second(rng);
      if (j >= i) ++j;
      out[i] += noise(rng);
      out[j] += noise(rng);
      break;
    }
  }
}

}  // namespace

std::vector<double> sample_labels(std::span<const double> y, const SamplingConfig& cfg, std::size_t instance_id) {
  cfg.validate();
  std::vector<double> out(cfg.samples * y.size());
  for (std::size_t k = 0; k < cfg.samples; ++k) {
    perturb_row(y, cfg, instance_id, k, std::span<double>(out).subspan(k * y.size(), y.size()));
  }
  return out;
}

SampleTable build_sample_table(const domains::InstanceRecord& instance, const domains::DecisionProblem& problem,
                               const SamplingConfig& cfg, std::size_t workers) {
  cfg.validate();
  SampleTable table;
  table.instance_id = instance.id;
  table.dim = instance.y.size();
  table.y = instance.y;
  table.config = cfg;
  const domains::Decision best = problem.solve_exact(instance.y);
  table.dq_at_truth = problem.objective(best, instance.y);
  table.yhat = sample_labels(instance.y, cfg, instance.id);
  table.dq.assign(cfg.samples, 0.0);
  parallel_for(cfg.samples, workers, [&](std::size_t k) {
    try {
      table.dq[k] = problem.objective(problem.solve_exact_from(table.row(k), best), instance.y);
    } catch (const std::exception& e) {
      throw std::runtime_error("instance " + std::to_string(instance.id) + ", sample " + std::to_string(k) + ": " +
                               e.what());
    }
  });
  return table;
}

std::vector<SampleTable> build_sample_tables(std::span<const domains::InstanceRecord> instances,
                                             const domains::DecisionProblem& problem, const SamplingConfig& cfg,
                                             std::size_t workers) {
  std::vector<SampleTable> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(build_sample_table(inst, problem, cfg, workers));
  return out;
}

namespace {

constexpr char kMagic[8] = {'L', 'O', 'D', 'L', 'S', 'M', 'P', 'L'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put(std::span<const double> v) { buf_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes()); }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get(std::span<double> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  bool at_end() const { return pos_ == data_.size(); }
  const char* peek(std::size_t n) {
    need(n);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("sample table file is truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_tables(const std::filesystem::path& path, std::span<const SampleTable> tables) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kTableFormatVersion);
  w.put<std::uint64_t>(tables.size());
  for (const auto& t : tables) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.config.strategy));
    w.put<std::uint64_t>(t.config.samples);
    w.put<double>(t.config.alpha);
    w.put<std::uint64_t>(t.config.seed);
    w.put<std::uint64_t>(t.instance_id);
    w.put<std::uint64_t>(t.size());
    w.put<std::uint64_t>(t.dim);
    w.put<double>(t.dq_at_truth);
    w.put(std::span<const double>(t.y));
    for (std::size_t k = 0; k < t.size(); ++k) {
      w.put(t.row(k));
      w.put<double>(t.dq[k]);
    }
  }
  write_file_atomic(path, w.str());
}

std::vector<SampleTable> read_tables(const std::filesystem::path& path) {
  Reader r(read_file(path));
  if (std::memcmp(r.peek(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + " is not a sample table file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kTableFormatVersion) {
    throw FormatError("sample table version " + std::to_string(version) + " in " + path.string() + ", expected " +
                      std::to_string(kTableFormatVersion));
  }
  const auto count = r.get<std::uint64_t>();
  std::vector<SampleTable> tables(count);
  for (auto& t : tables) {
    const auto strategy = r.get<std::uint32_t>();
    if (strategy > 2) throw FormatError("bad sampling strategy tag");
    t.config.strategy = static_cast<Strategy>(strategy);
    t.config.samples = r.get<std::uint64_t>();
    t.config.alpha = r.get<double>();
    t.config.seed = r.get<std::uint64_t>();
    t.instance_id = r.get<std::uint64_t>();
    const auto k = r.get<std::uint64_t>();
    t.dim = r.get<std::uint64_t>();
    if (k > (1ULL << 32) || t.dim > (1ULL << 24)) throw FormatError("implausible sample table header");
    t.dq_at_truth = r.get<double>();
    t.y.resize(t.dim);
    r.get(t.y);
    t.yhat.resize(k * t.dim);
    t.dq.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      r.get(std::span<double>(t.yhat).subspan(i * t.dim, t.dim));
      t.dq[i] = r.get<double>();
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
  return tables;
}

void write_table(const std::filesystem::path& path, const SampleTable& table) {
  write_tables(path, std::span<const SampleTable>(&table, 1));
}

SampleTable read_table(const std::filesystem::path& path) {
  auto tables = read_tables(path);
  if (tables.size() != 1) throw FormatError(path.string() + " holds " + std::to_string(tables.size()) + " tables");
  return std::move(tables.front());
}

std::string table_cache_name(const domains::DomainConfig& data_cfg, const SamplingConfig& cfg) {
  const std::string key = domains::config_key(data_cfg) + "|" + std::string(strategy_name(cfg.strategy)) + "|" +
                          std::to_string(cfg.samples) + "|" + format_double(cfg.alpha) + "|" +
                          std::to_string(cfg.seed);
  return "tables-" + hex64(fnv1a(key)) + ".bin";
}

CachedTables load_or_build_tables(const std::filesystem::path& path,
                                  std::span<const domains::InstanceRecord> instances,
                                  const domains::DecisionProblem& problem, const SamplingConfig& cfg,
                                  std::size_t workers) {
  CachedTables out;
  if (std::filesystem::exists(path)) {
    out.tables = read_tables(path);
    bool matches = out.tables.size() == instances.size();
    for (std::size_t i = 0; matches && i < instances.size(); ++i) {
      matches = out.tables[i].instance_id == instances[i].id && out.tables[i].config == cfg &&
                out.tables[i].y == instances[i].y;
    }
    if (matches) {
      out.cache_hit = true;
      return out;
    }
  }
  out.tables = build_sample_tables(instances, problem, cfg, workers);
  write_tables(path, out.tables);
  return out;
}

}  // namespace lodl::sampling
