#include "lodl/domains/dataset.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lodl/common/io.hpp"
#include "lodl/domains/portfolio.hpp"
#include "lodl/domains/topk.hpp"
#include "lodl/domains/webadv.hpp"

namespace lodl::domains {

using json = nlohmann::json;

std::string_view domain_name(DomainKind kind) {
  switch (kind) {
    case DomainKind::kLinear: return "linear";
    case DomainKind::kWebAdv: return "webadv";
    case DomainKind::kPortfolio: return "portfolio";
  }
  return "unknown";
}

DomainKind parse_domain(std::string_view name) {
  if (name == "linear") return DomainKind::kLinear;
  if (name == "webadv") return DomainKind::kWebAdv;
  if (name == "portfolio") return DomainKind::kPortfolio;
  throw std::invalid_argument("unknown domain '" + std::string(name) + "' (valid: linear, webadv, portfolio)");
}

DomainConfig DomainConfig::defaults(DomainKind kind) {
  DomainConfig cfg;
  cfg.kind = kind;
  switch (kind) {
    case DomainKind::kLinear:
      cfg.items = 50;
      cfg.budget = 1;
      cfg.n_train = 200;
      cfg.n_val = 200;
      cfg.n_test = 400;
      break;
    case DomainKind::kWebAdv:
      cfg.items = 5;
      cfg.users = 10;
      cfg.budget = 2;
      cfg.n_train = 80;
      cfg.n_val = 20;
      cfg.n_test = 500;
      break;
    case DomainKind::kPortfolio:
      cfg.items = 50;
      cfg.budget = 1;
      cfg.risk_aversion = 0.1;
      cfg.n_train = 200;
      cfg.n_val = 200;
      cfg.n_test = 400;
      break;
  }
  return cfg;
}

void DomainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("domain config: " + what); };
  if (items < 2) fail("items must be >= 2");
  if (kind != DomainKind::kPortfolio && (budget < 1 || budget >= items)) fail("budget must be in [1, items)");
  if (kind == DomainKind::kWebAdv && users < 1) fail("users must be >= 1");
  if (kind == DomainKind::kWebAdv && items > 20) fail("items must be <= 20 for webadv (websites are enumerated exactly)");
  if (!(risk_aversion >= 0.0)) fail("risk_aversion must be >= 0");
  if (n_train == 0 || n_val == 0 || n_test == 0) fail("split sizes must be positive");
  if (!(feature_high > feature_low)) fail("feature_high must exceed feature_low");
  if (!(ctr_scale > 0.0 && ctr_scale <= 1.0)) fail("ctr_scale must be in (0, 1]");
  if (!(affinity_power > 0.0) || !std::isfinite(affinity_power)) fail("affinity_power must be > 0");
  if (window < 1) fail("window must be >= 1");
  if (factors < 1) fail("factors must be >= 1");
}

namespace {

void assign_splits(Dataset& data, std::vector<InstanceRecord> all) {
  const auto& c = data.config;
  for (std::size_t i = 0; i < all.size(); ++i) all[i].id = i;
  auto first = all.begin();
  data.train.assign(first, first + static_cast<std::ptrdiff_t>(c.n_train));
  data.val.assign(first + static_cast<std::ptrdiff_t>(c.n_train),
                  first + static_cast<std::ptrdiff_t>(c.n_train + c.n_val));
  data.test.assign(first + static_cast<std::ptrdiff_t>(c.n_train + c.n_val), all.end());
}

Dataset gen_linear(const DomainConfig& cfg) {
  Dataset data;
  data.config = cfg;
  data.items = cfg.items;
  data.feature_dim = 1;
  data.outputs_per_item = 1;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(cfg.feature_low, cfg.feature_high);
  std::vector<InstanceRecord> all(cfg.n_train + cfg.n_val + cfg.n_test);
  for (auto& rec : all) {
    rec.features.resize(cfg.items);
    rec.y.resize(cfg.items);
    for (std::size_t i = 0; i < cfg.items; ++i) {
      rec.features[i] = unif(rng);
      rec.y[i] = linear_utility(rec.features[i]);
    }
  }
  assign_splits(data, std::move(all));
  return data;
}

// CTRs are website quality x user propensity x a per-pair affinity, scaled
// into [0, ctr_scale]. Features are A y_m per website row.
Dataset gen_webadv(const DomainConfig& cfg) {
  Dataset data;
  data.config = cfg;
  data.items = cfg.items;
  data.feature_dim = cfg.users;
  data.outputs_per_item = cfg.users;
  const std::size_t m = cfg.items;
  const std::size_t n = cfg.users;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> half(0.5, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> a(n * n);
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& v : a) v = normal(rng) * inv_sqrt_n;

  std::vector<InstanceRecord> all(cfg.n_train + cfg.n_val + cfg.n_test);
  std::vector<double> u(m), v(n);
  for (auto& rec : all) {
    for (double& x : u) x = half(rng);
    for (double& x : v) x = half(rng);
    rec.y.resize(m * n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) rec.y[i * n + j] = cfg.ctr_scale * u[i] * v[j] * std::pow(unit(rng), cfg.affinity_power);
    }
    rec.features.assign(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += a[r * n + c] * rec.y[i * n + c];
        rec.features[i * n + r] = acc;
      }
    }
  }
  assign_splits(data, std::move(all));
  return data;
}

// Returns follow a factor model: each stock loads mainly on one of `factors`
// latent market factors, plus idiosyncratic noise and a slowly varying
// per-stock drift (AR(1)) that past returns can partly reveal.
Dataset gen_portfolio(const DomainConfig& cfg) {
  constexpr double kFactorStd = 0.1;
  constexpr double kIdioStd = 0.02;
  constexpr double kDriftStd = 0.03;
  constexpr double kDriftPersistence = 0.9;
  constexpr std::size_t kBurnIn = 50;

  Dataset data;
  data.config = cfg;
  data.items = cfg.items;
  data.feature_dim = cfg.window + 1;
  data.outputs_per_item = 1;
  const std::size_t s = cfg.items;
  const std::size_t f = cfg.factors;
  const std::size_t instances = cfg.n_train + cfg.n_val + cfg.n_test;
  const std::size_t horizon = kBurnIn + cfg.window + instances;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd loading = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(f));
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t k = 0; k < f; ++k) {
      loading(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          (k == i % f) ? 1.0 + 0.05 * normal(rng) : 0.05 * normal(rng);
    }
  }
  Eigen::MatrixXd returns(static_cast<Eigen::Index>(horizon), static_cast<Eigen::Index>(s));
  Eigen::MatrixXd volume(static_cast<Eigen::Index>(horizon), static_cast<Eigen::Index>(s));
  Eigen::VectorXd drift(static_cast<Eigen::Index>(s));
  for (Eigen::Index i = 0; i < drift.size(); ++i) drift[i] = kDriftStd * normal(rng);
  Eigen::VectorXd factor(static_cast<Eigen::Index>(f));
  const double innovation = kDriftStd * std::sqrt(1.0 - kDriftPersistence * kDriftPersistence);
  for (std::size_t t = 0; t < horizon; ++t) {
    for (Eigen::Index k = 0; k < factor.size(); ++k) factor[k] = kFactorStd * normal(rng);
    const Eigen::VectorXd common = loading * factor;
    for (Eigen::Index i = 0; i < drift.size(); ++i) {
      const auto ti = static_cast<Eigen::Index>(t);
      returns(ti, i) = drift[i] + common[i] + kIdioStd * normal(rng);
      // Trading activity rises with the size of the current drift.
      volume(ti, i) = std::abs(drift[i]) / kDriftStd + 0.5 * std::abs(normal(rng));
      drift[i] = kDriftPersistence * drift[i] + innovation * normal(rng);
    }
  }

  const Eigen::Index first = static_cast<Eigen::Index>(kBurnIn);
  const Eigen::MatrixXd used = returns.bottomRows(returns.rows() - first);
  const double scale = std::sqrt((used.array() - used.mean()).square().mean());

  std::vector<InstanceRecord> all(instances);
  for (std::size_t n = 0; n < instances; ++n) {
    const auto t = static_cast<Eigen::Index>(kBurnIn + cfg.window + n);
    auto& rec = all[n];
    rec.features.resize(s * data.feature_dim);
    rec.y.resize(s);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(s); ++i) {
      double* row = rec.features.data() + static_cast<std::size_t>(i) * data.feature_dim;
      for (std::size_t w = 0; w < cfg.window; ++w) {
        row[w] = returns(t - static_cast<Eigen::Index>(cfg.window - w), i) / scale;
      }
      row[cfg.window] = volume(t - 1, i);
      rec.y[static_cast<std::size_t>(i)] = returns(t, i);
    }
  }

  // Correlation of the return series, floored to PSD.
  Eigen::MatrixXd centered = used.rowwise() - used.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(used.rows() - 1);
  Eigen::VectorXd inv_std = cov.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd corr = inv_std.asDiagonal() * cov * inv_std.asDiagonal();
  corr = 0.5 * (corr + corr.transpose());
  corr.diagonal().setOnes();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  corr.diagonal().array() += std::max(0.0, -lmin + 1e-8);
  data.q.assign(corr.data(), corr.data() + corr.size());

  assign_splits(data, std::move(all));
  return data;
}

}  // namespace

Dataset generate_dataset(const DomainConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case DomainKind::kLinear: return gen_linear(cfg);
    case DomainKind::kWebAdv: return gen_webadv(cfg);
    case DomainKind::kPortfolio: return gen_portfolio(cfg);
  }
  throw std::invalid_argument("unknown domain");
}

std::unique_ptr<DecisionProblem> make_problem(const Dataset& data) {
  const auto& c = data.config;
  switch (c.kind) {
    case DomainKind::kLinear: return std::make_unique<TopKProblem>(c.items, c.budget);
    case DomainKind::kWebAdv: return std::make_unique<WebAdvProblem>(c.items, c.users, c.budget);
    case DomainKind::kPortfolio: {
      const auto n = static_cast<Eigen::Index>(data.items);
      Eigen::MatrixXd q = Eigen::Map<const Eigen::MatrixXd>(data.q.data(), n, n);
      return std::make_unique<PortfolioProblem>(std::move(q), c.risk_aversion);
    }
  }
  throw std::invalid_argument("unknown domain");
}

namespace {

json config_json(const DomainConfig& c) {
  return json{{"domain", domain_name(c.kind)},
              {"items", c.items},
              {"users", c.users},
              {"budget", c.budget},
              {"risk_aversion", format_double(c.risk_aversion)},
              {"n_train", c.n_train},
              {"n_val", c.n_val},
              {"n_test", c.n_test},
              {"seed", c.seed},
              {"feature_low", format_double(c.feature_low)},
              {"feature_high", format_double(c.feature_high)},
              {"ctr_scale", format_double(c.ctr_scale)},
              {"affinity_power", format_double(c.affinity_power)},
              {"window", c.window},
              {"factors", c.factors}};
}

DomainConfig config_from_json(const json& j) {
  DomainConfig c;
  c.kind = parse_domain(j.at("domain").get<std::string>());
  c.items = j.at("items").get<std::size_t>();
  c.users = j.at("users").get<std::size_t>();
  c.budget = j.at("budget").get<std::size_t>();
  c.risk_aversion = parse_double(j.at("risk_aversion").get<std::string>());
  c.n_train = j.at("n_train").get<std::size_t>();
  c.n_val = j.at("n_val").get<std::size_t>();
  c.n_test = j.at("n_test").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.feature_low = parse_double(j.at("feature_low").get<std::string>());
  c.feature_high = parse_double(j.at("feature_high").get<std::string>());
  c.ctr_scale = parse_double(j.at("ctr_scale").get<std::string>());
  c.affinity_power = parse_double(j.at("affinity_power").get<std::string>());
  c.window = j.at("window").get<std::size_t>();
  c.factors = j.at("factors").get<std::size_t>();
  return c;
}

}  // namespace

std::string config_key(const DomainConfig& cfg) { return hex64(fnv1a(config_json(cfg).dump())); }

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::string rows;
  auto emit = [&](std::string_view split, const std::vector<InstanceRecord>& recs) {
    for (const auto& r : recs) {
      rows += split;
      rows += '\t' + std::to_string(r.id) + '\t' + join_doubles(r.features) + '\t' + join_doubles(r.y) + '\n';
    }
  };
  emit("train", data.train);
  emit("val", data.val);
  emit("test", data.test);
  json meta{{"format", "lodl-dataset"},
            {"version", 1},
            {"config", config_json(data.config)},
            {"items", data.items},
            {"feature_dim", data.feature_dim},
            {"outputs_per_item", data.outputs_per_item},
            {"q", join_doubles(data.q)}};
  write_file_atomic(dir / "data.tsv", rows);
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "meta.json")) {
    throw FormatError("missing dataset at " + dir.string() + " (run gen-data first)");
  }
  json meta;
  try {
    meta = json::parse(read_file(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw FormatError("bad dataset metadata: " + std::string(e.what()));
  }
  if (meta.value("format", "") != "lodl-dataset" || meta.value("version", 0) != 1) {
    throw FormatError("dataset version mismatch in " + dir.string());
  }
  Dataset data;
  data.config = config_from_json(meta.at("config"));
  data.items = meta.at("items").get<std::size_t>();
  data.feature_dim = meta.at("feature_dim").get<std::size_t>();
  data.outputs_per_item = meta.at("outputs_per_item").get<std::size_t>();
  data.q = split_doubles(meta.at("q").get<std::string>());

  std::istringstream in(read_file(dir / "data.tsv"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 4) throw FormatError("dataset row has " + std::to_string(fields.size()) + " fields");
    InstanceRecord rec;
    rec.id = parse_u64(fields[1]);
    rec.features = split_doubles(fields[2]);
    rec.y = split_doubles(fields[3]);
    if (rec.features.size() != data.items * data.feature_dim || rec.y.size() != data.dim_y()) {
      throw FormatError("dataset row " + std::to_string(rec.id) + " has wrong width");
    }
    if (fields[0] == "train") data.train.push_back(std::move(rec));
    else if (fields[0] == "val") data.val.push_back(std::move(rec));
    else if (fields[0] == "test") data.test.push_back(std::move(rec));
    else throw FormatError("unknown split '" + std::string(fields[0]) + "'");
  }
  if (data.train.size() != data.config.n_train || data.val.size() != data.config.n_val ||
      data.test.size() != data.config.n_test) {
    throw FormatError("dataset truncated: split sizes do not match metadata");
  }
  return data;
}

}  // namespace lodl::domains
