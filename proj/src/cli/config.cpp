#include "lodl/cli/config.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lodl/common/io.hpp"

namespace lodl::cli {

namespace {

using V = ValueType;

std::vector<KeySpec> build_schema() {
  return {
      {"run.seed", V::kUInt, "0", "top-level seed; every other stream derives from it"},
      {"run.workers", V::kUInt, "1", "cap on worker threads"},
      {"run.output", V::kString, "runs", "output root (data/, samples/, losses/, models/, reports/)"},
      {"run.seeds", V::kUIntList, "0,1,2,3,4", "data seeds for reproduce-table1 and ablate"},
      {"run.inits", V::kUInt, "3", "model initializations per seed for reproduce-table1"},
      {"run.init", V::kUInt, "0", "initialization index for train and eval"},
      {"run.methods", V::kStringList, "random,optimal,2-stage,dfl,wmse,dwmse,quadratic,dquadratic,nn",
       "methods for reproduce-table1"},
      {"run.method", V::kString, "dquadratic", "method for train and eval: 2-stage, dfl or a loss family"},
      {"run.random_draws", V::kUInt, "100", "random predictions per test instance for the random reference"},
      {"data.domain", V::kString, "", "linear, webadv or portfolio (required)"},
      {"data.items", V::kUInt, "", "resources, websites or stocks"},
      {"data.users", V::kUInt, "", "webadv users"},
      {"data.budget", V::kUInt, "", "items selected (linear, webadv)"},
      {"data.risk_aversion", V::kFloat, "", "portfolio risk weight"},
      {"data.n_train", V::kUInt, "", "training instances"},
      {"data.n_val", V::kUInt, "", "validation instances"},
      {"data.n_test", V::kUInt, "", "test instances"},
      {"data.feature_low", V::kFloat, "", "linear feature range, low end"},
      {"data.feature_high", V::kFloat, "", "linear feature range, high end"},
      {"data.ctr_scale", V::kFloat, "", "webadv CTR scale"},
      {"data.affinity_power", V::kFloat, "", "webadv per-pair affinity exponent"},
      {"data.window", V::kUInt, "", "portfolio return history length"},
      {"data.factors", V::kUInt, "", "portfolio latent factors"},
      {"sampling.strategy", V::kString, "all", "one, two or all (coordinates perturbed per sample)"},
      {"sampling.samples", V::kUInt, "5000", "samples per instance (K)"},
      {"sampling.alpha", V::kFloat, "", "noise scale; per-domain default"},
      {"fit.family", V::kString, "dquadratic", "loss family for fit: wmse, dwmse, quadratic, dquadratic, nn"},
      {"fit.steps", V::kUInt, "100", "fitting steps"},
      {"fit.lr", V::kFloat, "0.05", "fitting learning rate (normalized units)"},
      {"fit.optimizer", V::kString, "adam", "adam or gd"},
      {"fit.w_min", V::kFloat, "0.01", "floor on weights and curvature"},
      {"fit.rank", V::kUInt, "2", "factor rank of the quadratic families"},
      {"fit.hidden", V::kUInt, "100", "network family hidden width"},
      {"fit.hidden_layers", V::kUInt, "3", "network family hidden layers"},
      {"fit.batch", V::kUInt, "128", "network family minibatch"},
      {"fit.nn_lr", V::kFloat, "0.001", "network family learning rate"},
      {"train.steps", V::kUInt, "500", "gradient steps (T)"},
      {"train.lr", V::kFloat, "", "learning rate; 0.01 two-stage and LODL, 0.005 DFL"},
      {"train.eval_every", V::kUInt, "25", "validation cadence in steps"},
      {"train.early_stopping", V::kBool, "true", "keep the best model by validation DQ"},
      {"bench.workers", V::kUIntList, "1,2,4,8", "worker counts for bench-parallel"},
      {"bench.models", V::kUIntList, "1,2,5,10", "model counts for bench-amortize"},
      {"bench.family", V::kString, "dquadratic", "loss family timed by the benchmarks"},
      {"ablate.strategies", V::kStringList, "one,two,all", "sampling strategies for ablate"},
      {"ablate.samples", V::kUIntList, "50,500,5000", "sample counts for ablate"},
      {"ablate.families", V::kStringList, "wmse,dwmse,quadratic,dquadratic,nn", "loss families for ablate"},
  };
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_bool(std::string_view v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return out = true, true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return out = false, true;
  return false;
}

void check_type(const KeySpec& spec, std::string_view value) {
  auto fail = [&](const std::string& what) {
    throw ConfigError("key '" + spec.name + "': expected " + what + ", got '" + std::string(value) + "'");
  };
  try {
    switch (spec.type) {
      case V::kString:
        if (value.empty()) fail("a value");
        break;
      case V::kUInt: parse_u64(value); break;
      case V::kFloat:
        if (!std::isfinite(parse_double(value))) fail("a finite number");
        break;
      case V::kBool: {
        bool b;
        if (!parse_bool(value, b)) fail("true or false");
        break;
      }
      case V::kUIntList:
        if (value.empty()) fail("a comma-separated list of unsigned integers");
        for (auto item : split(value, ',')) parse_u64(trim(item));
        break;
      case V::kStringList:
        if (value.empty()) fail("a comma-separated list");
        for (auto item : split(value, ',')) {
          if (trim(item).empty()) fail("a comma-separated list without empty items");
        }
        break;
    }
  } catch (const FormatError&) {
    switch (spec.type) {
      case V::kUInt: fail("an unsigned integer"); break;
      case V::kFloat: fail("a number"); break;
      default: fail("a comma-separated list of unsigned integers"); break;
    }
  }
}

const std::string* lookup(const Settings& s, std::string_view key) {
  auto it = s.find(key);
  return it == s.end() ? nullptr : &it->second;
}

// Value as set, else the schema default (empty when there is none).
std::string raw(const Settings& s, std::string_view key) {
  if (const auto* v = lookup(s, key)) return *v;
  return find_key(key)->default_value;
}

std::uint64_t get_u64(const Settings& s, std::string_view key) { return parse_u64(raw(s, key)); }
double get_double(const Settings& s, std::string_view key) { return parse_double(raw(s, key)); }

std::vector<std::string> get_list(const Settings& s, std::string_view key) {
  const std::string value = raw(s, key);
  std::vector<std::string> out;
  for (auto item : split(value, ',')) out.push_back(trim(item));
  return out;
}

template <class T, class F>
T keyed(std::string_view key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("key '" + std::string(key) + "': " + e.what());
  }
}

std::string valid_domains() {
  return "linear, webadv, portfolio";
}

}  // namespace

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = build_schema();
  return keys;
}

const KeySpec* find_key(std::string_view name) {
  for (const auto& k : schema()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void set_value(Settings& settings, std::string_view key, std::string_view value) {
  const KeySpec* spec = find_key(key);
  if (!spec) throw ConfigError("unknown key '" + std::string(key) + "'");
  const std::string v = trim(value);
  check_type(*spec, v);
  settings.insert_or_assign(std::string(key), v);
}

Settings parse_config(std::string_view text, std::string_view origin) {
  Settings out;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    const auto comment = line.find_first_of("#;");
    std::string body = trim(std::string_view(line).substr(0, comment));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(where + ": malformed section header '" + body + "'");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + body + "'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (section.empty()) throw ConfigError(where + ": key '" + key + "' is outside a [section]");
    try {
      set_value(out, section + "." + key, std::string_view(body).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return out;
}

Settings read_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(read_file(path), path.string());
}

RunConfig resolve(const Settings& s) {
  RunConfig cfg;
  const std::string domain = raw(s, "data.domain");
  if (domain.empty()) throw ConfigError("missing required key 'data.domain' (valid domains: " + valid_domains() + ")");
  domains::DomainKind kind;
  try {
    kind = domains::parse_domain(domain);
  } catch (const std::exception&) {
    throw ConfigError("key 'data.domain': unknown domain '" + domain + "' (valid domains: " + valid_domains() + ")");
  }

  cfg.seed = get_u64(s, "run.seed");
  cfg.workers = get_u64(s, "run.workers");
  if (cfg.workers == 0) throw ConfigError("key 'run.workers': must be at least 1");
  cfg.output = raw(s, "run.output");
  for (const auto& v : get_list(s, "run.seeds")) cfg.seeds.push_back(parse_u64(v));
  cfg.inits = get_u64(s, "run.inits");
  if (cfg.inits == 0) throw ConfigError("key 'run.inits': must be at least 1");
  cfg.init = get_u64(s, "run.init");
  for (const auto& v : get_list(s, "run.methods")) {
    cfg.methods.push_back(keyed<harness::Method>("run.methods", [&] { return harness::parse_method(v); }));
  }
  cfg.method = keyed<harness::Method>("run.method", [&] { return harness::parse_method(raw(s, "run.method")); });
  cfg.random_draws = get_u64(s, "run.random_draws");
  if (cfg.random_draws == 0) throw ConfigError("key 'run.random_draws': must be at least 1");

  cfg.domain = domains::DomainConfig::defaults(kind);
  cfg.domain.seed = cfg.seed;
  auto u = [&](std::string_view key, std::size_t& field) {
    if (lookup(s, key)) field = get_u64(s, key);
  };
  auto f = [&](std::string_view key, double& field) {
    if (lookup(s, key)) field = get_double(s, key);
  };
  u("data.items", cfg.domain.items);
  u("data.users", cfg.domain.users);
  u("data.budget", cfg.domain.budget);
  f("data.risk_aversion", cfg.domain.risk_aversion);
  u("data.n_train", cfg.domain.n_train);
  u("data.n_val", cfg.domain.n_val);
  u("data.n_test", cfg.domain.n_test);
  f("data.feature_low", cfg.domain.feature_low);
  f("data.feature_high", cfg.domain.feature_high);
  f("data.ctr_scale", cfg.domain.ctr_scale);
  f("data.affinity_power", cfg.domain.affinity_power);
  u("data.window", cfg.domain.window);
  u("data.factors", cfg.domain.factors);
  keyed<int>("data", [&] { return cfg.domain.validate(), 0; });

  cfg.sampling.strategy =
      keyed<sampling::Strategy>("sampling.strategy", [&] { return sampling::parse_strategy(raw(s, "sampling.strategy")); });
  cfg.sampling.samples = get_u64(s, "sampling.samples");
  cfg.sampling.alpha = lookup(s, "sampling.alpha") ? get_double(s, "sampling.alpha") : -1.0;
  cfg.sampling = harness::resolve_sampling(cfg.sampling, kind, cfg.seed);
  keyed<int>("sampling", [&] { return cfg.sampling.validate(), 0; });

  cfg.family = keyed<loss::Family>("fit.family", [&] { return loss::parse_family(raw(s, "fit.family")); });
  cfg.fit.steps = get_u64(s, "fit.steps");
  cfg.fit.learning_rate = get_double(s, "fit.lr");
  const std::string opt = raw(s, "fit.optimizer");
  if (opt == "adam") cfg.fit.optimizer = loss::Optimizer::kAdam;
  else if (opt == "gd") cfg.fit.optimizer = loss::Optimizer::kGradientDescent;
  else throw ConfigError("key 'fit.optimizer': expected adam or gd, got '" + opt + "'");
  cfg.fit.w_min = get_double(s, "fit.w_min");
  cfg.fit.rank = get_u64(s, "fit.rank");
  cfg.fit.hidden = get_u64(s, "fit.hidden");
  cfg.fit.hidden_layers = get_u64(s, "fit.hidden_layers");
  cfg.fit.batch = get_u64(s, "fit.batch");
  cfg.fit.nn_learning_rate = get_double(s, "fit.nn_lr");
  cfg.fit.seed = harness::fit_seed(cfg.seed);
  keyed<int>("fit", [&] { return cfg.fit.validate(), 0; });

  cfg.train.steps = get_u64(s, "train.steps");
  cfg.train.learning_rate = lookup(s, "train.lr") ? get_double(s, "train.lr") : -1.0;
  cfg.train.eval_every = get_u64(s, "train.eval_every");
  parse_bool(raw(s, "train.early_stopping"), cfg.train.early_stopping);
  cfg.train.seed = harness::init_seed(cfg.seed, cfg.init);
  keyed<int>("train", [&] { return cfg.train.validate(), 0; });

  for (const auto& v : get_list(s, "bench.workers")) {
    cfg.bench_workers.push_back(parse_u64(v));
    if (cfg.bench_workers.back() == 0) throw ConfigError("key 'bench.workers': worker counts must be at least 1");
  }
  for (const auto& v : get_list(s, "bench.models")) {
    cfg.bench_models.push_back(parse_u64(v));
    if (cfg.bench_models.back() == 0) throw ConfigError("key 'bench.models': model counts must be at least 1");
  }
  cfg.bench_family = keyed<loss::Family>("bench.family", [&] { return loss::parse_family(raw(s, "bench.family")); });
  for (const auto& v : get_list(s, "ablate.strategies")) {
    cfg.ablate_strategies.push_back(
        keyed<sampling::Strategy>("ablate.strategies", [&] { return sampling::parse_strategy(v); }));
  }
  for (const auto& v : get_list(s, "ablate.samples")) cfg.ablate_samples.push_back(parse_u64(v));
  for (const auto& v : get_list(s, "ablate.families")) {
    cfg.ablate_families.push_back(keyed<loss::Family>("ablate.families", [&] { return loss::parse_family(v); }));
  }
  return cfg;
}

std::string render_resolved(const Settings& s, const RunConfig& cfg) {
  const auto& d = cfg.domain;
  const std::map<std::string, std::string, std::less<>> domain_values = {
      {"data.domain", std::string(domains::domain_name(d.kind))},
      {"data.items", std::to_string(d.items)},
      {"data.users", std::to_string(d.users)},
      {"data.budget", std::to_string(d.budget)},
      {"data.risk_aversion", format_double(d.risk_aversion)},
      {"data.n_train", std::to_string(d.n_train)},
      {"data.n_val", std::to_string(d.n_val)},
      {"data.n_test", std::to_string(d.n_test)},
      {"data.feature_low", format_double(d.feature_low)},
      {"data.feature_high", format_double(d.feature_high)},
      {"data.ctr_scale", format_double(d.ctr_scale)},
      {"data.affinity_power", format_double(d.affinity_power)},
      {"data.window", std::to_string(d.window)},
      {"data.factors", std::to_string(d.factors)},
      {"sampling.alpha", format_double(cfg.sampling.alpha)},
  };
  std::string out;
  std::string section;
  for (const auto& k : schema()) {
    const std::string sec = k.name.substr(0, k.name.find('.'));
    if (sec != section) {
      out += "[" + sec + "]\n";
      section = sec;
    }
    std::string value;
    if (auto it = domain_values.find(k.name); it != domain_values.end()) value = it->second;
    else if (k.name == "train.lr" && !lookup(s, k.name)) value = "auto";
    else value = raw(s, k.name);
    out += k.name.substr(sec.size() + 1) + " = " + value + "\n";
  }
  return out;
}

std::string schema_help() {
  std::string out = "Config keys (file sections, or --set section.key=value):\n";
  std::size_t width = 0;
  for (const auto& k : schema()) width = std::max(width, k.name.size());
  for (const auto& k : schema()) {
    std::string def = k.default_value;
    if (def.empty()) def = k.name == "data.domain" ? "required" : "per domain";
    if (k.name == "train.lr") def = "per regime";
    out += "  " + k.name + std::string(width - k.name.size() + 2, ' ') + "[" + def + "]  " + k.help + "\n";
  }
  return out;
}

}  // namespace lodl::cli
