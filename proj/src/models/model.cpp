#include "lodl/models/model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "lodl/common/io.hpp"
#include "lodl/common/rng.hpp"
#include "lodl/common/stopwatch.hpp"
#include "lodl/grad/ops.hpp"

namespace lodl::models {

using domains::InstanceRecord;
using grad::Tape;
using grad::Tensor;
using grad::Var;

std::string_view model_kind_name(ModelKind k) { return k == ModelKind::kLinear ? "linear" : "mlp"; }

ModelKind parse_model_kind(std::string_view name) {
  if (name == "linear") return ModelKind::kLinear;
  if (name == "mlp") return ModelKind::kMLP;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "' (expected linear or mlp)");
}

ModelSpec default_model(const domains::Dataset& data) {
  ModelSpec spec;
  spec.inputs = data.feature_dim;
  spec.outputs = data.outputs_per_item;
  switch (data.config.kind) {
    case domains::DomainKind::kLinear: spec.kind = ModelKind::kLinear; break;
    case domains::DomainKind::kWebAdv: spec.kind = ModelKind::kMLP; break;
    case domains::DomainKind::kPortfolio:
      spec.kind = ModelKind::kMLP;
      spec.tanh_output = true;
      break;
  }
  return spec;
}

std::vector<std::size_t> Model::widths() const {
  if (spec.kind == ModelKind::kLinear) return {spec.inputs, spec.outputs};
  return {spec.inputs, spec.hidden, spec.outputs};
}

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.inputs == 0 || spec.outputs == 0 || (spec.kind == ModelKind::kMLP && spec.hidden == 0)) {
    throw std::invalid_argument("model spec: every layer needs at least one unit");
  }
  Model m;
  m.spec = spec;
  SplitMix64 rng(derive_seed(seed, {0x6d6f64656cULL}));
  const auto w = m.widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> weights(w[l] * w[l + 1]);
    std::vector<double> biases(w[l + 1]);
    for (double& v : weights) v = u(rng);
    for (double& v : biases) v = u(rng);
    m.weights.push_back(std::move(weights));
    m.biases.push_back(std::move(biases));
  }
  return m;
}

Var forward(const ModelSpec& spec, std::span<const Var> weights, std::span<const Var> biases, Var x) {
  Var h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = grad::affine(h, weights[l], biases[l]);
    if (l + 1 < weights.size()) h = grad::relu(h);
  }
  return spec.tanh_output ? grad::tanh(h) : h;
}

namespace {

struct Params {
  std::vector<Var> w, b;
};

Params bind(Tape& tape, const Model& m, bool trainable) {
  Params p;
  const auto widths = m.widths();
  for (std::size_t l = 0; l < m.layers(); ++l) {
    Tensor w({widths[l], widths[l + 1]}, m.weights[l]);
    Tensor b({widths[l + 1]}, m.biases[l]);
    p.w.push_back(trainable ? tape.leaf(std::move(w)) : tape.constant(std::move(w)));
    p.b.push_back(trainable ? tape.leaf(std::move(b)) : tape.constant(std::move(b)));
  }
  return p;
}

// Item features of every instance stacked row-wise, and labels [n, dim_y].
struct Batch {
  Tensor x;
  Tensor y;
  std::size_t n = 0;
  std::size_t dim_y = 0;
};

Batch stack(std::span<const InstanceRecord> instances, const ModelSpec& spec) {
  if (instances.empty()) throw std::invalid_argument("training set is empty");
  const std::size_t feats = instances[0].features.size();
  if (feats % spec.inputs != 0) throw std::invalid_argument("features do not match the model's input width");
  const std::size_t items = feats / spec.inputs;
  Batch b;
  b.n = instances.size();
  b.dim_y = items * spec.outputs;
  std::vector<double> x, y;
  x.reserve(b.n * feats);
  y.reserve(b.n * b.dim_y);
  for (const auto& inst : instances) {
    if (inst.features.size() != feats || inst.y.size() != b.dim_y) {
      throw std::invalid_argument("instance " + std::to_string(inst.id) + " has a different shape from the first");
    }
    x.insert(x.end(), inst.features.begin(), inst.features.end());
    y.insert(y.end(), inst.y.begin(), inst.y.end());
  }
  b.x = Tensor({b.n * items, spec.inputs}, std::move(x));
  b.y = Tensor({b.n, b.dim_y}, std::move(y));
  return b;
}

// Returns the differentiable root and the reported objective value.
using Objective = std::function<std::pair<Var, double>(Tape&, Var yhat, const Batch&)>;

TrainResult train_loop(Model model, std::span<const InstanceRecord> train, const TrainConfig& cfg, Regime regime,
                       const Validator& validator, const Objective& objective) {
  cfg.validate();
  const Stopwatch clock;
  const double lr = cfg.rate_for(regime);
  const Batch batch = stack(train, model.spec);
  TrainResult out;
  Model best = model;
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t step = 0;; ++step) {
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      if (cfg.keep_checkpoints) out.checkpoints.push_back(model);
      // Selection starts at the first trained checkpoint, never the random init.
      if (validator && step > 0) {
        const double v = validator(model);
        out.eval_steps.push_back(step);
        out.val_dq.push_back(v);
        if (v > best_val) {
          best_val = v;
          best = model;
          out.best_step = step;
        }
      }
    }
    Tape tape(step < cfg.steps);
    const Params p = bind(tape, model, step < cfg.steps);
    const Var yhat = grad::reshape(forward(model.spec, p.w, p.b, tape.constant(batch.x)), {batch.n, batch.dim_y});
    const auto [root, value] = objective(tape, yhat, batch);
    if (!std::isfinite(value)) {
      throw std::runtime_error(std::string(regime_name(regime)) + " training diverged: non-finite loss at step " +
                               std::to_string(step));
    }
    out.loss_curve.push_back(value);
    if (step == cfg.steps) break;
    const auto g = tape.backward(root);
    for (std::size_t l = 0; l < model.layers(); ++l) {
      auto gw = g[p.w[l]].data();
      auto gb = g[p.b[l]].data();
      for (std::size_t i = 0; i < gw.size(); ++i) model.weights[l][i] -= lr * gw[i];
      for (std::size_t i = 0; i < gb.size(); ++i) model.biases[l][i] -= lr * gb[i];
    }
  }
  out.model = (cfg.early_stopping && validator) ? std::move(best) : std::move(model);
  out.seconds = clock.seconds();
  return out;
}

}  // namespace

std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::kTwoStage: return "two-stage";
    case Regime::kLODL: return "lodl";
    case Regime::kDFL: return "dfl";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("train config: steps must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("train config: eval_every must be >= 1");
  if (!std::isfinite(learning_rate)) throw std::invalid_argument("train config: learning_rate must be finite");
}

double TrainConfig::rate_for(Regime r) const {
  if (learning_rate >= 0.0) return learning_rate;
  return r == Regime::kDFL ? 0.005 : 0.01;
}

std::vector<double> predict(const Model& model, const InstanceRecord& instance) {
  return predict_all(model, std::span(&instance, 1))[0];
}

std::vector<std::vector<double>> predict_all(const Model& model, std::span<const InstanceRecord> instances) {
  if (instances.empty()) return {};
  for (const auto& inst : instances) {
    if (inst.features.empty() || inst.features.size() % model.spec.inputs != 0) {
      throw std::invalid_argument("instance " + std::to_string(inst.id) + ": " +
                                  std::to_string(inst.features.size()) + " features do not fit a model with " +
                                  std::to_string(model.spec.inputs) + " inputs");
    }
  }
  Tape tape(false);
  const Params p = bind(tape, model, false);
  std::vector<std::vector<double>> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    const std::size_t rows = inst.features.size() / model.spec.inputs;
    const Var x = tape.constant(Tensor({rows, model.spec.inputs}, inst.features));
    const auto v = forward(model.spec, p.w, p.b, x).value().data();
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

TrainResult train_two_stage(Model model, std::span<const InstanceRecord> train, const TrainConfig& cfg,
                            const Validator& validator) {
  return train_loop(std::move(model), train, cfg, Regime::kTwoStage, validator,
                    [](Tape& tape, Var yhat, const Batch& b) {
                      const Var sq = grad::sum(grad::square(grad::sub(yhat, tape.constant(b.y))));
                      const Var root = grad::scale(sq, 1.0 / static_cast<double>(b.n));
                      return std::pair{root, root.value().item()};
                    });
}

TrainResult train_with_lodl(Model model, std::span<const InstanceRecord> train,
                            std::span<const loss::FittedLoss> losses, const TrainConfig& cfg,
                            const Validator& validator) {
  std::unordered_map<std::size_t, const loss::LossParams*> by_id;
  for (const auto& f : losses) by_id[f.instance_id] = &f.params;
  std::vector<const loss::LossParams*> ordered;
  double curvature = 0.0;
  for (const auto& inst : train) {
    const auto it = by_id.find(inst.id);
    if (it == by_id.end()) throw std::invalid_argument("no fitted loss for training instance " + std::to_string(inst.id));
    ordered.push_back(it->second);
    curvature += loss::mean_curvature(*it->second);
  }
  if (!ordered.empty()) curvature /= static_cast<double>(ordered.size());
  if (!(curvature > 0.0)) curvature = 1.0;

  return train_loop(std::move(model), train, cfg, Regime::kLODL, validator,
                    [ordered, curvature](Tape& tape, Var yhat, const Batch& b) {
                      const auto yv = yhat.value().data();
                      const auto yt = b.y.data();
                      const double norm = 1.0 / (static_cast<double>(b.n) * curvature);
                      Tensor g({b.n, b.dim_y}, 0.0);
                      auto gd = g.data();
                      double total = 0.0;
                      for (std::size_t n = 0; n < b.n; ++n) {
                        const std::size_t off = n * b.dim_y;
                        total += loss::grad_loss(*ordered[n], yv.subspan(off, b.dim_y), yt.subspan(off, b.dim_y),
                                                 gd.subspan(off, b.dim_y));
                      }
                      for (double& v : gd) v *= norm;
                      // d(root)/d(yhat) = g, so backpropagating the root chains the
                      // loss gradient through the model.
                      const Var root = grad::sum(grad::mul(yhat, tape.constant(std::move(g))));
                      return std::pair{root, total * norm};
                    });
}

TrainResult train_dfl(Model model, std::span<const InstanceRecord> train, const domains::DecisionProblem& problem,
                      const TrainConfig& cfg, const Validator& validator) {
  double surrogate_seconds = 0.0;
  const double sign = problem.is_maximization() ? -1.0 : 1.0;
  auto result = train_loop(std::move(model), train, cfg, Regime::kDFL, validator,
                           [&](Tape&, Var yhat, const Batch& b) {
                             const Stopwatch sw;
                             const Var z = problem.solve_surrogate(yhat);
                             const Var obj = problem.objective_on_tape(z, b.y);
                             surrogate_seconds += sw.seconds();
                             const Var root = grad::scale(grad::sum(obj), sign / static_cast<double>(b.n));
                             return std::pair{root, root.value().item()};
                           });
  result.surrogate_seconds = surrogate_seconds;
  return result;
}

DqReport evaluate_dq(const Model& model, std::span<const InstanceRecord> instances,
                     const domains::DecisionProblem& problem) {
  DqReport r;
  const auto preds = predict_all(model, instances);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    r.per_instance.push_back(problem.decision_quality(preds[i], instances[i].y));
    r.mean += r.per_instance.back();
  }
  if (!instances.empty()) r.mean /= static_cast<double>(instances.size());
  return r;
}

DqReport optimal_dq(std::span<const InstanceRecord> instances, const domains::DecisionProblem& problem) {
  DqReport r;
  for (const auto& inst : instances) {
    r.per_instance.push_back(problem.decision_quality(inst.y, inst.y));
    r.mean += r.per_instance.back();
  }
  if (!instances.empty()) r.mean /= static_cast<double>(instances.size());
  return r;
}

Validator dq_validator(std::span<const InstanceRecord> val, const domains::DecisionProblem& problem) {
  return [val, &problem](const Model& m) { return evaluate_dq(m, val, problem).mean; };
}

void write_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& config) {
  nlohmann::json j;
  j["format"] = "lodl-model";
  j["version"] = kModelFormatVersion;
  j["spec"] = {{"kind", model_kind_name(model.spec.kind)},
               {"inputs", model.spec.inputs},
               {"outputs", model.spec.outputs},
               {"hidden", model.spec.hidden},
               {"tanh_output", model.spec.tanh_output}};
  j["weights"] = model.weights;
  j["biases"] = model.biases;
  j["config"] = config;
  write_file_atomic(path, j.dump(1) + "\n");
}

Model read_model(const std::filesystem::path& path, nlohmann::json* config) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model file " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "lodl-model" || j.value("version", -1) != kModelFormatVersion) {
    throw FormatError("model file " + path.string() + ": expected lodl-model version " +
                      std::to_string(kModelFormatVersion));
  }
  Model m;
  try {
    const auto& s = j.at("spec");
    m.spec.kind = parse_model_kind(s.at("kind").get<std::string>());
    m.spec.inputs = s.at("inputs").get<std::size_t>();
    m.spec.outputs = s.at("outputs").get<std::size_t>();
    m.spec.hidden = s.at("hidden").get<std::size_t>();
    m.spec.tanh_output = s.at("tanh_output").get<bool>();
    m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    m.biases = j.at("biases").get<std::vector<std::vector<double>>>();
  } catch (const std::exception& e) {
    throw FormatError("model file " + path.string() + ": " + e.what());
  }
  const auto w = m.widths();
  if (m.weights.size() + 1 != w.size() || m.biases.size() != m.weights.size()) {
    throw FormatError("model file " + path.string() + ": wrong layer count");
  }
  for (std::size_t l = 0; l < m.layers(); ++l) {
    if (m.weights[l].size() != w[l] * w[l + 1] || m.biases[l].size() != w[l + 1]) {
      throw FormatError("model file " + path.string() + ": layer " + std::to_string(l) + " has the wrong size");
    }
  }
  if (config) *config = j.value("config", nlohmann::json{});
  return m;
}

}  // namespace lodl::models
