#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lodl/domains/dataset.hpp"
#include "lodl/grad/tape.hpp"
#include "lodl/loss/loss.hpp"

namespace lodl::models {

enum class ModelKind { kLinear, kMLP };

std::string_view model_kind_name(ModelKind k);
ModelKind parse_model_kind(std::string_view name);  // linear, mlp

/// Maps one item's features to that item's outputs; an instance prediction is
/// the concatenation over its items.
struct ModelSpec {
  ModelKind kind = ModelKind::kLinear;
  std::size_t inputs = 1;
  std::size_t outputs = 1;
  std::size_t hidden = 500;  // MLP only
  bool tanh_output = false;

  bool operator==(const ModelSpec&) const = default;
};

/// Linear model for the linear domain; MLP elsewhere, with a tanh head for
/// portfolio returns.
ModelSpec default_model(const domains::Dataset& data);

struct Model {
  ModelSpec spec;
  std::vector<std::vector<double>> weights;  // [fan_in, fan_out] row-major per layer
  std::vector<std::vector<double>> biases;

  std::size_t layers() const { return weights.size(); }
  std::vector<std::size_t> widths() const;
  bool operator==(const Model&) const = default;
};

/// Every weight and bias uniform in +-1/sqrt(fan_in).
Model init_model(const ModelSpec& spec, std::uint64_t seed);

/// Forward pass over rows of item features [rows, inputs] -> [rows, outputs].
grad::Var forward(const ModelSpec& spec, std::span<const grad::Var> weights, std::span<const grad::Var> biases,
                  grad::Var x);

std::vector<double> predict(const Model& model, const domains::InstanceRecord& instance);
/// Row n holds the prediction for instances[n].
std::vector<std::vector<double>> predict_all(const Model& model, std::span<const domains::InstanceRecord> instances);

enum class Regime { kTwoStage, kLODL, kDFL };
std::string_view regime_name(Regime r);

struct TrainConfig {
  std::size_t steps = 500;
  double learning_rate = -1.0;  // negative picks the regime default
  std::uint64_t seed = 0;
  std::size_t eval_every = 25;
  bool early_stopping = true;
  bool keep_checkpoints = false;

  void validate() const;
  double rate_for(Regime r) const;  // 0.01 two-stage/LODL, 0.005 DFL
};

/// Mean validation decision quality of a candidate model.
using Validator = std::function<double(const Model&)>;

struct TrainResult {
  Model model;                     // best by validation DQ when early stopping, else last
  std::vector<double> loss_curve;  // training objective before each step, plus after the last
  // Validation runs at every eval_every-th step and at the last step, not at step 0.
  std::vector<std::size_t> eval_steps;
  std::vector<double> val_dq;
  std::size_t best_step = 0;
  std::vector<Model> checkpoints;  // at each evaluation step, if requested
  double seconds = 0.0;
  double surrogate_seconds = 0.0;  // DFL only: forward and backward through the relaxation
};

/// Mean over instances of |yhat - y|^2, full-batch gradient descent.
TrainResult train_two_stage(Model model, std::span<const domains::InstanceRecord> train, const TrainConfig& cfg,
                            const Validator& validator = {});

/// Mean over instances of the instance's fitted loss, divided by the average
/// curvature of the fitted losses so one learning rate fits every family.
/// Never touches an optimization oracle.
TrainResult train_with_lodl(Model model, std::span<const domains::InstanceRecord> train,
                            std::span<const loss::FittedLoss> losses, const TrainConfig& cfg,
                            const Validator& validator = {});

/// Negated mean objective of the relaxed decision, differentiated through the
/// problem's surrogate.
TrainResult train_dfl(Model model, std::span<const domains::InstanceRecord> train,
                      const domains::DecisionProblem& problem, const TrainConfig& cfg,
                      const Validator& validator = {});

struct DqReport {
  std::vector<double> per_instance;
  double mean = 0.0;
};

/// Decision quality of the exact decision under each instance's true labels.
DqReport evaluate_dq(const Model& model, std::span<const domains::InstanceRecord> instances,
                     const domains::DecisionProblem& problem);
DqReport optimal_dq(std::span<const domains::InstanceRecord> instances, const domains::DecisionProblem& problem);

/// Validation by mean DQ with the given problem; the problem's counters see
/// these oracle calls, so pass a separate problem object from the one whose
/// training calls are being counted.
Validator dq_validator(std::span<const domains::InstanceRecord> val, const domains::DecisionProblem& problem);

inline constexpr int kModelFormatVersion = 1;
void write_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& config = {});
Model read_model(const std::filesystem::path& path, nlohmann::json* config = nullptr);

}  // namespace lodl::models
