#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lodl/sampling/sampling.hpp"

namespace lodl::loss {

enum class Family { kWeightedMSE, kDirectedWeightedMSE, kQuadratic, kDirectedQuadratic, kNN };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);  // wmse, dwmse, quadratic, dquadratic, nn
inline constexpr Family kAllFamilies[] = {Family::kWeightedMSE, Family::kDirectedWeightedMSE, Family::kQuadratic,
                                          Family::kDirectedQuadratic, Family::kNN};
inline bool is_convex(Family f) { return f != Family::kNN; }

/// sum_l w_l d_l^2 with d = yhat - y.
struct WeightedMSE {
  std::vector<double> w;
};

/// Per-coordinate weight chosen by sign: w_plus when d_l >= 0, else w_minus.
struct DirectedWeightedMSE {
  std::vector<double> w_plus;
  std::vector<double> w_minus;
};

/// d' (L L' + w_min I) d with L of shape [dim, rank], row-major.
struct Quadratic {
  std::size_t dim = 0;
  std::size_t rank = 0;
  std::vector<double> l;
  double w_min = 0.0;
};

/// Convex asymmetric quadratic: sum_r max(p_r.d, 0)^2 + sum_r max(-m_r.d, 0)^2
/// + w_min |d|^2, with p_r, m_r the columns of two [dim, rank] factors. Over-
/// and under-prediction along a learned direction get separate curvature;
/// when both factors are equal it is exactly Quadratic.
struct DirectedQuadratic {
  std::size_t dim = 0;
  std::size_t rank = 0;
  std::vector<double> l_plus;
  std::vector<double> l_minus;
  double w_min = 0.0;
};

/// Fully connected ReLU network on the scaled residual, shifted so the value
/// at the truth is 0: tau * (net(d / s) - net(0)).
struct NNLoss {
  std::vector<std::size_t> widths;           // dim, hidden..., 1
  std::vector<std::vector<double>> weights;  // layer l: [widths[l], widths[l+1]] row-major
  std::vector<std::vector<double>> biases;   // layer l: [widths[l+1]]
  double input_scale = 1.0;                  // s
  double output_scale = 1.0;                 // tau
};

using LossParams = std::variant<WeightedMSE, DirectedWeightedMSE, Quadratic, DirectedQuadratic, NNLoss>;

Family family_of(const LossParams& p);
std::size_t dim_of(const LossParams& p);

double eval_loss(const LossParams& p, std::span<const double> yhat, std::span<const double> y);
/// Writes dLoss/dyhat into grad and returns the loss value.
double grad_loss(const LossParams& p, std::span<const double> yhat, std::span<const double> y,
                 std::span<double> grad);

/// Batched value and gradient for rows of residuals d = yhat - y, [n, dim].
/// Much faster than per-row calls for the network family.
void eval_grad_batch(const LossParams& p, std::span<const double> residuals, std::size_t rows,
                     std::span<double> values, std::span<double> grads);

/// Average curvature tr(H)/dim of a convex family; tau / s^2 for the network.
double mean_curvature(const LossParams& p);

enum class Optimizer { kAdam, kGradientDescent };

struct FitConfig {
  std::size_t steps = 100;
  double learning_rate = 0.05;  // in normalized coordinates; <= 0 with GD picks 1/L where available
  Optimizer optimizer = Optimizer::kAdam;
  double w_min = 1e-2;
  std::size_t rank = 2;
  std::size_t hidden = 100;
  std::size_t hidden_layers = 3;
  std::size_t batch = 128;  // network family only
  double nn_learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool record_curve = false;

  void validate() const;
};

struct FittedLoss {
  std::size_t instance_id = 0;
  LossParams params;
  double objective = 0.0;  // final fitting mean squared error in label units
  std::size_t steps = 0;
  std::vector<double> curve;  // objective before each step and after the last, if requested
};

/// Mean over the table rows and the truth point of (h(yhat_k) - target_k)^2.
double fit_objective(const LossParams& p, const sampling::SampleTable& table);

FittedLoss fit_gd(const sampling::SampleTable& table, Family family, const FitConfig& cfg);

/// Nonnegative least squares for the two weighted families by Gauss-Seidel
/// coordinate descent with a floor of w_min. One sweep is exact when each
/// sample perturbs a single coordinate.
FittedLoss fit_weighted_mse_closed_form(const sampling::SampleTable& table, Family family, const FitConfig& cfg);

std::vector<FittedLoss> fit_all(std::span<const sampling::SampleTable> tables, Family family, const FitConfig& cfg,
                                std::size_t workers);

/// Smallest eigenvalue of each curvature block (L L' + w_min I), by shifted
/// power iteration.
std::vector<double> psd_certificate(const LossParams& p);
double min_eigenvalue_power(std::span<const double> sym, std::size_t n);

inline constexpr int kLossFormatVersion = 1;
void write_losses(const std::filesystem::path& path, std::span<const FittedLoss> losses);
std::vector<FittedLoss> read_losses(const std::filesystem::path& path);

}  // namespace lodl::loss
