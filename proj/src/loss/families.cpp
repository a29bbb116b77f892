#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lodl/grad/ops.hpp"
#include "lodl/loss/loss.hpp"
#include "src/loss/internal.hpp"

namespace lodl::loss {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::kWeightedMSE: return "wmse";
    case Family::kDirectedWeightedMSE: return "dwmse";
    case Family::kQuadratic: return "quadratic";
    case Family::kDirectedQuadratic: return "dquadratic";
    case Family::kNN: return "nn";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (auto f : kAllFamilies) {
    if (family_name(f) == name) return f;
  }
  throw std::invalid_argument("unknown loss family '" + std::string(name) +
                              "' (valid: wmse, dwmse, quadratic, dquadratic, nn)");
}

Family family_of(const LossParams& p) { return static_cast<Family>(p.index()); }

std::size_t dim_of(const LossParams& p) {
  struct {
    std::size_t operator()(const WeightedMSE& x) const { return x.w.size(); }
    std::size_t operator()(const DirectedWeightedMSE& x) const { return x.w_plus.size(); }
    std::size_t operator()(const Quadratic& x) const { return x.dim; }
    std::size_t operator()(const DirectedQuadratic& x) const { return x.dim; }
    std::size_t operator()(const NNLoss& x) const { return x.widths.front(); }
  } visitor;
  return std::visit(visitor, p);
}

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

grad::Var nn_forward(grad::Var input, std::span<const grad::Var> weights,
                     std::span<const grad::Var> biases) {
  grad::Var h = input;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = grad::affine(h, weights[l], biases[l]);
    if (l + 1 < weights.size()) h = grad::relu(h);
  }
  return h;
}

}  // namespace detail

namespace {

void check_dims(const LossParams& p, std::size_t a, std::size_t b) {
  const std::size_t d = dim_of(p);
  if (a != d || b != d) {
    throw std::invalid_argument("loss dimension mismatch: params " + std::to_string(d) + ", inputs " +
                                std::to_string(a) + " and " + std::to_string(b));
  }
}

// Value and gradient of one convex family at residual d.
double convex_value_grad(const LossParams& p, std::span<const double> d, std::span<double> g) {
  const std::size_t n = d.size();
  const bool want = !g.empty();
  if (const auto* x = std::get_if<WeightedMSE>(&p)) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v += x->w[i] * d[i] * d[i];
      if (want) g[i] = 2.0 * x->w[i] * d[i];
    }
    return v;
  }
  if (const auto* x = std::get_if<DirectedWeightedMSE>(&p)) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = d[i] >= 0.0 ? x->w_plus[i] : x->w_minus[i];
      v += w * d[i] * d[i];
      if (want) g[i] = 2.0 * w * d[i];
    }
    return v;
  }
  Eigen::Map<const Eigen::VectorXd> dv(d.data(), static_cast<Eigen::Index>(n));
  if (const auto* x = std::get_if<Quadratic>(&p)) {
    Eigen::Map<const detail::RowMatrix> l(x->l.data(), static_cast<Eigen::Index>(x->dim),
                                          static_cast<Eigen::Index>(x->rank));
    const Eigen::VectorXd proj = l.transpose() * dv;
    if (want) {
      Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(n)) = 2.0 * (l * proj) + 2.0 * x->w_min * dv;
    }
    return proj.squaredNorm() + x->w_min * dv.squaredNorm();
  }
  if (const auto* x = std::get_if<DirectedQuadratic>(&p)) {
    Eigen::Map<const detail::RowMatrix> lp(x->l_plus.data(), static_cast<Eigen::Index>(x->dim),
                                           static_cast<Eigen::Index>(x->rank));
    Eigen::Map<const detail::RowMatrix> lm(x->l_minus.data(), static_cast<Eigen::Index>(x->dim),
                                           static_cast<Eigen::Index>(x->rank));
    const Eigen::VectorXd over = (lp.transpose() * dv).cwiseMax(0.0);
    const Eigen::VectorXd under = (lm.transpose() * dv).cwiseMin(0.0);
    if (want) {
      Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(n)) =
          2.0 * (lp * over) + 2.0 * (lm * under) + 2.0 * x->w_min * dv;
    }
    return over.squaredNorm() + under.squaredNorm() + x->w_min * dv.squaredNorm();
  }
  throw std::logic_error("not a convex family");
}

// Network value (and gradients when grads is non-empty) for rows of residuals.
void nn_batch(const NNLoss& net, std::span<const double> residuals, std::size_t rows, std::span<double> values,
              std::span<double> grads) {
  const std::size_t dim = net.widths.front();
  const bool want = !grads.empty();
  grad::Tape tape(want);
  std::vector<double> scaled(residuals.begin(), residuals.end());
  for (double& v : scaled) v /= net.input_scale;
  grad::Var input = tape.leaf(grad::Tensor({rows, dim}, std::move(scaled)), want);
  std::vector<grad::Var> w, b;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    w.push_back(tape.constant(grad::Tensor({net.widths[l], net.widths[l + 1]}, net.weights[l])));
    b.push_back(tape.constant(grad::Tensor({net.widths[l + 1]}, net.biases[l])));
  }
  grad::Var out = detail::nn_forward(input, w, b);
  grad::Var ref = detail::nn_forward(tape.constant(grad::Tensor({1, dim}, 0.0)), w, b);
  const double base = ref.value()[0];
  for (std::size_t r = 0; r < rows; ++r) values[r] = net.output_scale * (out.value()[r] - base);
  if (!want) return;
  auto g = tape.backward(grad::sum(out));
  const double factor = net.output_scale / net.input_scale;
  const auto& gi = g[input];
  for (std::size_t i = 0; i < rows * dim; ++i) grads[i] = factor * gi[i];
}

}  // namespace

double eval_loss(const LossParams& p, std::span<const double> yhat, std::span<const double> y) {
  check_dims(p, yhat.size(), y.size());
  std::vector<double> d(yhat.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = yhat[i] - y[i];
  if (const auto* net = std::get_if<NNLoss>(&p)) {
    double v = 0.0;
    nn_batch(*net, d, 1, std::span<double>(&v, 1), {});
    return v;
  }
  return convex_value_grad(p, d, {});
}

double grad_loss(const LossParams& p, std::span<const double> yhat, std::span<const double> y,
                 std::span<double> grad) {
  check_dims(p, yhat.size(), y.size());
  if (grad.size() != y.size()) throw std::invalid_argument("grad_loss: gradient buffer has wrong size");
  std::vector<double> d(yhat.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = yhat[i] - y[i];
  if (const auto* net = std::get_if<NNLoss>(&p)) {
    double v = 0.0;
    nn_batch(*net, d, 1, std::span<double>(&v, 1), grad);
    return v;
  }
  return convex_value_grad(p, d, grad);
}

void eval_grad_batch(const LossParams& p, std::span<const double> residuals, std::size_t rows,
                     std::span<double> values, std::span<double> grads) {
  const std::size_t dim = dim_of(p);
  if (residuals.size() != rows * dim || values.size() != rows || (!grads.empty() && grads.size() != rows * dim)) {
    throw std::invalid_argument("eval_grad_batch: buffer sizes do not match");
  }
  if (const auto* net = std::get_if<NNLoss>(&p)) {
    nn_batch(*net, residuals, rows, values, grads);
    return;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    values[r] = convex_value_grad(p, residuals.subspan(r * dim, dim),
                                  grads.empty() ? std::span<double>() : grads.subspan(r * dim, dim));
  }
}

double mean_curvature(const LossParams& p) {
  const double dim = static_cast<double>(dim_of(p));
  if (const auto* x = std::get_if<WeightedMSE>(&p)) {
    double s = 0.0;
    for (double v : x->w) s += v;
    return s / dim;
  }
  if (const auto* x = std::get_if<DirectedWeightedMSE>(&p)) {
    double s = 0.0;
    for (std::size_t i = 0; i < x->w_plus.size(); ++i) s += 0.5 * (x->w_plus[i] + x->w_minus[i]);
    return s / dim;
  }
  if (const auto* x = std::get_if<Quadratic>(&p)) {
    double s = 0.0;
    for (double v : x->l) s += v * v;
    return s / dim + x->w_min;
  }
  if (const auto* x = std::get_if<DirectedQuadratic>(&p)) {
    double s = 0.0;
    for (double v : x->l_plus) s += v * v;
    for (double v : x->l_minus) s += v * v;
    return 0.5 * s / dim + x->w_min;
  }
  const auto& net = std::get<NNLoss>(p);
  return net.output_scale / (net.input_scale * net.input_scale);
}

}  // namespace lodl::loss
