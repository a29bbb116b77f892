#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "lodl/common/parallel.hpp"
#include "lodl/common/rng.hpp"
#include "lodl/grad/ops.hpp"
#include "lodl/loss/loss.hpp"
#include "src/loss/internal.hpp"

namespace lodl::loss {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void FitConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("fit config: steps must be >= 1");
  if (!(w_min > 0.0)) throw std::invalid_argument("fit config: w_min must be > 0");
  if (rank < 1) throw std::invalid_argument("fit config: rank must be >= 1");
  if (hidden < 1 || hidden_layers < 1) throw std::invalid_argument("fit config: network needs hidden units");
  if (batch < 1) throw std::invalid_argument("fit config: batch must be >= 1");
}

double fit_objective(const LossParams& p, const sampling::SampleTable& table) {
  const std::size_t k = table.size();
  const std::size_t d = table.dim;
  std::vector<double> residuals(k * d);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t i = 0; i < d; ++i) residuals[r * d + i] = table.yhat[r * d + i] - table.y[i];
  }
  std::vector<double> values(k);
  eval_grad_batch(p, residuals, k, values, {});
  double total = 0.0;
  for (std::size_t r = 0; r < k; ++r) total += (values[r] - table.target(r)) * (values[r] - table.target(r));
  // The truth point contributes (h(0) - 0)^2 = 0 to the sum.
  return total / static_cast<double>(k + 1);
}

namespace {

// Residuals and targets rescaled so both are O(1): d / s and t / tau, with the
// truth point (zero residual, zero target) appended as the last row.
struct Scaled {
  RowMatrix d;
  Eigen::VectorXd t;
  double s = 1.0;
  double tau = 1.0;
};

Scaled rescale(const sampling::SampleTable& table) {
  if (table.size() == 0) throw std::invalid_argument("fit: empty sample table");
  const auto k = static_cast<Eigen::Index>(table.size());
  const auto dim = static_cast<Eigen::Index>(table.dim);
  Scaled out;
  out.d = RowMatrix::Zero(k + 1, dim);
  out.t = Eigen::VectorXd::Zero(k + 1);
  double sq = 0.0, tt = 0.0;
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      out.d(r, i) = table.yhat[static_cast<std::size_t>(r * dim + i)] - table.y[static_cast<std::size_t>(i)];
    }
    out.t[r] = table.target(static_cast<std::size_t>(r));
    sq += out.d.row(r).squaredNorm();
    tt += out.t[r] * out.t[r];
  }
  out.s = sq > 0.0 ? std::sqrt(sq / static_cast<double>(k)) : 1.0;
  out.tau = tt > 0.0 ? std::sqrt(tt / static_cast<double>(k + 1)) : 1.0;
  out.d /= out.s;
  out.t /= out.tau;
  return out;
}

class Adam {
 public:
  Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}
  void step(std::span<double> x, std::span<const double> g) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g[i] * g[i];
      x[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + 1e-8);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  double lr_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// Objective and gradient in scaled coordinates over a flat parameter vector.
using ObjectiveFn = std::function<double(std::span<const double>, std::span<double>)>;

struct Problem {
  std::vector<double> theta;
  ObjectiveFn objective;
  std::function<void(std::span<double>)> project = [](std::span<double>) {};
  double lipschitz = 0.0;  // of the gradient, when known
};

// Runs the optimizer; returns the objective curve (scaled units) if requested.
std::vector<double> optimize(Problem& pb, const FitConfig& cfg, std::size_t instance_id) {
  std::vector<double> curve;
  std::vector<double> g(pb.theta.size());
  double lr = cfg.learning_rate;
  if (cfg.optimizer == Optimizer::kGradientDescent && lr <= 0.0) {
    if (pb.lipschitz <= 0.0) throw std::invalid_argument("fit: this family needs an explicit learning rate");
    lr = 1.0 / pb.lipschitz;
  }
  Adam adam(pb.theta.size(), lr);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double value = pb.objective(pb.theta, g);
    if (!std::isfinite(value)) {
      throw std::runtime_error("fit: non-finite objective at step " + std::to_string(step) + " for instance " +
                               std::to_string(instance_id));
    }
    if (cfg.record_curve) curve.push_back(value);
    if (cfg.optimizer == Optimizer::kAdam) {
      adam.step(pb.theta, g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) pb.theta[i] -= lr * g[i];
    }
    pb.project(pb.theta);
  }
  if (cfg.record_curve) curve.push_back(pb.objective(pb.theta, g));
  return curve;
}

// Least-squares scale c for h = c |d|^2, used to start every family near the
// right magnitude.
double isotropic_scale(const Scaled& sc) {
  const Eigen::VectorXd q = sc.d.rowwise().squaredNorm();
  const double denom = q.squaredNorm();
  return denom > 0.0 ? q.dot(sc.t) / denom : 1.0;
}

// Sign-split squared residual features for the weighted families.
RowMatrix weighted_features(const RowMatrix& d, bool directed) {
  if (!directed) return d.array().square();
  RowMatrix a(d.rows(), 2 * d.cols());
  a.leftCols(d.cols()) = d.cwiseMax(0.0).array().square();
  a.rightCols(d.cols()) = d.cwiseMin(0.0).array().square();
  return a;
}

Problem weighted_problem(const Scaled& sc, bool directed, double floor) {
  const RowMatrix a = weighted_features(sc.d, directed);
  const double rows = static_cast<double>(a.rows());
  auto gram = std::make_shared<Eigen::MatrixXd>(a.transpose() * a / rows);
  auto rhs = std::make_shared<Eigen::VectorXd>(a.transpose() * sc.t / rows);
  const double c0 = sc.t.squaredNorm() / rows;
  Problem pb;
  pb.theta.assign(static_cast<std::size_t>(a.cols()), std::max(isotropic_scale(sc), floor));
  pb.objective = [gram, rhs, c0](std::span<const double> th, std::span<double> g) {
    Eigen::Map<const Eigen::VectorXd> w(th.data(), static_cast<Eigen::Index>(th.size()));
    const Eigen::VectorXd gw = *gram * w;
    Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size())) = 2.0 * (gw - *rhs);
    return w.dot(gw) - 2.0 * w.dot(*rhs) + c0;
  };
  pb.project = [floor](std::span<double> th) {
    for (double& v : th) v = std::max(v, floor);
  };
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*gram, Eigen::EigenvaluesOnly);
  pb.lipschitz = 2.0 * es.eigenvalues().maxCoeff();
  return pb;
}

Problem quadratic_problem(const Scaled& sc, bool directed, std::size_t rank, double floor, SplitMix64& rng) {
  const auto dim = sc.d.cols();
  const auto k = static_cast<Eigen::Index>(rank);
  const double rows = static_cast<double>(sc.d.rows());
  const Eigen::VectorXd base = floor * sc.d.rowwise().squaredNorm();
  const std::size_t block = static_cast<std::size_t>(dim * k);
  Problem pb;
  pb.theta.resize(directed ? 2 * block : block);
  const double sigma = std::sqrt(std::max(isotropic_scale(sc) - floor, 1e-3) / static_cast<double>(rank));
  std::normal_distribution<double> normal(0.0, sigma);
  for (std::size_t i = 0; i < block; ++i) pb.theta[i] = normal(rng);
  if (directed) std::copy_n(pb.theta.begin(), block, pb.theta.begin() + static_cast<std::ptrdiff_t>(block));

  const RowMatrix& d = sc.d;
  const Eigen::VectorXd& t = sc.t;
  pb.objective = [&d, &t, base, dim, k, block, directed, rows](std::span<const double> th, std::span<double> g) {
    // Factors side by side ([dim, k] or [dim, 2k]); rows are processed in
    // blocks small enough that each block is read once for the projection and
    // again for the gradient while still in L1.
    const Eigen::Index cols = directed ? 2 * k : k;
    RowMatrix fac(dim, cols), grad = RowMatrix::Zero(dim, cols);
    fac.leftCols(k) = Eigen::Map<const RowMatrix>(th.data(), dim, k);
    if (directed) fac.rightCols(k) = Eigen::Map<const RowMatrix>(th.data() + block, dim, k);
    constexpr Eigen::Index kBlock = 64;
    RowMatrix proj(kBlock, cols);
    Eigen::VectorXd r(kBlock);
    double sq = 0.0;
    for (Eigen::Index s = 0; s < d.rows(); s += kBlock) {
      const Eigen::Index n = std::min(kBlock, d.rows() - s);
      const auto db = d.middleRows(s, n);
      auto pb = proj.topRows(n);
      auto rb = r.head(n);
      pb.noalias() = db * fac;
      if (directed) {
        pb.leftCols(k) = pb.leftCols(k).cwiseMax(0.0);
        pb.rightCols(k) = pb.rightCols(k).cwiseMin(0.0);
      }
      rb = pb.rowwise().squaredNorm();
      rb += base.segment(s, n) - t.segment(s, n);
      sq += rb.squaredNorm();
      pb = rb.asDiagonal() * pb;
      grad.noalias() += db.transpose() * pb;
    }
    grad *= 4.0 / rows;
    Eigen::Map<RowMatrix>(g.data(), dim, k) = grad.leftCols(k);
    if (directed) Eigen::Map<RowMatrix>(g.data() + block, dim, k) = grad.rightCols(k);
    return sq / rows;
  };
  return pb;
}

NNLoss init_network(std::size_t dim, const FitConfig& cfg, SplitMix64& rng) {
  NNLoss net;
  net.widths.push_back(dim);
  for (std::size_t l = 0; l < cfg.hidden_layers; ++l) net.widths.push_back(cfg.hidden);
  net.widths.push_back(1);
  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.widths[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(net.widths[l] * net.widths[l + 1]);
    std::vector<double> b(net.widths[l + 1]);
    for (double& v : w) v = u(rng);
    for (double& v : b) v = u(rng);
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

FittedLoss fit_network(const sampling::SampleTable& table, const Scaled& sc, const FitConfig& cfg,
                       SplitMix64& rng) {
  const std::size_t dim = table.dim;
  NNLoss net = init_network(dim, cfg, rng);
  net.input_scale = sc.s;
  net.output_scale = sc.tau;
  const std::size_t layers = net.weights.size();
  std::vector<Adam> w_opt, b_opt;
  for (std::size_t l = 0; l < layers; ++l) {
    w_opt.emplace_back(net.weights[l].size(), cfg.nn_learning_rate);
    b_opt.emplace_back(net.biases[l].size(), cfg.nn_learning_rate);
  }
  const auto rows = static_cast<std::size_t>(sc.d.rows());
  const std::size_t batch = std::min(cfg.batch, rows);
  std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
  FittedLoss out;
  out.instance_id = table.instance_id;
  out.steps = cfg.steps;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<double> x(batch * dim), target(batch);
    for (std::size_t r = 0; r < batch; ++r) {
      const auto row = static_cast<Eigen::Index>(pick(rng));
      for (std::size_t i = 0; i < dim; ++i) x[r * dim + i] = sc.d(row, static_cast<Eigen::Index>(i));
      target[r] = sc.t[row];
    }
    grad::Tape tape;
    std::vector<grad::Var> w, b;
    for (std::size_t l = 0; l < layers; ++l) {
      w.push_back(tape.leaf(grad::Tensor({net.widths[l], net.widths[l + 1]}, net.weights[l])));
      b.push_back(tape.leaf(grad::Tensor({net.widths[l + 1]}, net.biases[l])));
    }
    grad::Var out_rows = detail::nn_forward(tape.constant(grad::Tensor({batch, dim}, std::move(x))), w, b);
    grad::Var ref = detail::nn_forward(tape.constant(grad::Tensor({1, dim}, 0.0)), w, b);
    grad::Var h = grad::sub(out_rows, grad::reshape(ref, {1}));
    grad::Var mse = grad::mean(grad::square(grad::sub(h, tape.constant(grad::Tensor({batch, 1}, std::move(target))))));
    const double value = mse.value().item();
    if (!std::isfinite(value)) {
      throw std::runtime_error("fit: non-finite objective at step " + std::to_string(step) + " for instance " +
                               std::to_string(table.instance_id));
    }
    if (cfg.record_curve) out.curve.push_back(value * sc.tau * sc.tau);
    auto g = tape.backward(mse);
    for (std::size_t l = 0; l < layers; ++l) {
      w_opt[l].step(net.weights[l], g[w[l]].data());
      b_opt[l].step(net.biases[l], g[b[l]].data());
    }
  }
  out.params = std::move(net);
  out.objective = fit_objective(out.params, table);
  if (cfg.record_curve) out.curve.push_back(out.objective);
  return out;
}

}  // namespace

FittedLoss fit_gd(const sampling::SampleTable& table, Family family, const FitConfig& cfg) {
  cfg.validate();
  const Scaled sc = rescale(table);
  SplitMix64 rng(derive_seed(cfg.seed, {table.instance_id, static_cast<std::uint64_t>(family)}));
  if (family == Family::kNN) return fit_network(table, sc, cfg, rng);

  // w_min applies in label units; in scaled units the floor is w_min s^2 / tau.
  const double floor = cfg.w_min * sc.s * sc.s / sc.tau;
  const bool directed = family == Family::kDirectedWeightedMSE || family == Family::kDirectedQuadratic;
  Problem pb = (family == Family::kWeightedMSE || family == Family::kDirectedWeightedMSE)
                   ? weighted_problem(sc, directed, floor)
                   : quadratic_problem(sc, directed, cfg.rank, floor, rng);
  pb.project(pb.theta);
  FittedLoss out;
  out.instance_id = table.instance_id;
  out.steps = cfg.steps;
  out.curve = optimize(pb, cfg, table.instance_id);
  for (double& v : out.curve) v *= sc.tau * sc.tau;

  const double weight_scale = sc.tau / (sc.s * sc.s);
  const double factor_scale = std::sqrt(sc.tau) / sc.s;
  const std::size_t dim = table.dim;
  switch (family) {
    case Family::kWeightedMSE: {
      WeightedMSE p{pb.theta};
      for (double& v : p.w) v = std::max(v * weight_scale, cfg.w_min);
      out.params = std::move(p);
      break;
    }
    case Family::kDirectedWeightedMSE: {
      DirectedWeightedMSE p;
      for (std::size_t i = 0; i < dim; ++i) {
        p.w_plus.push_back(std::max(pb.theta[i] * weight_scale, cfg.w_min));
        p.w_minus.push_back(std::max(pb.theta[dim + i] * weight_scale, cfg.w_min));
      }
      out.params = std::move(p);
      break;
    }
    case Family::kQuadratic: {
      Quadratic p{dim, cfg.rank, pb.theta, cfg.w_min};
      for (double& v : p.l) v *= factor_scale;
      out.params = std::move(p);
      break;
    }
    case Family::kDirectedQuadratic: {
      const std::size_t block = dim * cfg.rank;
      DirectedQuadratic p{dim, cfg.rank, {pb.theta.begin(), pb.theta.begin() + static_cast<std::ptrdiff_t>(block)},
                          {pb.theta.begin() + static_cast<std::ptrdiff_t>(block), pb.theta.end()}, cfg.w_min};
      for (double& v : p.l_plus) v *= factor_scale;
      for (double& v : p.l_minus) v *= factor_scale;
      out.params = std::move(p);
      break;
    }
    case Family::kNN: break;
  }
  out.objective = fit_objective(out.params, table);
  return out;
}

FittedLoss fit_weighted_mse_closed_form(const sampling::SampleTable& table, Family family, const FitConfig& cfg) {
  cfg.validate();
  if (family != Family::kWeightedMSE && family != Family::kDirectedWeightedMSE) {
    throw std::invalid_argument("closed-form fit only exists for the weighted families");
  }
  if (table.size() == 0) throw std::invalid_argument("fit: empty sample table");
  const bool directed = family == Family::kDirectedWeightedMSE;
  const auto k = static_cast<Eigen::Index>(table.size());
  const auto dim = static_cast<Eigen::Index>(table.dim);
  RowMatrix d(k, dim);
  Eigen::VectorXd t(k);
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      d(r, i) = table.yhat[static_cast<std::size_t>(r * dim + i)] - table.y[static_cast<std::size_t>(i)];
    }
    t[r] = table.target(static_cast<std::size_t>(r));
  }
  const RowMatrix a = weighted_features(d, directed);
  const Eigen::MatrixXd gram = a.transpose() * a;
  const Eigen::VectorXd rhs = a.transpose() * t;
  const auto n = gram.rows();
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, cfg.w_min);
  for (std::size_t sweep = 0; sweep < 100000; ++sweep) {
    double change = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
      double next = cfg.w_min;
      if (gram(l, l) > 0.0) {
        const double off = gram.row(l).dot(w) - gram(l, l) * w[l];
        next = std::max(cfg.w_min, (rhs[l] - off) / gram(l, l));
      }
      change = std::max(change, std::abs(next - w[l]) / (1.0 + std::abs(next)));
      w[l] = next;
    }
    if (change <= 1e-14) break;
  }
  FittedLoss out;
  out.instance_id = table.instance_id;
  out.steps = 0;
  const std::vector<double> flat(w.data(), w.data() + w.size());
  if (directed) {
    out.params = DirectedWeightedMSE{{flat.begin(), flat.begin() + dim}, {flat.begin() + dim, flat.end()}};
  } else {
    out.params = WeightedMSE{flat};
  }
  out.objective = fit_objective(out.params, table);
  return out;
}

std::vector<FittedLoss> fit_all(std::span<const sampling::SampleTable> tables, Family family, const FitConfig& cfg,
                                std::size_t workers) {
  std::vector<FittedLoss> out(tables.size());
  parallel_for(tables.size(), workers, [&](std::size_t i) { out[i] = fit_gd(tables[i], family, cfg); });
  return out;
}

}  // namespace lodl::loss
