#include "lodl/domains/portfolio.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>

namespace lodl::domains {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool project_capped_simplex(std::span<const double> w, std::span<double> out) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = std::clamp(w[i], 0.0, 1.0);
    s += out[i];
  }
  if (s <= 1.0) return false;
  // Sort-based projection onto the unit simplex {z >= 0, sum z = 1}; its
  // points already satisfy z <= 1.
  std::vector<double> sorted(w.begin(), w.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumsum += sorted[k];
    const double candidate = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - candidate > 0.0) tau = candidate;
  }
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = std::max(w[i] - tau, 0.0);
  return true;
}

double portfolio_objective(std::span<const double> z, std::span<const double> y, const Eigen::MatrixXd& q,
                           double risk_aversion) {
  const auto d = static_cast<Eigen::Index>(z.size());
  Eigen::Map<const Eigen::VectorXd> zv(z.data(), d);
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), d);
  return zv.dot(yv) - risk_aversion * zv.dot(q * zv);
}

double largest_eigenvalue(const Eigen::MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

PortfolioSolve portfolio_oracle(std::span<const double> yhat, const Eigen::MatrixXd& q, double risk_aversion,
                                double lambda_max, std::span<const double> warm_start) {
  const auto d = static_cast<Eigen::Index>(yhat.size());
  if (q.rows() != d || q.cols() != d) throw OracleError("portfolio_oracle: Q size mismatch");
  if (risk_aversion < 0.0) throw OracleError("portfolio_oracle: negative risk aversion");
  Eigen::Map<const Eigen::VectorXd> y(yhat.data(), d);
  PortfolioSolve result;
  result.z.assign(yhat.size(), 0.0);

  if (risk_aversion == 0.0) {
    // Linear objective over the capped simplex: best vertex, or nothing.
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < d; ++i) {
      if (y[i] > y[best]) best = i;
    }
    if (y[best] > 0.0) result.z[static_cast<std::size_t>(best)] = 1.0;
    return result;
  }

  if (lambda_max <= 0.0) lambda_max = largest_eigenvalue(q);
  const double lipschitz = std::max(2.0 * risk_aversion * lambda_max, 1e-12);
  const double step = 1.0 / lipschitz;
  const double two_lambda = 2.0 * risk_aversion;

  // Minimize lambda z'Qz - z'y. Q times the momentum point follows from
  // linearity, so each iteration needs a single product with Q.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
  if (warm_start.size() == yhat.size()) x = Eigen::Map<const Eigen::VectorXd>(warm_start.data(), d);
  Eigen::VectorXd qx = q * x;
  Eigen::VectorXd x_prev(d), qx_prev(d), v = x, qv = qx, w(d), scratch(d), gx(d);
  double fx = risk_aversion * x.dot(qx) - x.dot(y);
  double t = 1.0;
  auto project = [&](const Eigen::VectorXd& from, Eigen::VectorXd& to) {
    project_capped_simplex(std::span<const double>(from.data(), d), std::span<double>(to.data(), d));
  };
  // Once the support has settled, solve the equality-constrained QP on it
  // directly. The candidate replaces x only if it stays feasible and improves.
  auto polish = [&](Eigen::VectorXd& z, Eigen::VectorXd& qz) {
    std::vector<Eigen::Index> support;
    double total = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (z[i] > 0.0) support.push_back(i);
      total += z[i];
    }
    if (support.empty()) return false;
    const bool on_face = total >= 1.0 - 1e-9;
    const auto k = static_cast<Eigen::Index>(support.size());
    const Eigen::Index n = on_face ? k + 1 : k;
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) kkt(a, b) = two_lambda * q(support[a], support[b]);
      rhs[a] = y[support[a]];
    }
    if (on_face) {
      kkt.row(k).head(k).setOnes();
      kkt.col(k).head(k).setOnes();
      rhs[k] = 1.0;
    }
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    Eigen::VectorXd candidate = Eigen::VectorXd::Zero(d);
    for (Eigen::Index a = 0; a < k; ++a) {
      if (!(sol[a] >= 0.0 && sol[a] <= 1.0)) return false;
      candidate[support[a]] = sol[a];
    }
    if (candidate.sum() > 1.0 + 1e-12) return false;
    Eigen::VectorXd qc = q * candidate;
    if (risk_aversion * candidate.dot(qc) - candidate.dot(y) > fx) return false;
    z = candidate;
    qz = qc;
    return true;
  };
  constexpr std::size_t kMaxIterations = 10000;
  for (std::size_t it = 0;; ++it) {
    gx = two_lambda * qx - y;
    w = x - gx;
    project(w, scratch);
    result.residual = (x - scratch).cwiseAbs().maxCoeff();
    result.iterations = it;
    if (result.residual <= 1e-8 || it == kMaxIterations) break;
    if (result.residual < 1e-2 && it % 3 == 0 && polish(x, qx)) {
      gx = two_lambda * qx - y;
      w = x - gx;
      project(w, scratch);
      result.residual = (x - scratch).cwiseAbs().maxCoeff();
      if (result.residual <= 1e-8) break;
    }

    x_prev = x;
    qx_prev = qx;
    w = v - step * (two_lambda * qv - y);
    project(w, x);
    qx.noalias() = q * x;
    double fnew = risk_aversion * x.dot(qx) - x.dot(y);
    if (fnew > fx) {
      // Restart: drop momentum and take a plain projected step from x_prev.
      t = 1.0;
      w = x_prev - step * gx;
      project(w, x);
      qx.noalias() = q * x;
      fnew = risk_aversion * x.dot(qx) - x.dot(y);
      v = x;
      qv = qx;
      fx = fnew;
      continue;
    }
    fx = fnew;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_next;
    v = x + beta * (x - x_prev);
    qv = qx + beta * (qx - qx_prev);
    t = t_next;
  }
  if (result.residual > 1e-6) {
    throw OracleError("portfolio_oracle: no convergence, residual " + std::to_string(result.residual));
  }
  std::copy(x.data(), x.data() + d, result.z.begin());
  return result;
}

namespace {

struct UnrollTrace {
  std::vector<RowMatrix> support;       // [T] rows x d, projection Jacobian diagonal
  std::vector<std::vector<char>> face;  // [T][rows] simplex face active
};

}  // namespace

grad::Var portfolio_unroll(grad::Var yhat, const Eigen::MatrixXd& q, double risk_aversion, std::size_t steps,
                           double step_size) {
  const auto& shape = yhat.shape();
  if (shape.size() != 2 || shape[1] != static_cast<std::size_t>(q.rows())) {
    throw grad::ShapeError("portfolio_unroll: expected [n," + std::to_string(q.rows()) + "], got " +
                           grad::to_string(shape));
  }
  if (steps == 0) throw OracleError("portfolio_unroll: steps must be >= 1");
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto d = static_cast<Eigen::Index>(shape[1]);
  Eigen::Map<const RowMatrix> y(yhat.value().data().data(), rows, d);

  auto trace = std::make_shared<UnrollTrace>();
  const bool keep = yhat.tape->recording();
  RowMatrix z = RowMatrix::Zero(rows, d);
  RowMatrix w(rows, d);
  for (std::size_t t = 0; t < steps; ++t) {
    w.noalias() = z + step_size * (y - 2.0 * risk_aversion * z * q);
    RowMatrix support;
    std::vector<char> face;
    if (keep) {
      support.resize(rows, d);
      face.resize(static_cast<std::size_t>(rows));
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      const bool on_face = project_capped_simplex(std::span<const double>(w.row(r).data(), d),
                                                  std::span<double>(z.row(r).data(), d));
      if (!keep) continue;
      face[static_cast<std::size_t>(r)] = on_face;
      for (Eigen::Index i = 0; i < d; ++i) {
        support(r, i) = on_face ? (z(r, i) > 0.0 ? 1.0 : 0.0) : (w(r, i) > 0.0 && w(r, i) < 1.0 ? 1.0 : 0.0);
      }
    }
    if (keep) {
      trace->support.push_back(std::move(support));
      trace->face.push_back(std::move(face));
    }
  }
  grad::Tensor out(shape, std::vector<double>(z.data(), z.data() + z.size()));

  auto backward = [trace, q, risk_aversion, step_size, rows, d](const grad::Tensor& g,
                                                                std::span<const grad::Tensor* const> in,
                                                                const grad::Tensor&, const std::vector<bool>&) {
    RowMatrix zbar = Eigen::Map<const RowMatrix>(g.data().data(), rows, d);
    RowMatrix ybar = RowMatrix::Zero(rows, d);
    RowMatrix wbar(rows, d);
    for (std::size_t t = trace->support.size(); t-- > 0;) {
      const RowMatrix& s = trace->support[t];
      wbar = s.cwiseProduct(zbar);
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (!trace->face[t][static_cast<std::size_t>(r)]) continue;
        const double count = s.row(r).sum();
        if (count > 0.0) wbar.row(r) -= (wbar.row(r).sum() / count) * s.row(r);
      }
      ybar += step_size * wbar;
      zbar.noalias() = wbar - (2.0 * step_size * risk_aversion) * wbar * q;
    }
    return std::vector<grad::Tensor>{grad::Tensor(in[0]->shape(), std::vector<double>(ybar.data(), ybar.data() + ybar.size()))};
  };
  return yhat.tape->record(grad::OpKind::kCustom, std::move(out), {yhat}, backward);
}

PortfolioProblem::PortfolioProblem(Eigen::MatrixXd q, double risk_aversion, std::size_t steps, double step_size)
    : q_(std::move(q)), risk_aversion_(risk_aversion), steps_(steps) {
  if (q_.rows() != q_.cols() || q_.rows() == 0) throw std::invalid_argument("portfolio: Q must be square");
  if (risk_aversion < 0.0) throw std::invalid_argument("portfolio: risk aversion must be >= 0");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q_, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10) throw std::invalid_argument("portfolio: Q is not PSD");
  lambda_max_ = es.eigenvalues().maxCoeff();
  step_size_ = step_size > 0.0 ? step_size : 1.0 / (2.0 * risk_aversion_ * lambda_max_ + 1.0);
}

double PortfolioProblem::objective(std::span<const double> z, std::span<const double> y) const {
  return portfolio_objective(z, y, q_, risk_aversion_);
}

void PortfolioProblem::objective_grad(std::span<const double> z, std::span<const double> y,
                                      std::span<double> out) const {
  const auto d = q_.rows();
  Eigen::Map<const Eigen::VectorXd> zv(z.data(), d);
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), d);
  Eigen::Map<Eigen::VectorXd>(out.data(), d) = yv - 2.0 * risk_aversion_ * (q_ * zv);
}

Decision PortfolioProblem::do_solve_exact(std::span<const double> yhat) const {
  return portfolio_oracle(yhat, q_, risk_aversion_, lambda_max_).z;
}

Decision PortfolioProblem::do_solve_exact_from(std::span<const double> yhat, const Decision& hint) const {
  return portfolio_oracle(yhat, q_, risk_aversion_, lambda_max_, hint).z;
}

grad::Var PortfolioProblem::do_solve_surrogate(grad::Var yhat) const {
  return portfolio_unroll(yhat, q_, risk_aversion_, steps_, step_size_);
}

}  // namespace lodl::domains
