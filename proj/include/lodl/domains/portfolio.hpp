#pragma once

#include <Eigen/Core>

#include "lodl/domains/problem.hpp"

namespace lodl::domains {

/// Euclidean projection onto {0 <= z <= 1, sum z <= 1}: clamp to the box, and
/// if that overshoots the budget, project onto the unit simplex instead.
/// Returns true when the simplex face is active.
bool project_capped_simplex(std::span<const double> w, std::span<double> out);

double portfolio_objective(std::span<const double> z, std::span<const double> y, const Eigen::MatrixXd& q,
                           double risk_aversion);

struct PortfolioSolve {
  Decision z;
  double residual = 0.0;  // ||z - proj(z + grad)||_inf
  std::size_t iterations = 0;
};

/// max_z z.yhat - lambda z'Qz over the capped simplex by restarted FISTA.
/// `lambda_max` is the largest eigenvalue of Q (computed if <= 0).
/// A feasible `warm_start` only changes the iterate path, not the tolerance.
PortfolioSolve portfolio_oracle(std::span<const double> yhat, const Eigen::MatrixXd& q, double risk_aversion,
                                double lambda_max = 0.0, std::span<const double> warm_start = {});

/// Fixed-length projected gradient unroll from z = 0. yhat [n, d] -> z [n, d].
grad::Var portfolio_unroll(grad::Var yhat, const Eigen::MatrixXd& q, double risk_aversion, std::size_t steps,
                           double step_size);

double largest_eigenvalue(const Eigen::MatrixXd& symmetric);

class PortfolioProblem final : public DecisionProblem {
 public:
  /// step_size <= 0 picks 1 / (2 lambda lambda_max(Q) + 1).
  PortfolioProblem(Eigen::MatrixXd q, double risk_aversion, std::size_t steps = 200, double step_size = 0.0);

  std::string_view name() const override { return "portfolio"; }
  std::size_t dim_y() const override { return static_cast<std::size_t>(q_.rows()); }
  std::size_t dim_z() const override { return dim_y(); }
  const Eigen::MatrixXd& q() const { return q_; }
  double risk_aversion() const { return risk_aversion_; }
  double step_size() const { return step_size_; }

  double objective(std::span<const double> z, std::span<const double> y) const override;
  void objective_grad(std::span<const double> z, std::span<const double> y, std::span<double> out) const override;

 protected:
  Decision do_solve_exact(std::span<const double> yhat) const override;
  Decision do_solve_exact_from(std::span<const double> yhat, const Decision& hint) const override;
  grad::Var do_solve_surrogate(grad::Var yhat) const override;

 private:
  Eigen::MatrixXd q_;
  double risk_aversion_;
  double lambda_max_;
  std::size_t steps_;
  double step_size_;
};

}  // namespace lodl::domains
