#pragma once

#include "lodl/domains/problem.hpp"

namespace lodl::domains {

/// Indices of the B largest entries, in descending value order; ties go to the
/// lower index.
std::vector<std::size_t> topk_oracle(std::span<const double> yhat, std::size_t budget);

/// Entropy-regularized transport relaxation of top-k, solved by a fixed number
/// of Sinkhorn scaling iterations. yhat [n, d] -> z [n, d], each row summing to B.
grad::Var soft_topk(grad::Var yhat, std::size_t budget, double epsilon, std::size_t iterations);

/// Pick the B highest-utility resources; DQ is the total true utility picked.
class TopKProblem final : public DecisionProblem {
 public:
  TopKProblem(std::size_t items, std::size_t budget, double epsilon = 0.1, std::size_t iterations = 100);

  std::string_view name() const override { return "linear"; }
  std::size_t dim_y() const override { return items_; }
  std::size_t dim_z() const override { return items_; }
  std::size_t budget() const { return budget_; }

  double objective(std::span<const double> z, std::span<const double> y) const override;
  void objective_grad(std::span<const double> z, std::span<const double> y, std::span<double> out) const override;

 protected:
  Decision do_solve_exact(std::span<const double> yhat) const override;
  grad::Var do_solve_surrogate(grad::Var yhat) const override;

 private:
  std::size_t items_;
  std::size_t budget_;
  double epsilon_;
  std::size_t iterations_;
};

}  // namespace lodl::domains
