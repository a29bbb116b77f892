#pragma once

#include "lodl/domains/problem.hpp"

namespace lodl::domains {

/// Expected fraction of users reached: (1/N) sum_j [1 - prod_i (1 - z_i y_ij)].
/// y is M x N row-major (website-major). Throws if any y entry is outside [0, 1].
double webadv_objective(std::span<const double> z, std::span<const double> y, std::size_t websites,
                        std::size_t users);

/// Exact best B-subset by enumeration (M <= 20). Ties go to the
/// lexicographically smallest subset. Accepts predictions outside [0, 1].
std::vector<std::size_t> webadv_oracle(std::span<const double> yhat, std::size_t websites, std::size_t users,
                                       std::size_t budget);

/// Unrolled projected gradient ascent on the multilinear extension over
/// {0 <= z <= 1, sum z <= B}. yhat [n, M*N] -> z [n, M].
grad::Var webadv_multilinear(grad::Var yhat, std::size_t websites, std::size_t users, std::size_t budget,
                             std::size_t steps, double step_size);

class WebAdvProblem final : public DecisionProblem {
 public:
  WebAdvProblem(std::size_t websites, std::size_t users, std::size_t budget, std::size_t steps = 50,
                double step_size = 0.5);

  std::string_view name() const override { return "webadv"; }
  std::size_t dim_y() const override { return websites_ * users_; }
  std::size_t dim_z() const override { return websites_; }
  std::size_t websites() const { return websites_; }
  std::size_t users() const { return users_; }
  std::size_t budget() const { return budget_; }

  double objective(std::span<const double> z, std::span<const double> y) const override;
  void objective_grad(std::span<const double> z, std::span<const double> y, std::span<double> out) const override;

 protected:
  Decision do_solve_exact(std::span<const double> yhat) const override;
  grad::Var do_solve_surrogate(grad::Var yhat) const override;

 private:
  std::size_t websites_;
  std::size_t users_;
  std::size_t budget_;
  std::size_t steps_;
  double step_size_;
};

}  // namespace lodl::domains
