#include "lodl/domains/problem.hpp"

#include <cmath>

namespace lodl::domains {

Decision DecisionProblem::solve_exact(std::span<const double> yhat) const {
  if (yhat.size() != dim_y()) {
    throw OracleError(std::string(name()) + ": prediction has " + std::to_string(yhat.size()) +
                      " entries, expected " + std::to_string(dim_y()));
  }
  oracle_calls_.fetch_add(1, std::memory_order_relaxed);
  return do_solve_exact(yhat);
}

Decision DecisionProblem::solve_exact_from(std::span<const double> yhat, const Decision& hint) const {
  if (yhat.size() != dim_y()) {
    throw OracleError(std::string(name()) + ": prediction has " + std::to_string(yhat.size()) +
                      " entries, expected " + std::to_string(dim_y()));
  }
  oracle_calls_.fetch_add(1, std::memory_order_relaxed);
  return do_solve_exact_from(yhat, hint);
}

grad::Var DecisionProblem::solve_surrogate(grad::Var yhat) const {
  const auto& shape = yhat.shape();
  if (shape.size() != 2 || shape[1] != dim_y()) {
    throw grad::ShapeError(std::string(name()) + " surrogate: expected [n," + std::to_string(dim_y()) +
                           "], got " + grad::to_string(shape));
  }
  surrogate_calls_.fetch_add(shape[0], std::memory_order_relaxed);
  grad::Var z = do_solve_surrogate(yhat);
  for (double v : z.value().data()) {
    if (!std::isfinite(v)) throw OracleError(std::string(name()) + " surrogate: non-finite iterate");
  }
  return z;
}

grad::Var DecisionProblem::objective_on_tape(grad::Var z, const grad::Tensor& y) const {
  const auto& zs = z.shape();
  if (zs.size() != 2 || zs[1] != dim_z() || y.rank() != 2 || y.shape()[0] != zs[0] || y.shape()[1] != dim_y()) {
    throw grad::ShapeError(std::string(name()) + " objective: shapes " + grad::to_string(zs) + " and " +
                           grad::to_string(y.shape()) + " do not conform");
  }
  const std::size_t n = zs[0];
  const std::size_t dz = dim_z();
  const std::size_t dy = dim_y();
  grad::Tensor out(grad::Shape{n}, 0.0);
  auto zd = z.value().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = objective(zd.subspan(i * dz, dz), y.data().subspan(i * dy, dy));
  auto backward = [this, y, n, dz, dy](const grad::Tensor& g, std::span<const grad::Tensor* const> in,
                                       const grad::Tensor&, const std::vector<bool>&) {
    grad::Tensor gz(in[0]->shape(), 0.0);
    auto zd = in[0]->data();
    auto out = gz.data();
    for (std::size_t i = 0; i < n; ++i) {
      auto row = out.subspan(i * dz, dz);
      objective_grad(zd.subspan(i * dz, dz), y.data().subspan(i * dy, dy), row);
      for (double& v : row) v *= g[i];
    }
    return std::vector<grad::Tensor>{std::move(gz)};
  };
  return z.tape->record(grad::OpKind::kCustom, std::move(out), {z}, backward);
}

}  // namespace lodl::domains
