#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lodl/grad/tape.hpp"

namespace lodl::domains {

/// A decision: 0/1 indicators for selection domains, allocations for portfolio.
using Decision = std::vector<double>;

/// Raised by oracles and surrogates (bad inputs, NaN iterates, non-convergence).
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One predict-then-optimize problem. All three domains maximize, so the
/// decision loss used for fitting is the shortfall DQ(y, y) - DQ(yhat, y).
///
/// Counters are atomics so a shared problem can be hit from many workers.
class DecisionProblem {
 public:
  virtual ~DecisionProblem() = default;

  virtual std::string_view name() const = 0;
  virtual std::size_t dim_y() const = 0;
  virtual std::size_t dim_z() const = 0;
  virtual bool is_maximization() const { return true; }

  /// Exact oracle z*(yhat). Deterministic; counts one oracle call.
  Decision solve_exact(std::span<const double> yhat) const;

  /// Same contract as solve_exact; `hint` is a nearby decision that iterative
  /// oracles may start from. Counts one oracle call.
  Decision solve_exact_from(std::span<const double> yhat, const Decision& hint) const;

  /// f(z; y) under the true parameters. Validates y.
  virtual double objective(std::span<const double> z, std::span<const double> y) const = 0;
  /// d f(z; y) / dz, written into out (size dim_z).
  virtual void objective_grad(std::span<const double> z, std::span<const double> y,
                              std::span<double> out) const = 0;

  double decision_quality(std::span<const double> yhat, std::span<const double> y) const {
    return objective(solve_exact(yhat), y);
  }

  /// Differentiable relaxation over a batch: yhat [n, dim_y] -> z [n, dim_z].
  /// Counts n surrogate solves.
  grad::Var solve_surrogate(grad::Var yhat) const;

  /// Per-row objective f(z_n; y_n) on the tape: z [n, dim_z], y [n, dim_y] -> [n].
  grad::Var objective_on_tape(grad::Var z, const grad::Tensor& y) const;

  std::uint64_t oracle_calls() const { return oracle_calls_.load(); }
  std::uint64_t surrogate_calls() const { return surrogate_calls_.load(); }
  void reset_counters() {
    oracle_calls_ = 0;
    surrogate_calls_ = 0;
  }

 protected:
  virtual Decision do_solve_exact(std::span<const double> yhat) const = 0;
  virtual Decision do_solve_exact_from(std::span<const double> yhat, const Decision&) const {
    return do_solve_exact(yhat);
  }
  virtual grad::Var do_solve_surrogate(grad::Var yhat) const = 0;

 private:
  mutable std::atomic<std::uint64_t> oracle_calls_{0};
  mutable std::atomic<std::uint64_t> surrogate_calls_{0};
};

}  // namespace lodl::domains
