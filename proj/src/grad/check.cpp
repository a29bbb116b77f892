#include "lodl/grad/check.hpp"

#include <algorithm>
#include <cmath>

namespace lodl::grad {
namespace {

double eval_at(const ScalarFn& f, const Tensor& x) {
  Tape tape(false);
  return f(tape, tape.leaf(x, false)).value().item();
}

}  // namespace

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  Tape tape;
  Var leaf = tape.leaf(x);
  Var root = f(tape, leaf);
  const Tensor analytic = tape.backward(root)[leaf];

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    probe[i] = x0 + h;
    const double up = eval_at(f, probe);
    probe[i] = x0 - h;
    const double down = eval_at(f, probe);
    probe[i] = x0;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace lodl::grad
