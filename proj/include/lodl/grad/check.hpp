#pragma once

#include <functional>

#include "lodl/grad/tape.hpp"

namespace lodl::grad {

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|), where g_fd uses
/// central differences with step h.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace lodl::grad
