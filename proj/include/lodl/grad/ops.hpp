#pragma once

#include "lodl/grad/tape.hpp"

namespace lodl::grad {

// Elementwise binary ops accept equal shapes, or one operand whose shape equals
// the other's shape minus its leading (batch) dimension.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

/// [m,k] x [k,n] -> [m,n].
Var matmul(Var a, Var b);

/// x w + b with x [m,k], w [k,n], b [n], as one op (one pass over the output).
Var affine(Var x, Var w, Var b);

Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
/// Throws DomainError for any non-positive entry.
Var log(Var a);
Var square(Var a);

/// max(a, threshold). Gradient is 1 strictly above the threshold and 0 otherwise.
Var clamp_min(Var a, double threshold);

/// Multiplies every entry by a constant.
Var scale(Var a, double factor);

Var reshape(Var a, Shape shape);

/// Full reductions to a rank-0 tensor.
Var sum(Var a);
Var mean(Var a);

/// Generic dispatch used by tests that sweep over op kinds.
Var apply(OpKind kind, Var a);
Var apply(OpKind kind, Var a, Var b);

}  // namespace lodl::grad
