#pragma once

#include <span>

#include "lodl/grad/tape.hpp"

namespace lodl::loss::detail {

/// ReLU network forward: rows of `input` through affine layers, no activation
/// on the last one.
grad::Var nn_forward(grad::Var input, std::span<const grad::Var> weights,
                     std::span<const grad::Var> biases);

}  // namespace lodl::loss::detail
