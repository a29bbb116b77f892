#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lodl/grad/tensor.hpp"

namespace lodl::grad {

enum class OpKind {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kMatmul,
  kAffine,
  kRelu,
  kTanh,
  kExp,
  kLog,
  kSum,
  kMean,
  kSquare,
  kClampMin,
  kScale,
  kReshape,
  kCustom,
};

std::string_view op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Thrown on misuse of a tape (second backward, non-scalar root, foreign vars).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Backward rule: given d(root)/d(output), the input values and the output value,
/// return one gradient per input. Entries for inputs with needs[i] == false may be
/// left empty.
using BackwardFn = std::function<std::vector<Tensor>(
    const Tensor& grad_out, std::span<const Tensor* const> inputs, const Tensor& output,
    const std::vector<bool>& needs)>;

class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  bool contains(Var v) const { return grads_.contains(v.id); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Single-use reverse-mode tape. Confined to one thread.
///
/// With recording disabled, ops still compute forward values through the same
/// kernels but no backward rules or input links are kept.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value);

  /// Appends an op result. Inputs must belong to this tape.
  Var record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  /// d(root)/d(leaf) for every leaf created with requires_grad. Consumes the tape.
  Gradients backward(Var root);

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
  bool recording_;
  bool consumed_ = false;
};

}  // namespace lodl::grad
