#include "lodl/grad/tape.hpp"

#include <algorithm>
#include <string>

namespace lodl::grad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAffine: return "affine";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSquare: return "square";
    case OpKind::kClampMin: return "clamp_min";
    case OpKind::kScale: return "scale";
    case OpKind::kReshape: return "reshape";
    case OpKind::kCustom: return "custom";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (tape == nullptr) throw TapeError("value() on a null Var");
  return tape->value(*this);
}

const Tensor& Gradients::operator[](Var v) const {
  auto it = grads_.find(v.id);
  if (it == grads_.end()) throw TapeError("no gradient recorded for node " + std::to_string(v.id));
  return it->second;
}

void Tape::check_owned(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw TapeError("Var does not belong to this tape");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::kLeaf, std::move(value), {}, {}, requires_grad && recording_});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::kConstant, std::move(value), {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (consumed_) throw TapeError("tape already consumed by backward()");
  Node node{kind, std::move(value), {}, {}, false};
  if (recording_) {
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
      check_owned(in);
      node.inputs.push_back(in.id);
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id].requires_grad;
}

Gradients Tape::backward(Var root) {
  check_owned(root);
  if (consumed_) throw TapeError("backward() called twice on one tape");
  if (!recording_) throw TapeError("backward() on a tape with recording disabled");
  if (nodes_[root.id].value.size() != 1) {
    throw TapeError("backward() root must be scalar, got shape " + to_string(nodes_[root.id].value.shape()));
  }
  consumed_ = true;

  std::vector<Tensor> grads(root.id + 1);
  grads[root.id] = Tensor(nodes_[root.id].value.shape(), 1.0);

  Gradients out;
  std::vector<const Tensor*> input_values;
  std::vector<bool> needs;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!grads[id].defined() || !node.requires_grad) continue;
    if (node.kind == OpKind::kLeaf) {
      out.grads_.emplace(id, std::move(grads[id]));
      continue;
    }
    input_values.clear();
    needs.clear();
    for (auto in : node.inputs) {
      input_values.push_back(&nodes_[in].value);
      needs.push_back(nodes_[in].requires_grad);
    }
    std::vector<Tensor> in_grads = node.backward(grads[id], input_values, node.value, needs);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!needs[i] || !in_grads[i].defined()) continue;
      Tensor& acc = grads[node.inputs[i]];
      if (!acc.defined()) {
        acc = std::move(in_grads[i]);
      } else {
        auto dst = acc.data();
        auto src = in_grads[i].data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    grads[id] = Tensor();
    node.backward = nullptr;
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.kind == OpKind::kLeaf && node.requires_grad && !out.grads_.contains(id)) {
      out.grads_.emplace(id, Tensor(node.value.shape(), 0.0));
    }
  }
  return out;
}

}  // namespace lodl::grad
