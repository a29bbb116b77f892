#include "lodl/grad/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

namespace lodl::grad {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

enum class Broadcast { kNone, kRightOverLeft, kLeftOverRight };

Shape drop_leading(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

Broadcast conform(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kNone;
  if (!a.empty() && drop_leading(a) == b) return Broadcast::kRightOverLeft;
  if (!b.empty() && drop_leading(b) == a) return Broadcast::kLeftOverRight;
  throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) + " do not conform");
}

Tape* tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw TapeError("operands belong to different tapes");
  return a.tape;
}

// Sums a full-shape gradient down to a broadcast operand.
Tensor reduce_batch(const Tensor& g, const Shape& target) {
  Tensor out(target, 0.0);
  const std::size_t inner = out.size();
  auto src = g.data();
  auto dst = out.data();
  for (std::size_t base = 0; base < src.size(); base += inner) {
    const double* row = src.data() + base;
    for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i];
  }
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, Broadcast mode, F f) {
  const Tensor& big = mode == Broadcast::kLeftOverRight ? b : a;
  Tensor out(big.shape(), 0.0);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  const std::size_t na = x.size();
  const std::size_t nb = y.size();
  if (na == nb) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  } else if (na > nb) {
    for (std::size_t base = 0; base < na; base += nb) {
      for (std::size_t i = 0; i < nb; ++i) o[base + i] = f(x[base + i], y[i]);
    }
  } else {
    for (std::size_t base = 0; base < nb; base += na) {
      for (std::size_t i = 0; i < na; ++i) o[base + i] = f(x[i], y[base + i]);
    }
  }
  return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape(), 0.0);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
  return out;
}

void check_finite(std::string_view op, const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw DomainError(std::string(op) + ": produced a non-finite value");
  }
}

Var binary(OpKind kind, Var a, Var b) {
  Tape* tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = conform(op_name(kind), av.shape(), bv.shape());
  Tensor out;
  switch (kind) {
    case OpKind::kAdd: out = zip(av, bv, mode, [](double x, double y) { return x + y; }); break;
    case OpKind::kSub: out = zip(av, bv, mode, [](double x, double y) { return x - y; }); break;
    case OpKind::kMul: out = zip(av, bv, mode, [](double x, double y) { return x * y; }); break;
    default: throw TapeError("not a binary elementwise op");
  }
  auto backward = [kind, mode](const Tensor& g, std::span<const Tensor* const> in, const Tensor&,
                               const std::vector<bool>& needs) {
    std::vector<Tensor> grads(2);
    const Tensor& x = *in[0];
    const Tensor& y = *in[1];
    auto fit = [&](Tensor full, const Tensor& operand) {
      return full.shape() == operand.shape() ? full : reduce_batch(full, operand.shape());
    };
    if (needs[0]) {
      Tensor ga = kind == OpKind::kMul ? zip(g, y, mode == Broadcast::kLeftOverRight ? Broadcast::kNone : mode,
                                             [](double gi, double yi) { return gi * yi; })
                                       : g;
      grads[0] = fit(std::move(ga), x);
    }
    if (needs[1]) {
      Tensor gb;
      if (kind == OpKind::kMul) {
        gb = zip(g, x, mode == Broadcast::kRightOverLeft ? Broadcast::kNone : mode,
                 [](double gi, double xi) { return gi * xi; });
      } else if (kind == OpKind::kSub) {
        gb = map(g, [](double gi) { return -gi; });
      } else {
        gb = g;
      }
      grads[1] = fit(std::move(gb), y);
    }
    return grads;
  };
  return tape->record(kind, std::move(out), {a, b}, backward);
}

template <typename Fwd, typename Deriv>
Var unary(OpKind kind, Var a, Fwd fwd, Deriv deriv) {
  Tensor out = map(a.value(), fwd);
  auto backward = [deriv](const Tensor& g, std::span<const Tensor* const> in, const Tensor& y,
                          const std::vector<bool>&) {
    Tensor ga(g.shape(), 0.0);
    auto o = ga.data();
    auto gi = g.data();
    auto x = in[0]->data();
    auto yv = y.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = gi[i] * deriv(x[i], yv[i]);
    return std::vector<Tensor>{std::move(ga)};
  };
  return a.tape->record(kind, std::move(out), {a}, backward);
}

}  // namespace

Var add(Var a, Var b) { return binary(OpKind::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::kSub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::kMul, a, b); }

Var matmul(Var a, Var b) {
  Tape* tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw ShapeError("matmul: shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()) +
                     " do not conform");
  }
  const auto m = static_cast<Eigen::Index>(av.shape()[0]);
  const auto k = static_cast<Eigen::Index>(av.shape()[1]);
  const auto n = static_cast<Eigen::Index>(bv.shape()[1]);
  Tensor out(Shape{av.shape()[0], bv.shape()[1]}, 0.0);
  MutMap(out.data().data(), m, n).noalias() = ConstMap(av.data().data(), m, k) * ConstMap(bv.data().data(), k, n);
  auto backward = [m, k, n](const Tensor& g, std::span<const Tensor* const> in, const Tensor&,
                            const std::vector<bool>& needs) {
    std::vector<Tensor> grads(2);
    ConstMap gm(g.data().data(), m, n);
    if (needs[0]) {
      grads[0] = Tensor(in[0]->shape(), 0.0);
      MutMap(grads[0].data().data(), m, k).noalias() = gm * ConstMap(in[1]->data().data(), k, n).transpose();
    }
    if (needs[1]) {
      grads[1] = Tensor(in[1]->shape(), 0.0);
      MutMap(grads[1].data().data(), k, n).noalias() = ConstMap(in[0]->data().data(), m, k).transpose() * gm;
    }
    return grads;
  };
  return tape->record(OpKind::kMatmul, std::move(out), {a, b}, backward);
}

Var affine(Var x, Var w, Var b) {
  Tape* tape = tape_of(x, w);
  tape_of(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[0] || bv.shape() != Shape{wv.shape()[1]}) {
    throw ShapeError("affine: shapes " + to_string(xv.shape()) + ", " + to_string(wv.shape()) + " and " +
                     to_string(bv.shape()) + " do not conform");
  }
  const auto m = static_cast<Eigen::Index>(xv.shape()[0]);
  const auto k = static_cast<Eigen::Index>(xv.shape()[1]);
  const auto n = static_cast<Eigen::Index>(wv.shape()[1]);
  Tensor out(Shape{xv.shape()[0], wv.shape()[1]}, 0.0);
  MutMap om(out.data().data(), m, n);
  om.noalias() = ConstMap(xv.data().data(), m, k) * ConstMap(wv.data().data(), k, n);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), n);
  auto backward = [m, k, n](const Tensor& g, std::span<const Tensor* const> in, const Tensor&,
                            const std::vector<bool>& needs) {
    std::vector<Tensor> grads(3);
    ConstMap gm(g.data().data(), m, n);
    if (needs[0]) {
      grads[0] = Tensor(in[0]->shape(), 0.0);
      MutMap(grads[0].data().data(), m, k).noalias() = gm * ConstMap(in[1]->data().data(), k, n).transpose();
    }
    if (needs[1]) {
      grads[1] = Tensor(in[1]->shape(), 0.0);
      MutMap(grads[1].data().data(), k, n).noalias() = ConstMap(in[0]->data().data(), m, k).transpose() * gm;
    }
    if (needs[2]) {
      // Row-by-row accumulation: an Eigen reduction here would sum in an order
      // that depends on the buffer's alignment.
      grads[2] = Tensor(in[2]->shape(), 0.0);
      auto gb = grads[2].data();
      auto gv = g.data();
      for (Eigen::Index r = 0; r < m; ++r) {
        const double* row = gv.data() + r * n;
        for (Eigen::Index c = 0; c < n; ++c) gb[static_cast<std::size_t>(c)] += row[c];
      }
    }
    return grads;
  };
  return tape->record(OpKind::kAffine, std::move(out), {x, w, b}, backward);
}

Var relu(Var a) {
  return unary(
      OpKind::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(
      OpKind::kTanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  Var out = unary(
      OpKind::kExp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
  check_finite("exp", out.value());
  return out;
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      OpKind::kLog, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      OpKind::kSquare, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp_min(Var a, double threshold) {
  return unary(
      OpKind::kClampMin, a, [threshold](double x) { return x > threshold ? x : threshold; },
      [threshold](double x, double) { return x > threshold ? 1.0 : 0.0; });
}

Var scale(Var a, double factor) {
  return unary(
      OpKind::kScale, a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Var reshape(Var a, Shape shape) {
  const Shape original = a.shape();
  Tensor out = a.value().reshaped(std::move(shape));
  auto backward = [original](const Tensor& g, std::span<const Tensor* const>, const Tensor&,
                             const std::vector<bool>&) { return std::vector<Tensor>{g.reshaped(original)}; };
  return a.tape->record(OpKind::kReshape, std::move(out), {a}, backward);
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  auto backward = [](const Tensor& g, std::span<const Tensor* const> in, const Tensor&, const std::vector<bool>&) {
    return std::vector<Tensor>{Tensor(in[0]->shape(), g.item())};
  };
  return a.tape->record(OpKind::kSum, Tensor::scalar(total), {a}, backward);
}

Var mean(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const double n = static_cast<double>(a.value().size());
  auto backward = [n](const Tensor& g, std::span<const Tensor* const> in, const Tensor&, const std::vector<bool>&) {
    return std::vector<Tensor>{Tensor(in[0]->shape(), g.item() / n)};
  };
  return a.tape->record(OpKind::kMean, Tensor::scalar(total / n), {a}, backward);
}

Var apply(OpKind kind, Var a) {
  switch (kind) {
    case OpKind::kRelu: return relu(a);
    case OpKind::kTanh: return tanh(a);
    case OpKind::kExp: return exp(a);
    case OpKind::kLog: return log(a);
    case OpKind::kSum: return sum(a);
    case OpKind::kMean: return mean(a);
    case OpKind::kSquare: return square(a);
    default: throw TapeError("apply: " + std::string(op_name(kind)) + " is not a unary op");
  }
}

Var apply(OpKind kind, Var a, Var b) {
  switch (kind) {
    case OpKind::kAdd: return add(a, b);
    case OpKind::kSub: return sub(a, b);
    case OpKind::kMul: return mul(a, b);
    case OpKind::kMatmul: return matmul(a, b);
    default: throw TapeError("apply: " + std::string(op_name(kind)) + " is not a binary op");
  }
}

}  // namespace lodl::grad
