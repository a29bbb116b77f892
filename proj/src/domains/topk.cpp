#include "lodl/domains/topk.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace lodl::domains {

std::vector<std::size_t> topk_oracle(std::span<const double> yhat, std::size_t budget) {
  if (budget == 0 || budget > yhat.size()) {
    throw OracleError("topk: budget " + std::to_string(budget) + " out of range for " +
                      std::to_string(yhat.size()) + " items");
  }
  std::vector<std::size_t> idx(yhat.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(budget), idx.end(),
                    [&](std::size_t a, std::size_t b) { return yhat[a] > yhat[b] || (yhat[a] == yhat[b] && a < b); });
  idx.resize(budget);
  return idx;
}

namespace {

// Scaling-form Sinkhorn between n items (mass 1/n each) and two bins: "chosen"
// with mass B/n and kernel exp(yhat/eps), "rest" with mass (n-B)/n and kernel 1.
// The kernel is shifted by the row max, which leaves the output unchanged.
struct SinkhornTrace {
  std::vector<double> k;               // [d]
  std::vector<std::vector<double>> u;  // [T+1][d], u[0] = 1
  std::vector<double> a, b;            // [T+1]
};

void sinkhorn_row(std::span<const double> yhat, std::size_t budget, double eps, std::size_t iters,
                  SinkhornTrace& tr, std::span<double> z) {
  const std::size_t d = yhat.size();
  const double nd = static_cast<double>(d);
  const double mu = 1.0 / nd;
  const double nu0 = static_cast<double>(budget) / nd;
  const double nu1 = static_cast<double>(d - budget) / nd;
  const double shift = *std::max_element(yhat.begin(), yhat.end());
  tr.k.resize(d);
  for (std::size_t i = 0; i < d; ++i) tr.k[i] = std::exp((yhat[i] - shift) / eps);
  tr.u.assign(iters + 1, std::vector<double>(d, 1.0));
  tr.a.assign(iters + 1, 0.0);
  tr.b.assign(iters + 1, 0.0);
  auto update_v = [&](std::size_t t) {
    double sk = 0.0, su = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      sk += tr.k[i] * tr.u[t][i];
      su += tr.u[t][i];
    }
    tr.a[t] = nu0 / sk;
    tr.b[t] = nu1 / su;
  };
  update_v(0);
  for (std::size_t t = 1; t <= iters; ++t) {
    for (std::size_t i = 0; i < d; ++i) tr.u[t][i] = mu / (tr.k[i] * tr.a[t - 1] + tr.b[t - 1]);
    update_v(t);
  }
  for (std::size_t i = 0; i < d; ++i) z[i] = nd * tr.u[iters][i] * tr.k[i] * tr.a[iters];
}

void sinkhorn_row_backward(const SinkhornTrace& tr, std::size_t budget, double eps, std::span<const double> zbar,
                           std::span<double> ybar) {
  const std::size_t d = tr.k.size();
  const std::size_t iters = tr.u.size() - 1;
  const double nd = static_cast<double>(d);
  const double mu = 1.0 / nd;
  const double nu0 = static_cast<double>(budget) / nd;
  const double nu1 = static_cast<double>(d - budget) / nd;

  std::vector<double> kbar(d, 0.0), ubar(d, 0.0);
  double abar = 0.0, bbar = 0.0;
  {
    const auto& u = tr.u[iters];
    const double a = tr.a[iters];
    for (std::size_t i = 0; i < d; ++i) {
      ubar[i] = zbar[i] * nd * tr.k[i] * a;
      kbar[i] += zbar[i] * nd * u[i] * a;
      abar += zbar[i] * nd * u[i] * tr.k[i];
    }
  }
  for (std::size_t t = iters; t >= 1; --t) {
    const auto& u = tr.u[t];
    const double sa_bar = -abar * tr.a[t] * tr.a[t] / nu0;
    const double sb_bar = -bbar * tr.b[t] * tr.b[t] / nu1;
    double abar_prev = 0.0, bbar_prev = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double ub = ubar[i] + sa_bar * tr.k[i] + sb_bar;
      kbar[i] += sa_bar * u[i];
      const double dbar = -ub * u[i] * u[i] / mu;
      kbar[i] += dbar * tr.a[t - 1];
      abar_prev += dbar * tr.k[i];
      bbar_prev += dbar;
      ubar[i] = 0.0;
    }
    abar = abar_prev;
    bbar = bbar_prev;
  }
  // a[0] = nu0 / sum k_i (u[0] = 1); b[0] does not depend on k.
  const double sa_bar = -abar * tr.a[0] * tr.a[0] / nu0;
  for (std::size_t i = 0; i < d; ++i) {
    kbar[i] += sa_bar;
    ybar[i] = kbar[i] * tr.k[i] / eps;
  }
}

}  // namespace

grad::Var soft_topk(grad::Var yhat, std::size_t budget, double epsilon, std::size_t iterations) {
  const auto& shape = yhat.shape();
  if (shape.size() != 2) throw grad::ShapeError("soft_topk: expected [n,d], got " + grad::to_string(shape));
  if (!(epsilon > 0.0) || iterations == 0) throw OracleError("soft_topk: need epsilon > 0 and iterations >= 1");
  const std::size_t n = shape[0];
  const std::size_t d = shape[1];
  if (budget == 0 || budget >= d) throw OracleError("soft_topk: budget must be in [1, d)");

  grad::Tensor out(shape, 0.0);
  auto traces = std::make_shared<std::vector<SinkhornTrace>>(n);
  auto yd = yhat.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    sinkhorn_row(yd.subspan(r * d, d), budget, epsilon, iterations, (*traces)[r], out.data().subspan(r * d, d));
  }
  auto backward = [traces, budget, epsilon, n, d](const grad::Tensor& g, std::span<const grad::Tensor* const> in,
                                                   const grad::Tensor&, const std::vector<bool>&) {
    grad::Tensor gy(in[0]->shape(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      sinkhorn_row_backward((*traces)[r], budget, epsilon, g.data().subspan(r * d, d), gy.data().subspan(r * d, d));
    }
    return std::vector<grad::Tensor>{std::move(gy)};
  };
  return yhat.tape->record(grad::OpKind::kCustom, std::move(out), {yhat}, backward);
}

TopKProblem::TopKProblem(std::size_t items, std::size_t budget, double epsilon, std::size_t iterations)
    : items_(items), budget_(budget), epsilon_(epsilon), iterations_(iterations) {
  if (budget == 0 || budget >= items) throw std::invalid_argument("topk: budget must be in [1, items)");
}

double TopKProblem::objective(std::span<const double> z, std::span<const double> y) const {
  double total = 0.0;
  for (std::size_t i = 0; i < items_; ++i) total += z[i] * y[i];
  return total;
}

void TopKProblem::objective_grad(std::span<const double>, std::span<const double> y, std::span<double> out) const {
  std::copy(y.begin(), y.end(), out.begin());
}

Decision TopKProblem::do_solve_exact(std::span<const double> yhat) const {
  Decision z(items_, 0.0);
  for (auto i : topk_oracle(yhat, budget_)) z[i] = 1.0;
  return z;
}

grad::Var TopKProblem::do_solve_surrogate(grad::Var yhat) const {
  return soft_topk(yhat, budget_, epsilon_, iterations_);
}

}  // namespace lodl::domains
