#include "lodl/domains/webadv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace lodl::domains {
namespace {

double coverage(std::span<const double> z, std::span<const double> y, std::size_t m, std::size_t n) {
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double miss = 1.0;
    for (std::size_t i = 0; i < m; ++i) miss *= 1.0 - z[i] * y[i * n + j];
    total += 1.0 - miss;
  }
  return total / static_cast<double>(n);
}

// Product over websites of (1 - z_k y_kj), skipping up to two indices.
double miss_except(std::span<const double> z, std::span<const double> y, std::size_t m, std::size_t n,
                   std::size_t j, std::size_t skip1, std::size_t skip2) {
  double p = 1.0;
  for (std::size_t k = 0; k < m; ++k) {
    if (k != skip1 && k != skip2) p *= 1.0 - z[k] * y[k * n + j];
  }
  return p;
}

void coverage_grad(std::span<const double> z, std::span<const double> y, std::size_t m, std::size_t n,
                   std::span<double> out) {
  for (std::size_t i = 0; i < m; ++i) {
    double g = 0.0;
    for (std::size_t j = 0; j < n; ++j) g += y[i * n + j] * miss_except(z, y, m, n, j, i, i);
    out[i] = g / static_cast<double>(n);
  }
}

// Clamp to [0,1]; rescale onto sum = B if the budget is exceeded. Returns the
// scale factor applied (1 when inactive).
double cap_project(std::span<const double> w, std::span<double> c, std::span<double> z, double budget) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    c[i] = std::clamp(w[i], 0.0, 1.0);
    s += c[i];
  }
  const double scale = s > budget ? budget / s : 1.0;
  for (std::size_t i = 0; i < w.size(); ++i) z[i] = c[i] * scale;
  return scale;
}

struct AscentTrace {
  std::vector<std::vector<double>> z;  // [T+1][m]
  std::vector<std::vector<double>> w;  // [T][m] pre-projection iterate
  std::vector<std::vector<double>> c;  // [T][m] clamped
  std::vector<double> sum_c;           // [T]
};

}  // namespace

double webadv_objective(std::span<const double> z, std::span<const double> y, std::size_t websites,
                        std::size_t users) {
  if (z.size() != websites || y.size() != websites * users) throw OracleError("webadv_objective: size mismatch");
  for (double v : y) {
    if (!(v >= 0.0 && v <= 1.0)) throw OracleError("webadv_objective: CTR outside [0,1]: " + std::to_string(v));
  }
  return coverage(z, y, websites, users);
}

std::vector<std::size_t> webadv_oracle(std::span<const double> yhat, std::size_t websites, std::size_t users,
                                       std::size_t budget) {
  if (websites > 20) throw OracleError("webadv_oracle: too many websites to enumerate");
  if (budget == 0 || budget > websites) throw OracleError("webadv_oracle: budget out of range");
  if (yhat.size() != websites * users) throw OracleError("webadv_oracle: size mismatch");
  // Walk B-subsets in lexicographic order; strict improvement keeps the first best.
  std::vector<std::size_t> pick(budget);
  for (std::size_t i = 0; i < budget; ++i) pick[i] = i;
  std::vector<std::size_t> best = pick;
  double best_value = -std::numeric_limits<double>::infinity();
  std::vector<double> z(websites, 0.0);
  while (true) {
    std::fill(z.begin(), z.end(), 0.0);
    for (auto i : pick) z[i] = 1.0;
    const double v = coverage(z, yhat, websites, users);
    if (v > best_value) {
      best_value = v;
      best = pick;
    }
    std::size_t pos = budget;
    while (pos > 0 && pick[pos - 1] == websites - budget + pos - 1) --pos;
    if (pos == 0) break;
    ++pick[pos - 1];
    for (std::size_t i = pos; i < budget; ++i) pick[i] = pick[i - 1] + 1;
  }
  return best;
}

grad::Var webadv_multilinear(grad::Var yhat, std::size_t websites, std::size_t users, std::size_t budget,
                             std::size_t steps, double step_size) {
  const auto& shape = yhat.shape();
  const std::size_t m = websites;
  const std::size_t n = users;
  if (shape.size() != 2 || shape[1] != m * n) {
    throw grad::ShapeError("webadv_multilinear: expected [rows," + std::to_string(m * n) + "], got " +
                           grad::to_string(shape));
  }
  if (steps == 0) throw OracleError("webadv_multilinear: steps must be >= 1");
  const std::size_t rows = shape[0];
  const double cap = static_cast<double>(budget);

  auto traces = std::make_shared<std::vector<AscentTrace>>(rows);
  grad::Tensor out(grad::Shape{rows, m}, 0.0);
  std::vector<double> g(m);
  for (std::size_t r = 0; r < rows; ++r) {
    auto y = yhat.value().data().subspan(r * m * n, m * n);
    auto& tr = (*traces)[r];
    tr.z.assign(steps + 1, std::vector<double>(m, std::min(1.0, cap / static_cast<double>(m))));
    tr.w.assign(steps, std::vector<double>(m));
    tr.c.assign(steps, std::vector<double>(m));
    tr.sum_c.assign(steps, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      coverage_grad(tr.z[t], y, m, n, g);
      for (std::size_t i = 0; i < m; ++i) tr.w[t][i] = tr.z[t][i] + step_size * g[i];
      cap_project(tr.w[t], tr.c[t], tr.z[t + 1], cap);
      double s = 0.0;
      for (double v : tr.c[t]) s += v;
      tr.sum_c[t] = s;
    }
    std::copy(tr.z[steps].begin(), tr.z[steps].end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * m));
  }

  auto backward = [traces, m, n, cap, steps, step_size, rows](const grad::Tensor& gout,
                                                               std::span<const grad::Tensor* const> in,
                                                               const grad::Tensor&, const std::vector<bool>&) {
    grad::Tensor gy(in[0]->shape(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> zbar(m), cbar(m), wbar(m);
    for (std::size_t r = 0; r < rows; ++r) {
      auto y = in[0]->data().subspan(r * m * n, m * n);
      auto ybar = gy.data().subspan(r * m * n, m * n);
      const auto& tr = (*traces)[r];
      for (std::size_t i = 0; i < m; ++i) zbar[i] = gout[r * m + i];
      for (std::size_t t = steps; t-- > 0;) {
        const auto& c = tr.c[t];
        const auto& w = tr.w[t];
        const auto& z = tr.z[t];
        if (tr.sum_c[t] > cap) {
          const double s = tr.sum_c[t];
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += zbar[i] * c[i];
          for (std::size_t i = 0; i < m; ++i) cbar[i] = cap / s * zbar[i] - cap / (s * s) * dot;
        } else {
          cbar = zbar;
        }
        for (std::size_t i = 0; i < m; ++i) wbar[i] = (w[i] > 0.0 && w[i] < 1.0) ? cbar[i] : 0.0;
        // w = z + eta * g(z, yhat); z-bar gets the identity plus eta * (dg/dz)^T w-bar.
        zbar = wbar;
        for (std::size_t i = 0; i < m; ++i) {
          if (wbar[i] == 0.0) continue;
          const double coef = step_size * wbar[i] * inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const double yij = y[i * n + j];
            ybar[i * n + j] += coef * miss_except(z, y, m, n, j, i, i);
            for (std::size_t k = 0; k < m; ++k) {
              if (k == i) continue;
              const double q = miss_except(z, y, m, n, j, i, k);
              zbar[k] -= coef * yij * y[k * n + j] * q;
              ybar[k * n + j] -= coef * yij * z[k] * q;
            }
          }
        }
      }
    }
    return std::vector<grad::Tensor>{std::move(gy)};
  };
  return yhat.tape->record(grad::OpKind::kCustom, std::move(out), {yhat}, backward);
}

WebAdvProblem::WebAdvProblem(std::size_t websites, std::size_t users, std::size_t budget, std::size_t steps,
                             double step_size)
    : websites_(websites), users_(users), budget_(budget), steps_(steps), step_size_(step_size) {
  if (budget == 0 || budget >= websites) throw std::invalid_argument("webadv: budget must be in [1, websites)");
}

double WebAdvProblem::objective(std::span<const double> z, std::span<const double> y) const {
  return webadv_objective(z, y, websites_, users_);
}

void WebAdvProblem::objective_grad(std::span<const double> z, std::span<const double> y,
                                   std::span<double> out) const {
  coverage_grad(z, y, websites_, users_, out);
}

Decision WebAdvProblem::do_solve_exact(std::span<const double> yhat) const {
  Decision z(websites_, 0.0);
  for (auto i : webadv_oracle(yhat, websites_, users_, budget_)) z[i] = 1.0;
  return z;
}

grad::Var WebAdvProblem::do_solve_surrogate(grad::Var yhat) const {
  return webadv_multilinear(yhat, websites_, users_, budget_, steps_, step_size_);
}

}  // namespace lodl::domains
