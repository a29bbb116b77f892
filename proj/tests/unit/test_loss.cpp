#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

#include "lodl/common/io.hpp"
#include "lodl/domains/dataset.hpp"
#include "lodl/loss/loss.hpp"
#include "lodl/sampling/sampling.hpp"

using namespace lodl::loss;
using lodl::sampling::SampleTable;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

LossParams random_params(Family f, std::size_t dim, std::mt19937_64& rng) {
  switch (f) {
    case Family::kWeightedMSE: return WeightedMSE{random_vec(dim, rng, 0.01, 2.0)};
    case Family::kDirectedWeightedMSE:
      return DirectedWeightedMSE{random_vec(dim, rng, 0.01, 2.0), random_vec(dim, rng, 0.01, 2.0)};
    case Family::kQuadratic: return Quadratic{dim, 2, random_vec(dim * 2, rng), 0.01};
    case Family::kDirectedQuadratic:
      return DirectedQuadratic{dim, 2, random_vec(dim * 2, rng), random_vec(dim * 2, rng), 0.01};
    case Family::kNN: {
      FitConfig cfg;
      cfg.hidden = 8;
      cfg.steps = 1;
      // A one-step fit gives a randomly initialized network in the stored layout.
      SampleTable t;
      t.dim = dim;
      t.y.assign(dim, 0.0);
      t.yhat = random_vec(dim, rng);
      t.dq = {0.0};
      return fit_gd(t, Family::kNN, cfg).params;
    }
  }
  return {};
}

// Table whose targets come from a known loss: dq_at_truth = 0, dq_k = -target.
SampleTable synthetic_table(std::size_t dim, std::size_t k, bool one_perturbed, std::mt19937_64& rng,
                            const std::function<double(const std::vector<double>&)>& target) {
  SampleTable t;
  t.instance_id = 7;
  t.dim = dim;
  t.y = random_vec(dim, rng, 0.0, 1.0);
  std::uniform_int_distribution<std::size_t> coord(0, dim - 1);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (std::size_t r = 0; r < k; ++r) {
    std::vector<double> d(dim, 0.0);
    if (one_perturbed) {
      d[coord(rng)] = noise(rng);
    } else {
      for (double& v : d) v = noise(rng);
    }
    for (std::size_t i = 0; i < dim; ++i) t.yhat.push_back(t.y[i] + d[i]);
    t.dq.push_back(-target(d));
  }
  return t;
}

double dense_min_eigenvalue(std::span<const double> l, std::size_t dim, std::size_t rank, double floor) {
  Eigen::MatrixXd m(dim, rank);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t r = 0; r < rank; ++r) m(i, r) = l[i * rank + r];
  Eigen::MatrixXd h = m * m.transpose() + floor * Eigen::MatrixXd::Identity(dim, dim);
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h).eigenvalues().minCoeff();
}

}  // namespace

TEST_CASE("loss values on small examples") {
  const std::vector<double> y{0.5, 0.5};
  CHECK(eval_loss(WeightedMSE{{2, 3}}, std::vector<double>{1.5, -0.5}, y) == doctest::Approx(5.0));
  CHECK(eval_loss(Quadratic{2, 2, {1, 0, 0, 1}, 0.0}, std::vector<double>{1.5, 0.5}, y) == doctest::Approx(1.0));
  // d = [1, -1]: plus weight on the first coordinate, minus weight on the second.
  CHECK(eval_loss(DirectedWeightedMSE{{1, 2}, {3, 4}}, std::vector<double>{1.5, -0.5}, y) == doctest::Approx(5.0));
  // Over-prediction along [1,0] and under-prediction along [0,1] both count once.
  CHECK(eval_loss(DirectedQuadratic{2, 1, {1, 0}, {0, 1}, 0.01}, std::vector<double>{1.5, -0.5}, y) ==
        doctest::Approx(2.02));
  CHECK(eval_loss(DirectedQuadratic{2, 1, {1, 0}, {0, 1}, 0.01}, std::vector<double>{-0.5, 1.5}, y) ==
        doctest::Approx(0.02));
  CHECK_THROWS_AS(eval_loss(WeightedMSE{{1, 1, 1}}, std::vector<double>{1, 2}, y), std::invalid_argument);
}

TEST_CASE("weighted loss gradient is 2 w d") {
  std::vector<double> g(2);
  grad_loss(WeightedMSE{{2, 3}}, std::vector<double>{1.5, -0.5}, std::vector<double>{0.5, 0.5}, g);
  CHECK(g[0] == doctest::Approx(4.0));
  CHECK(g[1] == doctest::Approx(-6.0));
}

TEST_CASE("every family is zero with zero gradient at the truth") {
  std::mt19937_64 rng(3);
  const auto y = random_vec(6, rng);
  for (Family f : kAllFamilies) {
    const auto p = random_params(f, 6, rng);
    std::vector<double> g(6, 1.0);
    CHECK(grad_loss(p, y, y, g) == doctest::Approx(0.0).epsilon(1e-12));
    if (is_convex(f)) {
      for (double v : g) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("loss gradients match central differences at generic points") {
  std::mt19937_64 rng(11);
  for (Family f : kAllFamilies) {
    CAPTURE(family_name(f));
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t dim = 5;
      const auto p = random_params(f, dim, rng);
      const auto y = random_vec(dim, rng);
      auto yhat = random_vec(dim, rng);
      std::vector<double> g(dim);
      grad_loss(p, yhat, y, g);
      double worst = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double h = 1e-6;
        const double x0 = yhat[i];
        yhat[i] = x0 + h;
        const double up = eval_loss(p, yhat, y);
        yhat[i] = x0 - h;
        const double down = eval_loss(p, yhat, y);
        yhat[i] = x0;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
      }
      CHECK(worst <= 1e-5);
    }
  }
}

TEST_CASE("batched evaluation matches single-row evaluation") {
  std::mt19937_64 rng(5);
  for (Family f : kAllFamilies) {
    const auto p = random_params(f, 4, rng);
    const auto d = random_vec(12, rng);
    std::vector<double> values(3), grads(12);
    eval_grad_batch(p, d, 3, values, grads);
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<double> g(4);
      const std::vector<double> zero(4, 0.0);
      const double v = grad_loss(p, std::span(d).subspan(r * 4, 4), zero, g);
      CHECK(values[r] == doctest::Approx(v).epsilon(1e-12));
      for (std::size_t i = 0; i < 4; ++i) CHECK(grads[r * 4 + i] == doctest::Approx(g[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("convex families pass random chord tests and are positive off the truth") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Family f : kAllFamilies) {
    if (!is_convex(f)) continue;
    CAPTURE(family_name(f));
    const auto p = random_params(f, 8, rng);
    const auto y = random_vec(8, rng);
    int failures = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const auto a = random_vec(8, rng, -3, 3);
      const auto b = random_vec(8, rng, -3, 3);
      const double t = unit(rng);
      std::vector<double> mid(8);
      for (std::size_t i = 0; i < 8; ++i) mid[i] = t * a[i] + (1 - t) * b[i];
      const double la = eval_loss(p, a, y);
      if (eval_loss(p, mid, y) > t * la + (1 - t) * eval_loss(p, b, y) + 1e-9) ++failures;
      if (!(la > 0.0)) ++failures;
    }
    CHECK(failures == 0);
  }
}

TEST_CASE("special cases of the quadratic families") {
  std::mt19937_64 rng(23);
  const auto w = random_vec(4, rng, 0.5, 2.0);
  const double floor = 0.01;
  std::vector<double> l(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) l[i * 4 + i] = std::sqrt(w[i] - floor);
  const Quadratic diag{4, 4, l, floor};
  const auto lr = random_vec(8, rng);
  const Quadratic q{4, 2, lr, floor};
  const DirectedQuadratic dq{4, 2, lr, lr, floor};
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_vec(4, rng);
    const auto y = random_vec(4, rng);
    CHECK(eval_loss(diag, a, y) == doctest::Approx(eval_loss(WeightedMSE{w}, a, y)).epsilon(1e-12));
    // Equal factors give max(x,0)^2 + min(x,0)^2 = x^2 per direction.
    CHECK(eval_loss(dq, a, y) == doctest::Approx(eval_loss(q, a, y)).epsilon(1e-12));
  }
}

TEST_CASE("psd certificate") {
  CHECK(psd_certificate(Quadratic{3, 2, std::vector<double>(6, 0.0), 0.01})[0] == doctest::Approx(0.01));
  std::mt19937_64 rng(29);
  for (std::size_t dim : {2u, 10u, 50u}) {
    for (std::size_t rank : {1u, 2u, 5u}) {
      const auto l = random_vec(dim * rank, rng);
      const double lam = psd_certificate(Quadratic{dim, rank, l, 0.01})[0];
      CHECK(lam >= 0.01 - 1e-9);
      CHECK(lam == doctest::Approx(dense_min_eigenvalue(l, dim, rank, 0.01)).epsilon(0).scale(1).epsilon(1e-6));
    }
  }
  // Full-rank factor with a spread spectrum.
  const auto l = random_vec(20 * 20, rng);
  CHECK(std::abs(psd_certificate(Quadratic{20, 20, l, 0.01})[0] - dense_min_eigenvalue(l, 20, 20, 0.01)) <= 1e-6);
  CHECK(psd_certificate(DirectedQuadratic{3, 1, {1, 0, 0}, {0, 0, 0}, 0.5}).size() == 2);
  CHECK_THROWS_AS(psd_certificate(random_params(Family::kNN, 3, rng)), std::invalid_argument);
}

TEST_CASE("gradient fit recovers known weights") {
  std::mt19937_64 rng(31);
  auto table = synthetic_table(6, 400, false, rng, [](const std::vector<double>& d) {
    double s = 0;
    for (double v : d) s += 2 * v * v;
    return s;
  });
  FitConfig cfg;
  const auto fit = fit_gd(table, Family::kWeightedMSE, cfg);
  for (double w : std::get<WeightedMSE>(fit.params).w) CHECK(w == doctest::Approx(2.0).epsilon(0).scale(1).epsilon(1e-2));
}

TEST_CASE("zero targets give floor weights") {
  std::mt19937_64 rng(37);
  auto table = synthetic_table(5, 100, false, rng, [](const std::vector<double>&) { return 0.0; });
  FitConfig cfg;
  const auto fit = fit_gd(table, Family::kWeightedMSE, cfg);
  for (double w : std::get<WeightedMSE>(fit.params).w) CHECK(w == cfg.w_min);
  const auto cf = fit_weighted_mse_closed_form(table, Family::kDirectedWeightedMSE, cfg);
  for (double w : std::get<DirectedWeightedMSE>(cf.params).w_plus) CHECK(w == cfg.w_min);
}

TEST_CASE("closed form on one-perturbed tables") {
  std::mt19937_64 rng(41);
  auto table = synthetic_table(5, 200, true, rng, [](const std::vector<double>& d) {
    double s = 0;
    for (double v : d) s += 3 * v * v;
    return s;
  });
  FitConfig cfg;
  const auto fit = fit_weighted_mse_closed_form(table, Family::kWeightedMSE, cfg);
  for (double w : std::get<WeightedMSE>(fit.params).w) {
    CHECK(w == doctest::Approx(3.0).epsilon(1e-10));
  }
  CHECK_THROWS_AS(fit_weighted_mse_closed_form(table, Family::kQuadratic, cfg), std::invalid_argument);
}

TEST_CASE("closed form with no negative-side samples uses the floor") {
  std::mt19937_64 rng(43);
  auto table = synthetic_table(3, 60, true, rng, [](const std::vector<double>& d) { return d[0] * d[0] + d[1] * d[1]; });
  // Make every perturbation of coordinate 2 positive.
  for (std::size_t r = 0; r < table.size(); ++r) {
    double& v = table.yhat[r * 3 + 2];
    v = table.y[2] + std::abs(v - table.y[2]);
  }
  FitConfig cfg;
  const auto p = std::get<DirectedWeightedMSE>(fit_weighted_mse_closed_form(table, Family::kDirectedWeightedMSE, cfg).params);
  CHECK(p.w_minus[2] == cfg.w_min);
}

TEST_CASE("closed form agrees with a long gradient run") {
  std::mt19937_64 rng(47);
  const auto w_true = random_vec(6, rng, 0.0, 4.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  auto table = synthetic_table(6, 300, true, rng, [&](const std::vector<double>& d) {
    double s = 0;
    for (std::size_t i = 0; i < d.size(); ++i) s += w_true[i] * d[i] * d[i];
    return s + noise(rng);
  });
  FitConfig cfg;
  const auto cf = std::get<WeightedMSE>(fit_weighted_mse_closed_form(table, Family::kWeightedMSE, cfg).params).w;
  cfg.optimizer = Optimizer::kGradientDescent;
  cfg.learning_rate = 0.0;
  cfg.steps = 5000;
  const auto gd = std::get<WeightedMSE>(fit_gd(table, Family::kWeightedMSE, cfg).params).w;
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(cf[i] - gd[i]) <= 1e-3);
}

TEST_CASE("fit curves and determinism") {
  std::mt19937_64 rng(53);
  auto table = synthetic_table(6, 300, false, rng, [](const std::vector<double>& d) {
    return std::max(d[0], 0.0) * std::max(d[0], 0.0) * 4 + (d[1] + d[2]) * (d[1] + d[2]);
  });
  FitConfig cfg;
  cfg.record_curve = true;
  for (Family f : kAllFamilies) {
    CAPTURE(family_name(f));
    const auto a = fit_gd(table, f, cfg);
    const auto b = fit_gd(table, f, cfg);
    CHECK(a.objective == b.objective);
    CHECK(a.curve.size() == cfg.steps + 1);
    CHECK(a.curve.back() < a.curve.front());
    CHECK(a.objective == doctest::Approx(fit_objective(a.params, table)));
  }
  cfg.optimizer = Optimizer::kGradientDescent;
  cfg.learning_rate = 0.0;
  const auto mono = fit_gd(table, Family::kDirectedWeightedMSE, cfg);
  for (std::size_t i = 1; i < mono.curve.size(); ++i) CHECK(mono.curve[i] <= mono.curve[i - 1] + 1e-12);
}

TEST_CASE("fitted quadratic on a webadv instance decreases monotonically with a small rate") {
  using namespace lodl::domains;
  auto dc = DomainConfig::defaults(DomainKind::kWebAdv);
  dc.n_train = 1;
  dc.n_val = 1;
  dc.n_test = 1;
  const auto data = generate_dataset(dc);
  auto problem = make_problem(data);
  lodl::sampling::SamplingConfig sc;
  sc.samples = 500;
  sc.alpha = 0.05;
  const auto table = lodl::sampling::build_sample_table(data.train[0], *problem, sc);
  problem->reset_counters();
  FitConfig cfg;
  cfg.record_curve = true;
  cfg.optimizer = Optimizer::kGradientDescent;
  cfg.learning_rate = 0.01;
  const auto fit = fit_gd(table, Family::kQuadratic, cfg);
  for (std::size_t i = 1; i < fit.curve.size(); ++i) CHECK(fit.curve[i] <= fit.curve[i - 1] + 1e-15);
  for (Family f : kAllFamilies) (void)fit_gd(table, f, FitConfig{});
  (void)fit_weighted_mse_closed_form(table, Family::kWeightedMSE, FitConfig{});
  CHECK(problem->oracle_calls() == 0);
  CHECK(problem->surrogate_calls() == 0);
}

TEST_CASE("fitted parameters respect the floor") {
  std::mt19937_64 rng(59);
  auto table = synthetic_table(5, 200, false, rng, [](const std::vector<double>& d) { return 5 * d[0] * d[0] - 0.5; });
  FitConfig cfg;
  const auto fit = fit_gd(table, Family::kWeightedMSE, cfg);
  for (double w : std::get<WeightedMSE>(fit.params).w) CHECK(w >= cfg.w_min);
  const auto dw = std::get<DirectedWeightedMSE>(fit_gd(table, Family::kDirectedWeightedMSE, cfg).params);
  for (double w : dw.w_plus) CHECK(w >= cfg.w_min);
  for (double w : dw.w_minus) CHECK(w >= cfg.w_min);
  const auto quad = fit_gd(table, Family::kDirectedQuadratic, cfg);
  for (double lam : psd_certificate(quad.params)) CHECK(lam >= cfg.w_min - 1e-9);
}

TEST_CASE("fitted losses round-trip through the store") {
  std::mt19937_64 rng(61);
  std::vector<FittedLoss> losses;
  std::size_t id = 0;
  for (Family f : kAllFamilies) {
    FittedLoss fl;
    fl.instance_id = id++;
    fl.params = random_params(f, 4, rng);
    fl.objective = 0.1 * static_cast<double>(id) / 3.0;
    fl.steps = 100;
    losses.push_back(std::move(fl));
  }
  const auto path = std::filesystem::temp_directory_path() / "lodl_test_losses.tsv";
  write_losses(path, losses);
  const auto back = read_losses(path);
  REQUIRE(back.size() == losses.size());
  const auto y = random_vec(4, rng);
  const auto yhat = random_vec(4, rng);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].instance_id == losses[i].instance_id);
    CHECK(back[i].objective == losses[i].objective);
    CHECK(family_of(back[i].params) == family_of(losses[i].params));
    CHECK(eval_loss(back[i].params, yhat, y) == eval_loss(losses[i].params, yhat, y));
  }
  lodl::write_file_atomic(path, "lodl-losses 99\n");
  CHECK_THROWS_AS(read_losses(path), lodl::FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("fit config validation") {
  FitConfig cfg;
  cfg.w_min = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = FitConfig{};
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = FitConfig{};
  cfg.rank = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_THROWS_AS(fit_gd(SampleTable{}, Family::kWeightedMSE, FitConfig{}), std::invalid_argument);
}
