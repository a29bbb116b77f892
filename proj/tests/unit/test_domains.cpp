#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "lodl/domains/dataset.hpp"
#include "lodl/domains/portfolio.hpp"
#include "lodl/domains/topk.hpp"
#include "lodl/domains/webadv.hpp"
#include "lodl/grad/check.hpp"
#include "lodl/grad/ops.hpp"

using namespace lodl::domains;
using lodl::grad::Tape;
using lodl::grad::Tensor;
using lodl::grad::Var;

namespace {

std::vector<double> uniform_vec(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Independent enumerator: bitmasks in increasing numeric order, keeps the
// subset whose sorted index list is lexicographically smallest among ties.
std::vector<std::size_t> brute_force_subset(const std::vector<double>& y, std::size_t m, std::size_t n,
                                            std::size_t b) {
  double best = -1e300;
  std::vector<std::size_t> best_set;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != b) continue;
    std::vector<std::size_t> set;
    for (std::size_t i = 0; i < m; ++i) {
      if (mask & (1u << i)) set.push_back(i);
    }
    double value = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double p = 1.0;
      for (auto i : set) p *= 1.0 - y[i * n + j];
      value += 1.0 - p;
    }
    value /= static_cast<double>(n);
    if (value > best || (value == best && set < best_set)) {
      best = value;
      best_set = set;
    }
  }
  return best_set;
}

Eigen::MatrixXd random_psd(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  Eigen::MatrixXd q = a * a.transpose() / static_cast<double>(n);
  return q;
}

}  // namespace

TEST_CASE("linear utility reference values") {
  CHECK(linear_utility(0.0) == 0.0);
  CHECK(linear_utility(1.0) == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(linear_utility(0.5) == doctest::Approx(-2.0).epsilon(1e-15));
}

TEST_CASE("topk oracle") {
  CHECK(topk_oracle(std::vector<double>{0.2, 0.9, 0.5}, 1) == std::vector<std::size_t>{1});
  CHECK(topk_oracle(std::vector<double>{1, 1, 0}, 1) == std::vector<std::size_t>{0});
  CHECK(topk_oracle(std::vector<double>{3, 1, 2, 5}, 2) == std::vector<std::size_t>{3, 0});
  CHECK_THROWS_AS(topk_oracle(std::vector<double>{1, 2}, 3), OracleError);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto y = uniform_vec(20, rng, -1, 1);
    auto picked = topk_oracle(y, 3);
    std::vector<double> transformed(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) transformed[i] = std::exp(3.0 * y[i]) + 7.0;
    CHECK(topk_oracle(transformed, 3) == picked);
  }
}

TEST_CASE("soft top-k relaxation") {
  SUBCASE("sums to budget with entries in (0,1)") {
    std::mt19937_64 rng(1);
    Tape tape(false);
    auto y = uniform_vec(4 * 50, rng, -3.5, 3.5);
    auto z = soft_topk(tape.leaf(Tensor({4, 50}, y), false), 3, 0.1, 100);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < 50; ++i) {
        const double v = z.value()[r * 50 + i];
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        s += v;
      }
      CHECK(std::abs(s - 3.0) <= 1e-6);
    }
  }
  SUBCASE("uniform predictions give uniform output") {
    Tape tape(false);
    auto z = soft_topk(tape.leaf(Tensor({1, 8}, 0.3), false), 1, 0.5, 100);
    for (double v : z.value().data()) CHECK(v == doctest::Approx(1.0 / 8).epsilon(1e-12));
  }
  SUBCASE("small temperature approaches the hard argmax") {
    Tape tape(false);
    std::vector<double> y{0.1, 0.3, 2.0, 0.2, -0.4};
    auto z = soft_topk(tape.leaf(Tensor({1, 5}, y), false), 1, 0.01, 100);
    auto hard = topk_oracle(y, 1);
    CHECK(z.value()[hard[0]] >= 0.99);
  }
  SUBCASE("gradient matches finite differences") {
    std::mt19937_64 rng(2);
    std::vector<double> w = uniform_vec(2 * 6, rng, -1, 1);
    auto f = [&](Tape& t, Var v) {
      auto z = soft_topk(v, 2, 0.5, 30);
      return lodl::grad::sum(lodl::grad::mul(z, t.constant(Tensor({2, 6}, w))));
    };
    CHECK(lodl::grad::finite_diff_check(f, Tensor({2, 6}, uniform_vec(12, rng, -1, 1))) <= 1e-6);
  }
}

TEST_CASE("webadv objective and oracle") {
  CHECK(webadv_objective(std::vector<double>{0, 0}, std::vector<double>{0.5, 0.5}, 2, 1) == 0.0);
  CHECK(webadv_objective(std::vector<double>{1}, std::vector<double>{0.5, 0.5}, 1, 2) == 0.5);
  CHECK(webadv_objective(std::vector<double>{1, 1}, std::vector<double>{0.5, 0.5}, 2, 1) == 0.75);
  CHECK_THROWS_AS(webadv_objective(std::vector<double>{1}, std::vector<double>{1.5}, 1, 1), OracleError);

  // Equal CTRs: every subset ties, lexicographically first wins.
  CHECK(webadv_oracle(std::vector<double>(50, 0.1), 5, 10, 2) == std::vector<std::size_t>{0, 1});

  // Two dominant websites.
  std::vector<double> y(5 * 10, 0.01);
  for (std::size_t j = 0; j < 10; ++j) {
    y[1 * 10 + j] = 0.15;
    y[3 * 10 + j] = 0.12;
  }
  CHECK(webadv_oracle(y, 5, 10, 2) == std::vector<std::size_t>{1, 3});

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto yr = uniform_vec(5 * 10, rng, 0.0, 0.2);
    CHECK(webadv_oracle(yr, 5, 10, 2) == brute_force_subset(yr, 5, 10, 2));
  }
}

TEST_CASE("webadv multilinear unroll") {
  SUBCASE("full budget converges to all ones") {
    Tape tape(false);
    std::mt19937_64 rng(4);
    auto z = webadv_multilinear(tape.leaf(Tensor({1, 30}, uniform_vec(30, rng, 0.05, 0.2)), false), 3, 10, 3,
                                50, 0.5);
    for (double v : z.value().data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("dominant pair gets the mass; box and budget hold") {
    std::vector<double> y(5 * 10, 0.01);
    for (std::size_t j = 0; j < 10; ++j) {
      y[1 * 10 + j] = 0.6;
      y[3 * 10 + j] = 0.5;
    }
    Tape tape(false);
    auto z = webadv_multilinear(tape.leaf(Tensor({1, 50}, y), false), 5, 10, 2, 50, 0.5);
    const auto& zv = z.value();
    CHECK(zv[1] + zv[3] >= 0.9 * 2);
    double s = 0.0;
    for (double v : zv.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(s <= 2.0 + 1e-9);
  }
  SUBCASE("gradient matches finite differences") {
    std::mt19937_64 rng(12);
    WebAdvProblem problem(5, 10, 2, 20, 0.5);
    const Tensor ytrue({2, 50}, uniform_vec(100, rng, 0.0, 0.2));
    auto f = [&](Tape&, Var v) { return lodl::grad::sum(problem.objective_on_tape(problem.solve_surrogate(v), ytrue)); };
    // Scaled-up CTRs keep iterates off the projection kinks.
    CHECK(lodl::grad::finite_diff_check(f, Tensor({2, 50}, uniform_vec(100, rng, 0.0, 0.6))) <= 1e-5);
  }
}

TEST_CASE("capped simplex projection") {
  std::vector<double> out(3);
  CHECK_FALSE(project_capped_simplex(std::vector<double>{0.2, -0.5, 0.3}, out));
  CHECK(out == std::vector<double>{0.2, 0.0, 0.3});
  CHECK(project_capped_simplex(std::vector<double>{0.9, 0.8, -1.0}, out));
  CHECK(out[0] == doctest::Approx(0.55));
  CHECK(out[1] == doctest::Approx(0.45));
  CHECK(out[2] == 0.0);
  CHECK_FALSE(project_capped_simplex(std::vector<double>{5.0, 0.0, 0.0}, out));
  CHECK(out == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("portfolio oracle") {
  std::mt19937_64 rng(21);
  SUBCASE("linear objective puts all mass on the single positive stock") {
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(3, 3);
    auto s = portfolio_oracle(std::vector<double>{-0.1, 0.4, -0.2}, q, 0.0);
    CHECK(s.z == std::vector<double>{0, 1, 0});
  }
  SUBCASE("all negative predictions hold nothing") {
    Eigen::MatrixXd q = random_psd(4, rng);
    auto s = portfolio_oracle(std::vector<double>{-0.1, -0.4, -0.2, -1.0}, q, 0.1);
    for (double v : s.z) CHECK(v == 0.0);
  }
  SUBCASE("matches a dense grid search for three stocks") {
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::MatrixXd q = random_psd(3, rng);
      auto y = uniform_vec(3, rng, -1, 1);
      const double lambda = 0.5;
      auto s = portfolio_oracle(y, q, lambda);
      const double solved = portfolio_objective(s.z, y, q, lambda);
      double best = -1e300;
      const int steps = 1000;
      for (int a = 0; a <= steps; ++a) {
        for (int b = 0; a + b <= steps; ++b) {
          for (int c = 0; a + b + c <= steps; ++c) {
            const double z0 = a * 1e-3, z1 = b * 1e-3, z2 = c * 1e-3;
            const double risk = q(0, 0) * z0 * z0 + q(1, 1) * z1 * z1 + q(2, 2) * z2 * z2 +
                                2.0 * (q(0, 1) * z0 * z1 + q(0, 2) * z0 * z2 + q(1, 2) * z1 * z2);
            best = std::max(best, z0 * y[0] + z1 * y[1] + z2 * y[2] - lambda * risk);
          }
        }
      }
      CHECK(solved >= best - 1e-4);
      CHECK(s.residual <= 1e-8);
      double sum = 0.0;
      for (double v : s.z) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(sum <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("portfolio unroll") {
  std::mt19937_64 rng(31);
  SUBCASE("200-step unroll is within 1e-4 of the exact oracle") {
    for (int trial = 0; trial < 10; ++trial) {
      Eigen::MatrixXd q = random_psd(10, rng);
      PortfolioProblem problem(q, 0.1);
      auto y = uniform_vec(10, rng, -1, 1);
      Tape tape(false);
      auto z = problem.solve_surrogate(tape.leaf(Tensor({1, 10}, y), false));
      const double unrolled = problem.objective(z.value().data(), y);
      const double exact = problem.objective(problem.solve_exact(y), y);
      CHECK(exact - unrolled <= 1e-4);
    }
  }
  SUBCASE("one small step moves along the positive part of the prediction") {
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(3, 3);
    Tape tape(false);
    auto z = portfolio_unroll(tape.leaf(Tensor({1, 3}, std::vector<double>{0.5, -0.2, 0.1}), false), q, 0.0, 1, 0.01);
    CHECK(z.value()[0] == doctest::Approx(0.005));
    CHECK(z.value()[1] == 0.0);
    CHECK(z.value()[2] == doctest::Approx(0.001));
  }
  SUBCASE("decision-loss gradient matches finite differences") {
    Eigen::MatrixXd q = random_psd(6, rng);
    PortfolioProblem problem(q, 0.1, 200);
    const Tensor ytrue({2, 6}, uniform_vec(12, rng, -0.2, 0.2));
    auto f = [&](Tape&, Var v) { return lodl::grad::sum(problem.objective_on_tape(problem.solve_surrogate(v), ytrue)); };
    CHECK(lodl::grad::finite_diff_check(f, Tensor({2, 6}, uniform_vec(12, rng, -1, 1))) <= 1e-3);
  }
}

TEST_CASE("dataset generators") {
  SUBCASE("linear") {
    auto data = generate_dataset(DomainConfig::defaults(DomainKind::kLinear));
    CHECK(data.train.size() == 200);
    CHECK(data.val.size() == 200);
    CHECK(data.test.size() == 400);
    for (std::size_t i = 0; i < 50; ++i) CHECK(data.train[0].y[i] == linear_utility(data.train[0].features[i]));
  }
  SUBCASE("webadv CTRs lie in [0, 0.2]") {
    auto data = generate_dataset(DomainConfig::defaults(DomainKind::kWebAdv));
    CHECK(data.train.size() == 80);
    CHECK(data.test.size() == 500);
    for (const auto& r : data.test) {
      for (double v : r.y) {
        CHECK(v >= 0.0);
        CHECK(v <= 0.2);
      }
    }
  }
  SUBCASE("portfolio correlation matrix") {
    auto cfg = DomainConfig::defaults(DomainKind::kPortfolio);
    auto data = generate_dataset(cfg);
    const auto n = static_cast<Eigen::Index>(data.items);
    Eigen::Map<const Eigen::MatrixXd> q(data.q.data(), n, n);
    for (Eigen::Index i = 0; i < n; ++i) CHECK(q(i, i) == doctest::Approx(1.0).epsilon(1e-7));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= 0.0);
    double min_same = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        if (i % static_cast<Eigen::Index>(cfg.factors) == j % static_cast<Eigen::Index>(cfg.factors)) {
          min_same = std::min(min_same, q(i, j));
        }
      }
    }
    CHECK(min_same >= 0.8);
  }
  SUBCASE("generation is deterministic and round-trips through files") {
    for (auto kind : {DomainKind::kLinear, DomainKind::kWebAdv, DomainKind::kPortfolio}) {
      auto cfg = DomainConfig::defaults(kind);
      cfg.seed = 17;
      auto a = generate_dataset(cfg);
      auto b = generate_dataset(cfg);
      CHECK(a.train == b.train);
      auto dir = std::filesystem::temp_directory_path() / ("lodl_ds_" + std::string(domain_name(kind)));
      write_dataset(a, dir);
      auto c = read_dataset(dir);
      CHECK(c.train == a.train);
      CHECK(c.val == a.val);
      CHECK(c.test == a.test);
      CHECK(c.q == a.q);
      std::filesystem::remove_all(dir);
    }
  }
}

TEST_CASE("optimal labels are optimal") {
  std::mt19937_64 rng(8);
  for (auto kind : {DomainKind::kLinear, DomainKind::kWebAdv, DomainKind::kPortfolio}) {
    auto cfg = DomainConfig::defaults(kind);
    cfg.n_train = 10;
    cfg.n_val = 1;
    cfg.n_test = 1;
    auto data = generate_dataset(cfg);
    auto problem = make_problem(data);
    for (const auto& rec : data.train) {
      const double best = problem->decision_quality(rec.y, rec.y);
      for (int k = 0; k < 20; ++k) {
        auto yhat = rec.y;
        std::normal_distribution<double> g(0.0, 0.1);
        for (double& v : yhat) v += g(rng);
        CHECK(problem->decision_quality(yhat, rec.y) <= best + 1e-9);
      }
    }
  }
}
