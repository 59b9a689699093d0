#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "zclf/pmp.hpp"

using namespace zclf;

namespace {

ControlAffineSystem integrator() {
  ControlAffineSystem s;
  s.name = "integrator";
  s.n = 1;
  s.k = 1;
  s.f = {Expression(0.0)};
  s.g = {{Expression(1.0)}};
  s.domain = make_box(1, -3.0, 3.0);
  return s;
}

CostSpec unit_cost(std::size_t n, std::size_t k) { return quadratic_cost(Eigen::MatrixXd::Identity(n, n), k); }

}  // namespace

TEST_CASE("beta transform reference values") {
  TransformSpec kr{TransformSpec::Kind::Kruzkov, 0.1};
  TransformSpec th{TransformSpec::Kind::Tanh, 0.1};
  CHECK(kr.beta(0.0) == 0.0);
  CHECK(th.beta(0.0) == 0.0);
  CHECK(kr.beta(10.0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-15));
  CHECK(kr.beta(10.0) == doctest::Approx(0.632121).epsilon(1e-6));
  CHECK(th.beta(10.0) == doctest::Approx(0.761594).epsilon(1e-6));
  CHECK_THROWS_AS(th.beta(-1.0), std::invalid_argument);
  CHECK(th.inverse(th.beta(3.5)) == doctest::Approx(3.5));
  CHECK(kr.inverse(kr.beta(3.5)) == doctest::Approx(3.5));
}

TEST_CASE("beta satisfies its differential equation") {
  for (const auto kind : {TransformSpec::Kind::Kruzkov, TransformSpec::Kind::Tanh}) {
    TransformSpec t{kind, 0.37};
    double prev = -1.0;
    for (double s = 0.0; s < 40.0; s += 0.173) {
      const double b = t.beta(s);
      CHECK(b > prev);
      CHECK(b < 1.0);
      prev = b;
      const double h = 1e-5;
      const double fd = (t.beta(s + h) - t.beta(std::max(0.0, s - h))) / (s + h - std::max(0.0, s - h));
      CHECK(std::abs(fd - t.phi(b)) <= 1e-6);
      CHECK(t.phi(b) == doctest::Approx((1.0 - b) * t.psi(b)).epsilon(1e-14));
    }
  }
}

TEST_CASE("adjoint equation equals minus the state gradient of the Hamiltonian") {
  // oracle: H(x, u, lambda) = q + u^T R u + lambda^T (f + g u) differentiated numerically in x
  for (const std::string name : {"vdp_input", "reversed_vdp", "pendulum", "mass_spring_4d"}) {
    const auto b = get_benchmark(name);
    const auto& s = b.system;
    const std::size_t n = s.n;
    const auto F = pmp_rhs(s, b.cost);
    const auto U = pmp_control(s, b.cost);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> z(2 * n + 1);
      for (auto& v : z) v = d(rng);
      std::vector<double> u(s.k);
      for (std::size_t j = 0; j < s.k; ++j) u[j] = eval(U[j], z);
      const std::vector<double> lam(z.begin() + n, z.begin() + 2 * n);
      auto H = [&](std::span<const double> x) {
        const Eigen::VectorXd xdot = s.drift(x) + s.input_matrix(x) * Eigen::Map<const Eigen::VectorXd>(u.data(), s.k);
        double h = eval(b.cost.q, x);
        const Eigen::MatrixXd R = b.cost.R_at(x);
        const Eigen::Map<const Eigen::VectorXd> uv(u.data(), s.k);
        h += uv.dot(R * uv);
        for (std::size_t i = 0; i < n; ++i) h += lam[i] * xdot(i);
        return h;
      };
      const std::vector<double> x(z.begin(), z.begin() + n);
      for (std::size_t i = 0; i < n; ++i) {
        const double expected = -testing::central_difference(H, x, i);
        CHECK(eval(F[n + i], z) == doctest::Approx(expected).epsilon(1e-6).scale(1.0));
      }
      // u* minimizes H: 2 R u + g^T lambda = 0
      const Eigen::MatrixXd G = s.input_matrix(x);
      const Eigen::VectorXd stat = 2.0 * b.cost.R_at(x) * Eigen::Map<const Eigen::VectorXd>(u.data(), s.k) +
                                   G.transpose() * Eigen::Map<const Eigen::VectorXd>(lam.data(), n);
      CHECK(stat.norm() < 1e-12);
    }
  }
}

TEST_CASE("tpbvp: equilibrium start") {
  const auto b = get_benchmark("vdp_input");
  TpbvpOptions opt;
  opt.T = 20.0;
  opt.N = 50;
  const auto sol = solve_tpbvp(b.system, b.cost, std::vector<double>{0.0, 0.0}, opt);
  REQUIRE(sol.converged);
  CHECK(sol.x.cwiseAbs().maxCoeff() == 0.0);
  CHECK(sol.lambda.cwiseAbs().maxCoeff() == 0.0);
  CHECK(sol.V.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tpbvp: scalar LQR against the closed form") {
  TpbvpOptions opt;
  opt.T = 20.0;
  opt.N = 500;
  opt.tol = 1e-5;
  const auto sol = solve_tpbvp(integrator(), unit_cost(1, 1), std::vector<double>{1.0}, opt);
  REQUIRE(sol.converged);
  CHECK(std::abs(sol.V0() - 1.0) <= 1e-4);
  CHECK(std::abs(sol.lambda(0, 0) - 2.0) <= 1e-3);
  CHECK(std::abs(sol.quadrature_cost - sol.V0()) <= 10 * opt.tol);
  // boundary conditions and pointwise optimal control
  CHECK(std::abs(sol.x(0, 0) - 1.0) <= opt.tol);
  CHECK(std::abs(sol.lambda(sol.lambda.rows() - 1, 0)) <= opt.tol);
  CHECK(std::abs(sol.V(sol.V.size() - 1)) <= opt.tol);
  for (Eigen::Index i = 0; i < sol.u.rows(); i += 37) {
    CHECK(sol.u(i, 0) == doctest::Approx(-0.5 * sol.lambda(i, 0)).epsilon(1e-14));
    CHECK(sol.x(i, 0) == doctest::Approx(std::exp(-sol.t[i])).epsilon(1e-4).scale(1e-4));
  }
}

TEST_CASE("tpbvp: value decreases and matches quadrature on benchmarks") {
  for (const std::string name : {"vdp_input", "reversed_vdp"}) {
    const auto b = get_benchmark(name);
    TpbvpOptions opt;
    opt.T = 30.0;
    opt.N = 300;
    opt.tol = 1e-6;
    const auto sol = solve_tpbvp(b.system, b.cost, std::vector<double>{0.6, -0.4}, opt);
    INFO(name, " ", sol.message);
    REQUIRE(sol.converged);
    CHECK(sol.max_residual <= opt.tol);
    CHECK(std::abs(sol.quadrature_cost - sol.V0()) <= 10 * opt.tol);
    for (Eigen::Index i = 0; i + 1 < sol.V.size(); ++i) CHECK(sol.V(i + 1) <= sol.V(i) + opt.tol);
    CHECK(sol.x.row(sol.x.rows() - 1).norm() < 1e-3);
  }
}

TEST_CASE("tpbvp: argument validation") {
  TpbvpOptions opt;
  opt.N = 5;
  CHECK_THROWS_AS(solve_tpbvp(integrator(), unit_cost(1, 1), std::vector<double>{1.0}, opt), std::invalid_argument);
  opt.N = 50;
  CHECK_THROWS_AS(solve_tpbvp(integrator(), unit_cost(1, 1), std::vector<double>{1.0, 2.0}, opt),
                  std::invalid_argument);
}

TEST_CASE("uniform sampling is keyed by (seed, index)") {
  const Box box{{-4.0, 4.0}, {-1.0, 3.0}};
  const auto a = sample_uniform(box, 7, 123);
  CHECK(a == sample_uniform(box, 7, 123));
  CHECK(a != sample_uniform(box, 8, 123));
  CHECK(a != sample_uniform(box, 7, 124));
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const auto x = sample_uniform(box, 1, i);
    for (std::size_t d = 0; d < 2; ++d) CHECK(box[d].contains(x[d]));
    mean += x[1] / 20000.0;
  }
  CHECK(mean == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("dataset generation: empty, deterministic, thread-count independent") {
  const auto b = get_benchmark("reversed_vdp");
  DatasetConfig cfg;
  cfg.n_samples = 0;
  cfg.domain = b.data_domain;
  CHECK(generate_dataset(b.system, b.cost, cfg).samples.empty());

  cfg.n_samples = 12;
  cfg.tpbvp.T = 40.0;
  cfg.tpbvp.N = 400;
  cfg.tpbvp.tol = 1e-5;
  cfg.seed = 5;
  cfg.threads = 1;
  const auto one = generate_dataset(b.system, b.cost, cfg);
  cfg.threads = 3;
  const auto three = generate_dataset(b.system, b.cost, cfg);
  REQUIRE(one.samples.size() == three.samples.size());
  CHECK(one.samples.size() > 0);
  for (std::size_t i = 0; i < one.samples.size(); ++i) {
    CHECK(one.samples[i].x0 == three.samples[i].x0);
    CHECK(one.samples[i].V0 == three.samples[i].V0);
  }
  for (const auto& s : one.samples) {
    CHECK(s.W0 > 0.0);
    CHECK(s.W0 < 1.0);
    CHECK(s.W0 == doctest::Approx(cfg.transform.beta(s.V0)));
    CHECK(s.quadrature_error <= 10 * cfg.tpbvp.tol);
  }

  const auto dir = std::filesystem::temp_directory_path() / "zclf_test_pmp";
  std::filesystem::remove_all(dir);
  write_dataset(one, dir / "dataset.jsonl");
  CHECK(std::filesystem::exists(dir / "dataset.config.json"));
  const auto back = read_dataset(dir / "dataset.jsonl");
  REQUIRE(back.samples.size() == one.samples.size());
  CHECK(back.samples[0].V0 == one.samples[0].V0);
  CHECK(back.samples[0].x0 == one.samples[0].x0);
  CHECK(back.attempted == 12);
  CHECK(back.config.tpbvp.N == 400);
  CHECK(back.config.seed == 5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset domain must lie inside the system domain") {
  const auto b = get_benchmark("reversed_vdp");
  DatasetConfig cfg;
  cfg.n_samples = 1;
  cfg.domain = make_box(2, -9.0, 9.0);
  CHECK_THROWS_AS(generate_dataset(b.system, b.cost, cfg), std::invalid_argument);
}
