#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "properties.hpp"
#include "zclf/riccati.hpp"
#include "zclf/verify.hpp"

using namespace zclf;

namespace {

Expression x(std::size_t i) { return Expression::variable(i); }

ControlAffineSystem make_system(std::vector<Expression> f, std::vector<std::vector<Expression>> g, double half) {
  ControlAffineSystem s;
  s.name = "test";
  s.n = f.size();
  s.k = g.front().size();
  s.f = std::move(f);
  s.g = std::move(g);
  s.domain = make_box(s.n, -half, half);
  return s;
}

QuadraticCertificate identity_certificate(std::size_t n, std::size_t k) {
  QuadraticCertificate c;
  c.P = Eigen::MatrixXd::Identity(Eigen::Index(n), Eigen::Index(n));
  c.K = Eigen::MatrixXd::Zero(Eigen::Index(k), Eigen::Index(n));
  return c;
}

QuadraticCertificate lqr_certificate(const Benchmark& b) {
  const auto [A, B] = linearize(b.system);
  return design_quadratic_clf(A, B, b.cost.Q, b.cost.R_at(std::vector<double>(b.system.n, 0.0)));
}

CheckOptions threads(unsigned t) {
  CheckOptions o;
  o.threads = t;
  return o;
}


std::string z3_path() {
  for (const char* p : {"/usr/local/bin/z3", "/usr/bin/z3"})
    if (std::filesystem::exists(p)) return p;
  return {};
}

std::string run_z3(const std::string& query) {
  const auto file = std::filesystem::temp_directory_path() / "zclf_verify_test.smt2";
  std::ofstream(file) << query;
  const std::string cmd = z3_path() + " -T:60 " + file.string();
  std::string out;
  if (FILE* pipe = popen(cmd.c_str(), "r")) {
    char buf[256];
    while (fgets(buf, sizeof buf, pipe)) out += buf;
    pclose(pipe);
  }
  std::filesystem::remove(file);
  while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
  return out;
}

}  // namespace

using testing::cubic_lyapunov;
using testing::witness_contract;

TEST_CASE("stable scalar drift is proved, unstable drift yields a witness") {
  auto stable = make_system({-x(0)}, {{Expression(0.0)}}, 5.0);
  const auto cert = identity_certificate(1, 1);
  const auto c1 = quadratic_clf_condition(stable, cert, stable.domain, 1e-2);
  const auto v1 = check_condition(c1, threads(1));
  CHECK(v1.outcome == Outcome::Proved);

  auto unstable = make_system({x(0)}, {{Expression(0.0)}}, 5.0);
  const auto c2 = quadratic_clf_condition(unstable, cert, unstable.domain, 1e-2);
  const auto v2 = check_condition(c2, threads(1));
  REQUIRE(v2.outcome == Outcome::Counterexample);
  REQUIRE(v2.witness.size() == 1);
  CHECK(std::abs(v2.witness[0]) > 1e-2);
  CHECK(witness_contract(c2, v2.witness, v2.delta));
  CHECK(violates_weakened(c2, v2.witness, v2.delta));
}

TEST_CASE("budget exhaustion reports unknown") {
  auto c = cubic_lyapunov(0.999);
  CheckOptions o = threads(1);
  o.max_boxes = 10;
  CHECK(check_condition(c, o).outcome == Outcome::Unknown);
}

TEST_CASE("bad conditions are rejected") {
  auto c = cubic_lyapunov(0.5);
  CheckOptions o = threads(1);
  o.delta = 0.0;
  CHECK_THROWS(check_condition(c, o));
  c.premises = {at_most(5, 1.0)};
  CHECK_THROWS(check_condition(c, threads(1)));
}

TEST_CASE("proved verdicts survive dense random sampling") {
  for (double c : {0.5, 0.9}) {
    const auto cond = cubic_lyapunov(c);
    REQUIRE(check_condition(cond, threads(1)).proved());
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    std::size_t violations = 0, inside = 0;
    std::vector<double> p(2), v(2);
    for (int s = 0; s < 1'000'000; ++s) {
      p[0] = U(rng);
      p[1] = U(rng);
      if (std::max(std::abs(p[0]), std::abs(p[1])) <= cond.exclusion_radius) continue;
      cond.fields.values(p, v);
      if (v[0] > c) continue;
      ++inside;
      if (!(v[1] < 0.0)) ++violations;
    }
    CHECK(inside > 10000);
    CHECK(violations == 0);
  }

  // reversed VdP closed loop under u = Kx on a level well inside the certified one
  const auto b = get_benchmark("reversed_vdp");
  const auto cert = lqr_certificate(b);
  Condition cond;
  cond.name = "lyapunov";
  cond.fields = quadratic_fields(b.system, cert);
  cond.premises = {at_most(0, 1.0)};
  cond.conclusion = 2 + b.system.k;
  cond.domain = b.system.domain;
  cond.exclusion_radius = 0.05;
  REQUIRE(check_condition(cond, threads(1)).proved());
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  std::vector<double> p(2), v(cond.fields.size());
  std::size_t violations = 0;
  for (int s = 0; s < 1'000'000; ++s) {
    p[0] = U(rng);
    p[1] = U(rng);
    if (std::max(std::abs(p[0]), std::abs(p[1])) <= cond.exclusion_radius) continue;
    cond.fields.values(p, v);
    if (v[0] <= 1.0 && !(v[cond.conclusion] < 0.0)) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("bisection agrees with a linear scan") {
  auto check = [](double c) { return check_condition(cubic_lyapunov(c), threads(1)); };
  const auto bis = bisect_level(0.1, 1.5, check, 5e-4);
  REQUIRE(bis.found);
  // linear scan with step 1e-3 from a proved level upward to the first failure
  double scan = 0.9;
  REQUIRE(check(scan).proved());
  while (check(scan + 1e-3).proved()) scan += 1e-3;
  CHECK(std::abs(bis.level - scan) <= 1e-3);
  CHECK(bis.level < 1.0);
  CHECK(bis.level > 0.99);
  // monotone: every level in the trace below the result was proved
  for (const auto& [c, o] : bis.trace)
    if (c <= bis.level) CHECK(o == Outcome::Proved);
}

TEST_CASE("verdicts and witnesses do not depend on the thread count") {
  const auto b = get_benchmark("reversed_vdp");
  const auto cert = lqr_certificate(b);
  const auto failing = quadratic_clf_condition(b.system, cert, b.system.domain, 0.25);
  const auto proving = cubic_lyapunov(0.95);
  const auto f1 = check_condition(failing, threads(1));
  const auto p1 = check_condition(proving, threads(1));
  REQUIRE(f1.outcome == Outcome::Counterexample);
  REQUIRE(p1.outcome == Outcome::Proved);
  for (unsigned t : {2u, 8u}) {
    const auto f = check_condition(failing, threads(t));
    CHECK(f.outcome == f1.outcome);
    CHECK(f.witness == f1.witness);
    const auto p = check_condition(proving, threads(t));
    CHECK(p.outcome == p1.outcome);
    CHECK(p.boxes == p1.boxes);
  }
}

TEST_CASE("counterexample witnesses meet the delta contract") {
  const auto b = get_benchmark("reversed_vdp");
  const auto cert = lqr_certificate(b);
  for (double delta : {1e-2, 1e-4}) {
    const auto cond = quadratic_clf_condition(b.system, cert, b.system.domain, 0.25);
    CheckOptions o = threads(1);
    o.delta = delta;
    const auto v = check_condition(cond, o);
    REQUIRE(v.outcome == Outcome::Counterexample);
    CHECK(v.delta == delta);
    CHECK(witness_contract(cond, v.witness, delta));
  }
  // a condition that barely fails: the witness sits on the slack boundary
  const auto cond = cubic_lyapunov(1.05);
  const auto v = check_condition(cond, threads(1));
  REQUIRE(v.outcome == Outcome::Counterexample);
  CHECK(witness_contract(cond, v.witness, v.delta));
}

TEST_CASE("large delta never turns a false claim into a proof") {
  const auto cond = cubic_lyapunov(1.5);
  for (double delta : {1e-1, 1.0, 10.0}) {
    CheckOptions o = threads(1);
    o.delta = delta;
    CHECK(check_condition(cond, o).outcome != Outcome::Proved);
  }
}

TEST_CASE("verdict JSON layout") {
  Verdict v;
  v.outcome = Outcome::Counterexample;
  v.delta = 1e-4;
  v.boxes = 12;
  v.witness = {1.0, -2.0};
  auto j = to_json(v, "clf", 0.5);
  CHECK(j.at("condition") == "clf");
  CHECK(j.at("verdict") == "counterexample");
  CHECK(j.at("c") == 0.5);
  CHECK(j.at("witness").size() == 2);
  v.outcome = Outcome::Proved;
  v.witness.clear();
  j = to_json(v, "clf");
  CHECK(j.at("verdict") == "proved");
  CHECK(j.at("witness").is_null());
  CHECK(j.at("c").is_null());
}

TEST_CASE("origin Jacobian test") {
  const Eigen::Matrix2d P = Eigen::Matrix2d::Identity();
  std::vector<Interval> J{Interval(-1.1, -0.9), Interval(-0.1, 0.1), Interval(-0.1, 0.1), Interval(-1.1, -0.9)};
  CHECK(lyapunov_jacobian_certified(P, J));
  J[0] = Interval(-0.1, 0.2);
  CHECK_FALSE(lyapunov_jacobian_certified(P, J));

  // xdot = -x + x^3 on [-r, r]: Jacobian -1 + 3x^2 < 0 iff r < 1/sqrt(3)
  const std::vector<Expression> F{-x(0) + pow(x(0), 3)};
  const Eigen::MatrixXd P1 = Eigen::MatrixXd::Identity(1, 1);
  const double r = certify_origin_radius(
      P1, [&](const Box& box) { return expression_jacobian(F, 1, box); }, 1, 1.0);
  CHECK(r == 0.5);
}

TEST_CASE("boundary minimum of a quadratic form") {
  const auto f = expression_fields({x(0) * x(0) + 2.0 * x(1) * x(1)}, 2);
  const auto m = boundary_minimum(f, 0, make_box(2, -3.0, 3.0));
  CHECK(m.lo <= 9.0);
  CHECK(m.lo >= 9.0 * (1 - 1e-5));
  CHECK(m.hi >= 9.0);
}

TEST_CASE("quadratic verification of a stable linear system reaches c_max") {
  auto sys = make_system({-x(0), -x(1)}, {{Expression(0.0)}, {Expression(1.0)}}, 2.0);
  auto cert = identity_certificate(2, 1);
  QuadraticVerifyOptions o;
  o.c_max = 1.0;
  o.check.threads = 1;
  const auto q = verify_quadratic(sys, cert, o);
  CHECK(q.cert.c_P == 1.0);
  CHECK(q.cert.c_P1 == 1.0);
  CHECK(q.origin_radius > 0.0);
}

TEST_CASE("quadratic verification on reversed VdP") {
  const auto b = get_benchmark("reversed_vdp");
  QuadraticVerifyOptions o;
  o.check.threads = 1;
  const auto q = verify_quadratic(b.system, lqr_certificate(b), o);
  CHECK(q.cert.c_P1 > 0.0);
  CHECK(q.cert.c_P >= q.cert.c_P1);
  CHECK(q.cert.c_P < q.c_max);

  // dense grid cross-check of the delta-relaxed condition inside {V_P <= c_P}
  const auto fields = quadratic_fields(b.system, q.cert);
  const double delta = o.check.delta;
  std::vector<double> p(2), v(fields.size());
  std::size_t violations = 0, inside = 0;
  for (int i = 0; i < 400; ++i)
    for (int j = 0; j < 400; ++j) {
      p[0] = -8.0 + 16.0 * (i + 0.5) / 400;
      p[1] = -8.0 + 16.0 * (j + 0.5) / 400;
      fields.values(p, v);
      if (v[0] > q.cert.c_P) continue;
      ++inside;
      const bool band = v[0] >= q.cert.c_P1 && std::abs(v[2]) <= delta && v[1] >= -delta;
      const bool lyap = v[0] <= q.cert.c_P1 && std::max(std::abs(p[0]), std::abs(p[1])) > q.origin_radius &&
                        v[2 + b.system.k] >= -delta;
      if (band || lyap) ++violations;
    }
  CHECK(inside > 100);
  CHECK(violations == 0);
}

TEST_CASE("learned-value verification of beta(V_P)") {
  // xdot = -x + (0, u): V_P from the Riccati design, W = tanh(alpha V_P)
  auto sys = make_system({-x(0), -x(1)}, {{Expression(0.0)}, {Expression(1.0)}}, 3.0);
  const auto [A, B] = linearize(sys);
  auto cert = design_quadratic_clf(A, B, Eigen::Matrix2d::Identity(), Eigen::MatrixXd::Identity(1, 1));
  cert.c_P1 = cert.c_P = 2.0;
  TransformSpec t;
  auto model = std::make_shared<ExpressionValue>(tanh(Expression(t.alpha) * quadratic_form(cert.P)), 2, t);

  NeuralVerifyOptions o;
  o.check.threads = 1;
  o.rel_tol = 1e-4;
  const auto nv = verify_neural(sys, model, cert, o);
  CHECK(nv.c1 == doctest::Approx(t.beta(cert.c_P)).epsilon(2e-4));
  CHECK(nv.c1 <= t.beta(cert.c_P));
  REQUIRE(nv.c2.has_value());
  CHECK(*nv.c2 == nv.c_max);
  CHECK(*nv.c2 < 1.0);

  o.c_max = 0.5 * nv.c1;
  const auto degenerate = verify_neural(sys, model, cert, o);
  CHECK_FALSE(degenerate.c2.has_value());
  CHECK_FALSE(degenerate.diagnostic.empty());

  // closed loop under the HJB feedback of W: any level inside the domain verifies
  Benchmark bm;
  bm.system = sys;
  bm.cost = quadratic_cost(Eigen::Matrix2d::Identity(), 1);
  auto fb = std::make_shared<HjbFeedback>(bm.system, bm.cost, model);
  NeuralVerifyOptions ro;
  ro.check.threads = 1;
  const auto roa = verify_closed_loop_roa(sys, fb, cert, ro);
  REQUIRE(roa.c.has_value());
  CHECK(*roa.c >= 0.99 * roa.c_max);
}

TEST_CASE("SMT-LIB emission") {
  CHECK(smt_number(0.75) == "(/ 3.0 4.0)");
  CHECK(smt_number(-2.0) == "(- 2.0)");
  CHECK(smt_number(0.0) == "0.0");
  CHECK(smt_number(1024.0) == "1024.0");
  CHECK_THROWS_AS(smt_number(INFINITY), SmtError);
  // the decimal the constant was written as, not its binary expansion
  CHECK(smt_number(0.1) == "(/ 1.0 10.0)");
  CHECK(smt_number(-1.5e-3) == "(- (/ 3.0 2000.0))");
  CHECK(smt_number(3.6e16) == "36000000000000000.0");
  CHECK(smt_number(1e-300) == "(/ 1.0 1" + std::string(300, '0') + ".0)");
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const int k = int(rng() % 7);
    const double v = double(rng() % 1000000 + 1) / std::pow(10.0, k);
    const std::string s = smt_number(v);
    double back = 0.0;
    if (s.starts_with("(/ ")) {
      const auto sp = s.find(' ', 3);
      back = std::stod(s.substr(3, sp - 3)) / std::stod(s.substr(sp + 1));
    } else {
      back = std::stod(s);
    }
    CHECK(back == v);
  }

  // 1 < 0 can never hold, so the negated query is satisfiable
  Condition never;
  never.name = "never";
  never.fields = expression_fields({Expression(1.0)}, 1);
  never.conclusion = 0;
  never.domain = make_box(1, -1.0, 1.0);
  const auto q = emit_smtlib(never);
  CHECK(q == emit_smtlib(never));
  CHECK(q.find("(set-logic QF_NRA)") != std::string::npos);
  CHECK(q.find("(check-sat)") != std::string::npos);

  Condition bad = never;
  bad.fields = expression_fields({exp(x(0))}, 1);
  CHECK_THROWS_AS(emit_smtlib(bad), SmtError);
  CHECK_THROWS_AS(emit_smtlib(never, "QF_LRA"), SmtError);

  if (z3_path().empty()) return;
  CHECK(run_z3(q) == "sat");
  const auto b = get_benchmark("vdp_input");
  const auto cert = lqr_certificate(b);
  const auto global = quadratic_clf_condition(b.system, cert, Box{}, 0.0);
  CHECK(run_z3(emit_smtlib(global)) == "unsat");
  const auto r = get_benchmark("reversed_vdp");
  const auto rev = quadratic_clf_condition(r.system, lqr_certificate(r), Box{}, 0.0);
  CHECK(run_z3(emit_smtlib(rev)) == "sat");
}
