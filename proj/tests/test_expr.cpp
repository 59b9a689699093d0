#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numbers>
#include <random>

#include "oracles.hpp"
#include "properties.hpp"
#include "zclf/expr.hpp"

using namespace zclf;

namespace {

Expression x(std::size_t i) { return Expression::variable(i - 1); }

}  // namespace

using testing::random_box;
using testing::random_expression;

TEST_CASE("parse: single variable") {
  const Expression e = parse_expression("x2", 2);
  CHECK(e.op() == Op::Var);
  CHECK(e.index() == 1);
}

TEST_CASE("parse: Van der Pol second component") {
  const Expression e = parse_expression("-x1 + x2*(1 - x1^2)", 2);
  const std::vector<double> p{1.0, 1.0};
  CHECK(eval(e, p) == doctest::Approx(-1.0));
  CHECK(parse_expression(e.to_string(), 2) == e);
}

TEST_CASE("parse: errors carry offsets") {
  try {
    parse_expression("x1 + ", 1);
    FAIL("expected a parse error");
  } catch (const ParseError& err) {
    CHECK(err.offset() == 5);
  }
  CHECK_THROWS_AS(parse_expression("x1 + foo", 1), ParseError);
  CHECK_THROWS_AS(parse_expression("x3", 2), ParseError);
  CHECK_THROWS_AS(parse_expression("x1 + u1", 2), ParseError);
  CHECK_THROWS_AS(parse_expression("x1^1.5", 2), ParseError);
  CHECK_THROWS_AS(parse_expression("(x1", 2), ParseError);
  CHECK(parse_expression("x1 + u1", 2, 1).required_arity() == 3);
  try {
    parse_expression("x1 * y", 1);
  } catch (const ParseError& err) {
    CHECK(err.offset() == 5);
  }
}

TEST_CASE("parse: precedence and powers") {
  const std::vector<double> p{3.0, 2.0};
  CHECK(eval(parse_expression("-x1^2", 2), p) == doctest::Approx(-9.0));
  CHECK(eval(parse_expression("x1 - x2 - 1", 2), p) == doctest::Approx(0.0));
  CHECK(eval(parse_expression("x1 / x2 / 3", 2), p) == doctest::Approx(0.5));
  CHECK(eval(parse_expression("x2^(-2)", 2), p) == doctest::Approx(0.25));
  CHECK(eval(parse_expression("2.5e-1 * 4", 2), p) == doctest::Approx(1.0));
  CHECK(eval(parse_expression("cos(pi)", 0), std::vector<double>{}) == doctest::Approx(-1.0));
}

TEST_CASE("eval: point values") {
  CHECK(eval(sin(x(1)), std::vector<double>{0.0}) == 0.0);

  const std::vector<Expression> reversed{-x(2), x(1) + (pow(x(1), 2) - 1.0) * x(2)};
  const std::vector<double> p{1.0, 2.0};
  CHECK(eval(reversed[0], p) == doctest::Approx(-2.0));
  CHECK(eval(reversed[1], p) == doctest::Approx(1.0));

  const Expression pend = (9.81 / 0.5) * sin(x(1));
  CHECK(eval(pend, std::vector<double>{std::numbers::pi / 2}) == doctest::Approx(19.62).epsilon(1e-12));
}

TEST_CASE("eval: domain errors are reported, not propagated as NaN") {
  CHECK_THROWS_AS(eval(1.0 / x(1), std::vector<double>{0.0}), EvalError);
  CHECK_THROWS_AS(eval(sqrt(x(1)), std::vector<double>{-1.0}), EvalError);
  CHECK_THROWS_AS(eval(pow(x(1), -1), std::vector<double>{0.0}), EvalError);
  CHECK_THROWS_AS(eval(x(2), std::vector<double>{0.0}), std::invalid_argument);
}

TEST_CASE("eval_interval: reference enclosures") {
  const Interval sq = eval_interval(pow(x(1), 2), Box{{-1.0, 2.0}});
  CHECK(sq.lo == 0.0);
  CHECK(sq.hi == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(sq.hi >= 4.0);

  const Interval s = eval_interval(sin(x(1)), Box{{0.0, std::numbers::pi}});
  CHECK(s.lo <= 0.0);
  CHECK(s.lo > -1e-12);
  CHECK(s.hi == 1.0);

  // dense sampling of the true range of x(1-x) on [0,1]
  const Expression logistic = x(1) * (1.0 - x(1));
  const Interval enc = eval_interval(logistic, Box{{0.0, 1.0}});
  double lo = 1e300, hi = -1e300;
  for (int i = 0; i <= 10000; ++i) {
    const double v = eval(logistic, std::vector<double>{i / 10000.0});
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(enc.lo <= lo);
  CHECK(enc.hi >= hi);
  CHECK(hi == doctest::Approx(0.25));

  CHECK_THROWS_AS(eval_interval(1.0 / x(1), Box{{-1.0, 1.0}}), EnclosureError);
  CHECK_THROWS_AS(eval_interval(sqrt(x(1)), Box{{-1.0, 1.0}}), EnclosureError);
}

TEST_CASE("eval_interval: trig extremum detection") {
  const Interval c = eval_interval(cos(x(1)), Box{{-0.1, 3.3}});
  CHECK(c.hi == 1.0);
  CHECK(c.lo == -1.0);
  const Interval s = eval_interval(sin(x(1)), Box{{0.1, 1.0}});
  CHECK(s.lo <= std::sin(0.1));
  CHECK(s.hi >= std::sin(1.0));
  CHECK(s.hi < 0.9);
}

TEST_CASE("differentiate: reference derivatives") {
  CHECK(differentiate(pow(x(1), 2), 0) == 2.0 * x(1));
  CHECK(differentiate(sin(x(1)), 0) == cos(x(1)));
  const Expression vdp2 = parse_expression("-x1 + x2*(1 - x1^2)", 2);
  const Expression d = differentiate(vdp2, 1);
  CHECK(eval(d, std::vector<double>{2.0, 0.0}) == doctest::Approx(-3.0));
  const auto fn = [&](std::span<const double> p) { return eval(vdp2, p); };
  CHECK(testing::central_difference(fn, {2.0, 0.0}, 1) == doctest::Approx(-3.0).epsilon(1e-8));
}

TEST_CASE("constant folding and identities") {
  CHECK((x(1) * 1.0) == x(1));
  CHECK((x(1) + 0.0) == x(1));
  CHECK((x(1) * 0.0).is_zero());
  CHECK((Expression(2.0) * 3.0).value() == 6.0);
  CHECK((-(-x(1))) == x(1));
  CHECK(pow(x(1), 1) == x(1));
  CHECK(is_polynomial(parse_expression("x1^3 - 2*x2/4", 2)));
  CHECK_FALSE(is_polynomial(parse_expression("sin(x1)", 1)));
  CHECK_FALSE(is_polynomial(parse_expression("1/x1", 1)));
}

TEST_CASE("substitute composes expressions") {
  const Expression e = parse_expression("x1*x2", 2);
  const std::vector<Expression> repl{x(2), 3.0 * x(1)};
  const Expression s = substitute(e, repl);
  CHECK(eval(s, std::vector<double>{2.0, 5.0}) == doctest::Approx(30.0));
}

TEST_CASE("property: interval soundness fuzz") {
  std::mt19937_64 rng(20240601);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Expression e = random_expression(rng, 4);
    const Box box = random_box(rng);
    const Interval enc = eval_interval(e, box);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 100; ++k) {
      std::vector<double> p(2);
      for (int i = 0; i < 2; ++i) p[i] = box[i].lo + u(rng) * box[i].width();
      const double v = eval(e, p);
      if (!(enc.lo <= v && v <= enc.hi)) {
        FAIL("unsound enclosure for " << e.to_string() << " on " << to_string(box[0]) << "x" << to_string(box[1]));
      }
      ++checked;
    }
  }
  CHECK(checked == 100000);
}

TEST_CASE("property: derivative matches central differences") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> coord(-1.5, 1.5);
  for (int trial = 0; trial < 300; ++trial) {
    const Expression e = random_expression(rng, 3);
    const std::vector<double> p{coord(rng), coord(rng)};
    for (std::size_t i = 0; i < 2; ++i) {
      const double exact = eval(differentiate(e, i), p);
      const auto fn = [&](std::span<const double> q) { return eval(e, q); };
      const double fd = testing::central_difference(fn, p, i);
      CHECK_MESSAGE(std::abs(exact - fd) <= 1e-5 * (1.0 + std::abs(exact)), e.to_string());
    }
  }
}

TEST_CASE("property: inclusion monotonicity") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const Expression e = random_expression(rng, 4);
    const Box outer = random_box(rng);
    Box inner = outer;
    for (auto& iv : inner) {
      const double a = iv.lo + u(rng) * iv.width();
      const double b = iv.lo + u(rng) * iv.width();
      iv = Interval(std::min(a, b), std::max(a, b));
    }
    const Interval eo = eval_interval(e, outer);
    const Interval ei = eval_interval(e, inner);
    CHECK_MESSAGE(eo.contains(ei), e.to_string());
  }
}

TEST_CASE("property: bisection shrinks the widest edge") {
  Box box{{-1.0, 3.0}, {0.0, 1.0}};
  for (int i = 0; i < 10; ++i) {
    auto [l, r] = split(box);
    CHECK(max_width(l) <= max_width(box));
    CHECK(l[widest_dimension(box)].width() < box[widest_dimension(box)].width());
    box = l;
  }
}

TEST_CASE("dual numbers give exact first derivatives") {
  const Expression e = parse_expression("x1^3*sin(x2) + exp(x1*x2)/(2 + x2^2)", 2);
  const std::vector<double> p{0.7, -1.3};
  using D = Dual<double, 2>;
  auto s = seed<double, 2>(std::span<const double>(p));
  const D v = evaluate<D>(e, std::span<const D>(s.data(), 2));
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(v.d[i] == doctest::Approx(eval(differentiate(e, i), p)).epsilon(1e-13));
}
