#include "zclf/verify.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <queue>
#include <sstream>

#include "zclf/parallel.hpp"
#include "zclf/tape.hpp"

namespace zclf {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool valid(const Interval& iv) { return !(std::isnan(iv.lo) || std::isnan(iv.hi)) && iv.lo <= iv.hi; }

// Natural extension intersected with the mean-value form around the midpoint.
template <std::size_t N>
void enclose_mean_value(const Tape& tape, std::size_t n, const Box& box, std::span<Interval> out) {
  using D = Dual<Interval, N>;
  std::vector<D> x(n), y(tape.n_outputs()), work;
  for (std::size_t i = 0; i < n; ++i) x[i] = D::variable(box[i], i, n);
  tape.evaluate<D>(x, y, work);
  Box center(n);
  for (std::size_t i = 0; i < n; ++i) center[i] = Interval(box[i].mid());
  std::vector<Interval> yc(tape.n_outputs()), wc;
  tape.evaluate<Interval>(center, yc, wc);
  for (std::size_t k = 0; k < y.size(); ++k) {
    Interval mv = yc[k];
    for (std::size_t i = 0; i < y[k].dims; ++i) mv = mv + y[k].d[i] * (box[i] - center[i]);
    out[k] = valid(mv) && mv.intersects(y[k].v) ? intersect(y[k].v, mv) : y[k].v;
  }
}

template <std::size_t N>
std::vector<Interval> jacobian_dual(std::span<const Expression> F, std::size_t n, const Box& box) {
  using D = Dual<Interval, N>;
  std::vector<D> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = D::variable(box[i], i, n);
  std::vector<Interval> J(F.size() * n, Interval(0.0));
  for (std::size_t r = 0; r < F.size(); ++r) {
    const D y = evaluate<D>(F[r], x);
    for (std::size_t c = 0; c < y.dims; ++c) J[r * n + c] = y.d[c];
  }
  return J;
}

// Mean-value combination of a dual enclosure with values at the box center.
template <class D>
void combine_mean_value(const Box& box, std::span<const D> y, std::span<const Interval> center, std::span<Interval> out) {
  for (std::size_t k = 0; k < y.size(); ++k) {
    Interval mv = center[k];
    for (std::size_t i = 0; i < y[k].dims; ++i) mv = mv + y[k].d[i] * (box[i] - Interval(box[i].mid()));
    out[k] = valid(mv) && mv.intersects(y[k].v) ? intersect(y[k].v, mv) : y[k].v;
  }
}

Box degenerate_center(const Box& box) {
  Box c(box.size());
  for (std::size_t i = 0; i < box.size(); ++i) c[i] = Interval(box[i].mid());
  return c;
}

// The closed box [-r, r]^n, and always the origin itself.
bool inside_exclusion(std::span<const double> x, double r) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m == 0.0 || (r > 0.0 && m <= r);
}

bool box_inside_exclusion(const Box& b, double r) {
  if (r <= 0.0) return false;
  for (const auto& iv : b)
    if (iv.lo < -r || iv.hi > r) return false;
  return true;
}

Box face(const Box& domain, std::size_t d, bool upper) {
  Box f = domain;
  f[d] = Interval(upper ? domain[d].hi : domain[d].lo);
  return f;
}

double min_half_width(const Box& b) {
  double w = std::numeric_limits<double>::infinity();
  for (const auto& iv : b) w = std::min(w, 0.5 * iv.width());
  return w;
}

}  // namespace

FieldSet expression_fields(std::vector<Expression> exprs, std::size_t n, std::vector<std::string> names,
                           bool mean_value) {
  for (const auto& e : exprs) detail::check_arity(e, n);
  if (names.empty())
    for (std::size_t i = 0; i < exprs.size(); ++i) names.push_back("f" + std::to_string(i));
  if (names.size() != exprs.size()) throw std::invalid_argument("field names and expressions differ in count");
  auto tape = std::make_shared<const Tape>(exprs, n);
  FieldSet fs;
  fs.n = n;
  fs.names = std::move(names);
  fs.symbolic = std::move(exprs);
  fs.values = [tape](std::span<const double> x, std::span<double> out) {
    std::vector<double> work;
    tape->evaluate<double>(x, out, work);
  };
  fs.enclose = [tape, n, mean_value](const Box& b, std::span<Interval> out) {
    if (mean_value && n <= 2) return enclose_mean_value<2>(*tape, n, b, out);
    if (mean_value && n <= 4) return enclose_mean_value<4>(*tape, n, b, out);
    if (mean_value && n <= 8) return enclose_mean_value<8>(*tape, n, b, out);
    if (mean_value && n <= 16) return enclose_mean_value<16>(*tape, n, b, out);
    std::vector<Interval> work;
    tape->evaluate<Interval>(b, out, work);
  };
  return fs;
}

Premise at_most(std::size_t field, double c) { return {field, {-std::numeric_limits<double>::infinity(), c}}; }
Premise at_least(std::size_t field, double c) { return {field, {c, std::numeric_limits<double>::infinity()}}; }
Premise equals_zero(std::size_t field) { return {field, Interval(0.0)}; }
Premise within(std::size_t field, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("premise range is empty");
  return {field, {lo, hi}};
}

std::string outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Proved:
      return "proved";
    case Outcome::Counterexample:
      return "counterexample";
    case Outcome::Unknown:
      return "unknown";
  }
  return "unknown";
}

bool violates_weakened(const Condition& cond, std::span<const double> x, double delta) {
  std::vector<double> v(cond.fields.size());
  try {
    cond.fields.values(x, v);
  } catch (const EvalError&) {
    return false;
  }
  for (double e : v)
    if (std::isnan(e)) return false;
  for (const auto& p : cond.premises)
    if (!(v[p.field] >= p.range.lo - delta && v[p.field] <= p.range.hi + delta)) return false;
  return v[cond.conclusion] >= cond.conclusion_bound - delta;
}

namespace {

enum class BoxResult : unsigned char { Discard, Counterexample, Split, Stuck };

void validate(const Condition& c) {
  const std::size_t m = c.fields.size();
  if (c.fields.n == 0 || !c.fields.values || !c.fields.enclose) throw std::invalid_argument("condition has no fields");
  if (c.conclusion >= m) throw std::invalid_argument("conclusion field out of range");
  for (const auto& p : c.premises)
    if (p.field >= m) throw std::invalid_argument("premise field out of range");
}

BoxResult process(const Condition& c, const Box& box, double delta, std::vector<double>& witness) {
  const double r = c.exclusion_radius;
  if (box_inside_exclusion(box, r)) return BoxResult::Discard;
  std::vector<Interval> enc(c.fields.size());
  bool enclosed = true;
  try {
    c.fields.enclose(box, enc);
    for (const auto& e : enc)
      if (!valid(e)) enclosed = false;
  } catch (const EnclosureError&) {
    enclosed = false;
  } catch (const EvalError&) {
    enclosed = false;
  }
  if (enclosed) {
    for (const auto& p : c.premises)
      if (!enc[p.field].intersects(p.range)) return BoxResult::Discard;
    if (enc[c.conclusion].hi < c.conclusion_bound) return BoxResult::Discard;
  }
  const auto mid = midpoint(box);
  if (!inside_exclusion(mid, r) && violates_weakened(c, mid, delta)) {
    witness = mid;
    return BoxResult::Counterexample;
  }
  const std::size_t d = widest_dimension(box);
  const double m = box[d].mid();
  if (!(box[d].lo < m && m < box[d].hi)) return BoxResult::Stuck;
  return BoxResult::Split;
}

}  // namespace

Verdict check_condition(const Condition& cond, const CheckOptions& opt) {
  const auto t0 = Clock::now();
  if (!(opt.delta > 0.0)) throw std::invalid_argument("delta must be positive");
  validate(cond);
  if (cond.domain.size() != cond.fields.n) throw std::invalid_argument("condition domain has wrong dimension");
  const unsigned threads = resolve_threads(opt.threads);

  Verdict v;
  v.delta = opt.delta;
  std::vector<Box> frontier{cond.domain}, next;
  while (!frontier.empty()) {
    if (v.boxes + frontier.size() > opt.max_boxes) {
      v.outcome = Outcome::Unknown;
      v.time_ms = ms_since(t0);
      return v;
    }
    std::vector<BoxResult> res(frontier.size());
    std::vector<std::vector<double>> wit(frontier.size());
    parallel_for(frontier.size(), threads,
                 [&](std::size_t i) { res[i] = process(cond, frontier[i], opt.delta, wit[i]); });
    v.boxes += frontier.size();
    next.clear();
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      if (res[i] == BoxResult::Counterexample) {
        v.outcome = Outcome::Counterexample;
        v.witness = wit[i];
        v.witness_box = frontier[i];
        v.time_ms = ms_since(t0);
        return v;
      }
    }
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      if (res[i] == BoxResult::Stuck) {
        v.outcome = Outcome::Unknown;
        v.witness_box = frontier[i];
        v.time_ms = ms_since(t0);
        return v;
      }
      if (res[i] == BoxResult::Split) {
        auto [a, b] = split(frontier[i]);
        next.push_back(std::move(a));
        next.push_back(std::move(b));
      }
    }
    frontier.swap(next);
  }
  v.outcome = Outcome::Proved;
  v.time_ms = ms_since(t0);
  return v;
}

nlohmann::json to_json(const Verdict& v, const std::string& condition, std::optional<double> level) {
  nlohmann::json j{{"condition", condition},
                   {"verdict", outcome_name(v.outcome)},
                   {"c", nullptr},
                   {"delta", v.delta},
                   {"boxes", v.boxes},
                   {"time_ms", v.time_ms},
                   {"witness", nullptr}};
  if (level) j["c"] = *level;
  if (!v.witness.empty()) j["witness"] = v.witness;
  return j;
}

LevelSearch bisect_level(double lo, double hi, const std::function<Verdict(double)>& check, double rel_tol,
                         int max_iter) {
  const auto t0 = Clock::now();
  LevelSearch s;
  s.level = lo;
  if (!(hi > lo)) {
    s.time_ms = ms_since(t0);
    return s;
  }
  auto run = [&](double c) {
    const Verdict v = check(c);
    s.trace.emplace_back(c, v.outcome);
    s.boxes += v.boxes;
    return v.proved();
  };
  if (run(hi)) {
    s.found = true;
    s.level = hi;
  } else {
    double good = lo, bad = hi;
    for (int it = 0; it < max_iter && bad - good > rel_tol * std::abs(bad); ++it) {
      const double mid = 0.5 * (good + bad);
      if (run(mid)) {
        good = mid;
        s.found = true;
      } else {
        bad = mid;
      }
    }
    s.level = good;
  }
  s.time_ms = ms_since(t0);
  return s;
}

Interval boundary_minimum(const FieldSet& fields, std::size_t field, const Box& domain, double rel_tol,
                          std::size_t max_boxes) {
  if (field >= fields.size()) throw std::invalid_argument("field out of range");
  double lower = std::numeric_limits<double>::infinity(), best = lower;
  std::vector<Interval> enc(fields.size());
  std::vector<double> val(fields.size());
  for (std::size_t d = 0; d < domain.size(); ++d) {
    for (bool up : {false, true}) {
      using Item = std::pair<double, Box>;
      auto cmp = [](const Item& a, const Item& b) { return a.first > b.first; };
      std::priority_queue<Item, std::vector<Item>, decltype(cmp)> queue(cmp);
      const Box f = face(domain, d, up);
      auto push = [&](Box b) {
        double lb = -std::numeric_limits<double>::infinity();
        try {
          fields.values(midpoint(b), val);
          best = std::min(best, val[field]);
          fields.enclose(b, enc);
          if (valid(enc[field])) lb = enc[field].lo;
        } catch (const EnclosureError&) {
        } catch (const EvalError&) {
        }
        queue.emplace(lb, std::move(b));
      };
      push(f);
      std::size_t count = 1;
      double face_lower = queue.top().first;
      while (!queue.empty()) {
        auto [lb, b] = queue.top();
        face_lower = lb;
        if (best - lb <= rel_tol * std::max(1.0, std::abs(best)) || count >= max_boxes || max_width(b) == 0.0) break;
        queue.pop();
        auto [l, r] = split(b);
        push(std::move(l));
        push(std::move(r));
        count += 2;
      }
      lower = std::min(lower, face_lower);
    }
  }
  return {lower, best};
}

bool lyapunov_jacobian_certified(const Eigen::MatrixXd& P, std::span<const Interval> J) {
  const auto n = P.rows();
  if (J.size() != static_cast<std::size_t>(n * n)) throw std::invalid_argument("Jacobian has wrong size");
  Eigen::MatrixXd Jm(n, n), Jr(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const Interval& e = J[std::size_t(i * n + j)];
      if (!e.is_finite()) return false;
      Jm(i, j) = e.mid();
      Jr(i, j) = std::max(e.hi - Jm(i, j), Jm(i, j) - e.lo);
    }
  const Eigen::MatrixXd Smid = P * Jm + Jm.transpose() * P;
  const Eigen::MatrixXd Srad = P.cwiseAbs() * Jr + Jr.transpose() * P.cwiseAbs();
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Smid, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  return lmax + Srad.norm() + 1e-12 * (1.0 + Smid.norm()) < 0.0;
}

double certify_origin_radius(const Eigen::MatrixXd& P, const std::function<std::vector<Interval>(const Box&)>& jacobian,
                             std::size_t n, double r0, int halvings) {
  double r = r0;
  for (int j = 0; j < halvings; ++j, r *= 0.5) {
    try {
      if (lyapunov_jacobian_certified(P, jacobian(make_box(n, -r, r)))) return r;
    } catch (const EnclosureError&) {
    } catch (const EvalError&) {
    }
  }
  return 0.0;
}

std::vector<Interval> expression_jacobian(std::span<const Expression> F, std::size_t n, const Box& box) {
  if (n <= 2) return jacobian_dual<2>(F, n, box);
  if (n <= 4) return jacobian_dual<4>(F, n, box);
  if (n <= 8) return jacobian_dual<8>(F, n, box);
  if (n <= 16) return jacobian_dual<16>(F, n, box);
  // wide systems: symbolic derivatives
  std::vector<Interval> J(F.size() * n);
  for (std::size_t r = 0; r < F.size(); ++r)
    for (std::size_t c = 0; c < n; ++c) J[r * n + c] = eval_interval(differentiate(F[r], c), box);
  return J;
}

// ---- quadratic certificates ----

Expression quadratic_form(const Eigen::MatrixXd& P) {
  Expression V(0.0);
  const auto n = P.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Expression xi = Expression::variable(std::size_t(i));
    if (P(i, i) != 0.0) V = V + P(i, i) * (xi * xi);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double c = P(i, j) + P(j, i);
      if (c != 0.0) V = V + c * (xi * Expression::variable(std::size_t(j)));
    }
  }
  return V;
}

namespace {

// 2 P x as expressions.
std::vector<Expression> quadratic_gradient(const Eigen::MatrixXd& P) {
  const auto n = P.rows();
  std::vector<Expression> g(std::size_t(n), Expression(0.0));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double c = P(i, j) + P(j, i);
      if (c != 0.0) g[std::size_t(i)] = g[std::size_t(i)] + c * Expression::variable(std::size_t(j));
    }
  return g;
}

std::vector<Expression> linear_closed_loop(const ControlAffineSystem& sys, const Eigen::MatrixXd& K) {
  std::vector<Expression> F = sys.f;
  for (std::size_t j = 0; j < sys.k; ++j) {
    Expression u(0.0);
    for (std::size_t l = 0; l < sys.n; ++l)
      if (K(Eigen::Index(j), Eigen::Index(l)) != 0.0)
        u = u + K(Eigen::Index(j), Eigen::Index(l)) * Expression::variable(l);
    for (std::size_t i = 0; i < sys.n; ++i) F[i] = F[i] + sys.g[i][j] * u;
  }
  return F;
}

Expression dot(std::span<const Expression> a, std::span<const Expression> b) {
  Expression s(0.0);
  for (std::size_t i = 0; i < a.size(); ++i) s = s + a[i] * b[i];
  return s;
}

void check_certificate(const ControlAffineSystem& sys, const QuadraticCertificate& cert) {
  sys.validate();
  if (cert.P.rows() != Eigen::Index(sys.n) || cert.P.cols() != Eigen::Index(sys.n))
    throw std::invalid_argument("certificate P has wrong shape");
  if (cert.K.rows() != Eigen::Index(sys.k) || cert.K.cols() != Eigen::Index(sys.n))
    throw std::invalid_argument("certificate K has wrong shape");
}

}  // namespace

FieldSet quadratic_fields(const ControlAffineSystem& sys, const QuadraticCertificate& cert) {
  check_certificate(sys, cert);
  const auto grad = quadratic_gradient(cert.P);
  std::vector<Expression> e{quadratic_form(cert.P), dot(grad, sys.f)};
  std::vector<std::string> names{"V_P", "a"};
  for (std::size_t j = 0; j < sys.k; ++j) {
    std::vector<Expression> col(sys.n);
    for (std::size_t i = 0; i < sys.n; ++i) col[i] = sys.g[i][j];
    e.push_back(dot(grad, col));
    names.push_back("b" + std::to_string(j + 1));
  }
  e.push_back(dot(grad, linear_closed_loop(sys, cert.K)));
  names.push_back("closed_loop");
  return expression_fields(std::move(e), sys.n, std::move(names));
}

Condition quadratic_clf_condition(const ControlAffineSystem& sys, const QuadraticCertificate& cert, const Box& domain,
                                  double exclusion_radius) {
  Condition c;
  c.name = "quadratic_clf";
  c.fields = quadratic_fields(sys, cert);
  for (std::size_t j = 0; j < sys.k; ++j) c.premises.push_back(equals_zero(2 + j));
  c.conclusion = 1;
  c.domain = domain;
  c.exclusion_radius = exclusion_radius;
  return c;
}

namespace {

double linear_origin_radius(const ControlAffineSystem& sys, const QuadraticCertificate& cert, double r0) {
  const auto F = linear_closed_loop(sys, cert.K);
  return certify_origin_radius(
      cert.P, [&](const Box& b) { return expression_jacobian(F, sys.n, b); }, sys.n, r0);
}

}  // namespace

QuadraticVerification verify_quadratic(const ControlAffineSystem& sys, QuadraticCertificate cert,
                                       const QuadraticVerifyOptions& opt) {
  check_certificate(sys, cert);
  QuadraticVerification out;
  const FieldSet fields = quadratic_fields(sys, cert);
  const std::size_t k = sys.k;
  out.c_max = opt.c_max > 0.0 ? opt.c_max : boundary_minimum(fields, 0, sys.domain).lo;
  if (!(out.c_max > 0.0)) throw std::invalid_argument("c_max must be positive");
  const double r0 = opt.origin_r0 > 0.0 ? opt.origin_r0 : 0.25 * min_half_width(sys.domain);
  out.origin_radius = linear_origin_radius(sys, cert, r0);
  if (out.origin_radius == 0.0)
    throw VerificationError("the linearized closed loop could not be certified near the origin");

  auto stage_a = [&](double c) {
    Condition cond;
    cond.name = "stage_a";
    cond.fields = fields;
    cond.premises = {at_most(0, c)};
    cond.conclusion = 2 + k;
    cond.domain = sys.domain;
    cond.exclusion_radius = out.origin_radius;
    return check_condition(cond, opt.check);
  };
  out.stage_a = bisect_level(0.0, out.c_max, stage_a, opt.rel_tol);
  if (!out.stage_a.found) throw VerificationError("stage A failed at every level: quadratic certificate rejected");
  const double c1 = out.stage_a.level;

  auto stage_b = [&](double c) {
    Condition cond;
    cond.name = "stage_b";
    cond.fields = fields;
    for (std::size_t j = 0; j < k; ++j) cond.premises.push_back(equals_zero(2 + j));
    cond.premises.push_back(within(0, c1, c));
    cond.conclusion = 1;
    cond.domain = sys.domain;
    return check_condition(cond, opt.check);
  };
  if (c1 < out.c_max) out.stage_b = bisect_level(c1, out.c_max, stage_b, opt.rel_tol);
  cert.c_P1 = c1;
  cert.c_P = out.stage_b.found ? out.stage_b.level : c1;
  out.cert = cert;
  return out;
}

Verdict check_global_quadratic(const ControlAffineSystem& sys, const QuadraticCertificate& cert,
                               const CheckOptions& opt, double* radius) {
  check_certificate(sys, cert);
  const double r = linear_origin_radius(sys, cert, 0.25 * min_half_width(sys.domain));
  if (radius) *radius = r;
  return check_condition(quadratic_clf_condition(sys, cert, sys.domain, r), opt);
}

// ---- learned certificates ----

namespace {

struct NeuralEvaluator {
  std::size_t n, k;
  std::shared_ptr<const ValueModel> model;
  std::shared_ptr<const HjbFeedback> feedback;  // closed-loop fields only
  Tape fg;                                      // (f, g row-major)
  Eigen::MatrixXd P;

  template <class T>
  T quadratic(std::span<const T> x) const {
    T s(0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double c = P(Eigen::Index(i), Eigen::Index(j));
        if (c == 0.0) continue;
        s = s + (i == j ? c * sqr(x[i]) : c * (x[i] * x[j]));
      }
    return s;
  }

  template <class T>
  void clf(std::span<const T> x, std::span<T> out) const {
    const auto vg = value_gradient<T>(*model, x);
    std::vector<T> v(n + n * k), work;
    fg.evaluate<T>(x, v, work);
    out[0] = vg.W;
    out[1] = quadratic<T>(x);
    T a(0.0);
    for (std::size_t i = 0; i < n; ++i) a = a + vg.grad[i] * v[i];
    out[2] = a;
    for (std::size_t j = 0; j < k; ++j) {
      T b(0.0);
      for (std::size_t i = 0; i < n; ++i) b = b + vg.grad[i] * v[n + i * k + j];
      out[3 + j] = b;
    }
  }

  template <class T>
  void closed(std::span<const T> x, std::span<T> out) const {
    const auto vg = value_gradient<T>(*model, x);
    const auto F = feedback->closed_loop<T>(x);
    out[0] = vg.W;
    out[1] = quadratic<T>(x);
    T a(0.0), b(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      a = a + vg.grad[i] * F[i];
      T gi(0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double c = P(Eigen::Index(i), Eigen::Index(j)) + P(Eigen::Index(j), Eigen::Index(i));
        if (c != 0.0) gi = gi + c * x[j];
      }
      b = b + gi * F[i];
    }
    out[2] = a;
    out[3] = b;
  }
};

template <class Eval>
FieldSet learned_fields(std::shared_ptr<const NeuralEvaluator> ev, std::vector<std::string> names, bool mean_value,
                        Eval eval) {
  FieldSet fs;
  fs.n = ev->n;
  fs.names = std::move(names);
  const std::size_t m = fs.names.size();
  fs.values = [ev, eval](std::span<const double> x, std::span<double> out) { eval.template operator()<double>(*ev, x, out); };
  fs.enclose = [ev, eval, mean_value, m](const Box& b, std::span<Interval> out) {
    if (!mean_value) {
      eval.template operator()<Interval>(*ev, std::span<const Interval>(b), out);
      return;
    }
    std::vector<BoxDual> x(ev->n), y(m);
    for (std::size_t i = 0; i < ev->n; ++i) x[i] = BoxDual::variable(b[i], i, ev->n);
    eval.template operator()<BoxDual>(*ev, std::span<const BoxDual>(x), std::span<BoxDual>(y));
    const Box c = degenerate_center(b);
    std::vector<Interval> yc(m);
    eval.template operator()<Interval>(*ev, std::span<const Interval>(c), std::span<Interval>(yc));
    combine_mean_value<BoxDual>(b, y, yc, out);
  };
  return fs;
}

struct ClfEval {
  template <class T>
  void operator()(const NeuralEvaluator& ev, std::span<const T> x, std::span<T> out) const {
    ev.clf<T>(x, out);
  }
};
struct ClosedEval {
  template <class T>
  void operator()(const NeuralEvaluator& ev, std::span<const T> x, std::span<T> out) const {
    ev.closed<T>(x, out);
  }
};

std::shared_ptr<NeuralEvaluator> make_evaluator(const ControlAffineSystem& sys, std::shared_ptr<const ValueModel> model,
                                                const Eigen::MatrixXd& P) {
  sys.validate();
  if (!model || model->dim() != sys.n) throw std::invalid_argument("value model dimension does not match the system");
  if (P.rows() != Eigen::Index(sys.n) || P.cols() != Eigen::Index(sys.n))
    throw std::invalid_argument("P has wrong shape");
  auto ev = std::make_shared<NeuralEvaluator>();
  ev->n = sys.n;
  ev->k = sys.k;
  ev->model = std::move(model);
  ev->P = P;
  std::vector<Expression> fg(sys.f.begin(), sys.f.end());
  for (const auto& row : sys.g) fg.insert(fg.end(), row.begin(), row.end());
  ev->fg = Tape(fg, sys.n);
  return ev;
}

}  // namespace

FieldSet neural_clf_fields(const ControlAffineSystem& sys, std::shared_ptr<const ValueModel> model,
                           const Eigen::MatrixXd& P, bool mean_value) {
  auto ev = make_evaluator(sys, std::move(model), P);
  std::vector<std::string> names{"W", "V_P", "a"};
  for (std::size_t j = 0; j < sys.k; ++j) names.push_back("b" + std::to_string(j + 1));
  return learned_fields(std::shared_ptr<const NeuralEvaluator>(ev), std::move(names), mean_value, ClfEval{});
}

FieldSet closed_loop_fields(const ControlAffineSystem& sys, std::shared_ptr<const HjbFeedback> feedback,
                            const Eigen::MatrixXd& P, bool mean_value) {
  if (!feedback) throw std::invalid_argument("missing feedback");
  // share the feedback's value model so both see the same W
  auto ev = make_evaluator(sys, std::shared_ptr<const ValueModel>(feedback, &feedback->model()), P);
  ev->feedback = std::move(feedback);
  return learned_fields(std::shared_ptr<const NeuralEvaluator>(ev), {"W", "V_P", "dW", "dV_P"}, mean_value,
                        ClosedEval{});
}

NeuralVerification verify_neural(const ControlAffineSystem& sys, std::shared_ptr<const ValueModel> model,
                                 const QuadraticCertificate& cert, const NeuralVerifyOptions& opt) {
  check_certificate(sys, cert);
  if (!(cert.c_P > 0.0)) throw std::invalid_argument("the quadratic certificate has no verified level");
  const std::vector<double> origin(sys.n, 0.0);
  const double W0 = model->eval(origin);
  const FieldSet fields = neural_clf_fields(sys, model, cert.P, opt.mean_value);
  NeuralVerification out;
  out.c_max = opt.c_max > 0.0 ? opt.c_max : boundary_minimum(fields, 0, sys.domain).lo;
  const double top = std::min(out.c_max, 1.0);
  if (!(top > W0)) throw VerificationError("W at the origin is not below the boundary level");

  auto containment = [&](double c) {
    Condition cond;
    cond.name = "containment";
    cond.fields = fields;
    cond.premises = {at_most(0, c)};
    cond.conclusion = 1;
    cond.conclusion_bound = cert.c_P;
    cond.domain = sys.domain;
    return check_condition(cond, opt.check);
  };
  out.containment = bisect_level(W0, top, containment, opt.rel_tol);
  if (!out.containment.found)
    throw VerificationError("no level c1 with {W <= c1} inside the quadratic region; training may be insufficient");
  out.c1 = out.containment.level;
  if (out.c_max <= out.c1) {
    out.diagnostic = "c_max <= c1: the CLF level range is empty";
    return out;
  }
  auto clf = [&](double c) {
    Condition cond;
    cond.name = "neural_clf";
    cond.fields = fields;
    for (std::size_t j = 0; j < sys.k; ++j) cond.premises.push_back(equals_zero(3 + j));
    cond.premises.push_back(within(0, out.c1, c));
    cond.conclusion = 2;
    cond.domain = sys.domain;
    return check_condition(cond, opt.check);
  };
  out.clf = bisect_level(out.c1, out.c_max, clf, opt.rel_tol);
  if (out.clf.found)
    out.c2 = out.clf.level;
  else
    out.diagnostic = "the CLF condition fails just above c1";
  return out;
}

RoaVerification verify_closed_loop_roa(const ControlAffineSystem& sys, std::shared_ptr<const HjbFeedback> feedback,
                                       const QuadraticCertificate& cert, const NeuralVerifyOptions& opt) {
  check_certificate(sys, cert);
  if (!(cert.c_P > 0.0)) throw std::invalid_argument("the quadratic certificate has no verified level");
  const std::size_t n = sys.n;
  const FieldSet fields = closed_loop_fields(sys, feedback, cert.P, opt.mean_value);
  RoaVerification out;
  const std::shared_ptr<const ValueModel> model(feedback, &feedback->model());
  out.c_max = opt.c_max > 0.0 ? opt.c_max : boundary_minimum(neural_clf_fields(sys, model, cert.P), 0, sys.domain).lo;

  auto jac = [&](const Box& b) {
    std::vector<BoxDual> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = BoxDual::variable(b[i], i, n);
    const auto F = feedback->closed_loop<BoxDual>(x);
    std::vector<Interval> J(n * n, Interval(0.0));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < F[r].dims; ++c) J[r * n + c] = F[r].d[c];
    return J;
  };
  out.origin_radius = certify_origin_radius(cert.P, jac, n, 0.25 * min_half_width(sys.domain));
  if (out.origin_radius == 0.0) throw VerificationError("the closed loop could not be certified near the origin");

  auto inner = [&](double c) {
    Condition cond;
    cond.name = "roa_inner";
    cond.fields = fields;
    cond.premises = {at_most(1, c)};
    cond.conclusion = 3;
    cond.domain = sys.domain;
    cond.exclusion_radius = out.origin_radius;
    return check_condition(cond, opt.check);
  };
  out.inner = bisect_level(0.0, cert.c_P, inner, opt.rel_tol);
  if (!out.inner.found) throw VerificationError("no quadratic level is invariant for the closed loop");
  out.inner_level = out.inner.level;

  const std::vector<double> origin(n, 0.0);
  const double W0 = feedback->model().eval(origin);
  auto outer = [&](double c) {
    Condition cond;
    cond.name = "roa";
    cond.fields = fields;
    cond.premises = {at_most(0, c), at_least(std::size_t{1}, out.inner_level)};
    cond.conclusion = 2;
    cond.domain = sys.domain;
    return check_condition(cond, opt.check);
  };
  const double top = std::min(out.c_max, 1.0);
  if (top > W0) out.outer = bisect_level(W0, top, outer, opt.rel_tol);
  if (out.outer.found)
    out.c = out.outer.level;
  else
    out.diagnostic = "W does not decrease along the closed loop above the inner region";
  return out;
}

// ---- SMT-LIB2 ----

namespace {

// Decimal digits of m * 2^twos * 5^fives.
std::string decimal_product(std::uint64_t m, int twos, int fives) {
  std::vector<int> d;  // little-endian base 10
  if (m == 0) d.push_back(0);
  while (m) {
    d.push_back(int(m % 10));
    m /= 10;
  }
  auto times = [&](int f) {
    int carry = 0;
    for (auto& x : d) {
      const int v = x * f + carry;
      x = v % 10;
      carry = v / 10;
    }
    while (carry) {
      d.push_back(carry % 10);
      carry /= 10;
    }
  };
  for (int i = 0; i < twos; ++i) times(2);
  for (int i = 0; i < fives; ++i) times(5);
  std::string s;
  for (auto it = d.rbegin(); it != d.rend(); ++it) s.push_back(char('0' + *it));
  return s;
}

class SmtWriter {
 public:
  std::string term(const Expression& e) {
    switch (e.op()) {
      case Op::Var:
        return "x" + std::to_string(e.index() + 1);
      case Op::Const:
        return smt_number(e.value());
      case Op::Add:
        return "(+ " + term(e.lhs()) + " " + term(e.rhs()) + ")";
      case Op::Sub:
        return "(- " + term(e.lhs()) + " " + term(e.rhs()) + ")";
      case Op::Mul:
        return "(* " + term(e.lhs()) + " " + term(e.rhs()) + ")";
      case Op::Div:
        return "(/ " + term(e.lhs()) + " " + term(e.rhs()) + ")";
      case Op::Neg:
        return "(- " + term(e.arg()) + ")";
      case Op::Pow: {
        const int k = e.exponent();
        if (k == 0) return "1.0";
        const std::string a = term(e.arg());
        std::string prod = a;
        if (std::abs(k) > 1) {
          prod = "(*";
          for (int i = 0; i < std::abs(k); ++i) prod += " " + a;
          prod += ")";
        }
        return k > 0 ? prod : "(/ 1.0 " + prod + ")";
      }
      case Op::Sin:
      case Op::Cos:
        return trig(e);
      case Op::Sqrt:
      case Op::Exp:
      case Op::Tanh:
        throw SmtError("operator not supported in nonlinear real arithmetic: " + e.to_string());
    }
    throw SmtError("corrupt expression");
  }

  std::string declarations;
  std::string bounds;

 private:
  // Fresh variable with certified polynomial bounds on its argument t:
  //   sin: t - t^3/6 <= s <= t for t >= 0 (mirrored for t <= 0), |s| <= 1
  //   cos: 1 - t^2/2 <= c <= 1 - t^2/2 + t^4/24, |c| <= 1
  std::string trig(const Expression& e) {
    const bool is_sin = e.op() == Op::Sin;
    const std::string key = (is_sin ? "sin " : "cos ") + e.arg().to_string();
    if (auto it = names_.find(key); it != names_.end()) return it->second;
    const std::string name = (is_sin ? "s" : "c") + std::to_string(names_.size() + 1);
    names_[key] = name;
    const std::string t = term(e.arg());
    declarations += "(declare-fun " + name + " () Real)\n";
    bounds += "(assert (and (<= (- 1.0) " + name + ") (<= " + name + " 1.0)))\n";
    if (is_sin) {
      const std::string cubic = "(- " + t + " (/ (* " + t + " " + t + " " + t + ") 6.0))";
      bounds += "(assert (=> (>= " + t + " 0.0) (and (<= " + cubic + " " + name + ") (<= " + name + " " + t + "))))\n";
      bounds += "(assert (=> (<= " + t + " 0.0) (and (<= " + t + " " + name + ") (<= " + name + " " + cubic + "))))\n";
    } else {
      const std::string sq = "(* " + t + " " + t + ")";
      const std::string lo = "(- 1.0 (/ " + sq + " 2.0))";
      const std::string hi = "(+ " + lo + " (/ (* " + sq + " " + sq + ") 24.0))";
      bounds += "(assert (and (<= " + lo + " " + name + ") (<= " + name + " " + hi + ")))\n";
    }
    return name;
  }

  std::map<std::string, std::string> names_;
};

}  // namespace

std::string smt_number(double v) {
  if (!std::isfinite(v)) throw SmtError("non-finite constant");
  if (v == 0.0) return "0.0";
  const bool neg = v < 0.0;
  // shortest decimal that reads back as v, split into digits * 10^exp
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, std::abs(v), std::chars_format::scientific);
  const std::string sci(buf, res.ptr);
  const auto epos = sci.find('e');
  std::string digits;
  for (char ch : sci.substr(0, epos))
    if (ch != '.') digits.push_back(ch);
  const int frac = sci.find('.') < epos ? int(epos - sci.find('.') - 1) : 0;
  int exp10 = std::stoi(sci.substr(epos + 1)) - frac;
  std::uint64_t m = std::stoull(digits);
  while (exp10 < 0 && m % 10 == 0) {
    m /= 10;
    ++exp10;
  }
  std::string s;
  if (exp10 >= 0) {
    s = decimal_product(m, exp10, exp10) + ".0";
  } else {
    int twos = -exp10, fives = -exp10;
    while (twos > 0 && m % 2 == 0) {
      m /= 2;
      --twos;
    }
    while (fives > 0 && m % 5 == 0) {
      m /= 5;
      --fives;
    }
    s = "(/ " + decimal_product(m, 0, 0) + ".0 " + decimal_product(1, twos, fives) + ".0)";
  }
  return neg ? "(- " + s + ")" : s;
}

std::string emit_smtlib(const Condition& cond, const std::string& logic) {
  validate(cond);
  if (logic != "QF_NRA") throw SmtError("unsupported logic '" + logic + "' (only QF_NRA)");
  const std::size_t n = cond.fields.n;
  if (cond.fields.symbolic.size() != cond.fields.size())
    throw SmtError("condition '" + cond.name + "' has fields without a symbolic form");
  if (!cond.domain.empty() && cond.domain.size() != n) throw std::invalid_argument("condition domain has wrong dimension");

  SmtWriter w;
  std::string body;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string x = "x" + std::to_string(i + 1);
    if (cond.domain.empty()) continue;
    if (std::isfinite(cond.domain[i].lo)) body += "(assert (<= " + smt_number(cond.domain[i].lo) + " " + x + "))\n";
    if (std::isfinite(cond.domain[i].hi)) body += "(assert (<= " + x + " " + smt_number(cond.domain[i].hi) + "))\n";
  }
  std::string nonzero = "(assert (or";
  for (std::size_t i = 0; i < n; ++i) nonzero += " (not (= x" + std::to_string(i + 1) + " 0.0))";
  body += nonzero + "))\n";
  if (cond.exclusion_radius > 0.0) {
    const std::string r = smt_number(cond.exclusion_radius);
    std::string ex = "(assert (or";
    for (std::size_t i = 0; i < n; ++i) {
      const std::string x = "x" + std::to_string(i + 1);
      ex += " (> " + x + " " + r + ") (< " + x + " (- " + r + "))";
    }
    body += ex + "))\n";
  }
  for (const auto& p : cond.premises) {
    const std::string t = w.term(cond.fields.symbolic[p.field]);
    if (p.range.lo == p.range.hi) {
      body += "(assert (= " + t + " " + smt_number(p.range.lo) + "))\n";
      continue;
    }
    if (std::isfinite(p.range.lo)) body += "(assert (<= " + smt_number(p.range.lo) + " " + t + "))\n";
    if (std::isfinite(p.range.hi)) body += "(assert (<= " + t + " " + smt_number(p.range.hi) + "))\n";
  }
  body += "(assert (>= " + w.term(cond.fields.symbolic[cond.conclusion]) + " " + smt_number(cond.conclusion_bound) +
          "))\n";

  std::ostringstream out;
  out << "; negation of condition '" << cond.name << "': unsat means the condition holds\n";
  out << "(set-logic " << logic << ")\n";
  for (std::size_t i = 0; i < n; ++i) out << "(declare-fun x" << i + 1 << " () Real)\n";
  out << w.declarations << w.bounds << body << "(check-sat)\n";
  return out.str();
}

}  // namespace zclf
