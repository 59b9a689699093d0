#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "zclf/expr.hpp"
#include "zclf/interval.hpp"
#include "zclf/riccati.hpp"
#include "zclf/system.hpp"
#include "zclf/value_model.hpp"

namespace zclf {

/// Scalar functions of x evaluated together: values at points, enclosures
/// over boxes. `symbolic` is filled when every field is an expression.
struct FieldSet {
  std::size_t n = 0;
  std::vector<std::string> names;
  std::function<void(std::span<const double>, std::span<double>)> values;
  std::function<void(const Box&, std::span<Interval>)> enclose;
  std::vector<Expression> symbolic;

  std::size_t size() const { return names.size(); }
};

/// Enclosures are the natural extension intersected with the mean-value form
/// (interval gradients by forward-mode duals) when mean_value is set.
FieldSet expression_fields(std::vector<Expression> exprs, std::size_t n, std::vector<std::string> names = {},
                           bool mean_value = true);

/// Premise: fields[field] lies in range (an equality when range is a point).
struct Premise {
  std::size_t field = 0;
  Interval range = Interval::entire();
};

Premise at_most(std::size_t field, double c);
Premise at_least(std::size_t field, double c);
Premise equals_zero(std::size_t field);
Premise within(std::size_t field, double lo, double hi);

/// For all x in domain outside the exclusion box [-r, r]^n (and x != 0):
/// all premises hold => fields[conclusion] < conclusion_bound.
struct Condition {
  std::string name;
  FieldSet fields;
  std::vector<Premise> premises;
  std::size_t conclusion = 0;
  double conclusion_bound = 0.0;
  Box domain;  // empty: unbounded (SMT-LIB emission only)
  double exclusion_radius = 0.0;
};

enum class Outcome { Proved, Counterexample, Unknown };
std::string outcome_name(Outcome o);

struct Verdict {
  Outcome outcome = Outcome::Unknown;
  double delta = 0.0;
  std::size_t boxes = 0;
  double time_ms = 0.0;
  std::vector<double> witness;  // counterexample point
  Box witness_box;

  bool proved() const { return outcome == Outcome::Proved; }
};

struct CheckOptions {
  double delta = 1e-4;
  std::size_t max_boxes = 4'000'000;
  unsigned threads = 0;  // 0: resolve_threads
};

/// Interval branch and bound. A box is discarded when some premise is
/// refuted or the conclusion is certified; it yields a counterexample when the
/// delta-weakened premises hold at its midpoint and the conclusion there is
/// >= -delta; otherwise it is bisected along its widest edge. Boxes are
/// processed breadth-first in rounds, so the verdict and witness do not depend
/// on the thread count.
Verdict check_condition(const Condition& cond, const CheckOptions& opt);

/// True when the delta-weakened negation holds at x (the counterexample contract).
bool violates_weakened(const Condition& cond, std::span<const double> x, double delta);

nlohmann::json to_json(const Verdict& v, const std::string& condition, std::optional<double> level = std::nullopt);

struct LevelSearch {
  bool found = false;
  double level = 0.0;
  std::vector<std::pair<double, Outcome>> trace;
  std::size_t boxes = 0;
  double time_ms = 0.0;
};

/// Largest c in (lo, hi] for which check(c) is proved, assuming monotonicity;
/// lo itself is taken as valid. Stops when hi - lo <= rel_tol * hi.
LevelSearch bisect_level(double lo, double hi, const std::function<Verdict(double)>& check, double rel_tol = 1e-3,
                         int max_iter = 40);

/// Certified range [lower bound, best sample] of min fields[field] over the
/// faces of domain.
Interval boundary_minimum(const FieldSet& fields, std::size_t field, const Box& domain, double rel_tol = 1e-6,
                          std::size_t max_boxes = 200000);

/// x^T P x decreases along xdot = F(x), F(0) = 0, for every x != 0 in a box
/// whose interval Jacobian enclosure of F is J (n x n, row-major).
bool lyapunov_jacobian_certified(const Eigen::MatrixXd& P, std::span<const Interval> J);

/// Largest r = r0 / 2^j (j < halvings) such that the Jacobian test passes on
/// [-r, r]^n; 0 if none does.
double certify_origin_radius(const Eigen::MatrixXd& P, const std::function<std::vector<Interval>(const Box&)>& jacobian,
                             std::size_t n, double r0, int halvings = 40);

/// Interval Jacobian of expressions over a box.
std::vector<Interval> expression_jacobian(std::span<const Expression> F, std::size_t n, const Box& box);

// Quadratic certificates.

Expression quadratic_form(const Eigen::MatrixXd& P);
/// Fields: [0] V_P, [1] a = grad V_P . f, [2..2+k) b_j = grad V_P . g_j, [2+k] grad V_P . (f + g K x).
FieldSet quadratic_fields(const ControlAffineSystem& sys, const QuadraticCertificate& cert);

/// grad V.g = 0 => grad V.f < 0 over domain minus [-r, r]^n.
Condition quadratic_clf_condition(const ControlAffineSystem& sys, const QuadraticCertificate& cert, const Box& domain,
                                  double exclusion_radius);

struct QuadraticVerifyOptions {
  CheckOptions check;
  double c_max = 0.0;  // 0: certified minimum of V_P over the domain faces
  double rel_tol = 1e-3;
  double origin_r0 = 0.0;  // 0: a quarter of the smallest domain half-width
};

struct QuadraticVerification {
  QuadraticCertificate cert;
  double c_max = 0.0;
  double origin_radius = 0.0;
  LevelSearch stage_a, stage_b;
};

class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stage A: largest c_P1 with V_P a Lyapunov function of f + g K x on
/// {V_P <= c_P1}. Stage B: largest c_P in (c_P1, c_max] with
/// grad V.g = 0 and c_P1 <= V_P <= c_P => grad V.f < 0.
QuadraticVerification verify_quadratic(const ControlAffineSystem& sys, QuadraticCertificate cert,
                                       const QuadraticVerifyOptions& opt = {});

/// Native global-style check of the quadratic CLF condition over sys.domain.
Verdict check_global_quadratic(const ControlAffineSystem& sys, const QuadraticCertificate& cert,
                               const CheckOptions& opt, double* radius = nullptr);

// Learned certificates.

/// Fields: [0] W, [1] V_P, [2] a = grad W . f, [3..3+k) b_j = grad W . g_j.
FieldSet neural_clf_fields(const ControlAffineSystem& sys, std::shared_ptr<const ValueModel> model,
                           const Eigen::MatrixXd& P, bool mean_value = false);

/// Fields: [0] W, [1] V_P, [2] grad W . F, [3] grad V_P . F with F = f + g k.
FieldSet closed_loop_fields(const ControlAffineSystem& sys, std::shared_ptr<const HjbFeedback> feedback,
                            const Eigen::MatrixXd& P, bool mean_value = false);

struct NeuralVerifyOptions {
  CheckOptions check;
  double c_max = 0.0;  // 0: certified minimum of W over the domain faces
  double rel_tol = 1e-3;
  bool mean_value = false;
};

struct NeuralVerification {
  double c1 = 0.0;
  std::optional<double> c2;
  double c_max = 0.0;
  LevelSearch containment, clf;
  std::string diagnostic;
};

/// c1: largest level with {W <= c1} inside {V_P <= c_P}. c2: largest level in
/// (c1, c_max] with grad W.g = 0 and c1 <= W <= c2 => grad W.f < 0.
NeuralVerification verify_neural(const ControlAffineSystem& sys, std::shared_ptr<const ValueModel> model,
                                 const QuadraticCertificate& cert, const NeuralVerifyOptions& opt = {});

struct RoaVerification {
  std::optional<double> c;
  double inner_level = 0.0;   // V_P level certified for the closed loop near the origin
  double origin_radius = 0.0;
  double c_max = 0.0;
  LevelSearch inner, outer;
  std::string diagnostic;
};

/// Largest c such that W decreases along f + g k outside an inner quadratic
/// region {V_P <= c_in}, itself certified invariant for the same closed loop.
RoaVerification verify_closed_loop_roa(const ControlAffineSystem& sys, std::shared_ptr<const HjbFeedback> feedback,
                                       const QuadraticCertificate& cert, const NeuralVerifyOptions& opt = {});

// SMT-LIB2.

class SmtError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Satisfiability query for the negation of cond (unsat <=> proved). Each
/// constant is written as the shortest decimal that reads back as the same
/// double (0.1 becomes 1/10), so intended decimal constants are exact; sin/cos become fresh variables with
/// certified polynomial bounds. Always excludes x = 0.
std::string emit_smtlib(const Condition& cond, const std::string& logic = "QF_NRA");

/// Shortest round-trip decimal of a double as a reduced rational, e.g. "(/ 3.0 4.0)", "(- 2.0)", "(/ 1.0 10.0)".
std::string smt_number(double v);

}  // namespace zclf
