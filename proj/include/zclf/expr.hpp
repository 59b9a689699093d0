#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "zclf/dual.hpp"
#include "zclf/interval.hpp"

namespace zclf {

enum class Op : unsigned char { Var, Const, Add, Sub, Mul, Div, Neg, Pow, Sqrt, Exp, Sin, Cos, Tanh };

/// Point evaluation failed (division by zero, sqrt of a negative number).
class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed expression text; `offset` is the byte position of the problem.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Immutable symbolic expression over variables x[0..arity). Copies share
/// structure, so expressions are cheap to pass by value and safe to read from
/// any number of threads.
class Expression {
 public:
  struct Node;

  Expression();  // the constant 0
  Expression(double c);  // NOLINT: constants mix freely with expressions

  static Expression constant(double c);
  static Expression variable(std::size_t index);

  Op op() const;
  double value() const;          // Const only
  std::size_t index() const;     // Var only
  int exponent() const;          // Pow only
  const Expression& lhs() const; // binary ops, and the operand of unary ops
  const Expression& rhs() const;
  const Expression& arg() const { return lhs(); }

  /// 1 + largest variable index referenced (0 for constants).
  std::size_t required_arity() const;
  bool is_constant() const { return op() == Op::Const; }
  bool is_zero() const { return is_constant() && value() == 0.0; }
  bool is_one() const { return is_constant() && value() == 1.0; }

  /// Identity of the shared node; equal ids imply equal expressions.
  const void* id() const { return node_.get(); }

  /// Structural equality.
  bool operator==(const Expression& other) const;

  /// Infix text accepted by parse_expression (variables printed as x1, x2, ...).
  std::string to_string() const;

 private:
  struct NullTag {};
  explicit Expression(NullTag) {}
  explicit Expression(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  static Expression make(Op op, Expression a, Expression b, double value = 0.0, std::size_t index = 0,
                         int exponent = 0);

  friend Expression operator+(const Expression&, const Expression&);
  friend Expression operator-(const Expression&, const Expression&);
  friend Expression operator*(const Expression&, const Expression&);
  friend Expression operator/(const Expression&, const Expression&);
  friend Expression operator-(const Expression&);
  friend Expression pow(const Expression&, int);
  friend Expression sqrt(const Expression&);
  friend Expression exp(const Expression&);
  friend Expression sin(const Expression&);
  friend Expression cos(const Expression&);
  friend Expression tanh(const Expression&);

  std::shared_ptr<const Node> node_;
};

struct Expression::Node {
  Op op = Op::Const;
  double value = 0.0;
  std::size_t index = 0;
  int exponent = 0;
  std::size_t arity = 0;
  Expression a{NullTag{}};
  Expression b{NullTag{}};
};

inline Op Expression::op() const { return node_->op; }
inline double Expression::value() const { return node_->value; }
inline std::size_t Expression::index() const { return node_->index; }
inline int Expression::exponent() const { return node_->exponent; }
inline const Expression& Expression::lhs() const { return node_->a; }
inline const Expression& Expression::rhs() const { return node_->b; }
inline std::size_t Expression::required_arity() const { return node_->arity; }

// Smart constructors fold constants and apply 0/1 identities only.
Expression operator+(const Expression& a, const Expression& b);
Expression operator-(const Expression& a, const Expression& b);
Expression operator*(const Expression& a, const Expression& b);
Expression operator/(const Expression& a, const Expression& b);
Expression operator-(const Expression& a);
Expression pow(const Expression& a, int k);
Expression sqrt(const Expression& a);
Expression exp(const Expression& a);
Expression sin(const Expression& a);
Expression cos(const Expression& a);
Expression tanh(const Expression& a);

inline Expression& operator+=(Expression& a, const Expression& b) { return a = a + b; }
inline Expression& operator*=(Expression& a, const Expression& b) { return a = a * b; }

/// Parses infix text. Grammar (whitespace ignored):
///
///   expr    := term (('+' | '-') term)*
///   term    := unary (('*' | '/') unary)*
///   unary   := ('-' | '+') unary | power
///   power   := primary ('^' ['-'] integer)?
///   primary := number | 'pi' | x<i> | u<j> | fn '(' expr ')' | '(' expr ')'
///   fn      := sqrt | exp | sin | cos | tanh
///
/// x1..x<n_states> map to indices 0..n_states-1; u1..u<n_inputs> (only when
/// n_inputs > 0) map to n_states..n_states+n_inputs-1.
Expression parse_expression(std::string_view text, std::size_t n_states, std::size_t n_inputs = 0);

/// Symbolic partial derivative with respect to variable `i`.
Expression differentiate(const Expression& e, std::size_t i);

/// Replaces variable j by replacements[j].
Expression substitute(const Expression& e, std::span<const Expression> replacements);

/// True when only +, -, *, non-negative integer powers and division by
/// constants occur.
bool is_polynomial(const Expression& e);

namespace detail {

inline void check_divisor(double v) {
  if (v == 0.0) throw EvalError("division by zero");
}
inline void check_divisor(const Interval&) {}  // interval division checks itself
template <class T, std::size_t N>
void check_divisor(const Dual<T, N>& v) {
  check_divisor(v.v);
}

inline void check_sqrt(double v) {
  if (v < 0.0) throw EvalError("sqrt of negative number");
}
inline void check_sqrt(const Interval&) {}
template <class T, std::size_t N>
void check_sqrt(const Dual<T, N>& v) {
  check_sqrt(v.v);
}

template <class T>
T evaluate_node(const Expression& e, std::span<const T> x) {
  using std::cos;
  using std::exp;
  using std::pow;
  using std::sin;
  using std::sqrt;
  using std::tanh;
  switch (e.op()) {
    case Op::Var:
      return x[e.index()];
    case Op::Const:
      return T(e.value());
    case Op::Add:
      return evaluate_node(e.lhs(), x) + evaluate_node(e.rhs(), x);
    case Op::Sub:
      return evaluate_node(e.lhs(), x) - evaluate_node(e.rhs(), x);
    case Op::Mul: {
      // x*x evaluates as a square so interval enclosures stay tight
      if (e.lhs() == e.rhs()) return sqr(evaluate_node(e.lhs(), x));
      return evaluate_node(e.lhs(), x) * evaluate_node(e.rhs(), x);
    }
    case Op::Div: {
      T den = evaluate_node(e.rhs(), x);
      check_divisor(den);
      return evaluate_node(e.lhs(), x) / den;
    }
    case Op::Neg:
      return -evaluate_node(e.arg(), x);
    case Op::Pow: {
      T base = evaluate_node(e.arg(), x);
      if (e.exponent() < 0) check_divisor(base);
      return pow(base, e.exponent());
    }
    case Op::Sqrt: {
      T a = evaluate_node(e.arg(), x);
      check_sqrt(a);
      return sqrt(a);
    }
    case Op::Exp:
      return exp(evaluate_node(e.arg(), x));
    case Op::Sin:
      return sin(evaluate_node(e.arg(), x));
    case Op::Cos:
      return cos(evaluate_node(e.arg(), x));
    case Op::Tanh:
      return tanh(evaluate_node(e.arg(), x));
  }
  throw EvalError("corrupt expression node");
}

void check_arity(const Expression& e, std::size_t given);

}  // namespace detail

/// Generic evaluation over double, Interval, or (nested) Dual scalars.
template <class T>
T evaluate(const Expression& e, std::span<const T> x) {
  detail::check_arity(e, x.size());
  return detail::evaluate_node<T>(e, x);
}

/// IEEE double evaluation; throws EvalError instead of producing inf/NaN.
double eval(const Expression& e, std::span<const double> point);

/// Sound enclosure of the range of e over box; throws EnclosureError.
Interval eval_interval(const Expression& e, const Box& box);

}  // namespace zclf
