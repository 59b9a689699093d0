#include "zclf/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace zclf {

std::string to_string(const Interval& iv) {
  std::ostringstream os;
  os.precision(17);
  os << '[' << iv.lo << ", " << iv.hi << ']';
  return os.str();
}

Expression::Expression() : Expression(constant(0.0)) {}

Expression::Expression(double c) : Expression(constant(c)) {}

Expression Expression::make(Op op, Expression a, Expression b, double value, std::size_t index, int exponent) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->value = value;
  node->index = index;
  node->exponent = exponent;
  std::size_t arity = op == Op::Var ? index + 1 : 0;
  if (a.node_) arity = std::max(arity, a.required_arity());
  if (b.node_) arity = std::max(arity, b.required_arity());
  node->arity = arity;
  node->a = std::move(a);
  node->b = std::move(b);
  return Expression(std::shared_ptr<const Node>(std::move(node)));
}

Expression Expression::constant(double c) {
  return make(Op::Const, Expression(NullTag{}), Expression(NullTag{}), c);
}

Expression Expression::variable(std::size_t index) {
  return make(Op::Var, Expression(NullTag{}), Expression(NullTag{}), 0.0, index);
}

bool Expression::operator==(const Expression& other) const {
  if (node_ == other.node_) return true;
  if (!node_ || !other.node_) return false;
  const Node& p = *node_;
  const Node& q = *other.node_;
  if (p.op != q.op || p.arity != q.arity) return false;
  switch (p.op) {
    case Op::Const:
      return p.value == q.value;
    case Op::Var:
      return p.index == q.index;
    case Op::Pow:
      return p.exponent == q.exponent && p.a == q.a;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
      return p.a == q.a && p.b == q.b;
    default:
      return p.a == q.a;
  }
}

Expression operator+(const Expression& a, const Expression& b) {
  if (a.is_constant() && b.is_constant()) return Expression::constant(a.value() + b.value());
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  return Expression::make(Op::Add, a, b);
}

Expression operator-(const Expression& a, const Expression& b) {
  if (a.is_constant() && b.is_constant()) return Expression::constant(a.value() - b.value());
  if (b.is_zero()) return a;
  if (a.is_zero()) return -b;
  return Expression::make(Op::Sub, a, b);
}

Expression operator*(const Expression& a, const Expression& b) {
  if (a.is_constant() && b.is_constant()) return Expression::constant(a.value() * b.value());
  if (a.is_zero() || b.is_zero()) return Expression::constant(0.0);
  if (a.is_one()) return b;
  if (b.is_one()) return a;
  return Expression::make(Op::Mul, a, b);
}

Expression operator/(const Expression& a, const Expression& b) {
  if (b.is_zero()) throw EvalError("division by constant zero");
  if (a.is_constant() && b.is_constant()) return Expression::constant(a.value() / b.value());
  if (a.is_zero()) return Expression::constant(0.0);
  if (b.is_one()) return a;
  return Expression::make(Op::Div, a, b);
}

Expression operator-(const Expression& a) {
  if (a.is_constant()) return Expression::constant(-a.value());
  if (a.op() == Op::Neg) return a.arg();
  return Expression::make(Op::Neg, a, Expression(Expression::NullTag{}));
}

Expression pow(const Expression& a, int k) {
  if (k == 0) return Expression::constant(1.0);
  if (k == 1) return a;
  if (a.is_constant()) {
    if (a.value() == 0.0 && k < 0) throw EvalError("negative power of constant zero");
    return Expression::constant(std::pow(a.value(), k));
  }
  return Expression::make(Op::Pow, a, Expression(Expression::NullTag{}), 0.0, 0, k);
}

Expression sqrt(const Expression& a) {
  if (a.is_constant()) {
    if (a.value() < 0.0) throw EvalError("sqrt of negative constant");
    return Expression::constant(std::sqrt(a.value()));
  }
  return Expression::make(Op::Sqrt, a, Expression(Expression::NullTag{}));
}

Expression exp(const Expression& a) {
  if (a.is_constant()) return Expression::constant(std::exp(a.value()));
  return Expression::make(Op::Exp, a, Expression(Expression::NullTag{}));
}

Expression sin(const Expression& a) {
  if (a.is_constant()) return Expression::constant(std::sin(a.value()));
  return Expression::make(Op::Sin, a, Expression(Expression::NullTag{}));
}

Expression cos(const Expression& a) {
  if (a.is_constant()) return Expression::constant(std::cos(a.value()));
  return Expression::make(Op::Cos, a, Expression(Expression::NullTag{}));
}

Expression tanh(const Expression& a) {
  if (a.is_constant()) return Expression::constant(std::tanh(a.value()));
  return Expression::make(Op::Tanh, a, Expression(Expression::NullTag{}));
}

// ---------------------------------------------------------------------------
// printing

namespace {

int precedence(Op op) {
  switch (op) {
    case Op::Add:
    case Op::Sub:
      return 1;
    case Op::Mul:
    case Op::Div:
      return 2;
    case Op::Neg:
      return 3;
    case Op::Pow:
      return 4;
    default:
      return 5;
  }
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  // shortest form that round-trips
  for (int p = 1; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) {
      s = buf;
      break;
    }
  }
  return s;
}

void print(const Expression& e, std::ostringstream& os);

void print_child(const Expression& child, int parent_prec, bool right_side, std::ostringstream& os) {
  int cp = precedence(child.op());
  if (child.is_constant() && child.value() < 0.0) cp = 3;  // prints with a leading '-'
  const bool paren = cp < parent_prec || (right_side && cp == parent_prec);
  if (paren) os << '(';
  print(child, os);
  if (paren) os << ')';
}

void print(const Expression& e, std::ostringstream& os) {
  switch (e.op()) {
    case Op::Const:
      os << format_number(e.value());
      return;
    case Op::Var:
      os << 'x' << (e.index() + 1);
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const int p = precedence(e.op());
      print_child(e.lhs(), p, false, os);
      os << (e.op() == Op::Add ? " + " : e.op() == Op::Sub ? " - " : e.op() == Op::Mul ? "*" : "/");
      print_child(e.rhs(), p, true, os);
      return;
    }
    case Op::Neg:
      os << '-';
      print_child(e.arg(), precedence(Op::Neg) + 1, false, os);
      return;
    case Op::Pow:
      print_child(e.arg(), precedence(Op::Pow) + 1, false, os);
      os << '^';
      if (e.exponent() < 0)
        os << '(' << e.exponent() << ')';
      else
        os << e.exponent();
      return;
    case Op::Sqrt:
    case Op::Exp:
    case Op::Sin:
    case Op::Cos:
    case Op::Tanh: {
      static constexpr const char* names[] = {"sqrt", "exp", "sin", "cos", "tanh"};
      os << names[static_cast<int>(e.op()) - static_cast<int>(Op::Sqrt)] << '(';
      print(e.arg(), os);
      os << ')';
      return;
    }
  }
}

}  // namespace

std::string Expression::to_string() const {
  std::ostringstream os;
  print(*this, os);
  return os.str();
}

// ---------------------------------------------------------------------------
// calculus and rewriting

Expression differentiate(const Expression& e, std::size_t i) {
  switch (e.op()) {
    case Op::Const:
      return 0.0;
    case Op::Var:
      return e.index() == i ? 1.0 : 0.0;
    case Op::Add:
      return differentiate(e.lhs(), i) + differentiate(e.rhs(), i);
    case Op::Sub:
      return differentiate(e.lhs(), i) - differentiate(e.rhs(), i);
    case Op::Mul:
      return differentiate(e.lhs(), i) * e.rhs() + e.lhs() * differentiate(e.rhs(), i);
    case Op::Div: {
      const Expression& a = e.lhs();
      const Expression& b = e.rhs();
      return (differentiate(a, i) * b - a * differentiate(b, i)) / pow(b, 2);
    }
    case Op::Neg:
      return -differentiate(e.arg(), i);
    case Op::Pow: {
      const int k = e.exponent();
      return Expression(static_cast<double>(k)) * pow(e.arg(), k - 1) * differentiate(e.arg(), i);
    }
    case Op::Sqrt:
      return differentiate(e.arg(), i) / (2.0 * e);
    case Op::Exp:
      return e * differentiate(e.arg(), i);
    case Op::Sin:
      return cos(e.arg()) * differentiate(e.arg(), i);
    case Op::Cos:
      return -(sin(e.arg()) * differentiate(e.arg(), i));
    case Op::Tanh:
      return (1.0 - pow(e, 2)) * differentiate(e.arg(), i);
  }
  return 0.0;
}

Expression substitute(const Expression& e, std::span<const Expression> replacements) {
  switch (e.op()) {
    case Op::Const:
      return e;
    case Op::Var:
      if (e.index() >= replacements.size()) throw std::invalid_argument("substitute: variable out of range");
      return replacements[e.index()];
    case Op::Add:
      return substitute(e.lhs(), replacements) + substitute(e.rhs(), replacements);
    case Op::Sub:
      return substitute(e.lhs(), replacements) - substitute(e.rhs(), replacements);
    case Op::Mul:
      return substitute(e.lhs(), replacements) * substitute(e.rhs(), replacements);
    case Op::Div:
      return substitute(e.lhs(), replacements) / substitute(e.rhs(), replacements);
    case Op::Neg:
      return -substitute(e.arg(), replacements);
    case Op::Pow:
      return pow(substitute(e.arg(), replacements), e.exponent());
    case Op::Sqrt:
      return sqrt(substitute(e.arg(), replacements));
    case Op::Exp:
      return exp(substitute(e.arg(), replacements));
    case Op::Sin:
      return sin(substitute(e.arg(), replacements));
    case Op::Cos:
      return cos(substitute(e.arg(), replacements));
    case Op::Tanh:
      return tanh(substitute(e.arg(), replacements));
  }
  return e;
}

bool is_polynomial(const Expression& e) {
  switch (e.op()) {
    case Op::Const:
    case Op::Var:
      return true;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
      return is_polynomial(e.lhs()) && is_polynomial(e.rhs());
    case Op::Div:
      return e.rhs().is_constant() && is_polynomial(e.lhs());
    case Op::Neg:
      return is_polynomial(e.arg());
    case Op::Pow:
      return e.exponent() >= 0 && is_polynomial(e.arg());
    default:
      return false;
  }
}

namespace detail {

void check_arity(const Expression& e, std::size_t given) {
  if (e.required_arity() > given)
    throw std::invalid_argument("expression references x" + std::to_string(e.required_arity()) +
                                " but only " + std::to_string(given) + " values were given");
}

}  // namespace detail

double eval(const Expression& e, std::span<const double> point) { return evaluate<double>(e, point); }

Interval eval_interval(const Expression& e, const Box& box) {
  return evaluate<Interval>(e, std::span<const Interval>(box));
}

// ---------------------------------------------------------------------------
// parser

namespace {

class Parser {
 public:
  Parser(std::string_view text, std::size_t n_states, std::size_t n_inputs)
      : text_(text), n_states_(n_states), n_inputs_(n_inputs) {}

  Expression parse() {
    Expression e = parse_sum();
    skip_ws();
    if (pos_ < text_.size()) throw ParseError(std::string("unexpected '") + text_[pos_] + "'", pos_);
    return e;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      if (pos_ >= text_.size()) throw ParseError(std::string("expected '") + c + "', got end of input", pos_);
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
  }

  Expression parse_sum() {
    Expression e = parse_product();
    for (;;) {
      if (accept('+'))
        e = e + parse_product();
      else if (accept('-'))
        e = e - parse_product();
      else
        return e;
    }
  }

  Expression parse_product() {
    Expression e = parse_unary();
    for (;;) {
      if (accept('*')) {
        e = e * parse_unary();
      } else if (accept('/')) {
        const std::size_t at = pos_;
        Expression d = parse_unary();
        if (d.is_zero()) throw ParseError("division by constant zero", at);
        e = e / d;
      } else {
        return e;
      }
    }
  }

  Expression parse_unary() {
    if (accept('-')) return -parse_unary();
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  Expression parse_power() {
    Expression base = parse_primary();
    if (!accept('^')) return base;
    skip_ws();
    bool paren = accept('(');
    skip_ws();
    bool negative = accept('-');
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (start == pos_) throw ParseError("exponent must be an integer literal", start);
    int k = 0;
    std::from_chars(text_.data() + start, text_.data() + pos_, k);
    if (paren) expect(')');
    return pow(base, negative ? -k : k);
  }

  Expression parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expression e = parse_sum();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    throw ParseError(std::string("unexpected '") + c + "'", pos_);
  }

  Expression parse_number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
      ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
      if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
        pos_ = p;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, v);
    if (ec != std::errc() || ptr != text_.data() + pos_) throw ParseError("malformed number", start);
    return Expression::constant(v);
  }

  Expression parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    const std::string_view name = text_.substr(start, pos_ - start);

    if (name == "pi") return Expression::constant(std::numbers::pi);
    if (name == "sqrt" || name == "exp" || name == "sin" || name == "cos" || name == "tanh") {
      expect('(');
      Expression a = parse_sum();
      expect(')');
      if (name == "sqrt") return sqrt(a);
      if (name == "exp") return exp(a);
      if (name == "sin") return sin(a);
      if (name == "cos") return cos(a);
      return tanh(a);
    }
    if ((name[0] == 'x' || name[0] == 'u') && name.size() > 1 &&
        std::all_of(name.begin() + 1, name.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
      std::size_t k = 0;
      std::from_chars(name.data() + 1, name.data() + name.size(), k);
      if (name[0] == 'x') {
        if (k == 0 || k > n_states_)
          throw ParseError("state variable " + std::string(name) + " outside x1..x" + std::to_string(n_states_), start);
        return Expression::variable(k - 1);
      }
      if (n_inputs_ == 0) throw ParseError("input variable " + std::string(name) + " not permitted here", start);
      if (k == 0 || k > n_inputs_)
        throw ParseError("input variable " + std::string(name) + " outside u1..u" + std::to_string(n_inputs_), start);
      return Expression::variable(n_states_ + k - 1);
    }
    throw ParseError("unknown identifier '" + std::string(name) + "'", start);
  }

  std::string_view text_;
  std::size_t n_states_;
  std::size_t n_inputs_;
  std::size_t pos_ = 0;
};

}  // namespace

Expression parse_expression(std::string_view text, std::size_t n_states, std::size_t n_inputs) {
  return Parser(text, n_states, n_inputs).parse();
}

}  // namespace zclf
