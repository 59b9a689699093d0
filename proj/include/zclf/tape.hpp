#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zclf/expr.hpp"

namespace zclf {

/// A set of expressions flattened into straight-line code with common
/// subexpressions shared. Evaluation is generic over the scalar type like
/// `evaluate`, with the same error behaviour, but avoids walking the tree.
class Tape {
 public:
  Tape() = default;
  Tape(std::span<const Expression> outputs, std::size_t n_inputs);

  std::size_t n_inputs() const { return n_inputs_; }
  std::size_t n_outputs() const { return outputs_.size(); }
  std::size_t size() const { return code_.size(); }

  /// `work` is scratch space reused between calls.
  template <class T>
  void evaluate(std::span<const T> in, std::span<T> out, std::vector<T>& work) const;

  template <class T>
  std::vector<T> operator()(std::span<const T> in) const {
    std::vector<T> out(n_outputs()), work;
    evaluate<T>(in, out, work);
    return out;
  }

 private:
  struct Instr {
    Op op;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    int exponent = 0;
    double value = 0.0;
  };

  std::size_t n_inputs_ = 0;
  std::vector<Instr> code_;
  std::vector<std::uint32_t> outputs_;

  friend class TapeBuilder;
};

template <class T>
void Tape::evaluate(std::span<const T> in, std::span<T> out, std::vector<T>& r) const {
  using std::cos;
  using std::exp;
  using std::pow;
  using std::sin;
  using std::sqrt;
  using std::tanh;
  if (in.size() < n_inputs_ || out.size() < outputs_.size()) throw std::invalid_argument("tape: wrong argument size");
  r.resize(code_.size());
  for (std::size_t i = 0; i < code_.size(); ++i) {
    const Instr& c = code_[i];
    switch (c.op) {
      case Op::Var:
        r[i] = in[c.a];
        break;
      case Op::Const:
        r[i] = T(c.value);
        break;
      case Op::Add:
        r[i] = r[c.a] + r[c.b];
        break;
      case Op::Sub:
        r[i] = r[c.a] - r[c.b];
        break;
      case Op::Mul:
        r[i] = c.a == c.b ? sqr(r[c.a]) : r[c.a] * r[c.b];
        break;
      case Op::Div:
        detail::check_divisor(r[c.b]);
        r[i] = r[c.a] / r[c.b];
        break;
      case Op::Neg:
        r[i] = -r[c.a];
        break;
      case Op::Pow:
        if (c.exponent < 0) detail::check_divisor(r[c.a]);
        r[i] = pow(r[c.a], c.exponent);
        break;
      case Op::Sqrt:
        detail::check_sqrt(r[c.a]);
        r[i] = sqrt(r[c.a]);
        break;
      case Op::Exp:
        r[i] = exp(r[c.a]);
        break;
      case Op::Sin:
        r[i] = sin(r[c.a]);
        break;
      case Op::Cos:
        r[i] = cos(r[c.a]);
        break;
      case Op::Tanh:
        r[i] = tanh(r[c.a]);
        break;
    }
  }
  for (std::size_t k = 0; k < outputs_.size(); ++k) out[k] = r[outputs_[k]];
}

}  // namespace zclf
