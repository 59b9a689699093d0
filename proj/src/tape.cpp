#include "zclf/tape.hpp"

#include <bit>
#include <map>
#include <tuple>
#include <unordered_map>

namespace zclf {

class TapeBuilder {
 public:
  explicit TapeBuilder(Tape& tape) : tape_(tape) {}

  std::uint32_t emit(const Expression& e) {
    if (auto it = seen_.find(e.id()); it != seen_.end()) return it->second;
    Tape::Instr in{e.op()};
    switch (e.op()) {
      case Op::Var:
        in.a = static_cast<std::uint32_t>(e.index());
        break;
      case Op::Const:
        in.value = e.value();
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
        in.a = emit(e.lhs());
        in.b = emit(e.rhs());
        // canonical operand order lets a*b and b*a share a register
        if ((e.op() == Op::Add || e.op() == Op::Mul) && in.b < in.a) std::swap(in.a, in.b);
        break;
      case Op::Pow:
        in.exponent = e.exponent();
        in.a = emit(e.arg());
        break;
      default:
        in.a = emit(e.arg());
        break;
    }
    const auto key = std::make_tuple(in.op, in.a, in.b, in.exponent, std::bit_cast<std::uint64_t>(in.value));
    auto [it, inserted] = cse_.try_emplace(key, static_cast<std::uint32_t>(tape_.code_.size()));
    if (inserted) tape_.code_.push_back(in);
    seen_.emplace(e.id(), it->second);
    keep_.push_back(e);  // pins node addresses used as keys
    return it->second;
  }

 private:
  Tape& tape_;
  std::unordered_map<const void*, std::uint32_t> seen_;
  std::map<std::tuple<Op, std::uint32_t, std::uint32_t, int, std::uint64_t>, std::uint32_t> cse_;
  std::vector<Expression> keep_;
};

Tape::Tape(std::span<const Expression> outputs, std::size_t n_inputs) : n_inputs_(n_inputs) {
  TapeBuilder builder(*this);
  for (const auto& e : outputs) {
    detail::check_arity(e, n_inputs);
    outputs_.push_back(builder.emit(e));
  }
}

}  // namespace zclf
