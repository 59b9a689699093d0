#include "zclf/value_model.hpp"

#include "zclf/riccati.hpp"

namespace zclf {

NetworkValue::NetworkValue(NeuralValueFunction net) : net_(std::move(net)) {
  if (net_.input_dim() > kMaxValueDim)
    throw std::invalid_argument("learned value functions are supported up to dimension " +
                                std::to_string(kMaxValueDim));
}

ExpressionValue::ExpressionValue(Expression W, std::size_t n, TransformSpec transform)
    : n_(n), transform_(transform) {
  if (n > kMaxValueDim)
    throw std::invalid_argument("learned value functions are supported up to dimension " +
                                std::to_string(kMaxValueDim));
  detail::check_arity(W, n);
  const std::vector<Expression> out{W};
  tape_ = Tape(out, n);
}

HjbFeedback::HjbFeedback(const ControlAffineSystem& sys, const CostSpec& cost, std::shared_ptr<const ValueModel> model,
                         bool zero_shift)
    : n_(sys.n), k_(sys.k), model_(std::move(model)) {
  sys.validate();
  cost.validate(sys.n, sys.k);
  if (!model_ || model_->dim() != n_) throw std::invalid_argument("value model dimension does not match the system");
  if (!cost.has_constant_R()) throw std::invalid_argument("the HJB feedback needs a constant input weight R");
  const std::vector<double> origin(n_, 0.0);
  const Eigen::MatrixXd R = cost.R_at(origin);
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("R must be positive definite");
  R_inv_ = llt.solve(Eigen::MatrixXd::Identity(R.rows(), R.cols()));

  std::vector<Expression> g, fg(sys.f.begin(), sys.f.end());
  for (const auto& row : sys.g) g.insert(g.end(), row.begin(), row.end());
  fg.insert(fg.end(), g.begin(), g.end());
  g_ = Tape(g, n_);
  fg_ = Tape(fg, n_);
  shift_.assign(k_, 0.0);
  if (zero_shift) shift_ = raw<double>(origin);
}

}  // namespace zclf
