#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <vector>

#include "zclf/dual.hpp"
#include "zclf/expr.hpp"
#include "zclf/pinn.hpp"
#include "zclf/system.hpp"
#include "zclf/tape.hpp"
#include "zclf/transform.hpp"

namespace zclf {

/// Largest state dimension for learned-value verification and feedback.
inline constexpr std::size_t kMaxValueDim = 4;

using PointDual = Dual<double, kMaxValueDim>;
using BoxDual = Dual<Interval, kMaxValueDim>;
using BoxDual2 = Dual<BoxDual, kMaxValueDim>;

/// A transformed value function W(x) that can be evaluated on points, boxes
/// and their first/second-order dual extensions.
class ValueModel {
 public:
  virtual ~ValueModel() = default;
  virtual std::size_t dim() const = 0;
  virtual const TransformSpec& transform() const = 0;
  virtual double eval(std::span<const double> x) const = 0;
  virtual PointDual eval(std::span<const PointDual> x) const = 0;
  virtual Interval eval(std::span<const Interval> x) const = 0;
  virtual BoxDual eval(std::span<const BoxDual> x) const = 0;
  virtual BoxDual2 eval(std::span<const BoxDual2> x) const = 0;
};

class NetworkValue final : public ValueModel {
 public:
  explicit NetworkValue(NeuralValueFunction net);
  std::size_t dim() const override { return net_.input_dim(); }
  const TransformSpec& transform() const override { return net_.transform(); }
  const NeuralValueFunction& network() const { return net_; }
  double eval(std::span<const double> x) const override { return net_.forward(x); }
  PointDual eval(std::span<const PointDual> x) const override { return net_.evaluate<PointDual>(x); }
  Interval eval(std::span<const Interval> x) const override { return net_.evaluate<Interval>(x); }
  BoxDual eval(std::span<const BoxDual> x) const override { return net_.evaluate<BoxDual>(x); }
  BoxDual2 eval(std::span<const BoxDual2> x) const override { return net_.evaluate<BoxDual2>(x); }

 private:
  NeuralValueFunction net_;
};

/// Closed-form W(x), used for oracles such as beta(V_P).
class ExpressionValue final : public ValueModel {
 public:
  ExpressionValue(Expression W, std::size_t n, TransformSpec transform);
  std::size_t dim() const override { return n_; }
  const TransformSpec& transform() const override { return transform_; }
  double eval(std::span<const double> x) const override { return run<double>(x); }
  PointDual eval(std::span<const PointDual> x) const override { return run<PointDual>(x); }
  Interval eval(std::span<const Interval> x) const override { return run<Interval>(x); }
  BoxDual eval(std::span<const BoxDual> x) const override { return run<BoxDual>(x); }
  BoxDual2 eval(std::span<const BoxDual2> x) const override { return run<BoxDual2>(x); }

 private:
  template <class T>
  T run(std::span<const T> x) const {
    std::vector<T> out(1), work;
    tape_.evaluate<T>(x, out, work);
    return out[0];
  }
  std::size_t n_;
  Tape tape_;
  TransformSpec transform_;
};

namespace detail {

template <class T>
struct lifted;
template <>
struct lifted<double> {
  using type = PointDual;
};
template <>
struct lifted<Interval> {
  using type = BoxDual;
};
template <>
struct lifted<BoxDual> {
  using type = BoxDual2;
};

inline double lower(double v) { return v; }
inline double lower(const Interval& v) { return v.lo; }
template <class T, std::size_t N>
double lower(const Dual<T, N>& v) {
  return lower(v.v);
}
inline double upper(double v) { return v; }
inline double upper(const Interval& v) { return v.hi; }
template <class T, std::size_t N>
double upper(const Dual<T, N>& v) {
  return upper(v.v);
}

inline double floor_at(double v, double f) { return std::max(v, f); }
inline Interval floor_at(const Interval& v, double f) { return max(v, f); }
template <class T, std::size_t N>
Dual<T, N> floor_at(const Dual<T, N>& v, double f) {
  if (lower(v) >= f) return v;
  if (upper(v) < f) return Dual<T, N>(T(f));
  throw EnclosureError("clamp active inside the enclosure");
}

}  // namespace detail

template <class T>
struct ValueGradient {
  T W;
  std::vector<T> grad;
};

/// W and its gradient on scalar type T (one order of dual lifting).
template <class T>
ValueGradient<T> value_gradient(const ValueModel& m, std::span<const T> x) {
  using L = typename detail::lifted<T>::type;
  const std::size_t n = m.dim();
  if (x.size() != n) throw std::invalid_argument("value model input has wrong dimension");
  std::vector<L> xl(n);
  for (std::size_t i = 0; i < n; ++i) xl[i] = L::variable(x[i], i, n);
  const L y = m.eval(std::span<const L>(xl));
  ValueGradient<T> r{y.v, std::vector<T>(n, T(0.0))};
  for (std::size_t i = 0; i < y.dims; ++i) r.grad[i] = y.d[i];
  return r;
}

/// Near-optimal feedback from the Zubov-HJB value:
///   k(x) = -1/(2 phi(W)) R^-1 g^T grad W - k(0),
/// with (1 - W) floored at 1e-6. R must be constant.
class HjbFeedback {
 public:
  HjbFeedback(const ControlAffineSystem& sys, const CostSpec& cost, std::shared_ptr<const ValueModel> model,
              bool zero_shift = true);

  std::size_t n() const { return n_; }
  std::size_t k() const { return k_; }
  const ValueModel& model() const { return *model_; }
  const std::vector<double>& shift() const { return shift_; }

  template <class T>
  std::vector<T> control(std::span<const T> x) const {
    auto u = raw(x);
    for (std::size_t j = 0; j < k_; ++j) u[j] = u[j] - shift_[j];
    return u;
  }

  /// f(x) + g(x) k(x).
  template <class T>
  std::vector<T> closed_loop(std::span<const T> x) const {
    const auto u = control(x);
    std::vector<T> out(n_ + n_ * k_), work;
    fg_.evaluate<T>(x, out, work);
    std::vector<T> dx(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n_));
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < k_; ++j) dx[i] = dx[i] + out[n_ + i * k_ + j] * u[j];
    return dx;
  }

 private:
  template <class T>
  std::vector<T> raw(std::span<const T> x) const {
    const auto vg = value_gradient(*model_, x);
    const TransformSpec& t = model_->transform();
    const T phi = detail::floor_at(1.0 - vg.W, 1e-6) * t.psi(vg.W);
    std::vector<T> g(n_ * k_), work;
    g_.evaluate<T>(x, g, work);
    std::vector<T> gtp(k_, T(0.0)), u(k_, T(0.0));
    for (std::size_t j = 0; j < k_; ++j)
      for (std::size_t i = 0; i < n_; ++i) gtp[j] = gtp[j] + g[i * k_ + j] * vg.grad[i];
    const T denom = 2.0 * phi;
    for (std::size_t j = 0; j < k_; ++j) {
      T s(0.0);
      for (std::size_t l = 0; l < k_; ++l) s = s + R_inv_(Eigen::Index(j), Eigen::Index(l)) * gtp[l];
      u[j] = -s / denom;
    }
    return u;
  }

  std::size_t n_ = 0, k_ = 0;
  std::shared_ptr<const ValueModel> model_;
  Tape g_;   // g row-major
  Tape fg_;  // (f, g row-major)
  Eigen::MatrixXd R_inv_;
  std::vector<double> shift_;
};

}  // namespace zclf
