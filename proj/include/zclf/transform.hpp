#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace zclf {

/// W = beta(V) with beta' = (1 - beta) psi(beta).
///   kruzkov: beta(s) = 1 - exp(-alpha s), psi = alpha
///   tanh:    beta(s) = tanh(alpha s),      psi(w) = alpha (1 + w)
struct TransformSpec {
  enum class Kind { Kruzkov, Tanh };
  Kind kind = Kind::Tanh;
  double alpha = 0.1;

  double beta(double V) const {
    if (V < 0.0) throw std::invalid_argument("beta: V must be non-negative");
    return kind == Kind::Kruzkov ? -std::expm1(-alpha * V) : std::tanh(alpha * V);
  }

  /// Inverse of beta on [0, 1).
  double inverse(double W) const {
    if (!(W >= 0.0 && W < 1.0)) throw std::invalid_argument("beta inverse: W must lie in [0, 1)");
    return kind == Kind::Kruzkov ? -std::log1p(-W) / alpha : std::atanh(W) / alpha;
  }

  // Generic in the scalar so fields can be evaluated on intervals and duals.
  template <class T>
  T psi(const T& W) const {
    if (kind == Kind::Kruzkov) return T(alpha) + 0.0 * W;
    return alpha * (1.0 + W);
  }

  /// phi(W) = (1 - W) psi(W).
  template <class T>
  T phi(const T& W) const {
    if (kind == Kind::Kruzkov) return alpha * (1.0 - W);
    return alpha * (1.0 - W * W);
  }

  /// d phi / dW.
  template <class T>
  T dphi(const T& W) const {
    if (kind == Kind::Kruzkov) return T(-alpha) + 0.0 * W;
    return -2.0 * alpha * W;
  }

  std::string kind_name() const { return kind == Kind::Kruzkov ? "kruzkov" : "tanh"; }
};

inline nlohmann::json to_json(const TransformSpec& t) { return {{"kind", t.kind_name()}, {"alpha", t.alpha}}; }

inline TransformSpec transform_from_json(const nlohmann::json& j) {
  TransformSpec t;
  const std::string kind = j.value("kind", std::string("tanh"));
  if (kind == "kruzkov") {
    t.kind = TransformSpec::Kind::Kruzkov;
  } else if (kind == "tanh") {
    t.kind = TransformSpec::Kind::Tanh;
  } else {
    throw std::invalid_argument("unknown transform kind '" + kind + "'");
  }
  t.alpha = j.value("alpha", 0.1);
  if (!(t.alpha > 0.0)) throw std::invalid_argument("transform alpha must be positive");
  return t;
}

}  // namespace zclf
