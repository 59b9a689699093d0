#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <type_traits>

#include "zclf/interval.hpp"

namespace zclf {

/// Forward-mode dual number with up to N tangent directions. Only the first
/// `dims` directions are active; constants carry dims == 0. Nesting
/// (Dual<Dual<T>>) yields second derivatives, and T = Interval gives
/// derivative enclosures over a box.
template <class T, std::size_t N>
struct Dual {
  T v{};
  std::array<T, N> d{};
  std::size_t dims = 0;

  Dual() = default;
  Dual(const T& value) : v(value) {}  // NOLINT
  template <class U>
    requires(std::is_arithmetic_v<U> && !std::is_same_v<T, U>)
  Dual(U value) : v(T(static_cast<double>(value))) {}  // NOLINT

  static Dual variable(const T& value, std::size_t index, std::size_t n) {
    Dual r(value);
    r.dims = n;
    r.d[index] = T(1.0);
    return r;
  }
};

template <class T>
struct is_dual : std::false_type {};
template <class T, std::size_t N>
struct is_dual<Dual<T, N>> : std::true_type {};

namespace detail {

template <class T, std::size_t N>
Dual<T, N> chain(const Dual<T, N>& a, const T& value, const T& slope) {
  Dual<T, N> r(value);
  r.dims = a.dims;
  for (std::size_t i = 0; i < a.dims; ++i) r.d[i] = slope * a.d[i];
  return r;
}

}  // namespace detail

template <class T, std::size_t N>
Dual<T, N> operator-(const Dual<T, N>& a) {
  Dual<T, N> r(-a.v);
  r.dims = a.dims;
  for (std::size_t i = 0; i < a.dims; ++i) r.d[i] = -a.d[i];
  return r;
}

template <class T, std::size_t N>
Dual<T, N> operator+(const Dual<T, N>& a, const Dual<T, N>& b) {
  Dual<T, N> r(a.v + b.v);
  r.dims = std::max(a.dims, b.dims);
  for (std::size_t i = 0; i < r.dims; ++i) {
    if (i < a.dims && i < b.dims)
      r.d[i] = a.d[i] + b.d[i];
    else
      r.d[i] = i < a.dims ? a.d[i] : b.d[i];
  }
  return r;
}

template <class T, std::size_t N>
Dual<T, N> operator-(const Dual<T, N>& a, const Dual<T, N>& b) {
  return a + (-b);
}

template <class T, std::size_t N>
Dual<T, N> operator*(const Dual<T, N>& a, const Dual<T, N>& b) {
  Dual<T, N> r(a.v * b.v);
  r.dims = std::max(a.dims, b.dims);
  for (std::size_t i = 0; i < r.dims; ++i) {
    if (i < a.dims && i < b.dims)
      r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    else if (i < a.dims)
      r.d[i] = a.d[i] * b.v;
    else
      r.d[i] = a.v * b.d[i];
  }
  return r;
}

template <class T, std::size_t N>
Dual<T, N> operator/(const Dual<T, N>& a, const Dual<T, N>& b) {
  const T q = a.v / b.v;
  Dual<T, N> r(q);
  r.dims = std::max(a.dims, b.dims);
  for (std::size_t i = 0; i < r.dims; ++i) {
    const T da = i < a.dims ? a.d[i] : T(0.0);
    const T db = i < b.dims ? b.d[i] : T(0.0);
    r.d[i] = (da - q * db) / b.v;
  }
  return r;
}

template <class T, std::size_t N>
Dual<T, N>& operator+=(Dual<T, N>& a, const Dual<T, N>& b) {
  return a = a + b;
}
template <class T, std::size_t N>
Dual<T, N>& operator-=(Dual<T, N>& a, const Dual<T, N>& b) {
  return a = a - b;
}
template <class T, std::size_t N>
Dual<T, N>& operator*=(Dual<T, N>& a, const Dual<T, N>& b) {
  return a = a * b;
}

// Mixed scalar overloads let generic code write `2.0 * x` for any Dual.
template <class T, std::size_t N>
Dual<T, N> operator*(double s, const Dual<T, N>& a) {
  Dual<T, N> r(T(s) * a.v);
  r.dims = a.dims;
  for (std::size_t i = 0; i < a.dims; ++i) r.d[i] = T(s) * a.d[i];
  return r;
}
template <class T, std::size_t N>
Dual<T, N> operator*(const Dual<T, N>& a, double s) {
  return s * a;
}
template <class T, std::size_t N>
Dual<T, N> operator+(double s, const Dual<T, N>& a) {
  return Dual<T, N>(T(s)) + a;
}
template <class T, std::size_t N>
Dual<T, N> operator+(const Dual<T, N>& a, double s) {
  return a + Dual<T, N>(T(s));
}
template <class T, std::size_t N>
Dual<T, N> operator-(double s, const Dual<T, N>& a) {
  return Dual<T, N>(T(s)) - a;
}
template <class T, std::size_t N>
Dual<T, N> operator-(const Dual<T, N>& a, double s) {
  return a - Dual<T, N>(T(s));
}
template <class T, std::size_t N>
Dual<T, N> operator/(const Dual<T, N>& a, double s) {
  return a / Dual<T, N>(T(s));
}
template <class T, std::size_t N>
Dual<T, N> operator/(double s, const Dual<T, N>& a) {
  return Dual<T, N>(T(s)) / a;
}

template <class T, std::size_t N>
Dual<T, N> sqr(const Dual<T, N>& a) {
  return a * a;
}

template <class T, std::size_t N>
Dual<T, N> pow(const Dual<T, N>& a, int k) {
  if (k == 0) return Dual<T, N>(T(1.0));
  using std::pow;
  const T value = pow(a.v, k);
  const T slope = T(static_cast<double>(k)) * pow(a.v, k - 1);
  return detail::chain(a, value, slope);
}

template <class T, std::size_t N>
Dual<T, N> sqrt(const Dual<T, N>& a) {
  using std::sqrt;
  const T value = sqrt(a.v);
  return detail::chain(a, value, T(1.0) / (T(2.0) * value));
}

template <class T, std::size_t N>
Dual<T, N> exp(const Dual<T, N>& a) {
  using std::exp;
  const T value = exp(a.v);
  return detail::chain(a, value, value);
}

template <class T, std::size_t N>
Dual<T, N> sin(const Dual<T, N>& a) {
  using std::cos;
  using std::sin;
  return detail::chain(a, sin(a.v), cos(a.v));
}

template <class T, std::size_t N>
Dual<T, N> cos(const Dual<T, N>& a) {
  using std::cos;
  using std::sin;
  return detail::chain(a, cos(a.v), -sin(a.v));
}

template <class T, std::size_t N>
Dual<T, N> tanh(const Dual<T, N>& a) {
  using std::tanh;
  const T value = tanh(a.v);
  return detail::chain(a, value, T(1.0) - value * value);
}

/// Seeds x as independent variables of a Dual vector.
template <class T, std::size_t N>
std::array<Dual<T, N>, N> seed(std::span<const T> x) {
  std::array<Dual<T, N>, N> out{};
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = Dual<T, N>::variable(x[i], i, x.size());
  return out;
}

inline double sqr(double x) { return x * x; }

/// Plain value of a (possibly nested) scalar.
inline double primal(double x) { return x; }
inline Interval primal(const Interval& x) { return x; }
template <class T, std::size_t N>
auto primal(const Dual<T, N>& x) {
  return primal(x.v);
}

inline double hull_with_zero(double x) { return x; }
inline Interval hull_with_zero(const Interval& x) { return hull(x, Interval(0.0)); }
template <class T, std::size_t N>
Dual<T, N> hull_with_zero(const Dual<T, N>& x) {
  Dual<T, N> r(hull_with_zero(x.v));
  r.dims = x.dims;
  for (std::size_t i = 0; i < x.dims; ++i) r.d[i] = hull_with_zero(x.d[i]);
  return r;
}

inline bool at_least(double x, double f) { return x >= f; }
inline bool at_least(const Interval& x, double f) { return x.lo >= f; }
template <class T, std::size_t N>
bool at_least(const Dual<T, N>& x, double f) {
  return at_least(x.v, f);
}
inline bool below(double x, double f) { return x < f; }
inline bool below(const Interval& x, double f) { return x.hi < f; }
template <class T, std::size_t N>
bool below(const Dual<T, N>& x, double f) {
  return below(x.v, f);
}

/// max(x, f) on the primal value, used for clamped denominators.
inline double floor_at(double x, double f) { return std::max(x, f); }
inline Interval floor_at(const Interval& x, double f) { return max(x, f); }
template <class T, std::size_t N>
Dual<T, N> floor_at(const Dual<T, N>& x, double f) {
  if (at_least(x.v, f)) return x;
  if (below(x.v, f)) return Dual<T, N>(T(f));
  // enclosure straddles the kink: derivative lies between zero and the slope
  Dual<T, N> r(floor_at(x.v, f));
  r.dims = x.dims;
  for (std::size_t i = 0; i < x.dims; ++i) r.d[i] = hull_with_zero(x.d[i]);
  return r;
}

}  // namespace zclf
