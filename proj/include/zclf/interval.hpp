#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace zclf {

/// Raised when an interval operation has no sound finite enclosure
/// (division by an interval containing zero, sqrt of a negative range).
class EnclosureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace rounding {

// Round-to-nearest results are within half an ulp; stepping by |x|*2^-52
// (plus the smallest subnormal) moves at least one full ulp outward.
inline double down(double x, int ulps = 1) {
  if (!std::isfinite(x)) return x;
  return x - (std::abs(x) * 0x1p-52 + 0x1p-1074) * ulps;
}

inline double up(double x, int ulps = 1) {
  if (!std::isfinite(x)) return x;
  return x + (std::abs(x) * 0x1p-52 + 0x1p-1074) * ulps;
}

// libm transcendental functions are not correctly rounded; widen more.
inline constexpr int kLibmUlps = 4;

}  // namespace rounding

/// Closed interval [lo, hi] with outward-rounded arithmetic.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  constexpr Interval() = default;
  constexpr Interval(double v) : lo(v), hi(v) {}  // NOLINT: implicit by design of generic code
  constexpr Interval(double l, double h) : lo(l), hi(h) {}

  static constexpr Interval entire() {
    return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  }

  double mid() const { return lo == hi ? lo : 0.5 * lo + 0.5 * hi; }
  double width() const { return hi - lo; }
  double radius() const { return 0.5 * (hi - lo); }
  double mag() const { return std::max(std::abs(lo), std::abs(hi)); }
  double mig() const { return contains(0.0) ? 0.0 : std::min(std::abs(lo), std::abs(hi)); }
  bool contains(double x) const { return lo <= x && x <= hi; }
  bool contains(const Interval& o) const { return lo <= o.lo && o.hi <= hi; }
  bool intersects(const Interval& o) const { return lo <= o.hi && o.lo <= hi; }
  bool is_finite() const { return std::isfinite(lo) && std::isfinite(hi); }

  Interval& operator+=(const Interval& o);
  Interval& operator-=(const Interval& o);
  Interval& operator*=(const Interval& o);
  Interval& operator/=(const Interval& o);
};

inline bool operator==(const Interval& a, const Interval& b) { return a.lo == b.lo && a.hi == b.hi; }

inline Interval operator-(const Interval& a) { return {-a.hi, -a.lo}; }

inline Interval operator+(const Interval& a, const Interval& b) {
  if (a.lo == a.hi && b.lo == b.hi && a.lo == 0.0) return b;
  return {rounding::down(a.lo + b.lo), rounding::up(a.hi + b.hi)};
}

inline Interval operator-(const Interval& a, const Interval& b) { return a + (-b); }

inline Interval operator*(const Interval& a, const Interval& b) {
  if (a.lo == a.hi) {
    if (a.lo == 0.0) return Interval(0.0);
    if (a.lo == 1.0) return b;
  }
  if (b.lo == b.hi) {
    if (b.lo == 0.0) return Interval(0.0);
    if (b.lo == 1.0) return a;
  }
  const double p1 = a.lo * b.lo;
  const double p2 = a.lo * b.hi;
  const double p3 = a.hi * b.lo;
  const double p4 = a.hi * b.hi;
  double lo = std::min({p1, p2, p3, p4});
  double hi = std::max({p1, p2, p3, p4});
  // 0 * inf arises from unbounded operands; treat as 0
  if (std::isnan(lo)) lo = -std::numeric_limits<double>::infinity();
  if (std::isnan(hi)) hi = std::numeric_limits<double>::infinity();
  return {rounding::down(lo), rounding::up(hi)};
}

inline Interval operator/(const Interval& a, const Interval& b) {
  if (b.lo <= 0.0 && b.hi >= 0.0) throw EnclosureError("interval division by a range containing zero");
  if (b.lo == b.hi && b.lo == 1.0) return a;
  const double q1 = a.lo / b.lo;
  const double q2 = a.lo / b.hi;
  const double q3 = a.hi / b.lo;
  const double q4 = a.hi / b.hi;
  return {rounding::down(std::min({q1, q2, q3, q4})), rounding::up(std::max({q1, q2, q3, q4}))};
}

inline Interval& Interval::operator+=(const Interval& o) { return *this = *this + o; }
inline Interval& Interval::operator-=(const Interval& o) { return *this = *this - o; }
inline Interval& Interval::operator*=(const Interval& o) { return *this = *this * o; }
inline Interval& Interval::operator/=(const Interval& o) { return *this = *this / o; }

inline Interval hull(const Interval& a, const Interval& b) {
  return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
}

/// Intersection; callers must ensure a and b intersect.
inline Interval intersect(const Interval& a, const Interval& b) {
  return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

inline Interval sqr(const Interval& a) {
  const double m = a.mig();
  const double M = a.mag();
  return {std::max(0.0, rounding::down(m * m)), rounding::up(M * M)};
}

inline Interval pow(const Interval& a, int k) {
  if (k == 0) return Interval(1.0);
  if (k < 0) return Interval(1.0) / pow(a, -k);
  if (k == 1) return a;
  if (k % 2 == 0) {
    Interval base = sqr(a);
    Interval r(1.0);
    for (int i = 0; i < k / 2; ++i) r = r * base;
    return {std::max(0.0, r.lo), r.hi};
  }
  // odd powers are monotone increasing
  Interval lo_part(a.lo);
  Interval hi_part(a.hi);
  Interval rl(1.0), rh(1.0);
  for (int i = 0; i < k; ++i) {
    rl = rl * lo_part;
    rh = rh * hi_part;
  }
  return {rl.lo, rh.hi};
}

inline Interval sqrt(const Interval& a) {
  if (a.lo < 0.0) throw EnclosureError("interval sqrt of a range reaching below zero");
  return {std::max(0.0, rounding::down(std::sqrt(a.lo))), rounding::up(std::sqrt(a.hi))};
}

inline Interval exp(const Interval& a) {
  return {std::max(0.0, rounding::down(std::exp(a.lo), rounding::kLibmUlps)),
          rounding::up(std::exp(a.hi), rounding::kLibmUlps)};
}

inline Interval tanh(const Interval& a) {
  return {std::max(-1.0, rounding::down(std::tanh(a.lo), rounding::kLibmUlps)),
          std::min(1.0, rounding::up(std::tanh(a.hi), rounding::kLibmUlps))};
}

namespace detail {

// Does some point c0 + 2*pi*k (k integer) lie in [lo, hi]? Errs towards yes.
inline bool contains_periodic_point(double lo, double hi, double c0) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double k = std::ceil((lo - c0) / two_pi - 1e-9);
  const double point = c0 + k * two_pi;
  return point <= hi + 1e-9 * std::max(1.0, std::abs(hi));
}

}  // namespace detail

inline Interval sin(const Interval& a) {
  if (!a.is_finite() || a.width() >= 2.0 * std::numbers::pi) return {-1.0, 1.0};
  const double s1 = std::sin(a.lo);
  const double s2 = std::sin(a.hi);
  double lo = rounding::down(std::min(s1, s2), rounding::kLibmUlps);
  double hi = rounding::up(std::max(s1, s2), rounding::kLibmUlps);
  if (detail::contains_periodic_point(a.lo, a.hi, 0.5 * std::numbers::pi)) hi = 1.0;
  if (detail::contains_periodic_point(a.lo, a.hi, -0.5 * std::numbers::pi)) lo = -1.0;
  return {std::max(-1.0, lo), std::min(1.0, hi)};
}

inline Interval cos(const Interval& a) {
  if (!a.is_finite() || a.width() >= 2.0 * std::numbers::pi) return {-1.0, 1.0};
  const double c1 = std::cos(a.lo);
  const double c2 = std::cos(a.hi);
  double lo = rounding::down(std::min(c1, c2), rounding::kLibmUlps);
  double hi = rounding::up(std::max(c1, c2), rounding::kLibmUlps);
  if (detail::contains_periodic_point(a.lo, a.hi, 0.0)) hi = 1.0;
  if (detail::contains_periodic_point(a.lo, a.hi, std::numbers::pi)) lo = -1.0;
  return {std::max(-1.0, lo), std::min(1.0, hi)};
}

inline Interval max(const Interval& a, double floor) {
  return {std::max(a.lo, floor), std::max(a.hi, floor)};
}

/// Axis-aligned box; one closed interval per coordinate.
using Box = std::vector<Interval>;

inline std::vector<double> midpoint(const Box& box) {
  std::vector<double> m(box.size());
  for (std::size_t i = 0; i < box.size(); ++i) m[i] = box[i].mid();
  return m;
}

inline std::size_t widest_dimension(const Box& box) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < box.size(); ++i)
    if (box[i].width() > box[best].width()) best = i;
  return best;
}

inline double max_width(const Box& box) {
  double w = 0.0;
  for (const auto& iv : box) w = std::max(w, iv.width());
  return w;
}

/// Bisects along the widest edge.
inline std::pair<Box, Box> split(const Box& box) {
  const std::size_t d = widest_dimension(box);
  const double m = box[d].mid();
  Box left = box;
  Box right = box;
  left[d].hi = m;
  right[d].lo = m;
  return {std::move(left), std::move(right)};
}

inline bool box_contains(const Box& outer, const Box& inner) {
  for (std::size_t i = 0; i < outer.size(); ++i)
    if (!outer[i].contains(inner[i])) return false;
  return true;
}

inline Box make_box(std::size_t n, double lo, double hi) { return Box(n, Interval(lo, hi)); }

std::string to_string(const Interval& iv);

}  // namespace zclf
