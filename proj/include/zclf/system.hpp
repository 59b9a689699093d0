#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "zclf/expr.hpp"
#include "zclf/interval.hpp"

namespace zclf {

/// xdot = f(x) + g(x) u with x in R^n, u in R^k.
struct ControlAffineSystem {
  std::string name;
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<Expression> f;               // n entries
  std::vector<std::vector<Expression>> g;  // n rows of k entries
  Box domain;                              // verification domain over x

  /// Throws std::invalid_argument unless dimensions agree, expressions only
  /// reference x1..xn, and f(0) = 0 within 1e-12.
  void validate() const;

  Eigen::VectorXd drift(std::span<const double> x) const;
  Eigen::MatrixXd input_matrix(std::span<const double> x) const;
};

/// Running cost q(x) + u^T R(x) u; Q is the constant weight used for the
/// Riccati design on the linearization.
struct CostSpec {
  Expression q;
  std::vector<std::vector<Expression>> R;  // k x k
  Eigen::MatrixXd Q;                       // n x n

  bool has_constant_R() const;
  Eigen::MatrixXd R_at(std::span<const double> x) const;
  void validate(std::size_t n, std::size_t k) const;
};

struct Benchmark {
  ControlAffineSystem system;
  CostSpec cost;
  Box data_domain;  // where trajectory-optimization samples are drawn
};

/// A = df/dx(0), B = g(0).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> linearize(const ControlAffineSystem& sys);

/// Autonomous field f_i + sum_j g_ij * controller_j.
std::vector<Expression> closed_loop(const ControlAffineSystem& sys, std::span<const Expression> controller);

/// q = x^T Q x, R = I_k.
CostSpec quadratic_cost(const Eigen::MatrixXd& Q, std::size_t k);

/// Registered names: vdp_input, mass_spring_4d, mass_spring_chain(N),
/// pendulum, reversed_vdp. Throws std::invalid_argument otherwise.
Benchmark get_benchmark(std::string_view name);
std::vector<std::string> benchmark_names();

/// N-mass chain: mass 1 tied to the wall by a stiffening spring x + 0.1 x^3,
/// neighbours coupled by a unit spring and a -0.1 damper, input on mass 1.
ControlAffineSystem mass_spring_chain(std::size_t masses);

/// Reads {"n","k","f","g","domain","q","R"[,"Q","name","data_domain"]}.
Benchmark benchmark_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Benchmark& b);

std::vector<double> lower_corner(const Box& box);
nlohmann::json box_to_json(const Box& box);
Box box_from_json(const nlohmann::json& j);

}  // namespace zclf
