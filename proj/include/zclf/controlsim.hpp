#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "zclf/system.hpp"
#include "zclf/tape.hpp"
#include "zclf/value_model.hpp"

namespace zclf {

/// Below this value of |b|^2 Sontag's formula returns 0.
inline constexpr double kSontagEps = 1e-10;

/// u = -((a + sqrt(a^2 + |b|^4)) / |b|^2) b^T, and 0 when |b|^2 <= kSontagEps.
std::vector<double> sontag_control(double a, std::span<const double> b);

using GradientFn = std::function<Eigen::VectorXd(std::span<const double>)>;
GradientFn quadratic_gradient_fn(const Eigen::MatrixXd& P);
GradientFn model_gradient_fn(std::shared_ptr<const ValueModel> model);

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::vector<double> operator()(std::span<const double> x) const = 0;
  /// Called at every output time of a simulation; stateful controllers switch here.
  virtual void observe(std::span<const double>) {}
  virtual void reset() {}
  virtual std::string name() const = 0;
};

std::unique_ptr<Controller> make_lqr_controller(const Eigen::MatrixXd& K);
/// Sontag's formula with a = grad V . f and b = grad V . g.
std::unique_ptr<Controller> make_sontag_controller(const ControlAffineSystem& sys, GradientFn grad,
                                                   std::string name = "sontag");
std::unique_ptr<Controller> make_hjb_controller(std::shared_ptr<const HjbFeedback> feedback);

struct HybridLevels {
  Eigen::MatrixXd P;
  double c_P = 0.0;        // quadratic region {V_P <= c_P}
  double hysteresis = 0.05;  // enter the inner region at (1 - h) c_P, leave above c_P
};

/// Neural outer controller, quadratic-CLF Sontag controller inside {V_P <= c_P}.
std::unique_ptr<Controller> make_hybrid_controller(const ControlAffineSystem& sys, std::unique_ptr<Controller> outer,
                                                   const HybridLevels& levels);

struct SimOptions {
  double T = 20.0;
  double dt = 0.01;  // output spacing
  double rtol = 1e-8;
  double atol = 1e-10;
  double blowup = 1e6;  // |x| bound
  std::size_t max_evaluations = 2'000'000;  // right-hand side budget
};

struct Trajectory {
  std::vector<double> t;
  Eigen::MatrixXd x;  // rows: samples
  Eigen::MatrixXd u;
  std::vector<double> J;
  bool blew_up = false;
  bool stalled = false;  // evaluation budget exhausted
  std::string message;

  double final_cost() const { return J.empty() ? 0.0 : J.back(); }
  double final_norm() const { return x.rows() ? x.row(x.rows() - 1).norm() : 0.0; }
};

/// Adaptive Dormand-Prince 5(4) on (x, J) with J' = q(x) + u^T R(x) u, sampled
/// every dt by dense output.
Trajectory simulate(const ControlAffineSystem& sys, const CostSpec& cost, Controller& controller,
                    std::span<const double> x0, const SimOptions& opt = {});

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& csv);

struct CostComparison {
  std::vector<double> x0;
  double T = 0.0;
  double J_sontag = 0.0;
  double J_hjb = 0.0;
  double final_norm_sontag = 0.0;
  double final_norm_hjb = 0.0;
};

nlohmann::json to_json(const CostComparison& c);

}  // namespace zclf
