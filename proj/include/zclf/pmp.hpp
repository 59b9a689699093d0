#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "zclf/parallel.hpp"
#include "zclf/system.hpp"
#include "zclf/tape.hpp"
#include "zclf/transform.hpp"

namespace zclf {

/// Right-hand side of the state/adjoint/value system over z = (x, lambda, V):
///   x'      = f + g u*
///   lambda' = -(dq/dx + (df/dx)^T lambda + (dg/dx u*)^T lambda + u*^T dR/dx u*)
///   V'      = -(q + u*^T R u*)
/// with u* = -1/2 R^-1 g^T lambda. R must be constant or k must be 1.
std::vector<Expression> pmp_rhs(const ControlAffineSystem& sys, const CostSpec& cost);

/// u* as expressions over (x, lambda).
std::vector<Expression> pmp_control(const ControlAffineSystem& sys, const CostSpec& cost);

struct TpbvpOptions {
  double T = 200.0;
  std::size_t N = 2000;  // initial (uniform) mesh intervals
  double tol = 1e-5;     // bound on the relative collocation residual per interval
  int max_newton = 60;
  std::size_t max_nodes = 20000;  // refinement beyond this is reported as mesh exhaustion
  bool continuation = true;       // solve on T = 20, 50 first when T > 50
};

struct TpbvpSolution {
  bool converged = false;
  std::string message;
  int newton_iterations = 0;
  double max_residual = 0.0;    // largest relative collocation residual (RMS per interval)
  std::size_t refinements = 0;
  double quadrature_cost = 0.0; // Gauss-Legendre cost along the interpolated solution
  std::vector<double> t;
  Eigen::MatrixXd x;       // (N+1) x n
  Eigen::MatrixXd lambda;  // (N+1) x n
  Eigen::VectorXd V;       // N+1
  Eigen::MatrixXd u;       // (N+1) x k
  // mesh size may exceed the initial N after refinement

  double V0() const { return V.size() ? V(0) : 0.0; }
};

/// Collocation solver for one (system, cost) pair; build once and reuse
/// across initial conditions. Thread-safe for concurrent `solve` calls.
class TpbvpSolver {
 public:
  TpbvpSolver(const ControlAffineSystem& sys, const CostSpec& cost);

  /// Hermite-Simpson collocation solved by damped Newton, with residual-driven
  /// mesh refinement on the final horizon.
  TpbvpSolution solve(std::span<const double> x0, const TpbvpOptions& opt) const;

  std::size_t n() const { return n_; }
  std::size_t k() const { return k_; }

 private:
  struct Workspace;
  bool newton(Workspace& ws, std::span<const double> x0, const TpbvpOptions& opt, int& iterations,
              std::string& message) const;
  double defects(Workspace& ws, const Eigen::VectorXd& Z, std::span<const double> x0, Eigen::VectorXd& r) const;
  Eigen::VectorXd interval_residuals(Workspace& ws) const;
  void refine(Workspace& ws, const Eigen::VectorXd& rms, double tol) const;
  void finish(Workspace& ws, TpbvpSolution& sol) const;

  std::size_t n_ = 0, k_ = 0, m_ = 0;
  Tape rhs_;        // z -> F
  Tape rhs_jac_;    // z -> (F, dF/dz row-major, V column omitted)
  Tape control_;    // (x, lambda) -> u*
  Tape cost_rate_;  // (x, lambda) -> q + u*^T R u*
};

TpbvpSolution solve_tpbvp(const ControlAffineSystem& sys, const CostSpec& cost, std::span<const double> x0,
                          const TpbvpOptions& opt);

struct PMPSample {
  std::vector<double> x0;
  double V0 = 0.0;
  double W0 = 0.0;
  bool converged = false;
  int newton_iterations = 0;
  double max_residual = 0.0;
  double quadrature_error = 0.0;  // |V0 - quadrature cost|
  std::string message;
};

struct DatasetConfig {
  std::size_t n_samples = 3000;
  TpbvpOptions tpbvp;
  Box domain;  // empty: sys.domain
  std::uint64_t seed = 0;
  TransformSpec transform;
  unsigned threads = 0;  // 0: hardware concurrency
};

struct PMPDataset {
  DatasetConfig config;
  std::size_t attempted = 0;
  std::vector<PMPSample> samples;  // converged only, in draw order
  double max_quadrature_error = 0.0;
  double seconds = 0.0;

  double success_fraction() const { return attempted ? double(samples.size()) / double(attempted) : 0.0; }
};

/// Deterministic uniform sample `index` from `box` keyed by `seed`.
std::vector<double> sample_uniform(const Box& box, std::uint64_t seed, std::uint64_t index);

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Algorithm: draw initial states, solve each TPBVP, keep converged solutions
/// with non-increasing V and W = beta(V(0)) in (0, 1).
PMPDataset generate_dataset(const ControlAffineSystem& sys, const CostSpec& cost, DatasetConfig config,
                            const ProgressFn& progress = {});

/// One {"x":[...],"V":v,"W":w} record per line, plus `<stem>.config.json`.
void write_dataset(const PMPDataset& data, const std::filesystem::path& jsonl);
PMPDataset read_dataset(const std::filesystem::path& jsonl);
std::filesystem::path dataset_sidecar(const std::filesystem::path& jsonl);

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

}  // namespace zclf
