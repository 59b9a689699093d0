#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "json.hpp"

namespace zclf {

class RiccatiError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Quadratic CLF V_P(x) = x^T P x with LQR gain K and certified levels.
struct QuadraticCertificate {
  Eigen::MatrixXd P;
  Eigen::MatrixXd K;
  double c_P1 = 0.0;  // closed-loop Lyapunov level under u = Kx
  double c_P = 0.0;   // CLF level, >= c_P1
  double residual_norm = 0.0;
};

/// Stabilizing solution of PA + A^T P - P B R^-1 B^T P + Q = 0 via the stable
/// invariant subspace of the Hamiltonian, polished by Newton (Kleinman) steps.
/// Throws RiccatiError if the pair is not stabilizable or R is ill-conditioned.
Eigen::MatrixXd solve_are(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q,
                          const Eigen::MatrixXd& R);

/// K = -R^-1 B^T P.
Eigen::MatrixXd lqr_gain(const Eigen::MatrixXd& P, const Eigen::MatrixXd& B, const Eigen::MatrixXd& R);

/// Frobenius norm of the Riccati residual.
double are_residual(const Eigen::MatrixXd& P, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                    const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R);

/// Solves X such that F^T X + X F = -C (dense Kronecker solve, n <= ~30).
Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& F, const Eigen::MatrixXd& C);

/// P, K and residual for the given linearization; levels left at zero.
QuadraticCertificate design_quadratic_clf(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                          const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

nlohmann::json to_json(const QuadraticCertificate& c);
QuadraticCertificate certificate_from_json(const nlohmann::json& j);

}  // namespace zclf
