#include "zclf/riccati.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace zclf {

namespace {

Eigen::MatrixXd checked_inverse(const Eigen::MatrixXd& R) {
  if (R.rows() != R.cols() || R.rows() == 0) throw RiccatiError("R must be square and non-empty");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (R + R.transpose()));
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) throw RiccatiError("R must be positive definite and well conditioned");
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

bool is_hurwitz(const Eigen::MatrixXd& F) {
  if (F.rows() == 0) return true;
  return Eigen::EigenSolver<Eigen::MatrixXd>(F, false).eigenvalues().real().maxCoeff() < 0.0;
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& M) { return 0.5 * (M + M.transpose()); }

}  // namespace

Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& F, const Eigen::MatrixXd& C) {
  const Eigen::Index n = F.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd kron(n * n, n * n);
  // vec(F^T X) = (I kron F^T) vec X, vec(X F) = (F^T kron I) vec X
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      kron.block(i * n, j * n, n, n) = F(j, i) * I;
      if (i == j) kron.block(i * n, j * n, n, n) += F.transpose();
    }
  const Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(C.data(), n * n);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kron);
  if (!lu.isInvertible()) throw RiccatiError("Lyapunov operator is singular");
  const Eigen::VectorXd v = lu.solve(rhs);
  return symmetrize(Eigen::Map<const Eigen::MatrixXd>(v.data(), n, n));
}

double are_residual(const Eigen::MatrixXd& P, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                    const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  const Eigen::MatrixXd S = B * checked_inverse(R) * B.transpose();
  return (P * A + A.transpose() * P - P * S * P + Q).norm();
}

Eigen::MatrixXd solve_are(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q,
                          const Eigen::MatrixXd& R) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != B.cols())
    throw RiccatiError("inconsistent dimensions");
  const Eigen::MatrixXd Rinv = checked_inverse(R);
  const Eigen::MatrixXd S = B * Rinv * B.transpose();

  Eigen::MatrixXd H(2 * n, 2 * n);
  H << A, -S, -Q, -A.transpose();
  Eigen::EigenSolver<Eigen::MatrixXd> es(H);
  if (es.info() != Eigen::Success) throw RiccatiError("Hamiltonian eigendecomposition failed");

  const double scale = std::max(1.0, H.norm());
  Eigen::MatrixXd basis(2 * n, n);
  Eigen::Index cols = 0;
  for (Eigen::Index i = 0; i < 2 * n; ++i) {
    const auto lambda = es.eigenvalues()(i);
    if (lambda.real() >= -1e-12 * scale) continue;
    const Eigen::VectorXcd v = es.eigenvectors().col(i);
    if (lambda.imag() < 0.0) continue;  // its conjugate contributes both parts
    if (cols >= n) throw RiccatiError("too many stable Hamiltonian eigenvalues");
    basis.col(cols++) = v.real();
    if (lambda.imag() > 0.0) {
      if (cols >= n) throw RiccatiError("too many stable Hamiltonian eigenvalues");
      basis.col(cols++) = v.imag();
    }
  }
  if (cols != n) throw RiccatiError("pair is not stabilizable: stable invariant subspace has wrong dimension");

  const Eigen::MatrixXd X1 = basis.topRows(n);
  const Eigen::MatrixXd X2 = basis.bottomRows(n);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(X1);
  if (!lu.isInvertible()) throw RiccatiError("stable subspace is not a graph; pair is not stabilizable");
  Eigen::MatrixXd P = symmetrize(X2 * lu.inverse());

  auto residual = [&](const Eigen::MatrixXd& X) { return (X * A + A.transpose() * X - X * S * X + Q).norm(); };
  double best = residual(P);
  for (int step = 0; step < 5 && best > 1e-14 * std::max(1.0, P.norm()); ++step) {
    const Eigen::MatrixXd K = Rinv * B.transpose() * P;
    const Eigen::MatrixXd F = A - B * K;
    if (!is_hurwitz(F)) break;
    Eigen::MatrixXd next;
    try {
      next = solve_lyapunov(F, Q + K.transpose() * R * K);
    } catch (const RiccatiError&) {
      break;
    }
    const double r = residual(next);
    if (!(r < best)) break;
    P = next;
    best = r;
  }
  return P;
}

Eigen::MatrixXd lqr_gain(const Eigen::MatrixXd& P, const Eigen::MatrixXd& B, const Eigen::MatrixXd& R) {
  return -checked_inverse(R) * B.transpose() * P;
}

QuadraticCertificate design_quadratic_clf(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                          const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  QuadraticCertificate c;
  c.P = solve_are(A, B, Q, R);
  c.K = lqr_gain(c.P, B, R);
  c.residual_norm = are_residual(c.P, A, B, Q, R);
  return c;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j.at(r).size()) != cols) throw std::invalid_argument("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

nlohmann::json to_json(const QuadraticCertificate& c) {
  return {{"P", matrix_to_json(c.P)},
          {"K", matrix_to_json(c.K)},
          {"c_P1", c.c_P1},
          {"c_P", c.c_P},
          {"residual", c.residual_norm}};
}

QuadraticCertificate certificate_from_json(const nlohmann::json& j) {
  QuadraticCertificate c;
  c.P = matrix_from_json(j.at("P"));
  c.K = matrix_from_json(j.at("K"));
  c.c_P1 = j.value("c_P1", 0.0);
  c.c_P = j.value("c_P", 0.0);
  c.residual_norm = j.value("residual", 0.0);
  return c;
}

}  // namespace zclf
