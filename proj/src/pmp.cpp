#include "zclf/pmp.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>

extern "C" void dgbsv_(const int* n, const int* kl, const int* ku, const int* nrhs, double* ab, const int* ldab,
                       int* ipiv, double* b, const int* ldb, int* info);

namespace zclf {

namespace {

Expression var(std::size_t i) { return Expression::variable(i); }

std::vector<std::vector<Expression>> inverse_R(const CostSpec& cost) {
  const std::size_t k = cost.R.size();
  std::vector<std::vector<Expression>> inv(k, std::vector<Expression>(k));
  if (cost.has_constant_R()) {
    Eigen::MatrixXd R(k, k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) R(a, b) = cost.R[a][b].value();
    const Eigen::MatrixXd Ri = R.inverse();
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) inv[a][b] = Ri(a, b);
    return inv;
  }
  if (k == 1) {
    inv[0][0] = 1.0 / cost.R[0][0];
    return inv;
  }
  throw std::invalid_argument("state-dependent R is only supported for a single input");
}

constexpr std::array<double, 5> kGaussNodes{-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                             0.9061798459386640};
constexpr std::array<double, 5> kGaussWeights{0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                               0.4786286704993665, 0.2369268850561891};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<Expression> pmp_control(const ControlAffineSystem& sys, const CostSpec& cost) {
  const std::size_t n = sys.n, k = sys.k;
  const auto Rinv = inverse_R(cost);
  std::vector<Expression> gtl(k);
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t i = 0; i < n; ++i) gtl[l] += sys.g[i][l] * var(n + i);
  std::vector<Expression> u(k);
  for (std::size_t j = 0; j < k; ++j) {
    Expression s;
    for (std::size_t l = 0; l < k; ++l) s += Rinv[j][l] * gtl[l];
    u[j] = -0.5 * s;
  }
  return u;
}

std::vector<Expression> pmp_rhs(const ControlAffineSystem& sys, const CostSpec& cost) {
  const std::size_t n = sys.n, k = sys.k;
  const auto u = pmp_control(sys, cost);
  std::vector<Expression> F(2 * n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    Expression e = sys.f[i];
    for (std::size_t j = 0; j < k; ++j) e += sys.g[i][j] * u[j];
    F[i] = e;
  }
  for (std::size_t i = 0; i < n; ++i) {
    Expression e = differentiate(cost.q, i);
    for (std::size_t j = 0; j < n; ++j) {
      e += differentiate(sys.f[j], i) * var(n + j);
      for (std::size_t l = 0; l < k; ++l) {
        const Expression dg = differentiate(sys.g[j][l], i);
        if (!dg.is_zero()) e += dg * u[l] * var(n + j);
      }
    }
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        const Expression dR = differentiate(cost.R[a][b], i);
        if (!dR.is_zero()) e += u[a] * dR * u[b];
      }
    F[n + i] = -e;
  }
  Expression running = cost.q;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) running += u[a] * cost.R[a][b] * u[b];
  F[2 * n] = -running;
  return F;
}

TpbvpSolver::TpbvpSolver(const ControlAffineSystem& sys, const CostSpec& cost)
    : n_(sys.n), k_(sys.k), m_(2 * sys.n + 1) {
  sys.validate();
  cost.validate(sys.n, sys.k);
  const auto F = pmp_rhs(sys, cost);
  rhs_ = Tape(F, m_);
  std::vector<Expression> with_jac = F;
  for (std::size_t a = 0; a < m_; ++a)
    for (std::size_t b = 0; b < 2 * n_; ++b) with_jac.push_back(differentiate(F[a], b));
  rhs_jac_ = Tape(with_jac, m_);
  const auto u = pmp_control(sys, cost);
  control_ = Tape(u, 2 * n_);
  Expression running = cost.q;
  for (std::size_t a = 0; a < k_; ++a)
    for (std::size_t b = 0; b < k_; ++b) running += u[a] * cost.R[a][b] * u[b];
  cost_rate_ = Tape(std::vector<Expression>{running}, 2 * n_);
}

struct TpbvpSolver::Workspace {
  std::vector<double> t;  // mesh nodes
  Eigen::VectorXd Z, r, Zt, rt, step;
  Eigen::MatrixXd F;  // m x nodes, F(z) at the mesh nodes
  std::vector<double> work, out;
  std::vector<double> ab;
  std::vector<int> ipiv;

  std::size_t intervals() const { return t.size() - 1; }
  double h(std::size_t i) const { return t[i + 1] - t[i]; }
};

namespace {

// Cubic Hermite interpolant on one interval at s in [0, 1]; value and d/dt.
using VecRef = Eigen::Ref<const Eigen::VectorXd>;

void hermite(VecRef za, VecRef fa, VecRef zb, VecRef fb, double h, double s, Eigen::VectorXd& value,
             Eigen::VectorXd* slope = nullptr) {
  const double h00 = (2 * s - 3) * s * s + 1, h10 = ((s - 2) * s + 1) * s;
  const double h01 = (3 - 2 * s) * s * s, h11 = (s - 1) * s * s;
  value = h00 * za + (h10 * h) * fa + h01 * zb + (h11 * h) * fb;
  if (slope) {
    const double d00 = 6 * s * s - 6 * s, d10 = 3 * s * s - 4 * s + 1;
    const double d01 = -d00, d11 = 3 * s * s - 2 * s;
    *slope = (d00 / h) * za + d10 * fa + (d01 / h) * zb + d11 * fb;
  }
}

}  // namespace

double TpbvpSolver::defects(Workspace& ws, const Eigen::VectorXd& Z, std::span<const double> x0,
                            Eigen::VectorXd& r) const {
  const std::size_t m = m_, n = n_, N = ws.intervals();
  r.resize(static_cast<Eigen::Index>((N + 1) * m));
  ws.F.resize(m, N + 1);
  try {
    for (std::size_t i = 0; i <= N; ++i)
      rhs_.evaluate<double>(std::span<const double>(Z.data() + i * m, m), std::span<double>(ws.F.col(i).data(), m),
                            ws.work);
    Eigen::VectorXd zm(m), Fm(m);
    for (std::size_t i = 0; i < n; ++i) r(i) = Z(i) - x0[i];
    for (std::size_t i = 0; i < N; ++i) {
      const double h = ws.h(i);
      const auto zi = Z.segment(i * m, m);
      const auto zj = Z.segment((i + 1) * m, m);
      zm = 0.5 * (zi + zj) + (h / 8.0) * (ws.F.col(i) - ws.F.col(i + 1));
      rhs_.evaluate<double>(std::span<const double>(zm.data(), m), std::span<double>(Fm.data(), m), ws.work);
      r.segment(n + i * m, m) = zj - zi - (h / 6.0) * (ws.F.col(i) + 4.0 * Fm + ws.F.col(i + 1));
    }
  } catch (const EvalError&) {
    return std::numeric_limits<double>::infinity();
  }
  r.segment(n + N * m, n) = Z.segment(N * m + n, n);
  r(static_cast<Eigen::Index>((N + 1) * m - 1)) = Z(static_cast<Eigen::Index>(N * m + 2 * n));
  const double res = r.cwiseAbs().maxCoeff();
  return std::isfinite(res) ? res : std::numeric_limits<double>::infinity();
}

bool TpbvpSolver::newton(Workspace& ws, std::span<const double> x0, const TpbvpOptions& opt, int& iterations,
                         std::string& message) const {
  const std::size_t m = m_, n = n_, N = ws.intervals();
  const int dim = static_cast<int>((N + 1) * m);
  const int kl = static_cast<int>(n + m - 1);
  const int ku = static_cast<int>(2 * m - 1 - n);
  const int ldab = 2 * kl + ku + 1;
  ws.ab.assign(static_cast<std::size_t>(ldab) * dim, 0.0);
  ws.ipiv.resize(dim);
  ws.F.resize(m, N + 1);
  auto at = [&](std::size_t i, std::size_t j) -> double& {
    return ws.ab[(static_cast<std::size_t>(kl + ku) + i - j) + j * static_cast<std::size_t>(ldab)];
  };
  // Newton runs well below the collocation tolerance so the discretization
  // error, not the algebraic one, dominates.
  const double stop = std::max(1e-3 * opt.tol, 1e-12);

  std::vector<Eigen::MatrixXd> Jn(N + 1, Eigen::MatrixXd::Zero(m, m));
  Eigen::MatrixXd Jm = Eigen::MatrixXd::Zero(m, m);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
  ws.out.resize(m + m * 2 * n);
  Eigen::VectorXd zm(m), Fm(m);

  auto eval_jac = [&](const double* z, Eigen::Ref<Eigen::VectorXd> F, Eigen::MatrixXd& J) {
    rhs_jac_.evaluate<double>(std::span<const double>(z, m), std::span<double>(ws.out), ws.work);
    for (std::size_t a = 0; a < m; ++a) {
      F(a) = ws.out[a];
      for (std::size_t b = 0; b < 2 * n; ++b) J(a, b) = ws.out[m + a * 2 * n + b];
    }
  };

  for (int it = 0;; ++it) {
    double res;
    try {
      for (std::size_t i = 0; i <= N; ++i) eval_jac(ws.Z.data() + i * m, ws.F.col(i), Jn[i]);
      std::fill(ws.ab.begin(), ws.ab.end(), 0.0);
      ws.r.resize(dim);
      for (std::size_t i = 0; i < n; ++i) {
        ws.r(i) = ws.Z(i) - x0[i];
        at(i, i) = 1.0;
      }
      for (std::size_t i = 0; i < N; ++i) {
        const double h = ws.h(i);
        const auto zi = ws.Z.segment(i * m, m);
        const auto zj = ws.Z.segment((i + 1) * m, m);
        zm = 0.5 * (zi + zj) + (h / 8.0) * (ws.F.col(i) - ws.F.col(i + 1));
        eval_jac(zm.data(), Fm, Jm);
        ws.r.segment(n + i * m, m) = zj - zi - (h / 6.0) * (ws.F.col(i) + 4.0 * Fm + ws.F.col(i + 1));
        // d z_mid / d z_i = I/2 + h/8 J_i,  d z_mid / d z_{i+1} = I/2 - h/8 J_{i+1}
        const Eigen::MatrixXd A = -I - (h / 6.0) * (Jn[i] + 4.0 * Jm * (0.5 * I + (h / 8.0) * Jn[i]));
        const Eigen::MatrixXd B = I - (h / 6.0) * (Jn[i + 1] + 4.0 * Jm * (0.5 * I - (h / 8.0) * Jn[i + 1]));
        const std::size_t row = n + i * m;
        for (std::size_t a = 0; a < m; ++a)
          for (std::size_t b = 0; b < m; ++b) {
            at(row + a, i * m + b) = A(a, b);
            at(row + a, (i + 1) * m + b) = B(a, b);
          }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        const std::size_t row = n + N * m + j, col = N * m + n + j;
        ws.r(row) = ws.Z(col);
        at(row, col) = 1.0;
      }
      res = ws.r.cwiseAbs().maxCoeff();
    } catch (const EvalError& e) {
      message = std::string("evaluation failed: ") + e.what();
      return false;
    }
    if (!std::isfinite(res)) {
      message = "non-finite residual";
      return false;
    }
    if (res <= stop) return true;
    if (it >= opt.max_newton) {
      message = "Newton iteration limit reached";
      return false;
    }

    ws.step = -ws.r;
    int one = 1, info = 0;
    dgbsv_(&dim, &kl, &ku, &one, ws.ab.data(), &ldab, ws.ipiv.data(), ws.step.data(), &dim, &info);
    if (info != 0) {
      message = "singular collocation Jacobian";
      return false;
    }
    ++iterations;

    // Armijo backtracking on half the squared residual norm
    const double phi0 = 0.5 * ws.r.squaredNorm();
    double alpha = 1.0;
    for (;;) {
      ws.Zt = ws.Z + alpha * ws.step;
      const double rt = defects(ws, ws.Zt, x0, ws.rt);
      if (std::isfinite(rt) && 0.5 * ws.rt.squaredNorm() <= (1.0 - 2e-4 * alpha) * phi0) break;
      alpha *= 0.5;
      if (alpha < 1e-6) {
        message = "line search failed";
        return false;
      }
    }
    ws.Z.swap(ws.Zt);
    if (ws.Z.cwiseAbs().maxCoeff() > 1e10) {
      message = "Newton iterates diverged";
      return false;
    }
  }
}

Eigen::VectorXd TpbvpSolver::interval_residuals(Workspace& ws) const {
  // RMS over the interval of the relative residual S' - F(S) of the
  // collocating cubic, by 5-point Lobatto quadrature (zero at nodes and
  // midpoint up to the Newton tolerance).
  const std::size_t m = m_, N = ws.intervals();
  ws.F.resize(m, N + 1);
  for (std::size_t i = 0; i <= N; ++i)
    rhs_.evaluate<double>(std::span<const double>(ws.Z.data() + i * m, m), std::span<double>(ws.F.col(i).data(), m),
                          ws.work);
  Eigen::VectorXd rms(N);
  Eigen::VectorXd S(m), dS(m), FS(m);
  const double off = 0.5 * std::sqrt(3.0 / 7.0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto zi = ws.Z.segment(i * m, m);
    const auto zj = ws.Z.segment((i + 1) * m, m);
    const double h = ws.h(i);
    std::array<double, 3> sq{};
    const std::array<double, 3> at{0.5, 0.5 - off, 0.5 + off};
    for (std::size_t q = 0; q < 3; ++q) {
      hermite(zi, ws.F.col(i), zj, ws.F.col(i + 1), h, at[q], S, &dS);
      rhs_.evaluate<double>(std::span<const double>(S.data(), m), std::span<double>(FS.data(), m), ws.work);
      sq[q] = ((dS - FS).array() / (1.0 + FS.array().abs())).square().sum();
    }
    rms(i) = std::sqrt(0.5 * (32.0 / 45.0 * sq[0] + 49.0 / 90.0 * (sq[1] + sq[2])));
  }
  return rms;
}

void TpbvpSolver::refine(Workspace& ws, const Eigen::VectorXd& rms, double tol) const {
  const std::size_t m = m_, N = ws.intervals();
  std::vector<double> t;
  std::vector<double> z;
  Eigen::VectorXd S(m);
  auto push = [&](double ti, const double* zi) {
    t.push_back(ti);
    z.insert(z.end(), zi, zi + m);
  };
  for (std::size_t i = 0; i < N; ++i) {
    push(ws.t[i], ws.Z.data() + i * m);
    if (rms(i) <= tol) continue;
    const int extra = rms(i) < 100.0 * tol ? 1 : 2;
    for (int e = 1; e <= extra; ++e) {
      const double s = double(e) / double(extra + 1);
      hermite(ws.Z.segment(i * m, m), ws.F.col(i), ws.Z.segment((i + 1) * m, m), ws.F.col(i + 1), ws.h(i), s, S);
      push(ws.t[i] + s * ws.h(i), S.data());
    }
  }
  push(ws.t[N], ws.Z.data() + N * m);
  ws.t = std::move(t);
  ws.Z = Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
}

void TpbvpSolver::finish(Workspace& ws, TpbvpSolution& sol) const {
  const std::size_t m = m_, n = n_, N = ws.intervals();
  sol.t = ws.t;
  sol.x.resize(N + 1, n);
  sol.lambda.resize(N + 1, n);
  sol.V.resize(N + 1);
  sol.u.resize(N + 1, k_);
  ws.F.resize(m, N + 1);
  std::vector<double> u(k_);
  for (std::size_t i = 0; i <= N; ++i) {
    const double* z = ws.Z.data() + i * m;
    for (std::size_t j = 0; j < n; ++j) {
      sol.x(i, j) = z[j];
      sol.lambda(i, j) = z[n + j];
    }
    sol.V(i) = z[2 * n];
    try {
      control_.evaluate<double>(std::span<const double>(z, 2 * n), std::span<double>(u), ws.work);
      rhs_.evaluate<double>(std::span<const double>(z, m), std::span<double>(ws.F.col(i).data(), m), ws.work);
    } catch (const EvalError&) {
      std::fill(u.begin(), u.end(), std::numeric_limits<double>::quiet_NaN());
      ws.F.col(i).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    for (std::size_t j = 0; j < k_; ++j) sol.u(i, j) = u[j];
  }
  // independent check of V(0): Gauss-Legendre on the Hermite interpolant of (x, lambda)
  double total = 0.0, c = 0.0;
  Eigen::VectorXd S(m);
  try {
    for (std::size_t i = 0; i < N; ++i) {
      const double h = ws.h(i);
      for (std::size_t g = 0; g < kGaussNodes.size(); ++g) {
        hermite(ws.Z.segment(i * m, m), ws.F.col(i), ws.Z.segment((i + 1) * m, m), ws.F.col(i + 1), h,
                0.5 * (kGaussNodes[g] + 1.0), S);
        cost_rate_.evaluate<double>(std::span<const double>(S.data(), 2 * n), std::span<double>(&c, 1), ws.work);
        total += 0.5 * h * kGaussWeights[g] * c;
      }
    }
  } catch (const EvalError&) {
    total = std::numeric_limits<double>::quiet_NaN();
  }
  sol.quadrature_cost = total;
}

TpbvpSolution TpbvpSolver::solve(std::span<const double> x0, const TpbvpOptions& opt) const {
  if (x0.size() != n_) throw std::invalid_argument("solve_tpbvp: x0 has wrong dimension");
  if (!(opt.T > 0.0) || opt.N < 10 || !(opt.tol > 0.0))
    throw std::invalid_argument("solve_tpbvp: need T > 0, N >= 10, tol > 0");
  const std::size_t m = m_, n = n_, N = opt.N;

  std::vector<double> horizons;
  if (opt.continuation && opt.T > 50.0) horizons = {20.0, 50.0};
  horizons.push_back(opt.T);

  auto uniform = [&](double T) {
    std::vector<double> t(N + 1);
    for (std::size_t i = 0; i <= N; ++i) t[i] = T * static_cast<double>(i) / static_cast<double>(N);
    t[N] = T;
    return t;
  };

  Workspace ws;
  ws.t = uniform(horizons.front());
  ws.Z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>((N + 1) * m));
  for (std::size_t i = 0; i <= N; ++i) {
    const double s = 1.0 - static_cast<double>(i) / static_cast<double>(N);
    for (std::size_t j = 0; j < n; ++j) ws.Z(i * m + j) = x0[j] * s;
  }

  TpbvpSolution sol;
  auto fail = [&](const std::string& why) {
    sol.converged = false;
    sol.message = why;
    finish(ws, sol);
    return sol;
  };

  for (std::size_t stage = 0; stage < horizons.size(); ++stage) {
    const double T = horizons[stage];
    if (stage > 0) {
      // stretch onto the longer horizon: hold x and zero (lambda, V) past the old end
      const std::vector<double> old_t = ws.t;
      const Eigen::VectorXd old = ws.Z;
      const std::size_t old_N = old_t.size() - 1;
      ws.t = uniform(T);
      ws.Z.resize(static_cast<Eigen::Index>((N + 1) * m));
      for (std::size_t i = 0; i <= N; ++i) {
        const double t = ws.t[i];
        if (t >= old_t.back()) {
          for (std::size_t j = 0; j < m; ++j) ws.Z(i * m + j) = j < n ? old(old_N * m + j) : 0.0;
          continue;
        }
        const auto hi = static_cast<std::size_t>(std::upper_bound(old_t.begin(), old_t.end(), t) - old_t.begin());
        const std::size_t lo = hi - 1;
        const double w = (t - old_t[lo]) / (old_t[hi] - old_t[lo]);
        ws.Z.segment(i * m, m) = (1.0 - w) * old.segment(lo * m, m) + w * old.segment(hi * m, m);
      }
    }
    const bool last = stage + 1 == horizons.size();
    for (;;) {
      std::string message;
      if (!newton(ws, x0, opt, sol.newton_iterations, message)) return fail("T=" + std::to_string(T) + ": " + message);
      if (!last) break;
      const Eigen::VectorXd rms = interval_residuals(ws);
      sol.max_residual = rms.size() ? rms.maxCoeff() : 0.0;
      if (!std::isfinite(sol.max_residual)) return fail("non-finite collocation residual");
      if (sol.max_residual <= opt.tol) break;
      refine(ws, rms, opt.tol);
      ++sol.refinements;
      if (ws.t.size() > opt.max_nodes) return fail("mesh exhaustion: " + std::to_string(ws.t.size()) + " nodes");
    }
  }
  sol.converged = true;
  finish(ws, sol);
  return sol;
}

TpbvpSolution solve_tpbvp(const ControlAffineSystem& sys, const CostSpec& cost, std::span<const double> x0,
                          const TpbvpOptions& opt) {
  return TpbvpSolver(sys, cost).solve(x0, opt);
}

std::vector<double> sample_uniform(const Box& box, std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t key = splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  std::vector<double> x(box.size());
  for (std::size_t d = 0; d < box.size(); ++d) {
    const double u = static_cast<double>(splitmix64(key + d) >> 11) * 0x1p-53;
    x[d] = box[d].lo + u * (box[d].hi - box[d].lo);
  }
  return x;
}

PMPDataset generate_dataset(const ControlAffineSystem& sys, const CostSpec& cost, DatasetConfig config,
                            const ProgressFn& progress) {
  const auto start = std::chrono::steady_clock::now();
  if (config.domain.empty()) config.domain = sys.domain;
  if (config.domain.size() != sys.n) throw std::invalid_argument("dataset domain has wrong dimension");
  for (std::size_t i = 0; i < sys.n; ++i)
    if (!sys.domain[i].contains(config.domain[i]))
      throw std::invalid_argument("dataset domain must lie inside the system domain");

  const TpbvpSolver solver(sys, cost);
  std::vector<PMPSample> all(config.n_samples);
  std::mutex progress_mutex;
  std::size_t done = 0;
  parallel_for(config.n_samples, resolve_threads(config.threads), [&](std::size_t i) {
    PMPSample s;
    s.x0 = sample_uniform(config.domain, config.seed, i);
    const TpbvpSolution sol = solver.solve(s.x0, config.tpbvp);
    s.newton_iterations = sol.newton_iterations;
    s.max_residual = sol.max_residual;
    s.V0 = sol.V0();
    s.quadrature_error = std::abs(sol.V0() - sol.V(sol.V.size() - 1) - sol.quadrature_cost);
    s.converged = sol.converged;
    s.message = sol.message;
    if (s.converged) {
      for (Eigen::Index j = 0; j + 1 < sol.V.size(); ++j)
        if (sol.V(j + 1) > sol.V(j) + config.tpbvp.tol) {
          s.converged = false;
          s.message = "value not monotone along the solution";
          break;
        }
    }
    if (s.converged) {
      if (!(s.V0 >= 0.0)) {
        s.converged = false;
        s.message = "negative value";
      } else {
        s.W0 = config.transform.beta(s.V0);
        const bool at_origin = std::all_of(s.x0.begin(), s.x0.end(), [](double v) { return v == 0.0; });
        if (!(s.W0 < 1.0) || (!at_origin && !(s.W0 > 0.0))) {
          s.converged = false;
          s.message = "transformed value outside (0, 1)";
        }
      }
    }
    all[i] = std::move(s);
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(++done, config.n_samples);
    }
  });

  PMPDataset data;
  data.config = config;
  data.attempted = config.n_samples;
  for (auto& s : all)
    if (s.converged) {
      data.max_quadrature_error = std::max(data.max_quadrature_error, s.quadrature_error);
      data.samples.push_back(std::move(s));
    }
  data.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return data;
}

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"n_samples", c.n_samples}, {"T", c.tpbvp.T},
          {"N", c.tpbvp.N},           {"tol", c.tpbvp.tol},
          {"max_newton", c.tpbvp.max_newton}, {"continuation", c.tpbvp.continuation},
          {"domain", box_to_json(c.domain)},  {"seed", c.seed},
          {"transform", to_json(c.transform)}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.n_samples = j.value("n_samples", c.n_samples);
  c.tpbvp.T = j.value("T", c.tpbvp.T);
  c.tpbvp.N = j.value("N", c.tpbvp.N);
  c.tpbvp.tol = j.value("tol", c.tpbvp.tol);
  c.tpbvp.max_newton = j.value("max_newton", c.tpbvp.max_newton);
  c.tpbvp.continuation = j.value("continuation", c.tpbvp.continuation);
  if (j.contains("domain") && !j.at("domain").empty()) c.domain = box_from_json(j.at("domain"));
  c.seed = j.value("seed", c.seed);
  if (j.contains("transform")) c.transform = transform_from_json(j.at("transform"));
  c.threads = j.value("threads", 0u);
  return c;
}

std::filesystem::path dataset_sidecar(const std::filesystem::path& jsonl) {
  auto p = jsonl;
  p.replace_extension(".config.json");
  return p;
}

void write_dataset(const PMPDataset& data, const std::filesystem::path& jsonl) {
  if (jsonl.has_parent_path()) std::filesystem::create_directories(jsonl.parent_path());
  std::ofstream out(jsonl);
  if (!out) throw std::runtime_error("cannot write " + jsonl.string());
  for (const auto& s : data.samples) out << nlohmann::json{{"x", s.x0}, {"V", s.V0}, {"W", s.W0}}.dump() << '\n';
  nlohmann::json side = to_json(data.config);
  side["attempted"] = data.attempted;
  side["succeeded"] = data.samples.size();
  side["success_fraction"] = data.success_fraction();
  side["max_quadrature_error"] = data.max_quadrature_error;
  side["time_s"] = data.seconds;
  std::ofstream meta(dataset_sidecar(jsonl));
  meta << side.dump(2) << '\n';
}

PMPDataset read_dataset(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw std::runtime_error("cannot read " + jsonl.string());
  PMPDataset data;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PMPSample s;
    s.x0 = j.at("x").get<std::vector<double>>();
    s.V0 = j.at("V").get<double>();
    s.W0 = j.at("W").get<double>();
    s.converged = true;
    data.samples.push_back(std::move(s));
  }
  data.attempted = data.samples.size();
  if (std::ifstream meta(dataset_sidecar(jsonl)); meta) {
    const auto side = nlohmann::json::parse(meta);
    data.config = dataset_config_from_json(side);
    data.attempted = side.value("attempted", data.attempted);
    data.max_quadrature_error = side.value("max_quadrature_error", 0.0);
  }
  return data;
}

}  // namespace zclf
