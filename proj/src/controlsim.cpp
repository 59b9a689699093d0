#include "zclf/controlsim.hpp"

#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <fstream>

namespace zclf {

std::vector<double> sontag_control(double a, std::span<const double> b) {
  double bb = 0.0;
  for (double v : b) bb += v * v;
  std::vector<double> u(b.size(), 0.0);
  if (bb <= kSontagEps) return u;
  const double s = (a + std::sqrt(a * a + bb * bb)) / bb;
  for (std::size_t j = 0; j < b.size(); ++j) u[j] = -s * b[j];
  return u;
}

GradientFn quadratic_gradient_fn(const Eigen::MatrixXd& P) {
  const Eigen::MatrixXd S = P + P.transpose();
  return [S](std::span<const double> x) -> Eigen::VectorXd {
    return S * Eigen::Map<const Eigen::VectorXd>(x.data(), Eigen::Index(x.size()));
  };
}

GradientFn model_gradient_fn(std::shared_ptr<const ValueModel> model) {
  return [model](std::span<const double> x) -> Eigen::VectorXd {
    const auto vg = value_gradient<double>(*model, x);
    return Eigen::Map<const Eigen::VectorXd>(vg.grad.data(), Eigen::Index(vg.grad.size()));
  };
}

namespace {

class LqrController final : public Controller {
 public:
  explicit LqrController(Eigen::MatrixXd K) : K_(std::move(K)) {}
  std::vector<double> operator()(std::span<const double> x) const override {
    const Eigen::VectorXd u = K_ * Eigen::Map<const Eigen::VectorXd>(x.data(), Eigen::Index(x.size()));
    return {u.data(), u.data() + u.size()};
  }
  std::string name() const override { return "lqr"; }

 private:
  Eigen::MatrixXd K_;
};

class SontagController final : public Controller {
 public:
  SontagController(const ControlAffineSystem& sys, GradientFn grad, std::string name)
      : n_(sys.n), k_(sys.k), grad_(std::move(grad)), name_(std::move(name)) {
    std::vector<Expression> fg(sys.f.begin(), sys.f.end());
    for (const auto& row : sys.g) fg.insert(fg.end(), row.begin(), row.end());
    fg_ = Tape(fg, n_);
  }
  std::vector<double> operator()(std::span<const double> x) const override {
    std::vector<double> v(n_ + n_ * k_), work;
    fg_.evaluate<double>(x, v, work);
    const Eigen::VectorXd p = grad_(x);
    double a = 0.0;
    std::vector<double> b(k_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      a += p(Eigen::Index(i)) * v[i];
      for (std::size_t j = 0; j < k_; ++j) b[j] += p(Eigen::Index(i)) * v[n_ + i * k_ + j];
    }
    return sontag_control(a, b);
  }
  std::string name() const override { return name_; }

 private:
  std::size_t n_, k_;
  GradientFn grad_;
  std::string name_;
  Tape fg_;
};

class HjbController final : public Controller {
 public:
  explicit HjbController(std::shared_ptr<const HjbFeedback> fb) : fb_(std::move(fb)) {}
  std::vector<double> operator()(std::span<const double> x) const override { return fb_->control<double>(x); }
  std::string name() const override { return "neural_hjb"; }

 private:
  std::shared_ptr<const HjbFeedback> fb_;
};

class HybridController final : public Controller {
 public:
  HybridController(const ControlAffineSystem& sys, std::unique_ptr<Controller> outer, const HybridLevels& lv)
      : outer_(std::move(outer)), inner_(make_sontag_controller(sys, quadratic_gradient_fn(lv.P), "quadratic_sontag")),
        P_(lv.P), c_P_(lv.c_P), h_(lv.hysteresis) {
    if (!(c_P_ > 0.0)) throw std::invalid_argument("hybrid controller needs a positive quadratic level");
    if (h_ < 0.0 || h_ >= 1.0) throw std::invalid_argument("hysteresis must lie in [0, 1)");
  }
  std::vector<double> operator()(std::span<const double> x) const override {
    return inner_mode_ ? (*inner_)(x) : (*outer_)(x);
  }
  void observe(std::span<const double> x) override {
    const Eigen::Map<const Eigen::VectorXd> v(x.data(), Eigen::Index(x.size()));
    const double V = v.dot(P_ * v);
    if (!inner_mode_ && V <= (1.0 - h_) * c_P_) inner_mode_ = true;
    if (inner_mode_ && V > c_P_) inner_mode_ = false;
  }
  void reset() override { inner_mode_ = false; }
  std::string name() const override { return "hybrid(" + outer_->name() + ")"; }

 private:
  std::unique_ptr<Controller> outer_, inner_;
  Eigen::MatrixXd P_;
  double c_P_, h_;
  bool inner_mode_ = false;
};

struct BlowUp {};
struct Stalled {};

}  // namespace

std::unique_ptr<Controller> make_lqr_controller(const Eigen::MatrixXd& K) { return std::make_unique<LqrController>(K); }

std::unique_ptr<Controller> make_sontag_controller(const ControlAffineSystem& sys, GradientFn grad, std::string name) {
  sys.validate();
  return std::make_unique<SontagController>(sys, std::move(grad), std::move(name));
}

std::unique_ptr<Controller> make_hjb_controller(std::shared_ptr<const HjbFeedback> feedback) {
  if (!feedback) throw std::invalid_argument("missing feedback");
  return std::make_unique<HjbController>(std::move(feedback));
}

std::unique_ptr<Controller> make_hybrid_controller(const ControlAffineSystem& sys, std::unique_ptr<Controller> outer,
                                                   const HybridLevels& levels) {
  if (!outer) throw std::invalid_argument("missing outer controller");
  return std::make_unique<HybridController>(sys, std::move(outer), levels);
}

Trajectory simulate(const ControlAffineSystem& sys, const CostSpec& cost, Controller& controller,
                    std::span<const double> x0, const SimOptions& opt) {
  namespace ode = boost::numeric::odeint;
  sys.validate();
  cost.validate(sys.n, sys.k);
  if (!(opt.T > 0.0)) throw std::invalid_argument("simulation horizon T must be positive");
  if (!(opt.dt > 0.0)) throw std::invalid_argument("output spacing dt must be positive");
  if (x0.size() != sys.n) throw std::invalid_argument("initial state has wrong dimension");
  const std::size_t n = sys.n, k = sys.k;

  std::vector<Expression> outs(sys.f.begin(), sys.f.end());
  for (const auto& row : sys.g) outs.insert(outs.end(), row.begin(), row.end());
  for (const auto& row : cost.R) outs.insert(outs.end(), row.begin(), row.end());
  outs.push_back(cost.q);
  const Tape tape(outs, n);

  using State = std::vector<double>;
  std::vector<double> work, v(tape.n_outputs());
  auto rate = [&](std::span<const double> x, const std::vector<double>& u, std::span<double> dx) {
    tape.evaluate<double>(x, v, work);
    double J = v.back();
    for (std::size_t i = 0; i < n; ++i) {
      double s = v[i];
      for (std::size_t j = 0; j < k; ++j) s += v[n + i * k + j] * u[j];
      dx[i] = s;
    }
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t l = 0; l < k; ++l) J += u[j] * v[n + n * k + j * k + l] * u[l];
    return J;
  };
  std::size_t evaluations = 0;
  auto rhs = [&](const State& z, State& dz, double) {
    if (++evaluations > opt.max_evaluations) throw Stalled{};
    const std::span<const double> x(z.data(), n);
    double norm = 0.0;
    for (double xi : x) norm += xi * xi;
    if (!(std::sqrt(norm) <= opt.blowup)) throw BlowUp{};
    const auto u = controller(x);
    dz[n] = rate(x, u, std::span<double>(dz.data(), n));
  };

  const auto steps = static_cast<std::size_t>(std::ceil(opt.T / opt.dt - 1e-9));
  std::vector<double> times(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) times[i] = std::min(opt.T, double(i) * opt.dt);

  Trajectory tr;
  std::vector<State> xs;
  std::vector<std::vector<double>> us;
  controller.reset();
  auto observer = [&](const State& z, double t) {
    const std::span<const double> x(z.data(), n);
    controller.observe(x);
    tr.t.push_back(t);
    xs.emplace_back(z.begin(), z.begin() + std::ptrdiff_t(n));
    us.push_back(controller(x));
    tr.J.push_back(z[n]);
  };
  State z(x0.begin(), x0.end());
  z.push_back(0.0);
  try {
    auto stepper = ode::make_dense_output(opt.atol, opt.rtol, ode::runge_kutta_dopri5<State>());
    ode::integrate_times(stepper, rhs, z, times.begin(), times.end(), opt.dt, observer);
  } catch (const BlowUp&) {
    tr.blew_up = true;
    tr.message = "state norm exceeded " + std::to_string(opt.blowup);
  } catch (const Stalled&) {
    tr.stalled = true;
    tr.message = "step size collapsed (evaluation budget exhausted)";
  }
  tr.x.resize(Eigen::Index(xs.size()), Eigen::Index(n));
  tr.u.resize(Eigen::Index(us.size()), Eigen::Index(k));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t d = 0; d < n; ++d) tr.x(Eigen::Index(i), Eigen::Index(d)) = xs[i][d];
    for (std::size_t j = 0; j < k; ++j) tr.u(Eigen::Index(i), Eigen::Index(j)) = us[i][j];
  }
  return tr;
}

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& csv) {
  if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out.precision(12);
  out << 't';
  for (Eigen::Index i = 0; i < traj.x.cols(); ++i) out << ",x" << i + 1;
  for (Eigen::Index j = 0; j < traj.u.cols(); ++j) out << ",u" << j + 1;
  out << ",J\n";
  for (std::size_t r = 0; r < traj.t.size(); ++r) {
    out << traj.t[r];
    for (Eigen::Index i = 0; i < traj.x.cols(); ++i) out << ',' << traj.x(Eigen::Index(r), i);
    for (Eigen::Index j = 0; j < traj.u.cols(); ++j) out << ',' << traj.u(Eigen::Index(r), j);
    out << ',' << traj.J[r] << '\n';
  }
}

nlohmann::json to_json(const CostComparison& c) {
  return {{"x0", c.x0},
          {"J_sontag", c.J_sontag},
          {"J_hjb", c.J_hjb},
          {"T", c.T},
          {"final_norm_sontag", c.final_norm_sontag},
          {"final_norm_hjb", c.final_norm_hjb}};
}

}  // namespace zclf
