#include "zclf/pinn.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "zclf/pmp.hpp"

namespace zclf {

NeuralValueFunction::NeuralValueFunction(std::vector<std::size_t> widths, TransformSpec transform)
    : widths_(std::move(widths)), transform_(transform) {
  if (widths_.size() < 2) throw std::invalid_argument("network needs at least an input and an output layer");
  if (widths_.back() != 1) throw std::invalid_argument("network output width must be 1");
  for (auto w : widths_)
    if (w == 0) throw std::invalid_argument("network layer widths must be positive");
  for (std::size_t l = 1; l < widths_.size(); ++l) {
    const auto out = static_cast<Eigen::Index>(widths_[l]), in = static_cast<Eigen::Index>(widths_[l - 1]);
    layers_.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
  }
}

NeuralValueFunction NeuralValueFunction::glorot(std::vector<std::size_t> widths, std::uint64_t seed,
                                                TransformSpec transform) {
  NeuralValueFunction net(std::move(widths), transform);
  std::mt19937_64 rng(seed);
  for (auto& L : net.layers_) {
    const double limit = std::sqrt(6.0 / double(L.W.rows() + L.W.cols()));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < L.W.rows(); ++i)
      for (Eigen::Index j = 0; j < L.W.cols(); ++j) L.W(i, j) = u(rng);
  }
  return net;
}

std::size_t NeuralValueFunction::parameter_count() const {
  std::size_t c = 0;
  for (const auto& L : layers_) c += static_cast<std::size_t>(L.W.size() + L.b.size());
  return c;
}

Eigen::VectorXd NeuralValueFunction::parameters() const {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& L : layers_) {
    for (Eigen::Index i = 0; i < L.W.rows(); ++i)
      for (Eigen::Index j = 0; j < L.W.cols(); ++j) theta(k++) = L.W(i, j);
    for (Eigen::Index i = 0; i < L.b.size(); ++i) theta(k++) = L.b(i);
  }
  return theta;
}

void NeuralValueFunction::set_parameters(const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count())
    throw std::invalid_argument("parameter vector has wrong size");
  Eigen::Index k = 0;
  for (auto& L : layers_) {
    for (Eigen::Index i = 0; i < L.W.rows(); ++i)
      for (Eigen::Index j = 0; j < L.W.cols(); ++j) L.W(i, j) = theta(k++);
    for (Eigen::Index i = 0; i < L.b.size(); ++i) L.b(i) = theta(k++);
  }
}

double NeuralValueFunction::forward(std::span<const double> x) const {
  if (x.size() != input_dim()) throw std::invalid_argument("network input has wrong dimension");
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::VectorXd z = layers_[l].W * a + layers_[l].b;
    a = l + 1 < layers_.size() ? Eigen::VectorXd(z.array().tanh()) : z;
  }
  return a(0);
}

double NeuralValueFunction::value_and_gradient(std::span<const double> x, Eigen::VectorXd& grad) const {
  if (x.size() != input_dim()) throw std::invalid_argument("network input has wrong dimension");
  std::vector<Eigen::VectorXd> slopes;  // 1 - tanh^2 per hidden layer
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::VectorXd z = layers_[l].W * a + layers_[l].b;
    if (l + 1 < layers_.size()) {
      a = z.array().tanh();
      slopes.push_back(1.0 - a.array().square());
    } else {
      a = z;
    }
  }
  Eigen::VectorXd g = layers_.back().W.row(0).transpose();
  for (std::size_t l = layers_.size() - 1; l-- > 0;) g = layers_[l].W.transpose() * (g.cwiseProduct(slopes[l]));
  grad = g;
  return a(0);
}

Eigen::VectorXd NeuralValueFunction::input_gradient(std::span<const double> x) const {
  Eigen::VectorXd g;
  value_and_gradient(x, g);
  return g;
}

nlohmann::json to_json(const NeuralValueFunction& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& L : net.layers()) {
    nlohmann::json W = nlohmann::json::array();
    for (Eigen::Index i = 0; i < L.W.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(L.W.cols()));
      for (Eigen::Index j = 0; j < L.W.cols(); ++j) row[static_cast<std::size_t>(j)] = L.W(i, j);
      W.push_back(row);
    }
    layers.push_back({{"W", W}, {"b", std::vector<double>(L.b.data(), L.b.data() + L.b.size())}});
  }
  return {{"widths", net.widths()}, {"activation", "tanh"}, {"transform", to_json(net.transform())},
          {"layers", layers}};
}

NeuralValueFunction network_from_json(const nlohmann::json& j) {
  if (j.value("activation", std::string("tanh")) != "tanh")
    throw std::invalid_argument("only tanh activations are supported");
  const auto widths = j.at("widths").get<std::vector<std::size_t>>();
  NeuralValueFunction net(widths, j.contains("transform") ? transform_from_json(j.at("transform")) : TransformSpec{});
  const auto& layers = j.at("layers");
  if (layers.size() != net.layers().size()) throw std::invalid_argument("network layer count does not match widths");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = net.layers()[l];
    const auto W = layers[l].at("W").get<std::vector<std::vector<double>>>();
    const auto b = layers[l].at("b").get<std::vector<double>>();
    if (W.size() != static_cast<std::size_t>(L.W.rows()) || b.size() != static_cast<std::size_t>(L.b.size()))
      throw std::invalid_argument("network layer " + std::to_string(l) + " has wrong shape");
    for (std::size_t i = 0; i < W.size(); ++i) {
      if (W[i].size() != static_cast<std::size_t>(L.W.cols()))
        throw std::invalid_argument("network layer " + std::to_string(l) + " has wrong shape");
      for (std::size_t c = 0; c < W[i].size(); ++c) L.W(Eigen::Index(i), Eigen::Index(c)) = W[i][c];
      L.b(Eigen::Index(i)) = b[i];
    }
  }
  return net;
}

void save_network(const NeuralValueFunction& net, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(net).dump(1) << '\n';
}

NeuralValueFunction load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return network_from_json(nlohmann::json::parse(in));
}

ResidualTerms::ResidualTerms(const ControlAffineSystem& sys, const CostSpec& cost) : n_(sys.n), k_(sys.k) {
  sys.validate();
  cost.validate(sys.n, sys.k);
  std::vector<Expression> out(sys.f.begin(), sys.f.end());
  for (const auto& row : sys.g) out.insert(out.end(), row.begin(), row.end());
  for (const auto& row : cost.R) out.insert(out.end(), row.begin(), row.end());
  out.push_back(cost.q);
  tape_ = Tape(out, n_);
}

double ResidualTerms::at(std::span<const double> x, Eigen::Ref<Eigen::VectorXd> f, Eigen::Ref<Eigen::MatrixXd> M,
                         std::vector<double>& work) const {
  std::vector<double> out(tape_.n_outputs());
  tape_.evaluate<double>(x, out, work);
  const auto n = static_cast<Eigen::Index>(n_), k = static_cast<Eigen::Index>(k_);
  for (Eigen::Index i = 0; i < n; ++i) f(i) = out[std::size_t(i)];
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> G(out.data() + n, n,
                                                                                                     k);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> R(
      out.data() + n + n * k, k, k);
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) throw std::domain_error("R is not positive definite at a collocation point");
  M = G * llt.solve(G.transpose());
  return out.back();
}

double zubov_residual_value(double W, const Eigen::VectorXd& p, const Eigen::VectorXd& f, const Eigen::MatrixXd& M,
                            double q, const TransformSpec& t) {
  const double phi = t.phi(W);
  return -phi * p.dot(f) + 0.25 * p.dot(M * p) - q * phi * phi;
}

double zubov_residual(const ControlAffineSystem& sys, const CostSpec& cost, const NeuralValueFunction& net,
                      std::span<const double> x) {
  const ResidualTerms terms(sys, cost);
  Eigen::VectorXd f(sys.n), p;
  Eigen::MatrixXd M(sys.n, sys.n);
  std::vector<double> work;
  const double q = terms.at(x, f, M, work);
  const double W = net.value_and_gradient(x, p);
  return zubov_residual_value(W, p, f, M, q, net.transform());
}

namespace {

// Batched forward pass carrying the value and the n input tangents, with the
// reverse pass through both.
struct Pass {
  const NeuralValueFunction& net;
  std::size_t tangents = 0;
  std::vector<Eigen::MatrixXd> A;                // activations per layer, A[0] = X
  std::vector<std::vector<Eigen::MatrixXd>> Td;  // input tangents of activations
  std::vector<std::vector<Eigen::MatrixXd>> Zd;  // tangents of pre-activations
  std::vector<Eigen::MatrixXd> S;                // 1 - tanh^2

  Pass(const NeuralValueFunction& n, const Eigen::MatrixXd& X, bool with_tangents)
      : net(n), tangents(with_tangents ? static_cast<std::size_t>(X.rows()) : 0) {
    const auto& layers = net.layers();
    const std::size_t L = layers.size();
    A.resize(L + 1);
    Td.resize(L + 1);
    Zd.resize(L + 1);
    S.resize(L + 1);
    A[0] = X;
    for (std::size_t d = 0; d < tangents; ++d) {
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(X.rows(), X.cols());
      e.row(Eigen::Index(d)).setOnes();
      Td[0].push_back(std::move(e));
    }
    for (std::size_t l = 1; l <= L; ++l) {
      const auto& Ly = layers[l - 1];
      Eigen::MatrixXd Z = (Ly.W * A[l - 1]).colwise() + Ly.b;
      for (std::size_t d = 0; d < tangents; ++d) Zd[l].push_back(Ly.W * Td[l - 1][d]);
      if (l < L) {
        A[l] = Z.array().tanh();
        S[l] = 1.0 - A[l].array().square();
        for (std::size_t d = 0; d < tangents; ++d) Td[l].push_back(S[l].cwiseProduct(Zd[l][d]));
      } else {
        A[l] = std::move(Z);
        Td[l] = Zd[l];
      }
    }
  }

  Eigen::RowVectorXd value() const { return A.back().row(0); }
  Eigen::RowVectorXd tangent(std::size_t d) const { return Td.back()[d].row(0); }

  // Accumulates into grad (flattened layout) given adjoints of the value and tangents.
  void backward(const Eigen::RowVectorXd& ybar, const std::vector<Eigen::RowVectorXd>& pbar,
                Eigen::VectorXd& grad) const {
    const auto& layers = net.layers();
    const std::size_t L = layers.size();
    std::vector<Eigen::Index> offset(L + 1, 0);
    for (std::size_t l = 0; l < L; ++l) offset[l + 1] = offset[l] + layers[l].W.size() + layers[l].b.size();

    Eigen::MatrixXd Abar = ybar;
    std::vector<Eigen::MatrixXd> Tbar(tangents);
    for (std::size_t d = 0; d < tangents; ++d) Tbar[d] = pbar[d];
    for (std::size_t l = L; l >= 1; --l) {
      const auto& Ly = layers[l - 1];
      Eigen::MatrixXd Zbar;
      std::vector<Eigen::MatrixXd> Zdbar(tangents);
      if (l < L) {
        Zbar = Abar.cwiseProduct(S[l]);
        const Eigen::MatrixXd dS = -2.0 * A[l].cwiseProduct(S[l]);
        for (std::size_t d = 0; d < tangents; ++d) {
          Zbar += Tbar[d].cwiseProduct(Zd[l][d]).cwiseProduct(dS);
          Zdbar[d] = Tbar[d].cwiseProduct(S[l]);
        }
      } else {
        Zbar = Abar;
        for (std::size_t d = 0; d < tangents; ++d) Zdbar[d] = Tbar[d];
      }
      Eigen::MatrixXd gW = Zbar * A[l - 1].transpose();
      for (std::size_t d = 0; d < tangents; ++d) gW += Zdbar[d] * Td[l - 1][d].transpose();
      const Eigen::VectorXd gb = Zbar.rowwise().sum();
      Eigen::Index k = offset[l - 1];
      for (Eigen::Index i = 0; i < gW.rows(); ++i)
        for (Eigen::Index j = 0; j < gW.cols(); ++j) grad(k++) += gW(i, j);
      for (Eigen::Index i = 0; i < gb.size(); ++i) grad(k++) += gb(i);
      if (l > 1) {
        Abar = Ly.W.transpose() * Zbar;
        for (std::size_t d = 0; d < tangents; ++d) Tbar[d] = Ly.W.transpose() * Zdbar[d];
      }
    }
  }
};

double square_error_term(const NeuralValueFunction& net, const Batch& b, double weight, Eigen::VectorXd* gradient) {
  if (b.x.cols() == 0) return 0.0;
  const Pass pass(net, b.x, false);
  const Eigen::RowVectorXd err = pass.value() - b.target.transpose();
  const double B = double(b.x.cols());
  if (gradient && weight != 0.0) pass.backward(err * (2.0 * weight / B), {}, *gradient);
  return err.squaredNorm() / B;
}

}  // namespace

LossTerms loss(const NeuralValueFunction& net, const ResidualTerms& terms, const Batch& collocation,
               const Batch& data, const Batch& boundary, const LossWeights& w, Eigen::VectorXd* gradient) {
  if (gradient) *gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.parameter_count()));
  LossTerms out;
  const std::size_t n = terms.n();
  if (collocation.x.cols() > 0) {
    if (static_cast<std::size_t>(collocation.x.rows()) != n) throw std::invalid_argument("collocation batch dimension");
    const Pass pass(net, collocation.x, true);
    const Eigen::Index B = collocation.x.cols();
    const Eigen::RowVectorXd y = pass.value();
    Eigen::RowVectorXd ybar(B);
    std::vector<Eigen::RowVectorXd> pbar(n, Eigen::RowVectorXd(B));
    Eigen::VectorXd f(n), p(n);
    Eigen::MatrixXd M(n, n);
    std::vector<double> work, x(n);
    const TransformSpec& t = net.transform();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < B; ++c) {
      for (std::size_t d = 0; d < n; ++d) {
        x[d] = collocation.x(Eigen::Index(d), c);
        p(Eigen::Index(d)) = pass.Td.back()[d](0, c);
      }
      const double q = terms.at(x, f, M, work);
      const double W = y(c), phi = t.phi(W), pf = p.dot(f);
      const Eigen::VectorXd Mp = M * p;
      const double F = -phi * pf + 0.25 * p.dot(Mp) - q * phi * phi;
      sum += F * F;
      const double scale = 2.0 * w.residual * F / double(B);
      ybar(c) = scale * (-t.dphi(W) * (pf + 2.0 * q * phi));
      const Eigen::VectorXd dFdp = -phi * f + 0.5 * Mp;
      for (std::size_t d = 0; d < n; ++d) pbar[d](c) = scale * dFdp(Eigen::Index(d));
    }
    out.residual = sum / double(B);
    if (gradient && w.residual != 0.0) pass.backward(ybar, pbar, *gradient);
  }
  out.data = square_error_term(net, data, w.data, gradient);
  out.boundary = square_error_term(net, boundary, w.boundary, gradient);
  out.total = w.residual * out.residual + w.data * out.data + w.boundary * out.boundary;
  return out;
}

namespace {

// Points uniformly on the faces of the box: pick a face, then a point on it.
Eigen::MatrixXd boundary_points(const Box& box, std::size_t count, std::uint64_t seed) {
  const std::size_t n = box.size();
  Eigen::MatrixXd P(n, count);
  for (std::size_t i = 0; i < count; ++i) {
    auto x = sample_uniform(box, seed, i);
    const std::uint64_t face = (seed * 0x9e3779b97f4a7c15ULL + i * 0xbf58476d1ce4e5b9ULL) >> 33;
    const std::size_t d = face % n;
    x[d] = (face / n) % 2 ? box[d].hi : box[d].lo;
    for (std::size_t j = 0; j < n; ++j) P(Eigen::Index(j), Eigen::Index(i)) = x[j];
  }
  return P;
}

Batch gather(const Eigen::MatrixXd& X, const Eigen::VectorXd* target, const std::vector<std::size_t>& order,
             std::size_t& cursor, std::size_t size, std::mt19937_64* reshuffle, std::vector<std::size_t>* order_mut) {
  Batch b;
  const std::size_t count = std::min(size, order.size());
  b.x.resize(X.rows(), Eigen::Index(count));
  if (target) b.target.resize(Eigen::Index(count));
  for (std::size_t i = 0; i < count; ++i) {
    if (cursor == order.size()) {
      cursor = 0;
      if (reshuffle && order_mut) std::shuffle(order_mut->begin(), order_mut->end(), *reshuffle);
    }
    const std::size_t j = order[cursor++];
    b.x.col(Eigen::Index(i)) = X.col(Eigen::Index(j));
    if (target) b.target(Eigen::Index(i)) = (*target)(Eigen::Index(j));
  }
  return b;
}

void accumulate(LossTerms& acc, const LossTerms& t) {
  acc.residual += t.residual;
  acc.data += t.data;
  acc.boundary += t.boundary;
  acc.total += t.total;
}

LossTerms averaged(const LossTerms& acc, std::size_t count) {
  const double c = double(std::max<std::size_t>(count, 1));
  return {acc.residual / c, acc.data / c, acc.boundary / c, acc.total / c};
}

}  // namespace

TrainResult train(const ControlAffineSystem& sys, const CostSpec& cost, std::span<const double> data_x,
                  std::span<const double> data_w, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_log) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = sys.n;
  const Box domain = config.domain.empty() ? sys.domain : config.domain;
  if (domain.size() != n) throw std::invalid_argument("training domain has wrong dimension");
  if (config.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (config.lambda_data < 0.0 || config.lambda_boundary < 0.0 || config.lambda_residual < 0.0)
    throw std::invalid_argument("loss weights must be non-negative");
  if (data_x.size() != data_w.size() * n) throw std::invalid_argument("data points and targets disagree in count");
  if (config.lambda_residual > 0.0 && config.n_collocation == 0)
    throw std::invalid_argument("residual training needs collocation points");

  const ResidualTerms terms(sys, cost);
  std::vector<std::size_t> widths{n};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);
  TrainResult result;
  result.net = NeuralValueFunction::glorot(widths, config.seed, config.transform);
  NeuralValueFunction& net = result.net;

  // collocation drawn once, before training
  const std::size_t n_col = config.lambda_residual > 0.0 ? config.n_collocation : 0;
  Eigen::MatrixXd colloc(n, n_col);
  for (std::size_t i = 0; i < n_col; ++i) {
    const auto x = sample_uniform(domain, config.seed ^ 0xc0110cULL, i);
    for (std::size_t d = 0; d < n; ++d) colloc(Eigen::Index(d), Eigen::Index(i)) = x[d];
  }
  const std::size_t n_data = data_w.size();
  Eigen::MatrixXd dx(n, n_data);
  Eigen::VectorXd dw(n_data);
  for (std::size_t i = 0; i < n_data; ++i) {
    for (std::size_t d = 0; d < n; ++d) dx(Eigen::Index(d), Eigen::Index(i)) = data_x[i * n + d];
    dw(Eigen::Index(i)) = data_w[i];
  }
  const std::size_t n_bnd = config.lambda_boundary > 0.0 ? config.n_boundary : 0;
  const Eigen::MatrixXd bx = boundary_points(domain, n_bnd, config.seed ^ 0xb0dULL);
  const Eigen::VectorXd bw = Eigen::VectorXd::Constant(Eigen::Index(n_bnd), config.boundary_value);
  const bool use_data = config.lambda_data > 0.0 && n_data > 0;

  std::mt19937_64 rng(config.seed + 1);
  std::vector<std::size_t> col_order(n_col), data_order(n_data), bnd_order(n_bnd);
  std::iota(col_order.begin(), col_order.end(), 0);
  std::iota(data_order.begin(), data_order.end(), 0);
  std::iota(bnd_order.begin(), bnd_order.end(), 0);
  std::shuffle(data_order.begin(), data_order.end(), rng);
  std::size_t data_cursor = 0, bnd_cursor = 0;

  // an epoch is one pass over the collocation points (counted even when the
  // residual is switched off, so ablations take the same number of steps)
  const std::size_t epoch_points = config.n_collocation ? config.n_collocation : n_data;
  if (epoch_points == 0) throw std::invalid_argument("nothing to train on");
  const std::size_t steps_per_epoch = (epoch_points + config.batch_size - 1) / config.batch_size;

  const LossWeights weights{config.lambda_residual, use_data ? config.lambda_data : 0.0, config.lambda_boundary};
  Eigen::VectorXd theta = net.parameters(), grad;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size()), m2 = Eigen::VectorXd::Zero(theta.size());
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;
  std::size_t step = 0, since_log = 0;
  LossTerms acc;
  const Batch none;

  auto emit = [&](std::size_t epoch) {
    if (since_log == 0) return;
    LossRecord rec{epoch, step, averaged(acc, since_log)};
    result.history.push_back(rec);
    if (on_log) on_log(rec);
    acc = {};
    since_log = 0;
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(col_order.begin(), col_order.end(), rng);
    std::size_t col_cursor = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      Batch cb = n_col ? gather(colloc, nullptr, col_order, col_cursor, config.batch_size, nullptr, nullptr) : none;
      Batch db = use_data ? gather(dx, &dw, data_order, data_cursor, config.batch_size, &rng, &data_order) : none;
      Batch bb = n_bnd ? gather(bx, &bw, bnd_order, bnd_cursor, config.batch_size, &rng, &bnd_order) : none;
      const LossTerms t = loss(net, terms, cb, db, bb, weights, &grad);
      ++step;
      if (!std::isfinite(t.total) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", step " << step << ": loss " << t.total;
        throw TrainingError(msg.str());
      }
      b1t *= b1;
      b2t *= b2;
      m1 = b1 * m1 + (1.0 - b1) * grad;
      m2 = b2 * m2 + (1.0 - b2) * grad.cwiseProduct(grad);
      theta.array() -= config.learning_rate * (m1.array() / (1.0 - b1t)) /
                       ((m2.array() / (1.0 - b2t)).sqrt() + eps);
      net.set_parameters(theta);
      accumulate(acc, t);
      ++since_log;
      if (config.log_every && step % config.log_every == 0) emit(epoch);
    }
    emit(epoch);
  }

  // final mean-square residual over the collocation set (or a prefix of it)
  const std::size_t n_eval = config.eval_points ? std::min(config.eval_points, n_col) : n_col;
  if (n_eval > 0) {
    double sum = 0.0;
    for (std::size_t off = 0; off < n_eval; off += 1024) {
      const std::size_t c = std::min<std::size_t>(1024, n_eval - off);
      Batch b;
      b.x = colloc.middleCols(Eigen::Index(off), Eigen::Index(c));
      sum += loss(net, terms, b, none, none, {1.0, 0.0, 0.0}).residual * double(c);
    }
    result.final_residual_mse = sum / double(n_eval);
  } else {
    // data-only runs still report the physics residual on fresh points
    const std::size_t count = std::min<std::size_t>(config.n_collocation ? config.n_collocation : 10000, 100000);
    Batch b;
    b.x.resize(n, Eigen::Index(count));
    for (std::size_t i = 0; i < count; ++i) {
      const auto x = sample_uniform(domain, config.seed ^ 0xc0110cULL, i);
      for (std::size_t d = 0; d < n; ++d) b.x(Eigen::Index(d), Eigen::Index(i)) = x[d];
    }
    result.final_residual_mse = loss(net, terms, b, none, none, {1.0, 0.0, 0.0}).residual;
  }
  if (n_data > 0) {
    Batch b{dx, dw};
    result.final_data_mse = loss(net, terms, none, b, none, {0.0, 1.0, 0.0}).data;
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_loss_history(const std::vector<LossRecord>& history, const std::filesystem::path& csv) {
  if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out.precision(10);
  out << "epoch,step,residual,data,boundary,total\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.step << ',' << r.terms.residual << ',' << r.terms.data << ',' << r.terms.boundary << ','
        << r.terms.total << '\n';
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"n_collocation", c.n_collocation},
                   {"lambda_data", c.lambda_data},
                   {"lambda_boundary", c.lambda_boundary},
                   {"lambda_residual", c.lambda_residual},
                   {"boundary_value", c.boundary_value},
                   {"n_boundary", c.n_boundary},
                   {"epochs", c.epochs},
                   {"batch_size", c.batch_size},
                   {"learning_rate", c.learning_rate},
                   {"seed", c.seed},
                   {"hidden", c.hidden},
                   {"transform", to_json(c.transform)},
                   {"log_every", c.log_every},
                   {"eval_points", c.eval_points}};
  if (!c.domain.empty()) j["domain"] = box_to_json(c.domain);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.n_collocation = j.value("n_collocation", c.n_collocation);
  c.lambda_data = j.value("lambda_data", c.lambda_data);
  c.lambda_boundary = j.value("lambda_boundary", c.lambda_boundary);
  c.lambda_residual = j.value("lambda_residual", c.lambda_residual);
  c.boundary_value = j.value("boundary_value", c.boundary_value);
  c.n_boundary = j.value("n_boundary", c.n_boundary);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("transform")) c.transform = transform_from_json(j.at("transform"));
  c.log_every = j.value("log_every", c.log_every);
  c.eval_points = j.value("eval_points", c.eval_points);
  if (j.contains("domain")) c.domain = box_from_json(j.at("domain"));
  for (auto h : c.hidden)
    if (h == 0) throw std::invalid_argument("hidden widths must be positive");
  return c;
}

}  // namespace zclf
