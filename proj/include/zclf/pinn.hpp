#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "zclf/system.hpp"
#include "zclf/tape.hpp"
#include "zclf/transform.hpp"

namespace zclf {

/// Fully connected network n -> hidden... -> 1, tanh on hidden layers and a
/// linear output, approximating the transformed value function W.
class NeuralValueFunction {
 public:
  struct Layer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;
  };

  NeuralValueFunction() = default;
  /// Zero weights; widths = {n, h1, ..., 1}.
  explicit NeuralValueFunction(std::vector<std::size_t> widths, TransformSpec transform = {});

  /// Glorot-uniform weights, zero biases.
  static NeuralValueFunction glorot(std::vector<std::size_t> widths, std::uint64_t seed, TransformSpec transform = {});

  std::size_t input_dim() const { return widths_.front(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const TransformSpec& transform() const { return transform_; }
  void set_transform(const TransformSpec& t) { transform_ = t; }
  std::size_t parameter_count() const;

  double forward(std::span<const double> x) const;
  /// Exact reverse-accumulation gradient of forward with respect to x.
  Eigen::VectorXd input_gradient(std::span<const double> x) const;
  /// Value and gradient in one pass.
  double value_and_gradient(std::span<const double> x, Eigen::VectorXd& grad) const;

  /// Generic evaluation for interval and dual scalars (natural extension:
  /// each neuron is enclosed separately, tanh is monotone).
  template <class T>
  T evaluate(std::span<const T> x) const;

  /// Flattened parameters, layer by layer: W row-major then b.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& theta);

 private:
  std::vector<std::size_t> widths_;
  std::vector<Layer> layers_;
  TransformSpec transform_;
};

nlohmann::json to_json(const NeuralValueFunction& net);
NeuralValueFunction network_from_json(const nlohmann::json& j);
void save_network(const NeuralValueFunction& net, const std::filesystem::path& path);
NeuralValueFunction load_network(const std::filesystem::path& path);

template <class T>
T NeuralValueFunction::evaluate(std::span<const T> x) const {
  using std::tanh;
  if (x.size() != input_dim()) throw std::invalid_argument("network input has wrong dimension");
  std::vector<T> a(x.begin(), x.end()), next;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const bool hidden = l + 1 < layers_.size();
    next.assign(static_cast<std::size_t>(L.W.rows()), T(0.0));
    for (Eigen::Index j = 0; j < L.W.rows(); ++j) {
      T acc = T(L.b(j));
      for (Eigen::Index i = 0; i < L.W.cols(); ++i) acc = acc + L.W(j, i) * a[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(j)] = hidden ? tanh(acc) : acc;
    }
    a.swap(next);
  }
  return a.front();
}

/// f, M = g R^-1 g^T and q at a point, compiled once per (system, cost).
class ResidualTerms {
 public:
  ResidualTerms(const ControlAffineSystem& sys, const CostSpec& cost);
  std::size_t n() const { return n_; }
  /// Fills f (n), M (n x n) and returns q.
  double at(std::span<const double> x, Eigen::Ref<Eigen::VectorXd> f, Eigen::Ref<Eigen::MatrixXd> M,
            std::vector<double>& work) const;

 private:
  std::size_t n_ = 0, k_ = 0;
  Tape tape_;  // x -> (f, g row-major, R row-major, q)
};

/// F(x, W, p) = -phi(W) p.f + 1/4 p^T M p - q phi(W)^2, the Zubov-HJB
/// residual with k = -1/2 R^-1 g^T p substituted; no (1 - W) denominators.
double zubov_residual_value(double W, const Eigen::VectorXd& p, const Eigen::VectorXd& f, const Eigen::MatrixXd& M,
                            double q, const TransformSpec& t);

double zubov_residual(const ControlAffineSystem& sys, const CostSpec& cost, const NeuralValueFunction& net,
                      std::span<const double> x);

struct LossTerms {
  double residual = 0.0;  // mean square Zubov-HJB residual
  double data = 0.0;      // mean square data error
  double boundary = 0.0;  // mean square boundary error
  double total = 0.0;
};

/// Points are stored as columns.
struct Batch {
  Eigen::MatrixXd x;       // n x B
  Eigen::VectorXd target;  // B (data / boundary only)
};

struct LossWeights {
  double residual = 1.0;
  double data = 1.0;
  double boundary = 0.0;
};

/// Loss and (optionally) its gradient with respect to the flattened parameters.
LossTerms loss(const NeuralValueFunction& net, const ResidualTerms& terms, const Batch& collocation,
               const Batch& data, const Batch& boundary, const LossWeights& w, Eigen::VectorXd* gradient = nullptr);

struct TrainConfig {
  std::size_t n_collocation = 300000;
  double lambda_data = 1.0;
  double lambda_boundary = 0.0;
  double lambda_residual = 1.0;  // 0 gives data-only training
  double boundary_value = 1.0;   // target W on the faces of the collocation box
  std::size_t n_boundary = 0;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  Box domain;  // empty: sys.domain
  std::vector<std::size_t> hidden{30, 30};
  TransformSpec transform;
  std::size_t log_every = 1000;  // steps between loss-history rows
  std::size_t eval_points = 0;   // 0: final residual over all collocation points
};

struct LossRecord {
  std::size_t epoch = 0, step = 0;
  LossTerms terms;
};

struct TrainResult {
  NeuralValueFunction net;
  std::vector<LossRecord> history;
  double final_residual_mse = 0.0;
  double final_data_mse = 0.0;
  double seconds = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam on the composite loss. Collocation points are drawn once; each step
/// uses one collocation batch and one data batch cycling through the data.
TrainResult train(const ControlAffineSystem& sys, const CostSpec& cost, std::span<const double> data_x,
                  std::span<const double> data_w, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_log = {});

void write_loss_history(const std::vector<LossRecord>& history, const std::filesystem::path& csv);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace zclf
