#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "search_nne/error.hpp"
#include "search_nne/rng.hpp"
#include "search_nne/synth.hpp"

namespace search_nne {

/// Architecture of the feed-forward estimator.
struct NetSpec {
  int input_width = 0;
  std::vector<int> hidden{512, 256, 256};
  int output_width = 0;
  std::uint64_t seed = 1;

  std::vector<int> widths() const;
  void validate() const;
  bool operator==(const NetSpec&) const = default;
};

/// Multilayer perceptron with rectified-linear hidden layers and a linear
/// output layer. Batches are stored one example per column.
template <class Scalar>
struct Mlp {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::vector<Matrix> weights;  ///< layer l maps width l to width l+1 (rows = outputs)
  std::vector<Vector> biases;

  /// Uniform on +-sqrt(6 / fan_in) for hidden layers, +-sqrt(3 / fan_in) for
  /// the output layer; biases zero.
  static Mlp initialize(const std::vector<int>& widths, std::uint64_t seed) {
    Mlp net;
    Rng rng(derive_seed(seed, 0x1417));
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int in = widths[l], out = widths[l + 1];
      const bool last = l + 2 == widths.size();
      const double limit = std::sqrt((last ? 3.0 : 6.0) / in);
      Matrix w(out, in);
      for (int c = 0; c < in; ++c)
        for (int r = 0; r < out; ++r)
          w(r, c) = static_cast<Scalar>(limit * (2.0 * rng.uniform() - 1.0));
      net.weights.push_back(std::move(w));
      net.biases.push_back(Vector::Zero(out));
    }
    return net;
  }

  int layers() const { return static_cast<int>(weights.size()); }
  int input_width() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
  int output_width() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (int l = 0; l < layers(); ++l) total += weights[l].size() + biases[l].size();
    return total;
  }

  Matrix forward(const Matrix& x) const {
    Matrix a = x;
    for (int l = 0; l < layers(); ++l) {
      Matrix z = weights[l] * a;
      z.colwise() += biases[l];
      if (l + 1 < layers()) z = z.cwiseMax(Scalar(0));
      a = std::move(z);
    }
    return a;
  }

  template <class Other>
  Mlp<Other> cast() const {
    Mlp<Other> out;
    for (int l = 0; l < layers(); ++l) {
      out.weights.push_back(weights[l].template cast<Other>());
      out.biases.push_back(biases[l].template cast<Other>());
    }
    return out;
  }

  /// Visits every parameter in storage order (weights then bias, by layer).
  template <class Fn>
  void for_each_parameter(Fn&& fn) {
    for (int l = 0; l < layers(); ++l) {
      for (Eigen::Index k = 0; k < weights[l].size(); ++k) fn(weights[l].data()[k]);
      for (Eigen::Index k = 0; k < biases[l].size(); ++k) fn(biases[l].data()[k]);
    }
  }
  template <class Fn>
  void for_each_parameter(Fn&& fn) const {
    for (int l = 0; l < layers(); ++l) {
      for (Eigen::Index k = 0; k < weights[l].size(); ++k) fn(weights[l].data()[k]);
      for (Eigen::Index k = 0; k < biases[l].size(); ++k) fn(biases[l].data()[k]);
    }
  }
};

/// Same shapes as the network's parameters.
template <class Scalar>
using MlpGradient = Mlp<Scalar>;

/// Mean masked squared error sum(mask * (f(x) - target)^2) / sum(mask) over
/// a batch; zero when the mask is empty. Fills `grad` when given.
template <class Scalar>
Scalar masked_loss(const Mlp<Scalar>& net, const typename Mlp<Scalar>::Matrix& x,
                   const typename Mlp<Scalar>::Matrix& target,
                   const typename Mlp<Scalar>::Matrix& mask, MlpGradient<Scalar>* grad = nullptr) {
  using Matrix = typename Mlp<Scalar>::Matrix;
  const int L = net.layers();
  std::vector<Matrix> act(L + 1);
  act[0] = x;
  for (int l = 0; l < L; ++l) {
    Matrix z = net.weights[l] * act[l];
    z.colwise() += net.biases[l];
    if (l + 1 < L) z = z.cwiseMax(Scalar(0));
    act[l + 1] = std::move(z);
  }
  const Scalar count = mask.sum();
  if (count <= Scalar(0)) {
    if (grad) {
      *grad = net;
      grad->for_each_parameter([](Scalar& p) { p = Scalar(0); });
    }
    return Scalar(0);
  }
  const Matrix diff = (act[L] - target).cwiseProduct(mask);
  const Scalar loss = diff.cwiseAbs2().sum() / count;
  if (grad) {
    grad->weights.resize(L);
    grad->biases.resize(L);
    Matrix delta = diff * (Scalar(2) / count);
    for (int l = L - 1; l >= 0; --l) {
      grad->weights[l].noalias() = delta * act[l].transpose();
      grad->biases[l] = delta.rowwise().sum();
      if (l > 0) {
        Matrix back = net.weights[l].transpose() * delta;
        delta = back.cwiseProduct((act[l].array() > Scalar(0)).template cast<Scalar>().matrix());
      }
    }
  }
  return loss;
}

class NormalizationStats;

/// Pattern vector already mapped through a NormalizationStats. Only the
/// stats object can create one, and it refuses to normalize one again.
class NormalizedInput {
 public:
  const Eigen::VectorXd& values() const { return values_; }

 private:
  friend class NormalizationStats;
  explicit NormalizedInput(Eigen::VectorXd v) : values_(std::move(v)) {}
  Eigen::VectorXd values_;
};

/// Per-slot z-scoring fitted on the training split, with optional
/// winsorization of raw values to fitted quantiles first.
class NormalizationStats {
 public:
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<double> lower;  ///< Empty unless winsorizing.
  std::vector<double> upper;

  /// Fits on `rows` rows of `width` floats. Slots with no variation get sd 1.
  static NormalizationStats fit(const float* data, std::size_t rows, int width, bool winsorize,
                                double lower_quantile = 0.001, double upper_quantile = 0.999);

  bool winsorizes() const { return !lower.empty(); }
  int width() const { return static_cast<int>(mean.size()); }
  double transform(int slot, double raw) const;

  NormalizedInput apply(const Eigen::VectorXd& raw) const;
  NormalizedInput apply(const NormalizedInput&) const = delete;
  /// In-place normalization of a float row used during training.
  void apply_row(const float* raw, float* out) const;

  bool operator==(const NormalizationStats&) const = default;
};

struct TrainConfig {
  std::size_t holdout_max = 50000;
  double holdout_fraction = 0.05;
  int batch_size = 1024;
  double learning_rate = 1e-3;
  double lr_decay = 0.3;
  /// Epochs without validation improvement before the learning rate decays.
  int plateau_epochs = 3;
  /// Epochs without validation improvement before training stops.
  int patience = 10;
  int max_epochs = 200;
  double min_learning_rate = 1e-6;
  bool winsorize = false;
  int threads = 0;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainingSummary {
  double train_loss = 0.0;
  double validation_loss = 0.0;  ///< Best epoch, evaluated in double precision.
  /// Masked mean of the per-coordinate target variance on the validation split.
  double validation_target_variance = 0.0;
  int epochs = 0;
  int best_epoch = 0;
  std::size_t training_examples = 0;
  std::size_t validation_examples = 0;
  double seconds = 0.0;
  std::vector<EpochRecord> history;
};

struct TrainedNet {
  NetSpec spec;
  Mlp<float> net;
  NormalizationStats stats;
  TrainingSummary summary;
};

/// Number of trailing examples held out for validation.
std::size_t holdout_count(std::size_t L, const TrainConfig& cfg);

/// Trains on the leading examples and early-stops on the trailing hold-out.
/// Throws TrainingDiverged on a non-finite loss.
TrainedNet train_net(const TrainingSet& examples, NetSpec spec, const TrainConfig& cfg);

/// Normalizes `raw` and runs the network in double precision.
Eigen::VectorXd net_forward(const Mlp<double>& net, const NormalizationStats& stats,
                            const Eigen::VectorXd& raw);

}  // namespace search_nne
