#ifndef DMFG_NN_HPP
#define DMFG_NN_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmfg/core.hpp"

namespace dmfg::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

enum class Activation { relu, linear, softmax };
enum class Loss { mse, cross_entropy, weighted_log_prob };
enum class Optimizer { sgd, adam };

std::string to_string(Activation a);
std::string to_string(Loss l);
std::string to_string(Optimizer o);

struct LayerSpec {
  int output_size = 0;
  Activation activation = Activation::linear;
};

class NonFiniteLoss : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/**
 * A training batch. For mse the optional mask selects which output entries
 * contribute; the loss is averaged over the selected entries (all entries
 * when the mask is empty). For cross_entropy and weighted_log_prob the
 * target row holds the weights w in -sum_o w_o log y_o; a one-hot row scaled
 * by a signed advantage gives the actor-critic log loss.
 */
struct Batch {
  Matrix inputs;
  Matrix targets;
  Matrix mask;

  int rows() const { return static_cast<int>(inputs.rows()); }
  void validate(int input_size, int output_size) const;
};

struct Layer {
  Matrix weights;  ///< fan_in x fan_out
  RowVector bias;
  Activation activation = Activation::linear;
};

/**
 * Fully connected network with exact backpropagation.
 *
 * Weights start uniform in +-sqrt(6 / (fan_in + fan_out)) and biases at 0.
 * Softmax is only allowed as the final layer. ReLU has derivative 0 at 0.
 */
class DenseNet {
 public:
  DenseNet(int input_size, std::vector<LayerSpec> layers, double learning_rate,
           std::uint64_t seed, Optimizer optimizer = Optimizer::sgd);

  int input_size() const { return input_size_; }
  int output_size() const;
  const std::vector<Layer>& layers() const { return layers_; }
  double learning_rate() const { return learning_rate_; }
  void set_learning_rate(double lr) { learning_rate_ = lr; }
  Optimizer optimizer() const { return optimizer_; }
  /// Rescales the gradient to this global L2 norm when it is larger; 0 disables.
  double max_grad_norm() const { return max_grad_norm_; }
  void set_max_grad_norm(double norm);

  Matrix forward(const Matrix& inputs) const;
  std::vector<double> forward(std::span<const double> input) const;

  double loss(const Batch& batch, Loss loss) const;
  /// Flattened gradient of the loss in parameter order.
  std::vector<double> gradient(const Batch& batch, Loss loss) const;
  /// Computes the loss, backpropagates and applies one optimizer step.
  /// Returns the loss before the step.
  double train_step(const Batch& batch, Loss loss);

  /// Weights then bias, layer by layer, weights row-major.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> values);
  std::size_t parameter_count() const;

  bool same_architecture(const DenseNet& other) const;
  /// FNV-1a over the parameter bytes.
  std::uint64_t checksum() const;

  void save(std::ostream& out) const;
  static DenseNet load(std::istream& in);

  /// Sets every weight and bias to `value`.
  void fill(double value);

 private:
  DenseNet() = default;

  struct Cache {
    std::vector<Matrix> pre;   // z per layer
    std::vector<Matrix> post;  // a per layer, post[0] = inputs
  };
  // With `relu_masks`, ReLU layers multiply by the given 0/1 pattern instead
  // of thresholding; finite differences then stay on one linear piece.
  Cache run(const Matrix& inputs, const std::vector<Matrix>* relu_masks = nullptr) const;
  friend double gradient_check(const DenseNet& net, const Batch& batch, Loss loss);
  double loss_from_output(const Matrix& out, const Batch& batch, Loss loss) const;
  std::vector<Layer> backward(const Cache& cache, const Batch& batch, Loss loss) const;
  void apply(std::vector<Layer> grads);

  int input_size_ = 0;
  std::vector<Layer> layers_;
  double learning_rate_ = 0.0;
  Optimizer optimizer_ = Optimizer::sgd;
  double max_grad_norm_ = 0.0;
  // Adam moments, same shapes as layers_.
  std::vector<Layer> first_moment_;
  std::vector<Layer> second_moment_;
  long long steps_ = 0;
};

/// Max over parameters of |g_a - g_n| / max(1e-8, |g_a| + |g_n|) with
/// central differences of step 1e-5. The numeric side keeps each ReLU's
/// on/off state from the unperturbed pass, which matches the derivative-0
/// convention at exact kinks.
double gradient_check(const DenseNet& net, const Batch& batch, Loss loss);

/// target <- tau * online + (1 - tau) * target, elementwise.
void soft_update(DenseNet& target, const DenseNet& online, double tau);

}  // namespace dmfg::nn

#endif  // DMFG_NN_HPP
