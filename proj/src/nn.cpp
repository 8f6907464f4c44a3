#include "dmfg/nn.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "dmfg/text.hpp"

namespace dmfg::nn {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;
constexpr char kMagic[] = "dmfg-net";
constexpr int kFormatVersion = 1;

void softmax_rows(Matrix& z) {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  if (s == "softmax") return Activation::softmax;
  throw InvalidInput("unknown activation '" + std::string(s) + "'");
}

Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw InvalidInput("unknown optimizer '" + std::string(s) + "'");
}

std::vector<Layer> zeros_like(const std::vector<Layer>& layers) {
  std::vector<Layer> out;
  for (const auto& l : layers) {
    out.push_back({Matrix::Zero(l.weights.rows(), l.weights.cols()), RowVector::Zero(l.bias.size()),
                   l.activation});
  }
  return out;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

std::string to_string(Loss l) {
  switch (l) {
    case Loss::mse: return "mse";
    case Loss::cross_entropy: return "cross_entropy";
    case Loss::weighted_log_prob: return "weighted_log_prob";
  }
  return "?";
}

std::string to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

void Batch::validate(int input_size, int output_size) const {
  if (inputs.rows() == 0) throw InvalidInput("empty batch");
  if (inputs.cols() != input_size) {
    throw InvalidInput("batch input width " + std::to_string(inputs.cols()) + " != network input " +
                       std::to_string(input_size));
  }
  if (targets.rows() != inputs.rows() || targets.cols() != output_size) {
    throw InvalidInput("batch targets do not match inputs and network output");
  }
  if (mask.size() != 0 && (mask.rows() != targets.rows() || mask.cols() != targets.cols())) {
    throw InvalidInput("batch mask shape does not match targets");
  }
}

DenseNet::DenseNet(int input_size, std::vector<LayerSpec> specs, double learning_rate,
                   std::uint64_t seed, Optimizer optimizer)
    : input_size_(input_size), learning_rate_(learning_rate), optimizer_(optimizer) {
  if (input_size <= 0) throw InvalidInput("network input size must be positive");
  if (specs.empty()) throw InvalidInput("network needs at least one layer");
  Rng rng(seed);
  int fan_in = input_size;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    if (spec.output_size <= 0) throw InvalidInput("layer sizes must be positive");
    if (spec.activation == Activation::softmax && i + 1 != specs.size()) {
      throw InvalidInput("softmax is only allowed as the final layer");
    }
    const double limit = std::sqrt(6.0 / (fan_in + spec.output_size));
    std::uniform_real_distribution<double> init(-limit, limit);
    Layer layer;
    layer.weights.resize(fan_in, spec.output_size);
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = init(rng);
    }
    layer.bias = RowVector::Zero(spec.output_size);
    layer.activation = spec.activation;
    layers_.push_back(std::move(layer));
    fan_in = spec.output_size;
  }
  if (optimizer_ == Optimizer::adam) {
    first_moment_ = zeros_like(layers_);
    second_moment_ = zeros_like(layers_);
  }
}

int DenseNet::output_size() const { return static_cast<int>(layers_.back().bias.size()); }

DenseNet::Cache DenseNet::run(const Matrix& inputs, const std::vector<Matrix>* relu_masks) const {
  if (inputs.cols() != input_size_) {
    throw InvalidInput("input width " + std::to_string(inputs.cols()) + " != network input " +
                       std::to_string(input_size_));
  }
  Cache c;
  c.post.push_back(inputs);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    Matrix z = c.post.back() * layer.weights;
    z.rowwise() += layer.bias;
    Matrix a = z;
    if (layer.activation == Activation::relu) {
      a = relu_masks ? Matrix(a.cwiseProduct((*relu_masks)[k])) : Matrix(a.cwiseMax(0.0));
    } else if (layer.activation == Activation::softmax) {
      softmax_rows(a);
    }
    c.pre.push_back(std::move(z));
    c.post.push_back(std::move(a));
  }
  return c;
}

Matrix DenseNet::forward(const Matrix& inputs) const { return run(inputs).post.back(); }

std::vector<double> DenseNet::forward(std::span<const double> input) const {
  Matrix x(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t i = 0; i < input.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = input[i];
  const Matrix y = forward(x);
  return std::vector<double>(y.data(), y.data() + y.size());
}

double DenseNet::loss_from_output(const Matrix& out, const Batch& batch, Loss loss) const {
  const double rows = static_cast<double>(batch.rows());
  if (loss == Loss::mse) {
    const Matrix diff = out - batch.targets;
    if (batch.mask.size() == 0) return diff.squaredNorm() / static_cast<double>(diff.size());
    const double selected = batch.mask.sum();
    if (selected <= 0.0) return 0.0;
    return (diff.array().square() * batch.mask.array()).sum() / selected;
  }
  if (layers_.back().activation != Activation::softmax) {
    throw InvalidInput(to_string(loss) + " loss needs a softmax output layer");
  }
  double total = 0.0;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const double w = batch.targets(r, c);
      if (w != 0.0) total -= w * std::log(std::max(out(r, c), 1e-300));
    }
  }
  return total / rows;
}

double DenseNet::loss(const Batch& batch, Loss loss) const {
  batch.validate(input_size_, output_size());
  return loss_from_output(forward(batch.inputs), batch, loss);
}

std::vector<Layer> DenseNet::backward(const Cache& cache, const Batch& batch, Loss loss) const {
  const Matrix& out = cache.post.back();
  const double rows = static_cast<double>(batch.rows());
  Matrix delta;  // dL/dz of the current layer
  const Activation last = layers_.back().activation;
  if (loss == Loss::mse) {
    Matrix g = out - batch.targets;
    if (batch.mask.size() == 0) {
      g *= 2.0 / static_cast<double>(g.size());
    } else {
      const double selected = batch.mask.sum();
      g = (g.array() * batch.mask.array()).matrix() * (selected > 0.0 ? 2.0 / selected : 0.0);
    }
    if (last == Activation::softmax) {
      // J^T g for the softmax Jacobian diag(y) - y y^T.
      const Eigen::VectorXd dot = (g.array() * out.array()).rowwise().sum();
      delta = out.array() * (g.colwise() - dot).array();
    } else if (last == Activation::relu) {
      delta = (g.array() * (cache.pre.back().array() > 0.0).cast<double>()).matrix();
    } else {
      delta = std::move(g);
    }
  } else {
    if (last != Activation::softmax) throw InvalidInput(to_string(loss) + " loss needs a softmax output layer");
    const Eigen::VectorXd mass = batch.targets.rowwise().sum();
    delta = (out.array().colwise() * mass.array()).matrix() - batch.targets;
    delta /= rows;
  }
  std::vector<Layer> grads(layers_.size());
  for (std::size_t k = layers_.size(); k-- > 0;) {
    grads[k].weights = cache.post[k].transpose() * delta;
    grads[k].bias = delta.colwise().sum();
    grads[k].activation = layers_[k].activation;
    if (k == 0) break;
    Matrix upstream = delta * layers_[k].weights.transpose();
    if (layers_[k - 1].activation == Activation::relu) {
      upstream = (upstream.array() * (cache.pre[k - 1].array() > 0.0).cast<double>()).matrix();
    }
    delta = std::move(upstream);
  }
  return grads;
}

std::vector<double> DenseNet::gradient(const Batch& batch, Loss loss) const {
  batch.validate(input_size_, output_size());
  const auto grads = backward(run(batch.inputs), batch, loss);
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& g : grads) {
    flat.insert(flat.end(), g.weights.data(), g.weights.data() + g.weights.size());
    flat.insert(flat.end(), g.bias.data(), g.bias.data() + g.bias.size());
  }
  return flat;
}

void DenseNet::set_max_grad_norm(double norm) {
  if (!(norm >= 0.0) || !std::isfinite(norm)) throw InvalidInput("max_grad_norm must be finite and >= 0");
  max_grad_norm_ = norm;
}

void DenseNet::apply(std::vector<Layer> grads) {
  if (max_grad_norm_ > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.weights.squaredNorm() + g.bias.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_grad_norm_) {
      const double scale = max_grad_norm_ / norm;
      for (auto& g : grads) {
        g.weights *= scale;
        g.bias *= scale;
      }
    }
  }
  if (optimizer_ == Optimizer::sgd) {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      layers_[k].weights -= learning_rate_ * grads[k].weights;
      layers_[k].bias -= learning_rate_ * grads[k].bias;
    }
    return;
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(steps_));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = (kAdamBeta2 * v.array() + (1.0 - kAdamBeta2) * g.array().square()).matrix();
    param.array() -= learning_rate_ * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEpsilon);
  };
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    update(layers_[k].weights, first_moment_[k].weights, second_moment_[k].weights, grads[k].weights);
    update(layers_[k].bias, first_moment_[k].bias, second_moment_[k].bias, grads[k].bias);
  }
}

double DenseNet::train_step(const Batch& batch, Loss loss) {
  batch.validate(input_size_, output_size());
  const Cache cache = run(batch.inputs);
  const double value = loss_from_output(cache.post.back(), batch, loss);
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite " << to_string(loss) << " loss on a batch of " << batch.rows()
        << " rows (max |output| " << cache.post.back().cwiseAbs().maxCoeff() << ", max |target| "
        << batch.targets.cwiseAbs().maxCoeff() << ")";
    throw NonFiniteLoss(msg.str());
  }
  apply(backward(cache, batch, loss));
  return value;
}

std::vector<double> DenseNet::parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers_) {
    flat.insert(flat.end(), l.weights.data(), l.weights.data() + l.weights.size());
    flat.insert(flat.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return flat;
}

void DenseNet::set_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) throw InvalidInput("parameter vector has the wrong length");
  std::size_t i = 0;
  for (auto& l : layers_) {
    std::memcpy(l.weights.data(), values.data() + i, sizeof(double) * static_cast<std::size_t>(l.weights.size()));
    i += static_cast<std::size_t>(l.weights.size());
    std::memcpy(l.bias.data(), values.data() + i, sizeof(double) * static_cast<std::size_t>(l.bias.size()));
    i += static_cast<std::size_t>(l.bias.size());
  }
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

void DenseNet::fill(double value) {
  for (auto& l : layers_) {
    l.weights.setConstant(value);
    l.bias.setConstant(value);
  }
}

bool DenseNet::same_architecture(const DenseNet& other) const {
  if (input_size_ != other.input_size_ || layers_.size() != other.layers_.size()) return false;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (layers_[k].bias.size() != other.layers_[k].bias.size() ||
        layers_[k].activation != other.layers_[k].activation) {
      return false;
    }
  }
  return true;
}

std::uint64_t DenseNet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : parameters()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void DenseNet::save(std::ostream& out) const {
  out << kMagic << " v" << kFormatVersion << " in=" << input_size_;
  for (const auto& l : layers_) out << ' ' << l.bias.size() << ':' << to_string(l.activation);
  out << " opt=" << to_string(optimizer_) << " lr=" << text::format_double(learning_rate_);
  if (max_grad_norm_ > 0.0) out << " clip=" << text::format_double(max_grad_norm_);
  out << '\n';
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
        if (c) out << ' ';
        out << text::format_double(l.weights(r, c));
      }
      out << '\n';
    }
    for (Eigen::Index c = 0; c < l.bias.size(); ++c) {
      if (c) out << ' ';
      out << text::format_double(l.bias(c));
    }
    out << '\n';
  }
}

DenseNet DenseNet::load(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw InvalidInput("empty network checkpoint");
  const auto tok = text::split_whitespace(header);
  if (tok.size() < 4 || tok[0] != kMagic) throw InvalidInput("not a dmfg network checkpoint");
  if (tok[1] != "v" + std::to_string(kFormatVersion)) {
    throw InvalidInput("unsupported checkpoint version " + std::string(tok[1]));
  }
  DenseNet net;
  std::vector<LayerSpec> specs;
  for (std::size_t i = 2; i < tok.size(); ++i) {
    const auto t = tok[i];
    if (t.starts_with("in=")) {
      net.input_size_ = static_cast<int>(text::parse_int(t.substr(3)).value_or(0));
    } else if (t.starts_with("opt=")) {
      net.optimizer_ = parse_optimizer(t.substr(4));
    } else if (t.starts_with("clip=")) {
      net.max_grad_norm_ = text::parse_double(t.substr(5)).value_or(0.0);
    } else if (t.starts_with("lr=")) {
      net.learning_rate_ = text::parse_double(t.substr(3)).value_or(0.0);
    } else {
      const auto colon = t.find(':');
      if (colon == std::string_view::npos) throw InvalidInput("bad layer descriptor '" + std::string(t) + "'");
      const auto size = text::parse_int(t.substr(0, colon));
      if (!size || *size <= 0) throw InvalidInput("bad layer size in '" + std::string(t) + "'");
      specs.push_back({static_cast<int>(*size), parse_activation(t.substr(colon + 1))});
    }
  }
  if (net.input_size_ <= 0 || specs.empty()) throw InvalidInput("checkpoint header lacks the architecture");
  int fan_in = net.input_size_;
  std::string line;
  auto read_row = [&](Eigen::Index expected) {
    if (!std::getline(in, line)) throw InvalidInput("checkpoint truncated");
    const auto values = text::split_whitespace(line);
    if (static_cast<Eigen::Index>(values.size()) != expected) throw InvalidInput("checkpoint row has the wrong width");
    std::vector<double> row;
    for (auto v : values) {
      auto d = text::parse_double(v);
      if (!d) throw InvalidInput("bad number in checkpoint: " + std::string(v));
      row.push_back(*d);
    }
    return row;
  };
  for (const auto& spec : specs) {
    Layer l;
    l.activation = spec.activation;
    l.weights.resize(fan_in, spec.output_size);
    for (int r = 0; r < fan_in; ++r) {
      const auto row = read_row(spec.output_size);
      for (int c = 0; c < spec.output_size; ++c) l.weights(r, c) = row[static_cast<std::size_t>(c)];
    }
    const auto bias = read_row(spec.output_size);
    l.bias = Eigen::Map<const RowVector>(bias.data(), spec.output_size);
    net.layers_.push_back(std::move(l));
    fan_in = spec.output_size;
  }
  if (net.optimizer_ == Optimizer::adam) {
    net.first_moment_ = zeros_like(net.layers_);
    net.second_moment_ = zeros_like(net.layers_);
  }
  return net;
}

double gradient_check(const DenseNet& net, const Batch& batch, Loss loss) {
  constexpr double kStep = 1e-5;
  const std::vector<double> analytic = net.gradient(batch, loss);
  const DenseNet::Cache base = net.run(batch.inputs);
  std::vector<Matrix> masks;
  for (const auto& z : base.pre) masks.push_back((z.array() > 0.0).cast<double>().matrix());
  std::vector<double> params = net.parameters();
  DenseNet probe = net;
  auto piece_loss = [&] { return probe.loss_from_output(probe.run(batch.inputs, &masks).post.back(), batch, loss); };
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double original = params[i];
    params[i] = original + kStep;
    probe.set_parameters(params);
    const double up = piece_loss();
    params[i] = original - kStep;
    probe.set_parameters(params);
    const double down = piece_loss();
    params[i] = original;
    const double numeric = (up - down) / (2.0 * kStep);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

void soft_update(DenseNet& target, const DenseNet& online, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidInput("soft update tau must lie in (0, 1]");
  if (!target.same_architecture(online)) throw InvalidInput("soft update between different architectures");
  std::vector<double> t = target.parameters();
  const std::vector<double> o = online.parameters();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * o[i] + (1.0 - tau) * t[i];
  target.set_parameters(t);
}

}  // namespace dmfg::nn
