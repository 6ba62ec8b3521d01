#pragma once

// Shared feature extractor: a ReLU multilayer perceptron with an identity
// output layer, trained by mini-batch SGD through a linear softmax head.

#include "fedfda/common.hpp"
#include "fedfda/dataset.hpp"
#include "fedfda/gauss_stats.hpp"
#include "fedfda/gen_classifier.hpp"
#include "fedfda/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace fedfda {

struct MlpParams {
  std::vector<int> layer_dims;  // [input, hidden..., feature]
  std::vector<Matrix> weights;  // layer l: dims[l+1] x dims[l]
  std::vector<Vector> biases;   // layer l: dims[l+1]

  std::size_t num_layers() const { return weights.size(); }
  int input_dim() const { return layer_dims.front(); }
  int feature_dim() const { return layer_dims.back(); }
};

// Gradients and momentum buffers share the parameter layout.
using MlpGrads = MlpParams;

// Trainable linear softmax head used by the discriminative baselines.
struct LinearHead {
  Matrix weights;  // C x d
  Vector biases;   // C
};

struct TrainHyper {
  double lr = 0.01;
  double momentum = 0.5;
  double weight_decay = 5e-4;
  int batch_size = 50;
  int epochs = 5;
  double grad_clip = 0.0;  // max global L2 norm of a minibatch gradient; 0 disables
};

struct ForwardCache {
  std::vector<Matrix> inputs;  // input of layer l, n x dims[l]
  std::vector<Matrix> pre;     // pre-activation of layer l, n x dims[l+1]
};

struct ForwardResult {
  Matrix features;
  ForwardCache cache;
};

inline void validate_hyper(const TrainHyper& h) {
  detail::require(h.lr >= 0.0 && std::isfinite(h.lr), "lr must be >= 0");
  detail::require(h.momentum >= 0.0 && h.momentum < 1.0, "momentum out of [0,1)");
  detail::require(h.weight_decay >= 0.0, "weight_decay must be >= 0");
  detail::require(h.batch_size >= 1, "batch_size must be >= 1");
  detail::require(h.epochs >= 0, "epochs must be >= 0");
  detail::require(h.grad_clip >= 0.0 && std::isfinite(h.grad_clip), "grad_clip must be >= 0");
}

inline MlpParams zeros_like(const MlpParams& p) {
  MlpParams z;
  z.layer_dims = p.layer_dims;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    z.weights.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
    z.biases.push_back(Vector::Zero(p.biases[l].size()));
  }
  return z;
}

inline LinearHead zeros_like(const LinearHead& h) {
  return LinearHead{Matrix::Zero(h.weights.rows(), h.weights.cols()),
                    Vector::Zero(h.biases.size())};
}

/// He-style Gaussian initialization: N(0, 2/fan_in) for ReLU layers and
/// N(0, 1/fan_in) for the linear output layer. Biases start at zero.
inline MlpParams init_mlp(const std::vector<int>& layer_dims, Rng& rng) {
  detail::require(layer_dims.size() >= 2, "init_mlp: need at least 2 layer dims");
  for (int d : layer_dims) {
    detail::require(d >= 1, "init_mlp: layer dims must be positive");
  }
  MlpParams p;
  p.layer_dims = layer_dims;
  const std::size_t layers = layer_dims.size() - 1;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < layers; ++l) {
    const int fan_in = layer_dims[l];
    const int fan_out = layer_dims[l + 1];
    const double gain = (l + 1 == layers) ? 1.0 : 2.0;
    const double stddev = std::sqrt(gain / fan_in);
    Matrix w(fan_out, fan_in);
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) {
        w(r, c) = stddev * normal(rng);
      }
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(fan_out));
  }
  return p;
}

inline ForwardResult forward(const MlpParams& params, const Matrix& x) {
  detail::require(x.cols() == params.input_dim(), "forward: input has ", x.cols(),
                  " columns, network expects ", params.input_dim());
  ForwardResult out;
  Matrix act = x;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    Matrix pre = act * params.weights[l].transpose();
    pre.rowwise() += params.biases[l].transpose();
    out.cache.inputs.push_back(std::move(act));
    if (l + 1 < params.num_layers()) {
      act = pre.cwiseMax(0.0);
    } else {
      act = pre;
    }
    out.cache.pre.push_back(std::move(pre));
  }
  out.features = std::move(act);
  return out;
}

inline Matrix extract_features(const MlpParams& params, const Matrix& x) {
  return forward(params, x).features;
}

/// Backpropagates dL/d(features) through the network.
inline MlpGrads backward(const MlpParams& params, const ForwardCache& cache,
                         const Matrix& dfeatures) {
  MlpGrads g = zeros_like(params);
  Matrix delta = dfeatures;
  for (std::size_t l = params.num_layers(); l-- > 0;) {
    g.weights[l] = delta.transpose() * cache.inputs[l];
    g.biases[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = delta * params.weights[l];
      const Matrix& pre = cache.pre[l - 1];
      delta = delta.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

struct HeadBackward {
  double loss = 0.0;  // mean cross-entropy
  Matrix dfeatures;   // n x d
  Matrix dweights;    // C x d
  Vector dbiases;     // C
};

/// Mean softmax cross-entropy of a linear head and its gradients.
inline HeadBackward softmax_ce_backward(const Matrix& weights, const Vector& biases,
                                        const Matrix& z, std::span<const int> labels) {
  detail::require(static_cast<std::size_t>(z.rows()) == labels.size() && !labels.empty(),
                  "softmax_ce_backward: bad batch");
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  Matrix prob = log_softmax_rows(scores(weights, biases, z));
  HeadBackward out;
  for (Index j = 0; j < z.rows(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    detail::require(y >= 0 && y < weights.rows(), "label out of range");
    out.loss -= prob(j, y);
  }
  out.loss *= inv_n;
  prob = prob.array().exp();
  for (Index j = 0; j < z.rows(); ++j) {
    prob(j, labels[static_cast<std::size_t>(j)]) -= 1.0;
  }
  prob *= inv_n;
  out.dfeatures = prob * weights;
  out.dweights = prob.transpose() * z;
  out.dbiases = prob.colwise().sum().transpose();
  return out;
}

/// Exact gradient of the mean generative-classifier loss with the classifier
/// frozen.
inline MlpGrads backward_ce(const MlpParams& params, const ForwardCache& cache,
                            const GenerativeClassifier& clf, std::span<const int> labels) {
  const Matrix& z = cache.pre.back();
  const HeadBackward head = softmax_ce_backward(clf.weights, clf.biases, z, labels);
  return backward(params, cache, head.dfeatures);
}

namespace detail {

inline void momentum_update(Matrix& param, const Matrix& grad, Matrix& vel,
                            const TrainHyper& h) {
  vel = h.momentum * vel + grad + h.weight_decay * param;
  param -= h.lr * vel;
}

inline void momentum_update(Vector& param, const Vector& grad, Vector& vel,
                            const TrainHyper& h) {
  vel = h.momentum * vel + grad + h.weight_decay * param;
  param -= h.lr * vel;
}

inline double squared_norm(const MlpGrads& g) {
  double s = 0.0;
  for (std::size_t l = 0; l < g.num_layers(); ++l) {
    s += g.weights[l].squaredNorm() + g.biases[l].squaredNorm();
  }
  return s;
}

// Factor that brings a gradient of the given squared norm within max_norm.
inline double clip_factor(double squared, double max_norm) {
  if (max_norm <= 0.0) return 1.0;
  const double norm = std::sqrt(squared);
  return norm > max_norm ? max_norm / norm : 1.0;
}

inline void scale(MlpGrads& g, double f) {
  if (f == 1.0) return;
  for (std::size_t l = 0; l < g.num_layers(); ++l) {
    g.weights[l] *= f;
    g.biases[l] *= f;
  }
}

}  // namespace detail

/// Rescales `grads` in place so its global L2 norm is at most `max_norm`
/// (no-op for max_norm == 0). Returns the applied factor.
inline double clip_gradient(MlpGrads& grads, double max_norm) {
  const double f = detail::clip_factor(detail::squared_norm(grads), max_norm);
  detail::scale(grads, f);
  return f;
}

/// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v
inline void sgd_step(MlpParams& params, const MlpGrads& grads, MlpGrads& velocity,
                     const TrainHyper& hyper) {
  detail::require(grads.num_layers() == params.num_layers() &&
                      velocity.num_layers() == params.num_layers(),
                  "sgd_step: layer count mismatch");
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    detail::momentum_update(params.weights[l], grads.weights[l], velocity.weights[l], hyper);
    detail::momentum_update(params.biases[l], grads.biases[l], velocity.biases[l], hyper);
  }
}

inline void sgd_step(LinearHead& head, const Matrix& dweights, const Vector& dbiases,
                     LinearHead& velocity, const TrainHyper& hyper) {
  detail::momentum_update(head.weights, dweights, velocity.weights, hyper);
  detail::momentum_update(head.biases, dbiases, velocity.biases, hyper);
}

struct LocalTrainResult {
  MlpParams params;
  MlpGrads velocity;
  LabeledFeatures feature_log;  // features seen during the final epoch
};

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size,
                                                           Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t stop = std::min(n, start + bs);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

}  // namespace detail

/// Trains the extractor for `hyper.epochs` epochs against a frozen generative
/// classifier. The returned feature log holds the forward-pass features of
/// every sample during the final epoch, in the order batches were visited.
/// With zero epochs the log is a plain forward pass over the data.
inline LocalTrainResult train_local(const MlpParams& params, const GenerativeClassifier& clf,
                                    const Dataset& data, const TrainHyper& hyper, Rng& rng,
                                    const MlpGrads* velocity = nullptr) {
  validate_hyper(hyper);
  detail::require(!data.empty(), "train_local: empty shard");
  LocalTrainResult out{params, velocity != nullptr ? *velocity : zeros_like(params), {}};
  const auto n = static_cast<std::size_t>(data.size());

  if (hyper.epochs == 0) {
    out.feature_log = LabeledFeatures{extract_features(params, data.inputs), data.labels};
    return out;
  }

  out.feature_log.features.resize(data.size(), params.feature_dim());
  out.feature_log.labels.reserve(n);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const bool last = epoch + 1 == hyper.epochs;
    Index logged = 0;
    for (const auto& batch : detail::epoch_batches(n, hyper.batch_size, rng)) {
      const Matrix x = select_rows(data.inputs, batch);
      const std::vector<int> y = select(data.labels, batch);
      ForwardResult fwd = forward(out.params, x);
      if (last) {
        out.feature_log.features.middleRows(logged, fwd.features.rows()) = fwd.features;
        out.feature_log.labels.insert(out.feature_log.labels.end(), y.begin(), y.end());
        logged += fwd.features.rows();
      }
      MlpGrads g = backward_ce(out.params, fwd.cache, clf, y);
      clip_gradient(g, hyper.grad_clip);
      sgd_step(out.params, g, out.velocity, hyper);
    }
  }
  return out;
}

struct HeadTrainResult {
  MlpParams params;
  LinearHead head;
  MlpGrads velocity;
  LinearHead head_velocity;
};

/// Joint training of extractor and a trainable linear head (FedAvg style).
inline HeadTrainResult train_with_head(const MlpParams& params, const LinearHead& head,
                                       const Dataset& data, const TrainHyper& hyper, Rng& rng,
                                       const MlpGrads* velocity = nullptr,
                                       const LinearHead* head_velocity = nullptr) {
  validate_hyper(hyper);
  detail::require(!data.empty(), "train_with_head: empty shard");
  HeadTrainResult out{params, head,
                      velocity != nullptr ? *velocity : zeros_like(params),
                      head_velocity != nullptr ? *head_velocity : zeros_like(head)};
  const auto n = static_cast<std::size_t>(data.size());
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (const auto& batch : detail::epoch_batches(n, hyper.batch_size, rng)) {
      const Matrix x = select_rows(data.inputs, batch);
      const std::vector<int> y = select(data.labels, batch);
      ForwardResult fwd = forward(out.params, x);
      HeadBackward hb = softmax_ce_backward(out.head.weights, out.head.biases, fwd.features, y);
      MlpGrads g = backward(out.params, fwd.cache, hb.dfeatures);
      // one norm over extractor and head together
      const double f = detail::clip_factor(
          detail::squared_norm(g) + hb.dweights.squaredNorm() + hb.dbiases.squaredNorm(),
          hyper.grad_clip);
      detail::scale(g, f);
      hb.dweights *= f;
      hb.dbiases *= f;
      sgd_step(out.params, g, out.velocity, hyper);
      sgd_step(out.head, hb.dweights, hb.dbiases, out.head_velocity, hyper);
    }
  }
  return out;
}

inline LinearHead init_head(int num_classes, int feature_dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  LinearHead h{Matrix(num_classes, feature_dim), Vector::Zero(num_classes)};
  for (Index r = 0; r < h.weights.rows(); ++r) {
    for (Index c = 0; c < h.weights.cols(); ++c) {
      h.weights(r, c) = normal(rng);
    }
  }
  return h;
}

}  // namespace fedfda
