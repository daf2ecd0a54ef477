// Compact convolutional stack with explicit reverse-mode gradients and the
// AdamW update. Templated on the scalar type: training runs in float,
// finite-difference checks instantiate the same code in double.
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace midiseg::model {

struct ShapeMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

template <typename S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel(shape)), S(0));
  }

  static std::int64_t numel(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                           [](std::int64_t a, int b) { return a * b; });
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

struct ConvSpec {
  int out_channels = 16;
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int padding = 1;
};

struct InputShape {
  int channels = 3;
  int height = 128;
  int width = 512;
};

// Defaults give the compact stack: 16/32/64/64-channel 3x3 conv blocks with
// 2x2 max-pool after each, global average pool, dense 64, dense 1.
struct ModelConfig {
  InputShape input;
  std::vector<ConvSpec> conv = {{16}, {32}, {64}, {64}};
  int pool_size = 2;
  int hidden = 64;
  std::uint64_t init_seed = 0;
};

template <typename S>
struct ForwardCache {
  // Per conv block: im2col matrix, pre-activation conv output, pooled output
  // (post-ReLU) and the argmax index of each pooled cell.
  std::vector<std::vector<S>> im2col;
  std::vector<std::vector<S>> preact;
  std::vector<std::vector<S>> pooled;
  std::vector<std::vector<std::int32_t>> argmax;
  std::vector<S> gap;
  std::vector<S> hidden_pre;
  std::vector<S> hidden_act;
  S logit = S(0);

  // Scratch for backward.
  std::vector<S> d_plane_a;
  std::vector<S> d_plane_b;
  std::vector<S> d_cols;
  std::vector<S> d_gap;
  std::vector<S> d_hidden;
};

template <typename S>
class NetworkT {
 public:
  explicit NetworkT(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  std::vector<TensorT<S>>& params() { return params_; }
  const std::vector<TensorT<S>>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  // True for weight tensors; biases are excluded from weight decay.
  const std::vector<bool>& decay_mask() const { return decay_; }
  std::int64_t param_count() const;

  // Logit for one input of config().input shape. The cache keeps everything
  // backward needs and is reusable across calls.
  S forward(std::span<const S> input, ForwardCache<S>& cache) const;

  // Accumulates d(loss)/d(param) into `grads` given d(loss)/d(logit). Reads
  // the activations recorded by the matching forward() and reuses the cache's
  // scratch buffers.
  void backward(ForwardCache<S>& cache, S dlogit, std::vector<TensorT<S>>& grads) const;

  std::vector<TensorT<S>> make_grads() const;

 private:
  struct LayerDims {
    int in_c, in_h, in_w;
    int out_h, out_w;    // after convolution
    int pool_h, pool_w;  // after max pooling
  };

  ModelConfig config_;
  std::vector<LayerDims> dims_;
  std::vector<TensorT<S>> params_;
  std::vector<std::string> names_;
  std::vector<bool> decay_;
};

template <typename S>
inline S sigmoid(S z) {
  if (z >= S(0)) {
    return S(1) / (S(1) + std::exp(-z));
  }
  S e = std::exp(z);
  return e / (S(1) + e);
}

// Binary cross-entropy on top of a forward pass; returns the loss and
// accumulates grad_scale * d(loss)/d(param). d(loss)/d(logit) = p - y.
template <typename S>
double loss_and_gradients(const NetworkT<S>& net, std::span<const S> input, int label,
                          double grad_scale, std::vector<TensorT<S>>& grads,
                          ForwardCache<S>& cache);

template <typename S>
struct AdamWState {
  std::vector<TensorT<S>> m;
  std::vector<TensorT<S>> v;
};

// Bias-corrected Adam moments plus decoupled decay:
//   p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p)
// Decay applies only where apply_decay is set (weights, not biases).
template <typename S>
void adamw_step(std::vector<TensorT<S>>& params, const std::vector<TensorT<S>>& grads,
                const std::vector<bool>& apply_decay, AdamWState<S>& state, std::int64_t t,
                double lr, double wd, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

extern template struct TensorT<float>;
extern template struct TensorT<double>;
extern template class NetworkT<float>;
extern template class NetworkT<double>;
extern template double loss_and_gradients<float>(const NetworkT<float>&, std::span<const float>,
                                                 int, double, std::vector<TensorT<float>>&,
                                                 ForwardCache<float>&);
extern template double loss_and_gradients<double>(const NetworkT<double>&,
                                                  std::span<const double>, int, double,
                                                  std::vector<TensorT<double>>&,
                                                  ForwardCache<double>&);
extern template void adamw_step<float>(std::vector<TensorT<float>>&,
                                       const std::vector<TensorT<float>>&,
                                       const std::vector<bool>&, AdamWState<float>&, std::int64_t,
                                       double, double, double, double, double);
extern template void adamw_step<double>(std::vector<TensorT<double>>&,
                                        const std::vector<TensorT<double>>&,
                                        const std::vector<bool>&, AdamWState<double>&, std::int64_t,
                                        double, double, double, double, double);

}  // namespace midiseg::model
