#include "midiseg/network.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>

namespace midiseg::model {
namespace {

template <typename S>
using MatrixS = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VectorS = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// [0, 1) from the top 53 bits. std::uniform_real_distribution is
// implementation-defined, so initialization would not be reproducible with it.
inline double next_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename S>
void he_uniform_fill(TensorT<S>& t, std::int64_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (S& w : t.data) {
    w = static_cast<S>((2.0 * next_unit(rng) - 1.0) * limit);
  }
}

}  // namespace

template <typename S>
NetworkT<S>::NetworkT(const ModelConfig& config) : config_(config) {
  if (config_.input.channels < 1 || config_.input.height < 1 || config_.input.width < 1) {
    throw std::invalid_argument("network: input shape must be positive");
  }
  if (config_.pool_size < 1) {
    throw std::invalid_argument("network: pool_size must be >= 1");
  }
  if (config_.hidden < 1) {
    throw std::invalid_argument("network: hidden width must be >= 1");
  }

  std::mt19937_64 rng(config_.init_seed);

  int c = config_.input.channels;
  int h = config_.input.height;
  int w = config_.input.width;
  for (std::size_t i = 0; i < config_.conv.size(); ++i) {
    const ConvSpec& spec = config_.conv[i];
    if (spec.out_channels < 1 || spec.kernel_h < 1 || spec.kernel_w < 1 || spec.stride < 1 ||
        spec.padding < 0) {
      throw std::invalid_argument("network: malformed conv spec");
    }
    LayerDims d;
    d.in_c = c;
    d.in_h = h;
    d.in_w = w;
    d.out_h = (h + 2 * spec.padding - spec.kernel_h) / spec.stride + 1;
    d.out_w = (w + 2 * spec.padding - spec.kernel_w) / spec.stride + 1;
    if (d.out_h < 1 || d.out_w < 1) {
      throw std::invalid_argument("network: conv " + std::to_string(i) + " output is empty");
    }
    // Max pooling drops any remainder rows/columns (floor division).
    d.pool_h = d.out_h / config_.pool_size;
    d.pool_w = d.out_w / config_.pool_size;
    if (d.pool_h < 1 || d.pool_w < 1) {
      throw std::invalid_argument("network: pool " + std::to_string(i) + " output is empty");
    }
    dims_.push_back(d);

    TensorT<S> wt({spec.out_channels, c, spec.kernel_h, spec.kernel_w});
    he_uniform_fill(wt, std::int64_t{c} * spec.kernel_h * spec.kernel_w, rng);
    params_.push_back(std::move(wt));
    names_.push_back("conv" + std::to_string(i) + ".weight");
    decay_.push_back(true);
    params_.emplace_back(std::vector<int>{spec.out_channels});
    names_.push_back("conv" + std::to_string(i) + ".bias");
    decay_.push_back(false);

    c = spec.out_channels;
    h = d.pool_h;
    w = d.pool_w;
  }

  // Global average pooling reduces each channel to one feature, so the dense
  // head only depends on the final channel count.
  TensorT<S> w1({config_.hidden, c});
  he_uniform_fill(w1, c, rng);
  params_.push_back(std::move(w1));
  names_.push_back("hidden.weight");
  decay_.push_back(true);
  params_.emplace_back(std::vector<int>{config_.hidden});
  names_.push_back("hidden.bias");
  decay_.push_back(false);

  TensorT<S> w2({1, config_.hidden});
  he_uniform_fill(w2, config_.hidden, rng);
  params_.push_back(std::move(w2));
  names_.push_back("output.weight");
  decay_.push_back(true);
  params_.emplace_back(std::vector<int>{1});
  names_.push_back("output.bias");
  decay_.push_back(false);
}

template <typename S>
std::int64_t NetworkT<S>::param_count() const {
  std::int64_t n = 0;
  for (const TensorT<S>& p : params_) {
    n += p.size();
  }
  return n;
}

template <typename S>
std::vector<TensorT<S>> NetworkT<S>::make_grads() const {
  std::vector<TensorT<S>> grads;
  grads.reserve(params_.size());
  for (const TensorT<S>& p : params_) {
    grads.emplace_back(p.shape);
  }
  return grads;
}

template <typename S>
S NetworkT<S>::forward(std::span<const S> input, ForwardCache<S>& cache) const {
  const std::int64_t expected =
      std::int64_t{config_.input.channels} * config_.input.height * config_.input.width;
  if (static_cast<std::int64_t>(input.size()) != expected) {
    throw ShapeMismatch("network: input has " + std::to_string(input.size()) +
                        " values, expected " + std::to_string(expected));
  }

  const std::size_t n_conv = config_.conv.size();
  cache.im2col.resize(n_conv);
  cache.preact.resize(n_conv);
  cache.pooled.resize(n_conv);
  cache.argmax.resize(n_conv);

  const S* cur = input.data();
  for (std::size_t i = 0; i < n_conv; ++i) {
    const ConvSpec& spec = config_.conv[i];
    const LayerDims& d = dims_[i];
    const int k_rows = d.in_c * spec.kernel_h * spec.kernel_w;
    const std::int64_t npos = std::int64_t{d.out_h} * d.out_w;

    // im2col: row = (in channel, ky, kx), column = output position. The GEMM
    // below then computes every output channel at once.
    std::vector<S>& cols = cache.im2col[i];
    cols.resize(static_cast<std::size_t>(k_rows) * npos);
    std::int64_t r = 0;
    for (int ic = 0; ic < d.in_c; ++ic) {
      const S* plane = cur + std::int64_t{ic} * d.in_h * d.in_w;
      for (int ky = 0; ky < spec.kernel_h; ++ky) {
        for (int kx = 0; kx < spec.kernel_w; ++kx, ++r) {
          S* dst = cols.data() + r * npos;
          for (int oh = 0; oh < d.out_h; ++oh) {
            const int iy = oh * spec.stride - spec.padding + ky;
            if (iy < 0 || iy >= d.in_h) {
              std::fill(dst, dst + d.out_w, S(0));
              dst += d.out_w;
              continue;
            }
            const S* src_row = plane + std::int64_t{iy} * d.in_w;
            for (int ow = 0; ow < d.out_w; ++ow, ++dst) {
              const int ix = ow * spec.stride - spec.padding + kx;
              *dst = (ix >= 0 && ix < d.in_w) ? src_row[ix] : S(0);
            }
          }
        }
      }
    }

    std::vector<S>& pre = cache.preact[i];
    pre.resize(static_cast<std::size_t>(spec.out_channels) * npos);
    Eigen::Map<const MatrixS<S>> kA(params_[2 * i].data.data(), spec.out_channels, k_rows);
    Eigen::Map<const MatrixS<S>> kB(cols.data(), k_rows, npos);
    Eigen::Map<MatrixS<S>> kC(pre.data(), spec.out_channels, npos);
    kC.noalias() = kA * kB;
    kC.colwise() += Eigen::Map<const VectorS<S>>(params_[2 * i + 1].data.data(), spec.out_channels);

    // Max pool over the pre-activation, then ReLU the pooled value; ReLU is
    // monotone, so this equals pooling after ReLU and needs one argmax only.
    std::vector<S>& pooled = cache.pooled[i];
    std::vector<std::int32_t>& amax = cache.argmax[i];
    pooled.resize(static_cast<std::size_t>(spec.out_channels) * d.pool_h * d.pool_w);
    amax.resize(pooled.size());
    const int p = config_.pool_size;
    std::int64_t out_idx = 0;
    for (int oc = 0; oc < spec.out_channels; ++oc) {
      const S* plane = pre.data() + std::int64_t{oc} * npos;
      const std::int64_t plane_base = std::int64_t{oc} * npos;
      for (int py = 0; py < d.pool_h; ++py) {
        for (int px = 0; px < d.pool_w; ++px, ++out_idx) {
          std::int64_t best = std::int64_t{py * p} * d.out_w + px * p;
          S best_v = plane[best];
          for (int wy = 0; wy < p; ++wy) {
            const std::int64_t row = std::int64_t{py * p + wy} * d.out_w + px * p;
            for (int wx = 0; wx < p; ++wx) {
              if (plane[row + wx] > best_v) {
                best_v = plane[row + wx];
                best = row + wx;
              }
            }
          }
          pooled[out_idx] = best_v > S(0) ? best_v : S(0);
          amax[out_idx] = static_cast<std::int32_t>(plane_base + best);
        }
      }
    }
    cur = pooled.data();
  }

  int gap_c = config_.input.channels;
  std::int64_t plane = std::int64_t{config_.input.height} * config_.input.width;
  if (n_conv > 0) {
    gap_c = config_.conv.back().out_channels;
    plane = std::int64_t{dims_.back().pool_h} * dims_.back().pool_w;
  }
  cache.gap.resize(gap_c);
  for (int ch = 0; ch < gap_c; ++ch) {
    const S* pl = cur + ch * plane;
    double acc = 0.0;
    for (std::int64_t j = 0; j < plane; ++j) {
      acc += static_cast<double>(pl[j]);
    }
    cache.gap[ch] = static_cast<S>(acc / static_cast<double>(plane));
  }

  const std::size_t base = 2 * n_conv;
  cache.hidden_pre.resize(config_.hidden);
  cache.hidden_act.resize(config_.hidden);
  {
    Eigen::Map<const MatrixS<S>> W1(params_[base].data.data(), config_.hidden, gap_c);
    Eigen::Map<const VectorS<S>> g(cache.gap.data(), gap_c);
    Eigen::Map<VectorS<S>> hp(cache.hidden_pre.data(), config_.hidden);
    hp.noalias() = W1 * g;
    hp += Eigen::Map<const VectorS<S>>(params_[base + 1].data.data(), config_.hidden);
  }
  const S* w2 = params_[base + 2].data.data();
  S z = params_[base + 3].data[0];
  for (int j = 0; j < config_.hidden; ++j) {
    const S a = cache.hidden_pre[j] > S(0) ? cache.hidden_pre[j] : S(0);
    cache.hidden_act[j] = a;
    z += w2[j] * a;
  }
  cache.logit = z;
  return z;
}

template <typename S>
void NetworkT<S>::backward(ForwardCache<S>& cache, S dlogit,
                           std::vector<TensorT<S>>& grads) const {
  if (grads.size() != params_.size()) {
    throw ShapeMismatch("network: gradient set has wrong tensor count");
  }
  const std::size_t n_conv = config_.conv.size();
  int gap_c = config_.input.channels;
  std::int64_t plane = std::int64_t{config_.input.height} * config_.input.width;
  if (n_conv > 0) {
    gap_c = config_.conv.back().out_channels;
    plane = std::int64_t{dims_.back().pool_h} * dims_.back().pool_w;
  }

  const std::size_t base = 2 * n_conv;
  TensorT<S>& gw2 = grads[base + 2];
  TensorT<S>& gb2 = grads[base + 3];
  gb2.data[0] += dlogit;
  const S* w2 = params_[base + 2].data.data();
  cache.d_hidden.resize(config_.hidden);
  for (int j = 0; j < config_.hidden; ++j) {
    gw2.data[j] += dlogit * cache.hidden_act[j];
    cache.d_hidden[j] = cache.hidden_pre[j] > S(0) ? dlogit * w2[j] : S(0);
  }

  TensorT<S>& gw1 = grads[base];
  TensorT<S>& gb1 = grads[base + 1];
  const S* w1 = params_[base].data.data();
  cache.d_gap.assign(gap_c, S(0));
  for (int j = 0; j < config_.hidden; ++j) {
    const S dj = cache.d_hidden[j];
    gb1.data[j] += dj;
    if (dj == S(0)) {
      continue;
    }
    S* grow = gw1.data.data() + std::int64_t{j} * gap_c;
    const S* wrow = w1 + std::int64_t{j} * gap_c;
    for (int ch = 0; ch < gap_c; ++ch) {
      grow[ch] += dj * cache.gap[ch];
      cache.d_gap[ch] += dj * wrow[ch];
    }
  }

  if (n_conv == 0) {
    return;  // gradient w.r.t. the raw input is not needed
  }

  // d_plane_a holds the gradient w.r.t. the current layer's pooled output.
  cache.d_plane_a.resize(static_cast<std::size_t>(gap_c) * plane);
  for (int ch = 0; ch < gap_c; ++ch) {
    const S dv = static_cast<S>(static_cast<double>(cache.d_gap[ch]) / static_cast<double>(plane));
    S* dst = cache.d_plane_a.data() + ch * plane;
    std::fill(dst, dst + plane, dv);
  }

  for (std::size_t ii = n_conv; ii-- > 0;) {
    const ConvSpec& spec = config_.conv[ii];
    const LayerDims& d = dims_[ii];
    const int k_rows = d.in_c * spec.kernel_h * spec.kernel_w;
    const std::int64_t npos = std::int64_t{d.out_h} * d.out_w;

    // Pool + ReLU backward: each pooled cell routes to its argmax, gated on
    // the pre-activation sign.
    cache.d_plane_b.assign(static_cast<std::size_t>(spec.out_channels) * npos, S(0));
    const std::vector<S>& pre = cache.preact[ii];
    const std::vector<std::int32_t>& amax = cache.argmax[ii];
    for (std::size_t j = 0; j < amax.size(); ++j) {
      const std::int32_t idx = amax[j];
      if (pre[idx] > S(0)) {
        cache.d_plane_b[idx] += cache.d_plane_a[j];
      }
    }

    TensorT<S>& gw = grads[2 * ii];
    TensorT<S>& gb = grads[2 * ii + 1];
    Eigen::Map<const MatrixS<S>> dC(cache.d_plane_b.data(), spec.out_channels, npos);
    Eigen::Map<VectorS<S>>(gb.data.data(), spec.out_channels) += dC.rowwise().sum();
    Eigen::Map<const MatrixS<S>> kB(cache.im2col[ii].data(), k_rows, npos);
    Eigen::Map<MatrixS<S>> dA(gw.data.data(), spec.out_channels, k_rows);
    dA.noalias() += dC * kB.transpose();

    if (ii == 0) {
      break;  // no parameters below the first conv block
    }
    cache.d_cols.resize(static_cast<std::size_t>(k_rows) * npos);
    Eigen::Map<const MatrixS<S>> kA(params_[2 * ii].data.data(), spec.out_channels, k_rows);
    Eigen::Map<MatrixS<S>> dB(cache.d_cols.data(), k_rows, npos);
    dB.noalias() = kA.transpose() * dC;

    // col2im: scatter column gradients back onto the input planes.
    cache.d_plane_a.assign(static_cast<std::size_t>(d.in_c) * d.in_h * d.in_w, S(0));
    std::int64_t r = 0;
    for (int ic = 0; ic < d.in_c; ++ic) {
      S* plane_g = cache.d_plane_a.data() + std::int64_t{ic} * d.in_h * d.in_w;
      for (int ky = 0; ky < spec.kernel_h; ++ky) {
        for (int kx = 0; kx < spec.kernel_w; ++kx, ++r) {
          const S* src = cache.d_cols.data() + r * npos;
          for (int oh = 0; oh < d.out_h; ++oh) {
            const int iy = oh * spec.stride - spec.padding + ky;
            if (iy < 0 || iy >= d.in_h) {
              src += d.out_w;
              continue;
            }
            S* dst_row = plane_g + std::int64_t{iy} * d.in_w;
            for (int ow = 0; ow < d.out_w; ++ow, ++src) {
              const int ix = ow * spec.stride - spec.padding + kx;
              if (ix >= 0 && ix < d.in_w) {
                dst_row[ix] += *src;
              }
            }
          }
        }
      }
    }
  }
}

template <typename S>
double loss_and_gradients(const NetworkT<S>& net, std::span<const S> input, int label,
                          double grad_scale, std::vector<TensorT<S>>& grads,
                          ForwardCache<S>& cache) {
  const S z = net.forward(input, cache);
  const double p = sigmoid(static_cast<double>(z));
  const double y = label ? 1.0 : 0.0;
  constexpr double kEps = 1e-7;
  const double pc = std::clamp(p, kEps, 1.0 - kEps);
  const double loss = -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
  net.backward(cache, static_cast<S>(grad_scale * (p - y)), grads);
  return loss;
}

template <typename S>
void adamw_step(std::vector<TensorT<S>>& params, const std::vector<TensorT<S>>& grads,
                const std::vector<bool>& apply_decay, AdamWState<S>& state, std::int64_t t,
                double lr, double wd, double beta1, double beta2, double eps) {
  if (params.size() != grads.size() || params.size() != apply_decay.size()) {
    throw ShapeMismatch("adamw: params, grads and decay mask must align");
  }
  if (t < 1) {
    throw std::invalid_argument("adamw: step index starts at 1");
  }
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const TensorT<S>& p : params) {
      state.m.emplace_back(p.shape);
      state.v.emplace_back(p.shape);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeMismatch("adamw: optimizer state does not match parameter set");
  }

  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].data.size();
    if (grads[i].data.size() != n || state.m[i].data.size() != n) {
      throw ShapeMismatch("adamw: tensor " + std::to_string(i) + " shape mismatch");
    }
    const double decay = apply_decay[i] ? wd : 0.0;
    S* p = params[i].data.data();
    const S* g = grads[i].data.data();
    S* m = state.m[i].data.data();
    S* v = state.v[i].data.data();
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = beta1 * static_cast<double>(m[j]) + (1.0 - beta1) * gj;
      const double vj = beta2 * static_cast<double>(v[j]) + (1.0 - beta2) * gj * gj;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p[j] = static_cast<S>(
          static_cast<double>(p[j]) -
          lr * (mhat / (std::sqrt(vhat) + eps) + decay * static_cast<double>(p[j])));
    }
  }
}

template struct TensorT<float>;
template struct TensorT<double>;
template class NetworkT<float>;
template class NetworkT<double>;
template double loss_and_gradients<float>(const NetworkT<float>&, std::span<const float>, int,
                                          double, std::vector<TensorT<float>>&,
                                          ForwardCache<float>&);
template double loss_and_gradients<double>(const NetworkT<double>&, std::span<const double>, int,
                                           double, std::vector<TensorT<double>>&,
                                           ForwardCache<double>&);
template void adamw_step<float>(std::vector<TensorT<float>>&, const std::vector<TensorT<float>>&,
                                const std::vector<bool>&, AdamWState<float>&, std::int64_t, double,
                                double, double, double, double);
template void adamw_step<double>(std::vector<TensorT<double>>&,
                                 const std::vector<TensorT<double>>&, const std::vector<bool>&,
                                 AdamWState<double>&, std::int64_t, double, double, double,
                                 double, double);

}  // namespace midiseg::model
