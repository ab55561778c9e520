#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "paa/autodiff.hpp"
#include "paa/rng.hpp"
#include "paa/tensor.hpp"

namespace paa::nn {

enum class LayerKind {
  Conv2d,
  BatchNorm,
  Linear,
  Relu,
  Softmax,
  GlobalAvgPool,
  Flatten,
};

template <typename T>
struct Layer {
  LayerKind kind;
  long in_c = 0, out_c = 0, k = 0, stride = 1, pad = 0;
  TensorT<T> w, b;                             // conv / linear
  TensorT<T> gamma, beta, run_mean, run_var;   // batchnorm
};

template <typename T>
struct ForwardRecord {
  // parameter tensor <-> tape leaf, in parameters() order
  std::vector<std::pair<TensorT<T>*, ad::Var<T>>> params;
  // tape node of the output of the last Conv2d layer (Grad-CAM hook)
  int last_conv_node = -1;
};

template <typename T>
struct Network {
  std::string name;
  std::vector<Layer<T>> layers;
  bool train_mode = true;
  bool trainable = true;

  std::vector<TensorT<T>*> parameters() {
    std::vector<TensorT<T>*> ps;
    for (auto& l : layers) {
      if (l.kind == LayerKind::Conv2d || l.kind == LayerKind::Linear) {
        ps.push_back(&l.w);
        ps.push_back(&l.b);
      } else if (l.kind == LayerKind::BatchNorm) {
        ps.push_back(&l.gamma);
        ps.push_back(&l.beta);
      }
    }
    return ps;
  }

  long parameter_count() {
    long n = 0;
    for (auto* p : parameters()) n += p->numel();
    return n;
  }

  // Tape forward. Records parameter leaves so gradients can be read back.
  ad::Var<T> forward(ad::Tape<T>& tape, ad::Var<T> x,
                     ForwardRecord<T>* rec = nullptr,
                     bool update_running = true) {
    for (auto& l : layers) {
      switch (l.kind) {
        case LayerKind::Conv2d: {
          auto w = tape.leaf(l.w, trainable);
          auto b = tape.leaf(l.b, trainable);
          if (rec) {
            rec->params.emplace_back(&l.w, w);
            rec->params.emplace_back(&l.b, b);
          }
          x = ad::conv2d(x, w, b, l.stride, l.pad);
          if (rec) rec->last_conv_node = x.id;
          break;
        }
        case LayerKind::BatchNorm: {
          auto g = tape.leaf(l.gamma, trainable);
          auto bt = tape.leaf(l.beta, trainable);
          if (rec) {
            rec->params.emplace_back(&l.gamma, g);
            rec->params.emplace_back(&l.beta, bt);
          }
          x = ad::batchnorm2d(x, g, bt, &l.run_mean, &l.run_var, train_mode,
                              train_mode && update_running);
          break;
        }
        case LayerKind::Linear: {
          auto w = tape.leaf(l.w, trainable);
          auto b = tape.leaf(l.b, trainable);
          if (rec) {
            rec->params.emplace_back(&l.w, w);
            rec->params.emplace_back(&l.b, b);
          }
          x = ad::linear(x, w, b);
          break;
        }
        case LayerKind::Relu:
          x = ad::relu(x);
          break;
        case LayerKind::Softmax:
          x = ad::softmax_rows(x);
          break;
        case LayerKind::GlobalAvgPool:
          x = ad::global_avg_pool(x);
          break;
        case LayerKind::Flatten:
          x = ad::reshape(x, {x.value().dim(0),
                              x.value().numel() / x.value().dim(0)});
          break;
      }
    }
    return x;
  }

  // Gradient-free forward for frozen networks and evaluation.
  TensorT<T> infer(const TensorT<T>& input) const {
    TensorT<T> x = input;
    for (const auto& l : layers) {
      switch (l.kind) {
        case LayerKind::Conv2d:
          x = paa::conv2d(x, l.w, l.b, l.stride, l.pad);
          break;
        case LayerKind::BatchNorm: {
          long b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
          TensorT<T> out = TensorT<T>::zeros(x.shape());
          for (long ch = 0; ch < c; ++ch) {
            T inv = T(1) / std::sqrt(l.run_var[ch] + T(1e-5));
            for (long i = 0; i < b; ++i)
              for (long j = 0; j < hw; ++j) {
                long off = (i * c + ch) * hw + j;
                out[off] = l.gamma[ch] * (x[off] - l.run_mean[ch]) * inv +
                           l.beta[ch];
              }
          }
          x = out;
          break;
        }
        case LayerKind::Linear: {
          TensorT<T> y = paa::matmul(x, l.w);
          long b = y.dim(0), o = y.dim(1);
          for (long i = 0; i < b; ++i)
            for (long j = 0; j < o; ++j) y[i * o + j] += l.b[j];
          x = y;
          break;
        }
        case LayerKind::Relu:
          x = paa::relu(x);
          break;
        case LayerKind::Softmax: {
          long b = x.dim(0), c = x.dim(1);
          TensorT<T> out = TensorT<T>::zeros(x.shape());
          for (long i = 0; i < b; ++i) {
            T mx = x[i * c];
            for (long j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
            T denom = T(0);
            for (long j = 0; j < c; ++j) {
              out[i * c + j] = std::exp(x[i * c + j] - mx);
              denom += out[i * c + j];
            }
            for (long j = 0; j < c; ++j) out[i * c + j] /= denom;
          }
          x = out;
          break;
        }
        case LayerKind::GlobalAvgPool: {
          long b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
          TensorT<T> out = TensorT<T>::zeros({b, c});
          for (long i = 0; i < b * c; ++i) {
            T s = T(0);
            for (long j = 0; j < hw; ++j) s += x[i * hw + j];
            out[i] = s / static_cast<T>(hw);
          }
          x = out;
          break;
        }
        case LayerKind::Flatten:
          x = x.reshape({x.dim(0), x.numel() / x.dim(0)});
          break;
      }
    }
    return x;
  }
};

namespace detail {

template <typename T>
TensorT<T> he_init(Shape shape, long fan_in, CounterRng& rng) {
  TensorT<T> t = TensorT<T>::zeros(shape);
  T std = std::sqrt(T(2) / static_cast<T>(fan_in));
  for (long i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.normal()) * std;
  return t;
}

template <typename T>
Layer<T> conv_layer(long in_c, long out_c, long k, long stride, long pad,
                    CounterRng& rng) {
  Layer<T> l;
  l.kind = LayerKind::Conv2d;
  l.in_c = in_c;
  l.out_c = out_c;
  l.k = k;
  l.stride = stride;
  l.pad = pad;
  l.w = he_init<T>({out_c, in_c, k, k}, in_c * k * k, rng);
  l.b = TensorT<T>::zeros({out_c});
  return l;
}

template <typename T>
Layer<T> bn_layer(long c) {
  Layer<T> l;
  l.kind = LayerKind::BatchNorm;
  l.out_c = c;
  l.gamma = TensorT<T>::full({c}, T(1));
  l.beta = TensorT<T>::zeros({c});
  l.run_mean = TensorT<T>::zeros({c});
  l.run_var = TensorT<T>::full({c}, T(1));
  return l;
}

template <typename T>
Layer<T> linear_layer(long in, long out, CounterRng& rng) {
  Layer<T> l;
  l.kind = LayerKind::Linear;
  l.in_c = in;
  l.out_c = out;
  l.w = he_init<T>({in, out}, in, rng);
  l.b = TensorT<T>::zeros({out});
  return l;
}

template <typename T>
Layer<T> simple(LayerKind kind) {
  Layer<T> l;
  l.kind = kind;
  return l;
}

}  // namespace detail

inline constexpr long kNumOps = 15;

// Actor head: ReLU > Conv(in,64,3,1,1) > BN > ReLU > Conv(64,64,3,1,1) > BN
// > ReLU > Conv(64,15,3,2,1) > global average pool > softmax. Fully
// convolutional, so any patch size works; the pool collapses to 15 logits.
template <typename T>
Network<T> build_actor(long in_channels, std::uint64_t seed) {
  CounterRng rng(CounterRng::derive_key(seed, {1}));
  Network<T> net;
  net.name = "actor";
  using detail::simple;
  net.layers.push_back(simple<T>(LayerKind::Relu));
  net.layers.push_back(detail::conv_layer<T>(in_channels, 64, 3, 1, 1, rng));
  net.layers.push_back(detail::bn_layer<T>(64));
  net.layers.push_back(simple<T>(LayerKind::Relu));
  net.layers.push_back(detail::conv_layer<T>(64, 64, 3, 1, 1, rng));
  net.layers.push_back(detail::bn_layer<T>(64));
  net.layers.push_back(simple<T>(LayerKind::Relu));
  net.layers.push_back(detail::conv_layer<T>(64, kNumOps, 3, 2, 1, rng));
  net.layers.push_back(simple<T>(LayerKind::GlobalAvgPool));
  net.layers.push_back(simple<T>(LayerKind::Softmax));
  return net;
}

template <typename T>
Network<T> build_critic(long state_dim, std::uint64_t seed) {
  CounterRng rng(CounterRng::derive_key(seed, {2}));
  Network<T> net;
  net.name = "critic";
  net.layers.push_back(detail::linear_layer<T>(state_dim, 256, rng));
  net.layers.push_back(detail::simple<T>(LayerKind::Relu));
  net.layers.push_back(detail::linear_layer<T>(256, 1, rng));
  return net;
}

// Frozen feature extractor. The full stack maps a 32x32 image to a
// [32,7,7] state map (flatten length 1568); the first conv alone maps a
// patch to a 16-channel observation map. A fixed projection turns the
// pooled 32-dim state into the 16-channel embedding broadcast to agents.
template <typename T>
struct Encoder {
  Network<T> net;          // conv1 > relu > conv2 > relu
  TensorT<T> state_proj;   // [32,16]

  // [B,C,H,W] -> [B,32,h,w]
  TensorT<T> state_map(const TensorT<T>& images) const {
    return net.infer(images);
  }

  // [K,C,h,w] -> [K,16,h',w']  (first conv + relu only)
  TensorT<T> observation(const TensorT<T>& patches) const {
    Network<T> head;
    head.layers.assign(net.layers.begin(), net.layers.begin() + 2);
    return head.infer(patches);
  }

  // [B,32,h,w] -> [B,16]
  TensorT<T> state_embedding(const TensorT<T>& state) const {
    long b = state.dim(0), c = state.dim(1), hw = state.dim(2) * state.dim(3);
    TensorT<T> pooled = TensorT<T>::zeros({b, c});
    for (long i = 0; i < b * c; ++i) {
      T s = T(0);
      for (long j = 0; j < hw; ++j) s += state[i * hw + j];
      pooled[i] = s / static_cast<T>(hw);
    }
    return paa::matmul(pooled, state_proj);
  }
};

template <typename T>
Encoder<T> build_encoder(std::uint64_t seed) {
  CounterRng rng(CounterRng::derive_key(seed, {3}));
  Encoder<T> enc;
  enc.net.name = "encoder";
  enc.net.trainable = false;
  enc.net.train_mode = false;
  enc.net.layers.push_back(detail::conv_layer<T>(3, 16, 3, 2, 1, rng));
  enc.net.layers.push_back(detail::simple<T>(LayerKind::Relu));
  enc.net.layers.push_back(detail::conv_layer<T>(16, 32, 3, 2, 0, rng));
  enc.net.layers.push_back(detail::simple<T>(LayerKind::Relu));
  enc.state_proj = detail::he_init<T>({32, 16}, 32, rng);
  return enc;
}

template <typename T>
Network<T> build_target_cnn(long num_classes, std::uint64_t seed) {
  CounterRng rng(CounterRng::derive_key(seed, {4}));
  Network<T> net;
  net.name = "target";
  net.layers.push_back(detail::conv_layer<T>(3, 16, 3, 2, 1, rng));
  net.layers.push_back(detail::simple<T>(LayerKind::Relu));
  net.layers.push_back(detail::conv_layer<T>(16, 32, 3, 2, 1, rng));
  net.layers.push_back(detail::simple<T>(LayerKind::Relu));
  net.layers.push_back(detail::simple<T>(LayerKind::GlobalAvgPool));
  net.layers.push_back(detail::linear_layer<T>(32, num_classes, rng));
  return net;
}

// non-tape loss value, used by evaluation paths
template <typename T>
T soft_cross_entropy_value(const TensorT<T>& logits, const TensorT<T>& labels) {
  ad::Tape<T> tape;
  auto l = tape.leaf(logits, false);
  return ad::soft_cross_entropy(l, labels).value().item();
}

// w <- w - lr * (g + wd * w)
template <typename T>
void sgd_step(TensorT<T>& w, const TensorT<T>& g, T lr, T weight_decay) {
  if (!w.same_shape(g))
    throw std::invalid_argument("sgd_step: shape mismatch");
  for (long i = 0; i < w.numel(); ++i)
    w[i] -= lr * (g[i] + weight_decay * w[i]);
}

template <typename T>
struct Sgd {
  T lr = T(1e-4);
  T momentum = T(0);
  T weight_decay = T(0);
  std::vector<TensorT<T>> velocity;

  void step(const std::vector<TensorT<T>*>& params,
            const std::vector<TensorT<T>>& grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("Sgd::step: count mismatch");
    if (momentum == T(0)) {
      for (std::size_t i = 0; i < params.size(); ++i)
        sgd_step(*params[i], grads[i], lr, weight_decay);
      return;
    }
    if (velocity.empty())
      for (auto* p : params) velocity.push_back(TensorT<T>::zeros(p->shape()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      TensorT<T>& w = *params[i];
      const TensorT<T>& g = grads[i];
      TensorT<T>& v = velocity[i];
      for (long j = 0; j < w.numel(); ++j) {
        v[j] = momentum * v[j] + g[j] + weight_decay * w[j];
        w[j] -= lr * v[j];
      }
    }
  }
};

}  // namespace paa::nn
