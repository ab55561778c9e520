#pragma once

#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "paa/tensor.hpp"

// Tape-based reverse-mode differentiation. One tape per training step; the
// tape is consumed by backward() and a second backward() throws.
namespace paa::ad {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const TensorT<T>& value() const;
};

template <typename T>
class Tape {
 public:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    // propagates this node's grad into its parents
    std::function<void(Tape&, const TensorT<T>&)> backward;
  };

  Var<T> leaf(TensorT<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> record(TensorT<T> value,
                std::function<void(Tape&, const TensorT<T>&)> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const TensorT<T>& value(int id) const { return nodes_.at(id).value; }

  void accumulate(int id, const TensorT<T>& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (!n.grad_alloc) {
      n.grad = TensorT<T>::zeros(n.value.shape());
      n.grad_alloc = true;
    }
    if (!n.grad.same_shape(g))
      throw std::logic_error("gradient shape mismatch");
    for (long i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
  }

  void backward(const Var<T>& output) {
    if (consumed_)
      throw std::logic_error("backward on a consumed tape");
    consumed_ = true;
    const TensorT<T>& out = value(output.id);
    if (out.numel() != 1)
      throw std::invalid_argument("backward: output must be scalar");
    accumulate(output.id, TensorT<T>::scalar(T(1)));
    for (int id = output.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad_alloc && n.backward) n.backward(*this, n.grad);
    }
  }

  // valid after backward; zero tensor if no gradient reached the node
  TensorT<T> grad(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id);
    if (!n.grad_alloc) return TensorT<T>::zeros(n.value.shape());
    return n.grad;
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <typename T>
const TensorT<T>& Var<T>::value() const {
  return tape->value(id);
}

// ---- ops ----

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>* tp = a.tape;
  int ia = a.id, ib = b.id;
  return tp->record(paa::add(a.value(), b.value()),
                    [ia, ib](Tape<T>& t, const TensorT<T>& g) {
                      t.accumulate(ia, g);
                      t.accumulate(ib, g);
                    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>* tp = a.tape;
  int ia = a.id, ib = b.id;
  return tp->record(paa::sub(a.value(), b.value()),
                    [ia, ib](Tape<T>& t, const TensorT<T>& g) {
                      t.accumulate(ia, g);
                      t.accumulate(ib, paa::neg(g));
                    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>* tp = a.tape;
  int ia = a.id, ib = b.id;
  TensorT<T> av = a.value(), bv = b.value();
  return tp->record(paa::mul(av, bv),
                    [ia, ib, av, bv](Tape<T>& t, const TensorT<T>& g) {
                      t.accumulate(ia, paa::mul(g, bv));
                      t.accumulate(ib, paa::mul(g, av));
                    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  int ia = a.id;
  return a.tape->record(paa::mul_scalar(a.value(), s),
                        [ia, s](Tape<T>& t, const TensorT<T>& g) {
                          t.accumulate(ia, paa::mul_scalar(g, s));
                        });
}

// elementwise product with a constant tensor (no gradient into the constant)
template <typename T>
Var<T> mul_const(Var<T> a, const TensorT<T>& c) {
  int ia = a.id;
  TensorT<T> cc = c;
  return a.tape->record(paa::mul(a.value(), c),
                        [ia, cc](Tape<T>& t, const TensorT<T>& g) {
                          t.accumulate(ia, paa::mul(g, cc));
                        });
}

// c - a, elementwise with a constant tensor
template <typename T>
Var<T> sub_from_const(const TensorT<T>& c, Var<T> a) {
  int ia = a.id;
  return a.tape->record(paa::sub(c, a.value()),
                        [ia](Tape<T>& t, const TensorT<T>& g) {
                          t.accumulate(ia, paa::neg(g));
                        });
}

template <typename T>
Var<T> relu(Var<T> a) {
  int ia = a.id;
  TensorT<T> av = a.value();
  return a.tape->record(paa::relu(av),
                        [ia, av](Tape<T>& t, const TensorT<T>& g) {
                          TensorT<T> gi = TensorT<T>::zeros(g.shape());
                          // subgradient 0 at exactly 0
                          for (long i = 0; i < g.numel(); ++i)
                            gi[i] = av[i] > T(0) ? g[i] : T(0);
                          t.accumulate(ia, gi);
                        });
}

template <typename T>
Var<T> log(Var<T> a) {
  int ia = a.id;
  TensorT<T> av = a.value();
  return a.tape->record(paa::log(av),
                        [ia, av](Tape<T>& t, const TensorT<T>& g) {
                          TensorT<T> gi = TensorT<T>::zeros(g.shape());
                          for (long i = 0; i < g.numel(); ++i)
                            gi[i] = g[i] / av[i];
                          t.accumulate(ia, gi);
                        });
}

template <typename T>
Var<T> square(Var<T> a) {
  return mul(a, a);
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  int ia = a.id;
  Shape orig = a.value().shape();
  return a.tape->record(a.value().reshape(std::move(shape)),
                        [ia, orig](Tape<T>& t, const TensorT<T>& g) {
                          t.accumulate(ia, g.reshape(orig));
                        });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>* tp = a.tape;
  int ia = a.id, ib = b.id;
  TensorT<T> av = a.value(), bv = b.value();
  return tp->record(paa::matmul(av, bv),
                    [ia, ib, av, bv](Tape<T>& t, const TensorT<T>& g) {
                      t.accumulate(ia, paa::matmul(g, paa::transpose2d(bv)));
                      t.accumulate(ib, paa::matmul(paa::transpose2d(av), g));
                    });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  int ia = a.id;
  long n = a.value().numel();
  Shape shape = a.value().shape();
  return a.tape->record(
      TensorT<T>::scalar(paa::mean_all(a.value())),
      [ia, n, shape](Tape<T>& t, const TensorT<T>& g) {
        t.accumulate(ia, TensorT<T>::full(shape, g[0] / static_cast<T>(n)));
      });
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  int ia = a.id;
  Shape shape = a.value().shape();
  return a.tape->record(TensorT<T>::scalar(paa::sum_all(a.value())),
                        [ia, shape](Tape<T>& t, const TensorT<T>& g) {
                          t.accumulate(ia, TensorT<T>::full(shape, g[0]));
                        });
}

// rows [B,C], one index per row -> [B]
template <typename T>
Var<T> gather_rows(Var<T> a, const std::vector<long>& idx) {
  int ia = a.id;
  const TensorT<T>& av = a.value();
  if (av.ndim() != 2) throw std::invalid_argument("gather_rows: need 2-D");
  long b = av.dim(0), c = av.dim(1);
  if (static_cast<long>(idx.size()) != b)
    throw std::invalid_argument("gather_rows: index count mismatch");
  TensorT<T> out = TensorT<T>::zeros({b});
  for (long i = 0; i < b; ++i) {
    if (idx[i] < 0 || idx[i] >= c)
      throw std::out_of_range("gather_rows: column index");
    out[i] = av[i * c + idx[i]];
  }
  std::vector<long> ix = idx;
  Shape shape = av.shape();
  return a.tape->record(std::move(out),
                        [ia, ix, shape, c](Tape<T>& t, const TensorT<T>& g) {
                          TensorT<T> gi = TensorT<T>::zeros(shape);
                          for (long i = 0; i < g.numel(); ++i)
                            gi[i * c + ix[i]] = g[i];
                          t.accumulate(ia, gi);
                        });
}

// row-wise softmax over the last axis of a 2-D tensor
template <typename T>
Var<T> softmax_rows(Var<T> a) {
  int ia = a.id;
  const TensorT<T>& av = a.value();
  if (av.ndim() != 2) throw std::invalid_argument("softmax_rows: need 2-D");
  long b = av.dim(0), c = av.dim(1);
  TensorT<T> out = TensorT<T>::zeros(av.shape());
  for (long i = 0; i < b; ++i) {
    T mx = av[i * c];
    for (long j = 1; j < c; ++j) mx = std::max(mx, av[i * c + j]);
    T denom = T(0);
    for (long j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(av[i * c + j] - mx);
      denom += out[i * c + j];
    }
    for (long j = 0; j < c; ++j) out[i * c + j] /= denom;
  }
  TensorT<T> p = out;
  return a.tape->record(std::move(out),
                        [ia, p, b, c](Tape<T>& t, const TensorT<T>& g) {
                          TensorT<T> gi = TensorT<T>::zeros(p.shape());
                          for (long i = 0; i < b; ++i) {
                            T dot = T(0);
                            for (long j = 0; j < c; ++j)
                              dot += g[i * c + j] * p[i * c + j];
                            for (long j = 0; j < c; ++j)
                              gi[i * c + j] =
                                  p[i * c + j] * (g[i * c + j] - dot);
                          }
                          t.accumulate(ia, gi);
                        });
}

// [B,C,H,W] -> [B,C]
template <typename T>
Var<T> global_avg_pool(Var<T> a) {
  int ia = a.id;
  const TensorT<T>& av = a.value();
  if (av.ndim() != 4) throw std::invalid_argument("global_avg_pool: need 4-D");
  long b = av.dim(0), c = av.dim(1), hw = av.dim(2) * av.dim(3);
  TensorT<T> out = TensorT<T>::zeros({b, c});
  for (long i = 0; i < b * c; ++i) {
    T s = T(0);
    for (long j = 0; j < hw; ++j) s += av[i * hw + j];
    out[i] = s / static_cast<T>(hw);
  }
  Shape shape = av.shape();
  return a.tape->record(std::move(out),
                        [ia, shape, hw](Tape<T>& t, const TensorT<T>& g) {
                          TensorT<T> gi = TensorT<T>::zeros(shape);
                          for (long i = 0; i < g.numel(); ++i) {
                            T v = g[i] / static_cast<T>(hw);
                            for (long j = 0; j < hw; ++j) gi[i * hw + j] = v;
                          }
                          t.accumulate(ia, gi);
                        });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, long stride, long pad) {
  Tape<T>* tp = x.tape;
  int ix = x.id, iw = w.id, ib = b.id;
  TensorT<T> xv = x.value(), wv = w.value();
  TensorT<T> out = paa::conv2d(xv, wv, b.value(), stride, pad);
  return tp->record(
      std::move(out),
      [ix, iw, ib, xv, wv, stride, pad](Tape<T>& t, const TensorT<T>& g) {
        long bsz = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
        long cout = wv.dim(0), k = wv.dim(2);
        long ho = g.dim(2), wo = g.dim(3);
        long ckk = cin * k * k, cols = ho * wo;
        TensorT<T> wmat = wv.reshape({cout, ckk});
        TensorT<T> wmat_t = paa::transpose2d(wmat);
        TensorT<T> dw = TensorT<T>::zeros({cout, ckk});
        TensorT<T> dx = TensorT<T>::zeros(xv.shape());
        TensorT<T> db = TensorT<T>::zeros({cout});
        std::vector<T> col(static_cast<std::size_t>(ckk * cols));
        for (long s = 0; s < bsz; ++s) {
          paa::detail::im2col(xv.data() + s * cin * h * wd, cin, h, wd, k,
                              stride, pad, ho, wo, col.data());
          TensorT<T> gmat({cout, cols},
                          std::vector<T>(g.data() + s * cout * cols,
                                         g.data() + (s + 1) * cout * cols));
          // dW += g * col^T
          TensorT<T> colT = TensorT<T>({ckk, cols}, col).reshape({ckk, cols});
          TensorT<T> dws = paa::matmul(gmat, paa::transpose2d(colT));
          for (long i = 0; i < dw.numel(); ++i) dw[i] += dws[i];
          // dcol = W^T * g, then col2im
          TensorT<T> dcol = paa::matmul(wmat_t, gmat);
          paa::detail::col2im(dcol.data(), cin, h, wd, k, stride, pad, ho, wo,
                              dx.data() + s * cin * h * wd);
          for (long oc = 0; oc < cout; ++oc)
            for (long j = 0; j < cols; ++j) db[oc] += gmat[oc * cols + j];
        }
        t.accumulate(ix, dx);
        t.accumulate(iw, dw.reshape(wv.shape()));
        t.accumulate(ib, db);
      });
}

// Batchnorm over (B,H,W) per channel. In train mode normalizes with batch
// statistics and (optionally) updates the running estimates in place; in eval
// mode it is a deterministic affine map from the running statistics.
template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta,
                   TensorT<T>* running_mean, TensorT<T>* running_var,
                   bool train, bool update_running, T momentum = T(0.1),
                   T eps = T(1e-5)) {
  Tape<T>* tp = x.tape;
  int ix = x.id, ig = gamma.id, ibt = beta.id;
  const TensorT<T>& xv = x.value();
  if (xv.ndim() != 4) throw std::invalid_argument("batchnorm2d: need 4-D");
  long b = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  long n = b * hw;
  const TensorT<T>& gv = gamma.value();
  const TensorT<T>& btv = beta.value();

  TensorT<T> mean = TensorT<T>::zeros({c});
  TensorT<T> var = TensorT<T>::zeros({c});
  if (train) {
    for (long ch = 0; ch < c; ++ch) {
      T s = T(0);
      for (long i = 0; i < b; ++i)
        for (long j = 0; j < hw; ++j) s += xv[(i * c + ch) * hw + j];
      mean[ch] = s / static_cast<T>(n);
      T v = T(0);
      for (long i = 0; i < b; ++i)
        for (long j = 0; j < hw; ++j) {
          T d = xv[(i * c + ch) * hw + j] - mean[ch];
          v += d * d;
        }
      var[ch] = v / static_cast<T>(n);
    }
    if (update_running) {
      for (long ch = 0; ch < c; ++ch) {
        (*running_mean)[ch] =
            (T(1) - momentum) * (*running_mean)[ch] + momentum * mean[ch];
        (*running_var)[ch] =
            (T(1) - momentum) * (*running_var)[ch] + momentum * var[ch];
      }
    }
  } else {
    mean = *running_mean;
    var = *running_var;
  }

  TensorT<T> inv_std = TensorT<T>::zeros({c});
  for (long ch = 0; ch < c; ++ch)
    inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);

  TensorT<T> xhat = TensorT<T>::zeros(xv.shape());
  TensorT<T> out = TensorT<T>::zeros(xv.shape());
  for (long i = 0; i < b; ++i)
    for (long ch = 0; ch < c; ++ch)
      for (long j = 0; j < hw; ++j) {
        long off = (i * c + ch) * hw + j;
        xhat[off] = (xv[off] - mean[ch]) * inv_std[ch];
        out[off] = gv[ch] * xhat[off] + btv[ch];
      }

  TensorT<T> gvc = gv;
  return tp->record(
      std::move(out),
      [ix, ig, ibt, xhat, inv_std, gvc, b, c, hw, n,
       train](Tape<T>& t, const TensorT<T>& g) {
        TensorT<T> dgamma = TensorT<T>::zeros({c});
        TensorT<T> dbeta = TensorT<T>::zeros({c});
        for (long i = 0; i < b; ++i)
          for (long ch = 0; ch < c; ++ch)
            for (long j = 0; j < hw; ++j) {
              long off = (i * c + ch) * hw + j;
              dgamma[ch] += g[off] * xhat[off];
              dbeta[ch] += g[off];
            }
        TensorT<T> dx = TensorT<T>::zeros(xhat.shape());
        if (train) {
          for (long ch = 0; ch < c; ++ch) {
            T sg = T(0), sgx = T(0);
            for (long i = 0; i < b; ++i)
              for (long j = 0; j < hw; ++j) {
                long off = (i * c + ch) * hw + j;
                sg += g[off];
                sgx += g[off] * xhat[off];
              }
            for (long i = 0; i < b; ++i)
              for (long j = 0; j < hw; ++j) {
                long off = (i * c + ch) * hw + j;
                dx[off] = gvc[ch] * inv_std[ch] *
                          (g[off] - sg / static_cast<T>(n) -
                           xhat[off] * sgx / static_cast<T>(n));
              }
          }
        } else {
          for (long i = 0; i < b; ++i)
            for (long ch = 0; ch < c; ++ch)
              for (long j = 0; j < hw; ++j) {
                long off = (i * c + ch) * hw + j;
                dx[off] = g[off] * gvc[ch] * inv_std[ch];
              }
        }
        t.accumulate(ix, dx);
        t.accumulate(ig, dgamma);
        t.accumulate(ibt, dbeta);
      });
}

// x [B,I] * w [I,O] + b [O]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Var<T> y = matmul(x, w);
  int iy = y.id, ib = b.id;
  const TensorT<T>& yv = y.value();
  long bsz = yv.dim(0), o = yv.dim(1);
  TensorT<T> out = yv;
  const TensorT<T>& bv = b.value();
  if (bv.numel() != o) throw std::invalid_argument("linear: bias length");
  for (long i = 0; i < bsz; ++i)
    for (long j = 0; j < o; ++j) out[i * o + j] += bv[j];
  return y.tape->record(std::move(out),
                        [iy, ib, bsz, o](Tape<T>& t, const TensorT<T>& g) {
                          t.accumulate(iy, g);
                          TensorT<T> db = TensorT<T>::zeros({o});
                          for (long i = 0; i < bsz; ++i)
                            for (long j = 0; j < o; ++j) db[j] += g[i * o + j];
                          t.accumulate(ib, db);
                        });
}

// mean over batch of -sum_c labels[c] * log softmax(logits)[c]
// labels is a constant simplex tensor.
template <typename T>
Var<T> soft_cross_entropy(Var<T> logits, const TensorT<T>& labels) {
  int il = logits.id;
  const TensorT<T>& lv = logits.value();
  if (lv.ndim() != 2 || !labels.same_shape(lv))
    throw std::invalid_argument("soft_cross_entropy: shape mismatch");
  long b = lv.dim(0), c = lv.dim(1);
  for (long i = 0; i < b; ++i) {
    T s = T(0);
    for (long j = 0; j < c; ++j) {
      if (labels[i * c + j] < T(0))
        throw std::invalid_argument("soft_cross_entropy: negative label");
      s += labels[i * c + j];
    }
    if (std::abs(s - T(1)) > T(1e-5))
      throw std::invalid_argument("soft_cross_entropy: label row sum != 1");
  }
  TensorT<T> p = TensorT<T>::zeros(lv.shape());
  T loss = T(0);
  for (long i = 0; i < b; ++i) {
    T mx = lv[i * c];
    for (long j = 1; j < c; ++j) mx = std::max(mx, lv[i * c + j]);
    T denom = T(0);
    for (long j = 0; j < c; ++j) denom += std::exp(lv[i * c + j] - mx);
    T log_denom = std::log(denom);
    for (long j = 0; j < c; ++j) {
      T logp = lv[i * c + j] - mx - log_denom;
      p[i * c + j] = std::exp(logp);
      loss -= labels[i * c + j] * logp;
    }
  }
  loss /= static_cast<T>(b);
  TensorT<T> y = labels;
  return logits.tape->record(
      TensorT<T>::scalar(loss),
      [il, p, y, b](Tape<T>& t, const TensorT<T>& g) {
        TensorT<T> gi = TensorT<T>::zeros(p.shape());
        for (long i = 0; i < p.numel(); ++i)
          gi[i] = g[0] * (p[i] - y[i]) / static_cast<T>(b);
        t.accumulate(il, gi);
      });
}

// ---- finite differences ----

// max over coordinates of |analytic - central difference| / (|analytic| + eps)
template <typename T>
T finite_diff_check(const std::function<T(const TensorT<T>&)>& f,
                    const TensorT<T>& x, const TensorT<T>& analytic, T eps) {
  if (!analytic.same_shape(x))
    throw std::invalid_argument("finite_diff_check: gradient shape");
  T worst = T(0);
  TensorT<T> xp = x;
  for (long i = 0; i < x.numel(); ++i) {
    T orig = xp[i];
    xp[i] = orig + eps;
    T fp = f(xp);
    xp[i] = orig - eps;
    T fm = f(xp);
    xp[i] = orig;
    T numeric = (fp - fm) / (T(2) * eps);
    T err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + eps);
    if (!std::isfinite(err)) return std::numeric_limits<T>::infinity();
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace paa::ad
