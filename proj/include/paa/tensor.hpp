#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <type_traits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "paa/simd.hpp"

namespace paa {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& shape) {
  long n = 1;
  for (long e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Immutable-after-construction by convention: ops
// return new tensors. T is float for training, double for verification.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  TensorT(Shape shape, T fill) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  TensorT(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    long n = shape_numel(shape_);
    if (n != static_cast<long>(data_.size()))
      throw std::invalid_argument(
          "tensor data length " + std::to_string(data_.size()) +
          " does not match shape " + shape_str(shape_) + " (numel " +
          std::to_string(n) + ")");
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape), T(0)); }
  static TensorT full(Shape shape, T v) { return TensorT(std::move(shape), v); }
  static TensorT scalar(T v) { return TensorT(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  long dim(std::size_t i) const { return shape_.at(i); }
  std::size_t ndim() const { return shape_.size(); }
  long numel() const { return static_cast<long>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

  T item() const {
    if (data_.size() != 1)
      throw std::invalid_argument("item() on tensor with numel " +
                                  std::to_string(data_.size()));
    return data_[0];
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  TensorT reshape(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " +
                                  shape_str(shape) + ": numel mismatch");
    TensorT out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      d[i] = static_cast<U>(data_[i]);
    return TensorT<U>(shape_, std::move(d));
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  void check_extents() const {
    for (long e : shape_)
      if (e <= 0)
        throw std::invalid_argument("non-positive extent in shape " +
                                    shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

namespace detail {

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                        const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise ----

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "add");
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  if constexpr (std::is_same_v<T, float>) {
    simd::add(out.data(), a.data(), b.data(), a.numel());
  } else {
    for (long i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  }
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "sub");
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  for (long i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "mul");
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  if constexpr (std::is_same_v<T, float>) {
    simd::mul(out.data(), a.data(), b.data(), a.numel());
  } else {
    for (long i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  }
  return out;
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "div");
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  for (long i = 0; i < a.numel(); ++i) {
    if (b[i] == T(0)) throw std::domain_error("div: zero divisor");
    out[i] = a[i] / b[i];
  }
  return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  for (long i = 0; i < a.numel(); ++i) out[i] = a[i] + s;
  return out;
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  for (long i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  if constexpr (std::is_same_v<T, float>) {
    simd::relu(out.data(), a.data(), a.numel());
  } else {
    for (long i = 0; i < a.numel(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  }
  return out;
}

template <typename T>
TensorT<T> exp(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  for (long i = 0; i < a.numel(); ++i) out[i] = std::exp(a[i]);
  return out;
}

template <typename T>
TensorT<T> log(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  for (long i = 0; i < a.numel(); ++i) {
    if (a[i] <= T(0)) throw std::domain_error("log: non-positive input");
    out[i] = std::log(a[i]);
  }
  return out;
}

template <typename T>
TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  if constexpr (std::is_same_v<T, float>) {
    simd::clamp(out.data(), a.data(), lo, hi, a.numel());
  } else {
    for (long i = 0; i < a.numel(); ++i)
      out[i] = std::min(std::max(a[i], lo), hi);
  }
  return out;
}

// ---- matmul ----

// C[i,j] = sum_k A[i,k] * B[k,j], accumulated as fused multiply-add in
// ascending k per output element (identical across ISA variants).
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw std::invalid_argument("matmul: need 2-D operands");
  long m = a.dim(0), k = a.dim(1), k2 = b.dim(0), p = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner extents " + std::to_string(k) +
                                " vs " + std::to_string(k2));
  TensorT<T> c = TensorT<T>::zeros({m, p});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (long i = 0; i < m; ++i) {
    T* crow = pc + i * p;
    const T* arow = pa + i * k;
    long kk = 0;
    for (; kk + 4 <= k; kk += 4)
      simd::fma_row4(crow, arow + kk, pb + kk * p, pb + (kk + 1) * p,
                     pb + (kk + 2) * p, pb + (kk + 3) * p,
                     static_cast<std::size_t>(p));
    for (; kk < k; ++kk)
      simd::fma_row(crow, arow[kk], pb + kk * p, static_cast<std::size_t>(p));
  }
  return c;
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose2d: need 2-D");
  long m = a.dim(0), n = a.dim(1);
  TensorT<T> out = TensorT<T>::zeros({n, m});
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

// ---- conv2d (cross-correlation, zero padding) ----

inline long conv_out_extent(long in, long k, long stride, long pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// col layout per image: [Cin*k*k, H'*W']
template <typename T>
void im2col(const T* img, long cin, long h, long w, long k, long stride,
            long pad, long ho, long wo, T* col) {
  for (long c = 0; c < cin; ++c) {
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (long oy = 0; oy < ho; ++oy) {
          long iy = oy * stride - pad + ky;
          for (long ox = 0; ox < wo; ++ox) {
            long ix = ox * stride - pad + kx;
            row[oy * wo + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? img[(c * h + iy) * w + ix]
                                                         : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, long cin, long h, long w, long k, long stride,
            long pad, long ho, long wo, T* img) {
  for (long c = 0; c < cin; ++c) {
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * ho * wo;
        for (long oy = 0; oy < ho; ++oy) {
          long iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (long ox = 0; ox < wo; ++ox) {
            long ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            img[(c * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight,
                  const TensorT<T>& bias, long stride, long pad) {
  if (input.ndim() != 4 || weight.ndim() != 4)
    throw std::invalid_argument("conv2d: need 4-D input and weight");
  long b = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  long cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw std::invalid_argument("conv2d: channel mismatch");
  if (weight.dim(3) != k || k % 2 == 0)
    throw std::invalid_argument("conv2d: kernel must be square with odd extent");
  if (bias.numel() != cout)
    throw std::invalid_argument("conv2d: bias length mismatch");
  long ho = conv_out_extent(h, k, stride, pad);
  long wo = conv_out_extent(w, k, stride, pad);
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: empty output");

  TensorT<T> out = TensorT<T>::zeros({b, cout, ho, wo});
  long ckk = cin * k * k;
  std::vector<T> col(static_cast<std::size_t>(ckk * ho * wo));
  TensorT<T> wmat = weight.reshape({cout, ckk});
  for (long ib = 0; ib < b; ++ib) {
    detail::im2col(input.data() + ib * cin * h * w, cin, h, w, k, stride, pad,
                   ho, wo, col.data());
    // out[ib] = wmat * col
    T* po = out.data() + ib * cout * ho * wo;
    long cols = ho * wo;
    for (long oc = 0; oc < cout; ++oc) {
      T* orow = po + oc * cols;
      const T* wrow = wmat.data() + oc * ckk;
      long kk = 0;
      for (; kk + 4 <= ckk; kk += 4)
        simd::fma_row4(orow, wrow + kk, col.data() + kk * cols,
                       col.data() + (kk + 1) * cols,
                       col.data() + (kk + 2) * cols,
                       col.data() + (kk + 3) * cols,
                       static_cast<std::size_t>(cols));
      for (; kk < ckk; ++kk)
        simd::fma_row(orow, wrow[kk], col.data() + kk * cols,
                      static_cast<std::size_t>(cols));
      T bv = bias[oc];
      for (long i = 0; i < cols; ++i) orow[i] += bv;
    }
  }
  return out;
}

// ---- gather / scatter along the batch axis ----

template <typename T>
TensorT<T> gather_batch(const TensorT<T>& t, const std::vector<long>& indices) {
  if (t.ndim() < 1) throw std::invalid_argument("gather_batch: 0-D tensor");
  long b = t.dim(0);
  long slice = t.numel() / b;
  Shape out_shape = t.shape();
  out_shape[0] = static_cast<long>(indices.size());
  if (indices.empty())
    throw std::invalid_argument("gather_batch: empty index list");
  TensorT<T> out = TensorT<T>::zeros(out_shape);
  for (std::size_t j = 0; j < indices.size(); ++j) {
    long idx = indices[j];
    if (idx < 0 || idx >= b)
      throw std::out_of_range("gather_batch: index " + std::to_string(idx) +
                              " out of [0," + std::to_string(b) + ")");
    std::copy_n(t.data() + idx * slice, slice, out.data() + long(j) * slice);
  }
  return out;
}

template <typename T>
TensorT<T> scatter_batch(const TensorT<T>& src, const std::vector<long>& indices,
                         long batch) {
  if (src.ndim() < 1 || src.dim(0) != static_cast<long>(indices.size()))
    throw std::invalid_argument("scatter_batch: index count mismatch");
  long slice = src.numel() / src.dim(0);
  Shape out_shape = src.shape();
  out_shape[0] = batch;
  TensorT<T> out = TensorT<T>::zeros(out_shape);
  for (std::size_t j = 0; j < indices.size(); ++j) {
    long idx = indices[j];
    if (idx < 0 || idx >= batch)
      throw std::out_of_range("scatter_batch: index " + std::to_string(idx) +
                              " out of [0," + std::to_string(batch) + ")");
    std::copy_n(src.data() + long(j) * slice, slice, out.data() + idx * slice);
  }
  return out;
}

// in-place variant used by the grouped executor
template <typename T>
void scatter_batch_into(TensorT<T>& dest, const TensorT<T>& src,
                        const std::vector<long>& indices) {
  long b = dest.dim(0);
  long slice = dest.numel() / b;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    long idx = indices[j];
    if (idx < 0 || idx >= b) throw std::out_of_range("scatter_batch_into");
    std::copy_n(src.data() + long(j) * slice, slice, dest.data() + idx * slice);
  }
}

// ---- reductions ----

enum class Reduce { Sum, Mean, Max, Argmax };

template <typename T>
TensorT<T> reduce(Reduce op, const TensorT<T>& t, std::vector<long> axes) {
  std::sort(axes.begin(), axes.end());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] < 0 || axes[i] >= static_cast<long>(t.ndim()))
      throw std::invalid_argument("reduce: invalid axis " +
                                  std::to_string(axes[i]));
    if (i > 0 && axes[i] == axes[i - 1])
      throw std::invalid_argument("reduce: duplicate axis");
  }
  // kept/reduced extents
  Shape out_shape;
  std::vector<bool> reduced(t.ndim(), false);
  for (long a : axes) reduced[static_cast<std::size_t>(a)] = true;
  for (std::size_t d = 0; d < t.ndim(); ++d)
    if (!reduced[d]) out_shape.push_back(t.dim(d));
  if (out_shape.empty()) out_shape.push_back(1);

  long out_n = shape_numel(out_shape);
  long red_n = t.numel() / out_n;

  // strides
  std::vector<long> strides(t.ndim());
  long acc = 1;
  for (long d = static_cast<long>(t.ndim()) - 1; d >= 0; --d) {
    strides[static_cast<std::size_t>(d)] = acc;
    acc *= t.dim(static_cast<std::size_t>(d));
  }
  std::vector<long> kept_dims, red_dims, kept_strides, red_strides;
  for (std::size_t d = 0; d < t.ndim(); ++d) {
    if (reduced[d]) {
      red_dims.push_back(t.dim(d));
      red_strides.push_back(strides[d]);
    } else {
      kept_dims.push_back(t.dim(d));
      kept_strides.push_back(strides[d]);
    }
  }

  auto offset_of = [](long lin, const std::vector<long>& dims,
                      const std::vector<long>& strs) {
    long off = 0;
    for (long d = static_cast<long>(dims.size()) - 1; d >= 0; --d) {
      off += (lin % dims[static_cast<std::size_t>(d)]) *
             strs[static_cast<std::size_t>(d)];
      lin /= dims[static_cast<std::size_t>(d)];
    }
    return off;
  };

  TensorT<T> out = TensorT<T>::zeros(out_shape);
  for (long o = 0; o < out_n; ++o) {
    long base = kept_dims.empty() ? 0 : offset_of(o, kept_dims, kept_strides);
    if (op == Reduce::Sum || op == Reduce::Mean) {
      T s = T(0);
      for (long r = 0; r < red_n; ++r)
        s += t[base + offset_of(r, red_dims, red_strides)];
      out[o] = op == Reduce::Mean ? s / static_cast<T>(red_n) : s;
    } else {
      T best = t[base + offset_of(0, red_dims, red_strides)];
      long best_i = 0;
      for (long r = 1; r < red_n; ++r) {
        T v = t[base + offset_of(r, red_dims, red_strides)];
        if (v > best) {  // ties keep the lowest index
          best = v;
          best_i = r;
        }
      }
      out[o] = op == Reduce::Max ? best : static_cast<T>(best_i);
    }
  }
  return out;
}

template <typename T>
T sum_all(const TensorT<T>& t) {
  T s = T(0);
  for (long i = 0; i < t.numel(); ++i) s += t[i];
  return s;
}

template <typename T>
T mean_all(const TensorT<T>& t) {
  return sum_all(t) / static_cast<T>(t.numel());
}

template <typename T>
T max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  T m = T(0);
  for (long i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
bool bit_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * a.numel()) == 0;
}

}  // namespace paa
