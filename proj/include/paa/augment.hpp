#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "paa/rng.hpp"
#include "paa/tensor.hpp"

namespace paa::augment {

enum class OpKind : int {
  Brightness = 0,
  Contrast,
  CutMix,
  Cutout,
  Invert,
  Mixup,
  Posterize,
  Solarize,
  RandomErasing,
  Rotate,
  Sharpness,
  Shear,
  Translate,
  Color,
  Equalize,
};

inline constexpr int kNumOps = 15;

inline const char* op_name(OpKind op) {
  static const char* names[kNumOps] = {
      "Brightness", "Contrast",  "CutMix",    "Cutout",        "Invert",
      "Mixup",      "Posterize", "Solarize",  "RandomErasing", "Rotate",
      "Sharpness",  "Shear",     "Translate", "Color",         "Equalize"};
  return names[static_cast<int>(op)];
}

inline bool is_mixing_op(OpKind op) {
  return op == OpKind::Mixup || op == OpKind::CutMix;
}

enum class Axis : int { X = 0, Y = 1 };

struct AugAction {
  OpKind op = OpKind::Brightness;
  double p = 0.0;       // apply probability
  double m = 0.0;       // magnitude, op-specific units
  Axis axis = Axis::X;  // Shear / Translate
  double lambda = 1.0;  // Mixup coefficient
  bool applied = false;           // Bernoulli(p) outcome, drawn before grouping
  bool degraded = false;          // mixing op without a partner -> identity
  long partner_image = -1;        // Mixup / CutMix
  long partner_patch = -1;
  std::uint64_t rng_key = 0;      // per-patch stream (RandomErasing noise)
};

struct PatchGrid {
  long n = 4;  // perfect square

  long side() const {
    long s = static_cast<long>(std::lround(std::sqrt(double(n))));
    if (s * s != n)
      throw std::invalid_argument("patch count " + std::to_string(n) +
                                  " is not a perfect square");
    return s;
  }
};

// [B,C,H,W] -> [B,N,C,H/s,W/s], row-major grid order
inline Tensor split_patches(const Tensor& images, const PatchGrid& grid) {
  long s = grid.side();
  long b = images.dim(0), c = images.dim(1), h = images.dim(2),
       w = images.dim(3);
  if (h % s != 0 || w % s != 0)
    throw std::invalid_argument("grid side " + std::to_string(s) +
                                " does not divide image extents " +
                                std::to_string(h) + "x" + std::to_string(w));
  long ph = h / s, pw = w / s;
  Tensor out = Tensor::zeros({b, grid.n, c, ph, pw});
  for (long ib = 0; ib < b; ++ib)
    for (long gy = 0; gy < s; ++gy)
      for (long gx = 0; gx < s; ++gx) {
        long pi = gy * s + gx;
        for (long ic = 0; ic < c; ++ic)
          for (long y = 0; y < ph; ++y) {
            const float* src =
                images.data() +
                (((ib * c + ic) * h + gy * ph + y) * w + gx * pw);
            float* dst = out.data() +
                         ((((ib * grid.n + pi) * c + ic) * ph + y) * pw);
            std::copy_n(src, pw, dst);
          }
      }
  return out;
}

inline Tensor merge_patches(const Tensor& patches, const PatchGrid& grid) {
  if (patches.ndim() != 5 || patches.dim(1) != grid.n)
    throw std::invalid_argument("merge_patches: expected [B,N,C,h,w] with N=" +
                                std::to_string(grid.n));
  long s = grid.side();
  long b = patches.dim(0), c = patches.dim(2), ph = patches.dim(3),
       pw = patches.dim(4);
  long h = ph * s, w = pw * s;
  Tensor out = Tensor::zeros({b, c, h, w});
  for (long ib = 0; ib < b; ++ib)
    for (long gy = 0; gy < s; ++gy)
      for (long gx = 0; gx < s; ++gx) {
        long pi = gy * s + gx;
        for (long ic = 0; ic < c; ++ic)
          for (long y = 0; y < ph; ++y) {
            const float* src =
                patches.data() +
                ((((ib * grid.n + pi) * c + ic) * ph + y) * pw);
            float* dst = out.data() +
                         (((ib * c + ic) * h + gy * ph + y) * w + gx * pw);
            std::copy_n(src, pw, dst);
          }
      }
  return out;
}

// Magnitude schedule: epoch_frac 0 maps to the mild end of each range,
// 1 to the most severe. p is always uniform on [0,1).
inline void sample_action_params(AugAction& a, double epoch_frac,
                                 CounterRng& rng) {
  a.p = rng.uniform();
  a.axis = rng.bernoulli(0.5) ? Axis::X : Axis::Y;
  a.lambda = 1.0;
  double f = std::clamp(epoch_frac, 0.0, 1.0);
  double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  switch (a.op) {
    case OpKind::Brightness:
    case OpKind::Contrast:
      a.m = 0.95 + f * (0.5 - 0.95);
      break;
    case OpKind::Sharpness:
      a.m = 1.0 + f * (0.5 - 1.0);
      break;
    case OpKind::Rotate:
      a.m = sign * f * 30.0;
      break;
    case OpKind::Shear:
      a.m = sign * f * 30.0;
      break;
    case OpKind::Translate:
      a.m = sign * f * 0.4;
      break;
    case OpKind::Color:
      a.m = sign * f * 0.3;
      break;
    case OpKind::Posterize:
      a.m = 3.0;  // bits
      break;
    case OpKind::Solarize:
      a.m = 0.1;  // threshold
      break;
    case OpKind::Mixup:
      a.lambda = rng.beta11();
      a.m = 0.0;
      break;
    case OpKind::CutMix:
      a.lambda = rng.beta11();  // bookkeeping only, output is the partner
      a.m = 0.0;
      break;
    default:
      a.m = 0.0;
      break;
  }
}

namespace detail {

inline float bilinear(const float* ch, long h, long w, double y, double x) {
  long y0 = static_cast<long>(std::floor(y));
  long x0 = static_cast<long>(std::floor(x));
  double fy = y - double(y0);
  double fx = x - double(x0);
  auto at = [&](long yy, long xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return ch[yy * w + xx];
  };
  double v = at(y0, x0) * (1.0 - fy) * (1.0 - fx) +
             at(y0, x0 + 1) * (1.0 - fy) * fx +
             at(y0 + 1, x0) * fy * (1.0 - fx) + at(y0 + 1, x0 + 1) * fy * fx;
  return static_cast<float>(v);
}

// inverse-mapped affine warp: [a b tx; c d ty] maps output coords (centered)
// to input coords
inline void affine_patch(const float* in, float* out, long c, long h, long w,
                         double a, double b, double tx, double cc, double d,
                         double ty) {
  double cy = (double(h) - 1.0) / 2.0;
  double cx = (double(w) - 1.0) / 2.0;
  for (long ic = 0; ic < c; ++ic) {
    const float* src = in + ic * h * w;
    float* dst = out + ic * h * w;
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double oy = double(y) - cy;
        double ox = double(x) - cx;
        double iy = cc * ox + d * oy + ty + cy;
        double ix = a * ox + b * oy + tx + cx;
        dst[y * w + x] = bilinear(src, h, w, iy, ix);
      }
  }
}

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s,
                       float& v) {
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx <= 0.0f ? 0.0f : d / mx;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d + (g < b ? 6.0f : 0.0f);
  else if (mx == g)
    h = (b - r) / d + 2.0f;
  else
    h = (r - g) / d + 4.0f;
  h /= 6.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g,
                       float& b) {
  if (s <= 0.0f) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  float hh = h * 6.0f;
  int i = std::min(5, static_cast<int>(hh));
  float f = hh - float(i);
  float p = v * (1.0f - s);
  float q = v * (1.0f - s * f);
  float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

// Exact-rank histogram equalization per channel: value v with cumulative
// count cum(v) maps to (cum(v) - cum_min) / (n - cum_min). Strictly
// increasing on the support, hence exactly idempotent.
inline void equalize_channel(float* ch, long n) {
  std::map<float, long> hist;
  for (long i = 0; i < n; ++i) ++hist[ch[i]];
  if (hist.size() <= 1) return;  // constant channel
  std::map<float, float> lut;
  long cum = 0;
  long c_first = hist.begin()->second;
  long denom = n - c_first;
  for (auto& [v, cnt] : hist) {
    cum += cnt;
    lut[v] = static_cast<float>(cum - c_first) / static_cast<float>(denom);
  }
  for (long i = 0; i < n; ++i) ch[i] = lut[ch[i]];
}

inline void blur3x3(const float* src, float* dst, long h, long w) {
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      int cnt = 0;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          long yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          s += src[yy * w + xx];
          ++cnt;
        }
      dst[y * w + x] = static_cast<float>(s / cnt);
    }
}

}  // namespace detail

// One batched kernel per group: `patches` holds every patch of the group,
// `actions` the per-patch parameters, `partners` the aligned partner patches
// for mixing ops. Each patch is transformed independently, so the result is
// identical whether patches arrive one at a time or as a group.
inline Tensor apply_operation(OpKind op, const Tensor& patches,
                              const std::vector<AugAction>& actions,
                              const Tensor* partners = nullptr) {
  if (patches.ndim() != 4)
    throw std::invalid_argument("apply_operation: expected [K,C,h,w]");
  long k = patches.dim(0), c = patches.dim(1), h = patches.dim(2),
       w = patches.dim(3);
  if (static_cast<long>(actions.size()) != k)
    throw std::invalid_argument("apply_operation: action count mismatch");
  if (is_mixing_op(op) && partners == nullptr)
    throw std::invalid_argument(std::string("apply_operation: ") +
                                op_name(op) + " requires partner patches");
  Tensor out = Tensor::zeros(patches.shape());
  long psz = c * h * w;
  long chw = h * w;

  for (long i = 0; i < k; ++i) {
    const AugAction& a = actions[i];
    const float* in = patches.data() + i * psz;
    float* o = out.data() + i * psz;
    switch (op) {
      case OpKind::Brightness: {
        float m = static_cast<float>(a.m);
        for (long j = 0; j < psz; ++j) o[j] = m * in[j];
        break;
      }
      case OpKind::Contrast: {
        // grayscale mean of the patch
        double mu = 0.0;
        if (c == 3) {
          for (long j = 0; j < chw; ++j)
            mu += 0.299 * in[j] + 0.587 * in[chw + j] + 0.114 * in[2 * chw + j];
          mu /= double(chw);
        } else {
          for (long j = 0; j < psz; ++j) mu += in[j];
          mu /= double(psz);
        }
        float fm = static_cast<float>(a.m);
        float fmu = static_cast<float>(mu);
        for (long j = 0; j < psz; ++j) o[j] = fmu + fm * (in[j] - fmu);
        break;
      }
      case OpKind::Invert:
        for (long j = 0; j < psz; ++j) o[j] = 1.0f - in[j];
        break;
      case OpKind::Equalize: {
        std::copy_n(in, psz, o);
        for (long ic = 0; ic < c; ++ic)
          detail::equalize_channel(o + ic * chw, chw);
        break;
      }
      case OpKind::Solarize: {
        float thr = static_cast<float>(a.m);
        for (long j = 0; j < psz; ++j)
          o[j] = in[j] > thr ? 1.0f - in[j] : in[j];
        break;
      }
      case OpKind::Posterize: {
        int bits = static_cast<int>(a.m);
        if (bits >= 8) {
          std::copy_n(in, psz, o);
        } else {
          int mask = 0xFF << (8 - bits);
          for (long j = 0; j < psz; ++j) {
            int v = static_cast<int>(
                std::clamp(in[j], 0.0f, 1.0f) * 255.0f);
            o[j] = static_cast<float>(v & mask) / 255.0f;
          }
        }
        break;
      }
      case OpKind::Sharpness: {
        float m = static_cast<float>(a.m);
        std::vector<float> blurred(static_cast<std::size_t>(chw));
        for (long ic = 0; ic < c; ++ic) {
          detail::blur3x3(in + ic * chw, blurred.data(), h, w);
          simd::axpby(o + ic * chw, m, in + ic * chw, 1.0f - m, blurred.data(),
                      static_cast<std::size_t>(chw));
        }
        break;
      }
      case OpKind::Color: {
        if (c != 3) {
          std::copy_n(in, psz, o);
          break;
        }
        float shift = static_cast<float>(a.m);
        for (long j = 0; j < chw; ++j) {
          float hh, ss, vv, r, g, b;
          detail::rgb_to_hsv(in[j], in[chw + j], in[2 * chw + j], hh, ss, vv);
          detail::hsv_to_rgb(hh + shift, ss, vv, r, g, b);
          o[j] = r;
          o[chw + j] = g;
          o[2 * chw + j] = b;
        }
        break;
      }
      case OpKind::Rotate: {
        double rad = a.m * 3.14159265358979323846 / 180.0;
        double cs = std::cos(rad), sn = std::sin(rad);
        // inverse rotation
        detail::affine_patch(in, o, c, h, w, cs, sn, 0.0, -sn, cs, 0.0);
        break;
      }
      case OpKind::Shear: {
        double t = std::tan(a.m * 3.14159265358979323846 / 180.0);
        if (a.axis == Axis::X)
          detail::affine_patch(in, o, c, h, w, 1.0, -t, 0.0, 0.0, 1.0, 0.0);
        else
          detail::affine_patch(in, o, c, h, w, 1.0, 0.0, 0.0, -t, 1.0, 0.0);
        break;
      }
      case OpKind::Translate: {
        double dx = a.axis == Axis::X ? -a.m * double(w) : 0.0;
        double dy = a.axis == Axis::Y ? -a.m * double(h) : 0.0;
        detail::affine_patch(in, o, c, h, w, 1.0, 0.0, dx, 0.0, 1.0, dy);
        break;
      }
      case OpKind::Cutout: {
        for (long ic = 0; ic < c; ++ic) {
          double mu = 0.0;
          for (long j = 0; j < chw; ++j) mu += in[ic * chw + j];
          float fill = static_cast<float>(mu / double(chw));
          std::fill_n(o + ic * chw, chw, fill);
        }
        break;
      }
      case OpKind::RandomErasing: {
        std::copy_n(in, psz, o);
        CounterRng rng(a.rng_key);
        double area = rng.uniform(0.09, 0.36) * double(chw);
        double aspect = rng.uniform(0.5, 2.0);
        long rh = std::clamp<long>(
            static_cast<long>(std::lround(std::sqrt(area * aspect))), 1, h);
        long rw = std::clamp<long>(
            static_cast<long>(std::lround(std::sqrt(area / aspect))), 1, w);
        long y0 = h > rh ? static_cast<long>(rng.below(h - rh + 1)) : 0;
        long x0 = w > rw ? static_cast<long>(rng.below(w - rw + 1)) : 0;
        for (long y = y0; y < y0 + rh; ++y)
          for (long x = x0; x < x0 + rw; ++x) {
            for (long ic = 0; ic < c; ++ic)
              o[ic * chw + y * w + x] = static_cast<float>(rng.uniform());
          }
        break;
      }
      case OpKind::Mixup: {
        const float* pp = partners->data() + i * psz;
        float lam = static_cast<float>(a.lambda);
        simd::axpby(o, lam, in, 1.0f - lam, pp,
                    static_cast<std::size_t>(psz));
        break;
      }
      case OpKind::CutMix: {
        const float* pp = partners->data() + i * psz;
        std::copy_n(pp, psz, o);
        break;
      }
    }
  }
  return clamp(out, 0.0f, 1.0f);
}

// Soft label for one image. `actions` are its N finalized per-patch actions;
// `partner_label_of` returns the one-hot label of a batch index.
inline Tensor mix_labels(const std::vector<AugAction>& actions,
                         const Tensor& own_label,
                         const std::function<Tensor(long)>& partner_label_of) {
  long classes = own_label.numel();
  auto check_one_hot = [&](const Tensor& y) {
    long ones = 0;
    for (long j = 0; j < y.numel(); ++j) {
      if (y[j] == 1.0f)
        ++ones;
      else if (y[j] != 0.0f)
        throw std::invalid_argument("mix_labels: label is not one-hot");
    }
    if (ones != 1) throw std::invalid_argument("mix_labels: label is not one-hot");
  };
  check_one_hot(own_label);
  long n = static_cast<long>(actions.size());
  Tensor out = Tensor::zeros({classes});
  for (const AugAction& a : actions) {
    if (a.applied && !a.degraded && a.op == OpKind::Mixup) {
      Tensor py = partner_label_of(a.partner_image);
      check_one_hot(py);
      float lam = static_cast<float>(a.lambda);
      for (long j = 0; j < classes; ++j)
        out[j] += (lam * own_label[j] + (1.0f - lam) * py[j]) /
                  static_cast<float>(n);
    } else if (a.applied && !a.degraded && a.op == OpKind::CutMix) {
      Tensor py = partner_label_of(a.partner_image);
      check_one_hot(py);
      for (long j = 0; j < classes; ++j)
        out[j] += py[j] / static_cast<float>(n);
    } else {
      for (long j = 0; j < classes; ++j)
        out[j] += own_label[j] / static_cast<float>(n);
    }
  }
  return out;
}

// Resolves every random choice before grouping: apply flags via Bernoulli(p),
// per-patch rng keys, and mixing partners drawn uniformly from the other
// patches in the same applied-op group. Singleton mixing groups degrade to
// identity and are recorded as such.
inline void finalize_plan(std::vector<AugAction>& actions, long batch, long n,
                          std::uint64_t seed, std::uint64_t step) {
  if (static_cast<long>(actions.size()) != batch * n)
    throw std::invalid_argument("finalize_plan: expected B*N actions");
  for (long b = 0; b < batch; ++b)
    for (long i = 0; i < n; ++i) {
      AugAction& a = actions[b * n + i];
      a.rng_key = CounterRng::derive_key(
          seed, {step, static_cast<std::uint64_t>(b),
                 static_cast<std::uint64_t>(i), 11});
      CounterRng rng(CounterRng::derive_key(
          seed, {step, static_cast<std::uint64_t>(b),
                 static_cast<std::uint64_t>(i), 12}));
      a.applied = rng.bernoulli(a.p);
      a.degraded = false;
      a.partner_image = -1;
      a.partner_patch = -1;
    }
  // partner assignment per mixing group
  for (OpKind op : {OpKind::Mixup, OpKind::CutMix}) {
    std::vector<long> group;
    for (long f = 0; f < batch * n; ++f)
      if (actions[f].applied && actions[f].op == op) group.push_back(f);
    if (group.size() == 1) {
      actions[group[0]].degraded = true;
      continue;
    }
    for (std::size_t gi = 0; gi < group.size(); ++gi) {
      long f = group[gi];
      CounterRng rng(CounterRng::derive_key(
          seed, {step, static_cast<std::uint64_t>(f), 13}));
      std::uint64_t pick = rng.below(group.size() - 1);
      long partner = group[pick >= gi ? pick + 1 : pick];
      actions[f].partner_image = partner / n;
      actions[f].partner_patch = partner % n;
    }
  }
}

struct PlanReport {
  int kernel_launches = 0;
  long degraded_patches = 0;
};

struct AugmentedBatch {
  Tensor images;       // [B,C,H,W]
  Tensor soft_labels;  // [B,classes]
  PlanReport report;
};

namespace detail {

inline Tensor patch_slice(const Tensor& patches, long b, long i) {
  long n = patches.dim(1), c = patches.dim(2), h = patches.dim(3),
       w = patches.dim(4);
  long psz = c * h * w;
  std::vector<float> d(patches.data() + (b * n + i) * psz,
                       patches.data() + (b * n + i + 1) * psz);
  return Tensor({1, c, h, w}, std::move(d));
}

inline Tensor labels_for_batch(const Tensor& labels,
                               const std::vector<AugAction>& actions, long b,
                               long n) {
  long classes = labels.dim(1);
  long batch = labels.dim(0);
  std::vector<AugAction> row(actions.begin() + b * n,
                             actions.begin() + (b + 1) * n);
  std::vector<float> own(labels.data() + b * classes,
                         labels.data() + (b + 1) * classes);
  (void)batch;
  return mix_labels(row, Tensor({classes}, std::move(own)), [&](long pb) {
    std::vector<float> py(labels.data() + pb * classes,
                          labels.data() + (pb + 1) * classes);
    return Tensor({classes}, std::move(py));
  });
}

}  // namespace detail

// Grouped executor: patches performing the same operation are gathered into
// one tensor per OpKind (at most 15 kernel launches per batch), transformed,
// and scattered back.
inline AugmentedBatch execute_plan(const Tensor& images, const Tensor& labels,
                                   const std::vector<AugAction>& actions,
                                   const PatchGrid& grid) {
  long batch = images.dim(0);
  long n = grid.n;
  if (static_cast<long>(actions.size()) != batch * n)
    throw std::invalid_argument("execute_plan: expected B*N actions");
  Tensor patches = split_patches(images, grid);
  long c = patches.dim(2), ph = patches.dim(3), pw = patches.dim(4);
  Tensor flat = patches.reshape({batch * n, c, ph, pw});
  Tensor result = flat;
  AugmentedBatch out;

  for (int opi = 0; opi < kNumOps; ++opi) {
    OpKind op = static_cast<OpKind>(opi);
    std::vector<long> idx;
    std::vector<AugAction> group_actions;
    for (long f = 0; f < batch * n; ++f) {
      const AugAction& a = actions[f];
      if (a.applied && !a.degraded && a.op == op) {
        idx.push_back(f);
        group_actions.push_back(a);
      }
      if (a.degraded && a.op == op) ++out.report.degraded_patches;
    }
    if (idx.empty()) continue;
    Tensor group = gather_batch(flat, idx);
    Tensor transformed;
    if (is_mixing_op(op)) {
      std::vector<long> pidx;
      for (const AugAction& a : group_actions)
        pidx.push_back(a.partner_image * n + a.partner_patch);
      Tensor partners = gather_batch(flat, pidx);
      transformed = apply_operation(op, group, group_actions, &partners);
    } else {
      transformed = apply_operation(op, group, group_actions);
    }
    scatter_batch_into(result, transformed, idx);
    ++out.report.kernel_launches;
  }

  out.images = merge_patches(result.reshape({batch, n, c, ph, pw}), grid);
  out.soft_labels = Tensor::zeros({batch, labels.dim(1)});
  for (long b = 0; b < batch; ++b) {
    Tensor y = detail::labels_for_batch(labels, actions, b, n);
    std::copy_n(y.data(), y.numel(),
                out.soft_labels.data() + b * labels.dim(1));
  }
  return out;
}

// Naive per-patch reference executor; must agree with execute_plan bit for
// bit on the same finalized plan.
inline AugmentedBatch execute_sequential(const Tensor& images,
                                         const Tensor& labels,
                                         const std::vector<AugAction>& actions,
                                         const PatchGrid& grid) {
  long batch = images.dim(0);
  long n = grid.n;
  Tensor patches = split_patches(images, grid);
  long c = patches.dim(2), ph = patches.dim(3), pw = patches.dim(4);
  Tensor result = patches;
  long psz = c * ph * pw;
  AugmentedBatch out;

  for (long b = 0; b < batch; ++b)
    for (long i = 0; i < n; ++i) {
      const AugAction& a = actions[b * n + i];
      if (!a.applied || a.degraded) continue;
      Tensor one = detail::patch_slice(patches, b, i);
      Tensor transformed;
      if (is_mixing_op(a.op)) {
        Tensor partner =
            detail::patch_slice(patches, a.partner_image, a.partner_patch);
        transformed = apply_operation(a.op, one, {a}, &partner);
      } else {
        transformed = apply_operation(a.op, one, {a});
      }
      std::copy_n(transformed.data(), psz, result.data() + (b * n + i) * psz);
      ++out.report.kernel_launches;
    }

  out.images = merge_patches(result, grid);
  out.soft_labels = Tensor::zeros({batch, labels.dim(1)});
  for (long b = 0; b < batch; ++b) {
    Tensor y = detail::labels_for_batch(labels, actions, b, n);
    std::copy_n(y.data(), y.numel(),
                out.soft_labels.data() + b * labels.dim(1));
  }
  return out;
}

}  // namespace paa::augment
