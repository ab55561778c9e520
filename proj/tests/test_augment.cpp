#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "paa/augment.hpp"
#include "paa/rng.hpp"
#include "paa/tensor.hpp"

using namespace paa;
using namespace paa::augment;

namespace {

Tensor rand_image_batch(long b, long c, long h, long w, std::uint64_t key) {
  CounterRng rng(key);
  std::vector<float> v(static_cast<std::size_t>(b * c * h * w));
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor({b, c, h, w}, std::move(v));
}

Tensor one_patch(std::uint64_t key, long c = 3, long h = 8, long w = 8) {
  return rand_image_batch(1, c, h, w, key);
}

AugAction act(OpKind op, double m = 0.0) {
  AugAction a;
  a.op = op;
  a.m = m;
  return a;
}

Tensor apply_one(OpKind op, const Tensor& patch, AugAction a,
                 const Tensor* partner = nullptr) {
  return apply_operation(op, patch, {a}, partner);
}

Tensor onehot(long cls, long classes) {
  Tensor y = Tensor::zeros({classes});
  y[cls] = 1.0f;
  return y;
}

}  // namespace

TEST_CASE("op_name covers all fifteen operations in enum order") {
  const char* expect[kNumOps] = {
      "Brightness", "Contrast",  "CutMix",    "Cutout",        "Invert",
      "Mixup",      "Posterize", "Solarize",  "RandomErasing", "Rotate",
      "Sharpness",  "Shear",     "Translate", "Color",         "Equalize"};
  for (int i = 0; i < kNumOps; ++i)
    CHECK(std::string(op_name(static_cast<OpKind>(i))) == expect[i]);
  CHECK(is_mixing_op(OpKind::Mixup));
  CHECK(is_mixing_op(OpKind::CutMix));
  CHECK_FALSE(is_mixing_op(OpKind::Cutout));
}

TEST_CASE("split/merge round-trips bit for bit") {
  for (long n : {4L, 16L}) {
    PatchGrid grid{n};
    auto imgs = rand_image_batch(3, 3, 32, 32, 100 + n);
    auto patches = split_patches(imgs, grid);
    long s = grid.side();
    CHECK(patches.shape() == Shape{3, n, 3, 32 / s, 32 / s});
    CHECK(bit_equal(merge_patches(patches, grid), imgs));
  }
  // patch content: patch 1 of a 2x2 grid is the top-right quadrant
  PatchGrid g4{4};
  auto imgs = rand_image_batch(1, 1, 4, 4, 9);
  auto p = split_patches(imgs, g4);
  CHECK(p[1 * 4 + 0] == imgs[0 * 4 + 2]);  // patch1(0,0) == img(0,2)
  CHECK(p[1 * 4 + 3] == imgs[1 * 4 + 3]);  // patch1(1,1) == img(1,3)

  CHECK_THROWS_AS(PatchGrid{5}.side(), std::invalid_argument);
  CHECK_THROWS_AS(split_patches(rand_image_batch(1, 1, 5, 5, 10), g4),
                  std::invalid_argument);
}

TEST_CASE("brightness and contrast follow their affine definitions") {
  auto x = one_patch(21);
  auto b = apply_one(OpKind::Brightness, x, act(OpKind::Brightness, 0.6));
  for (long j = 0; j < x.numel(); ++j)
    CHECK(b[j] == doctest::Approx(std::clamp(0.6f * x[j], 0.0f, 1.0f))
                      .epsilon(1e-6));
  // m = 1 is the identity bit for bit
  CHECK(bit_equal(apply_one(OpKind::Brightness, x, act(OpKind::Brightness, 1.0)),
                  x));

  auto c = apply_one(OpKind::Contrast, x, act(OpKind::Contrast, 0.5));
  long chw = 64;
  double mu = 0.0;
  for (long j = 0; j < chw; ++j)
    mu += 0.299 * x[j] + 0.587 * x[chw + j] + 0.114 * x[2 * chw + j];
  mu /= chw;
  for (long j = 0; j < x.numel(); ++j) {
    float expect = static_cast<float>(mu) +
                   0.5f * (x[j] - static_cast<float>(mu));
    CHECK(c[j] == doctest::Approx(std::clamp(expect, 0.0f, 1.0f)).epsilon(1e-5));
  }
}

TEST_CASE("invert is its own inverse to within float rounding") {
  auto x = one_patch(31);
  auto once = apply_one(OpKind::Invert, x, act(OpKind::Invert));
  for (long j = 0; j < x.numel(); ++j) CHECK(once[j] == 1.0f - x[j]);
  auto twice = apply_one(OpKind::Invert, once, act(OpKind::Invert));
  // 1-(1-x) can round in float, so the involution holds to 1e-7, not exactly
  CHECK(max_abs_diff(twice, x) <= 1e-7f);
}

TEST_CASE("equalize is idempotent and spans [0,1]") {
  auto x = one_patch(41);
  auto e1 = apply_one(OpKind::Equalize, x, act(OpKind::Equalize));
  auto e2 = apply_one(OpKind::Equalize, e1, act(OpKind::Equalize));
  CHECK(bit_equal(e2, e1));
  // each channel of a non-constant patch maps its min to 0 and max to 1
  for (long ic = 0; ic < 3; ++ic) {
    float mn = 2.0f, mx = -1.0f;
    for (long j = 0; j < 64; ++j) {
      mn = std::min(mn, e1[ic * 64 + j]);
      mx = std::max(mx, e1[ic * 64 + j]);
    }
    CHECK(mn == 0.0f);
    CHECK(mx == 1.0f);
  }
  // constant channel is left unchanged
  Tensor flat({1, 1, 2, 2}, std::vector<float>{0.3f, 0.3f, 0.3f, 0.3f});
  CHECK(bit_equal(apply_one(OpKind::Equalize, flat, act(OpKind::Equalize)),
                  flat));
}

TEST_CASE("solarize flips only values above the threshold") {
  Tensor x({1, 1, 2, 2}, std::vector<float>{0.05f, 0.1f, 0.4f, 0.9f});
  auto s = apply_one(OpKind::Solarize, x, act(OpKind::Solarize, 0.1));
  CHECK(s[0] == 0.05f);
  CHECK(s[1] == 0.1f);  // not strictly greater
  CHECK(s[2] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(s[3] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("posterize quantizes to 2^bits levels per channel") {
  auto x = one_patch(51);
  auto p3 = apply_one(OpKind::Posterize, x, act(OpKind::Posterize, 3.0));
  std::set<float> levels;
  for (long j = 0; j < p3.numel(); ++j) levels.insert(p3[j]);
  CHECK(levels.size() <= 8);
  // value check: mask keeps the top 3 bits of the 8-bit code
  for (long j = 0; j < x.numel(); ++j) {
    int v = static_cast<int>(std::clamp(x[j], 0.0f, 1.0f) * 255.0f);
    CHECK(p3[j] == static_cast<float>(v & 0xE0) / 255.0f);
  }
  // bits >= 8 is the identity
  CHECK(bit_equal(apply_one(OpKind::Posterize, x, act(OpKind::Posterize, 8.0)),
                  x));
}

TEST_CASE("sharpness blends the patch with its 3x3 box blur") {
  auto x = one_patch(61, 1, 4, 4);
  // m = 1 keeps the original (modulo the axpby evaluation, still bit-exact:
  // 1*x + 0*blur)
  auto s1 = apply_one(OpKind::Sharpness, x, act(OpKind::Sharpness, 1.0));
  CHECK(max_abs_diff(s1, x) <= 1e-7f);
  // m = 0 is exactly the blur
  auto s0 = apply_one(OpKind::Sharpness, x, act(OpKind::Sharpness, 0.0));
  std::vector<float> blurred(16);
  augment::detail::blur3x3(x.data(), blurred.data(), 4, 4);
  for (long j = 0; j < 16; ++j)
    CHECK(s0[j] == doctest::Approx(std::clamp(blurred[j], 0.0f, 1.0f))
                       .epsilon(1e-6));
}

TEST_CASE("color shift is a hue rotation; zero shift is near-identity") {
  auto x = one_patch(71);
  auto c0 = apply_one(OpKind::Color, x, act(OpKind::Color, 0.0));
  CHECK(max_abs_diff(c0, x) <= 1e-6f);
  // a full-cycle shift of 1.0 also returns to the original hue
  auto c1 = apply_one(OpKind::Color, x, act(OpKind::Color, 1.0));
  CHECK(max_abs_diff(c1, x) <= 1e-6f);
  // grayscale patches pass through untouched
  auto g = one_patch(72, 1);
  CHECK(bit_equal(apply_one(OpKind::Color, g, act(OpKind::Color, 0.2)), g));
}

TEST_CASE("geometric ops at zero magnitude are bit-exact identities") {
  auto x = one_patch(81);
  CHECK(bit_equal(apply_one(OpKind::Rotate, x, act(OpKind::Rotate, 0.0)), x));
  auto sh = act(OpKind::Shear, 0.0);
  sh.axis = Axis::Y;
  CHECK(bit_equal(apply_one(OpKind::Shear, x, sh), x));
  CHECK(bit_equal(apply_one(OpKind::Translate, x, act(OpKind::Translate, 0.0)),
                  x));
}

TEST_CASE("translate moves content by the expected pixel offset") {
  // 4x4 single-channel, bright pixel at (1,1); translate by +0.25 in X moves
  // it one pixel right
  Tensor x = Tensor::zeros({1, 1, 4, 4});
  x[1 * 4 + 1] = 1.0f;
  auto a = act(OpKind::Translate, 0.25);
  a.axis = Axis::X;
  auto t = apply_one(OpKind::Translate, x, a);
  CHECK(t[1 * 4 + 2] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(t[1 * 4 + 1] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("rotate by 180 degrees reverses the patch") {
  auto x = one_patch(82, 1, 5, 5);
  auto r = apply_one(OpKind::Rotate, x, act(OpKind::Rotate, 180.0));
  for (long y = 0; y < 5; ++y)
    for (long xx = 0; xx < 5; ++xx)
      CHECK(r[y * 5 + xx] ==
            doctest::Approx(x[(4 - y) * 5 + (4 - xx)]).epsilon(1e-5));
}

TEST_CASE("cutout fills each channel with its exact mean") {
  auto x = one_patch(91);
  auto c = apply_one(OpKind::Cutout, x, act(OpKind::Cutout));
  for (long ic = 0; ic < 3; ++ic) {
    double mu = 0.0;
    for (long j = 0; j < 64; ++j) mu += x[ic * 64 + j];
    float fill = static_cast<float>(mu / 64.0);
    for (long j = 0; j < 64; ++j) CHECK(c[ic * 64 + j] == fill);
  }
  // idempotent: the mean of a constant channel is that constant
  CHECK(bit_equal(apply_one(OpKind::Cutout, c, act(OpKind::Cutout)), c));
}

TEST_CASE("random erasing is keyed, bounded, and leaves the rest untouched") {
  auto x = one_patch(92);
  auto a = act(OpKind::RandomErasing);
  a.rng_key = 777;
  auto e1 = apply_one(OpKind::RandomErasing, x, a);
  auto e2 = apply_one(OpKind::RandomErasing, x, a);
  CHECK(bit_equal(e1, e2));  // same key, same noise
  a.rng_key = 778;
  auto e3 = apply_one(OpKind::RandomErasing, x, a);
  CHECK_FALSE(bit_equal(e1, e3));
  // changed pixels form one axis-aligned rectangle, identical across channels
  long min_y = 8, max_y = -1, min_x = 8, max_x = -1;
  for (long y = 0; y < 8; ++y)
    for (long xx = 0; xx < 8; ++xx)
      if (e1[y * 8 + xx] != x[y * 8 + xx]) {
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
        min_x = std::min(min_x, xx);
        max_x = std::max(max_x, xx);
      }
  REQUIRE(max_y >= 0);
  long area = (max_y - min_y + 1) * (max_x - min_x + 1);
  CHECK(area >= 1);
  CHECK(area <= 64);
  for (long j = 0; j < e1.numel(); ++j) {
    CHECK(e1[j] >= 0.0f);
    CHECK(e1[j] <= 1.0f);
  }
}

TEST_CASE("mixup and cutmix combine partner patches") {
  auto x = one_patch(93);
  auto p = one_patch(94);
  auto a = act(OpKind::Mixup);
  a.lambda = 0.25;
  auto m = apply_one(OpKind::Mixup, x, a, &p);
  for (long j = 0; j < x.numel(); ++j)
    CHECK(m[j] ==
          doctest::Approx(std::clamp(0.25f * x[j] + 0.75f * p[j], 0.0f, 1.0f))
              .epsilon(1e-6));
  // lambda = 1 keeps the original patch
  a.lambda = 1.0;
  CHECK(max_abs_diff(apply_one(OpKind::Mixup, x, a, &p), x) <= 1e-7f);

  auto cm = apply_one(OpKind::CutMix, x, act(OpKind::CutMix), &p);
  CHECK(bit_equal(cm, p));

  CHECK_THROWS_AS(apply_one(OpKind::Mixup, x, a), std::invalid_argument);
  CHECK_THROWS_AS(apply_one(OpKind::CutMix, x, act(OpKind::CutMix)),
                  std::invalid_argument);
}

TEST_CASE("outputs always stay inside [0,1]") {
  auto x = one_patch(95);
  for (int opi = 0; opi < kNumOps; ++opi) {
    OpKind op = static_cast<OpKind>(opi);
    auto a = act(op, 0.5);
    a.lambda = 0.5;
    a.rng_key = 5;
    auto partner = one_patch(96);
    auto out = is_mixing_op(op) ? apply_one(op, x, a, &partner)
                                : apply_one(op, x, a);
    for (long j = 0; j < out.numel(); ++j) {
      CHECK(out[j] >= 0.0f);
      CHECK(out[j] <= 1.0f);
    }
  }
}

TEST_CASE("mix_labels computes the exact per-patch average") {
  long n = 4, classes = 4;
  auto own = onehot(0, classes);
  auto partner_label = [&](long) { return onehot(1, classes); };

  // one Mixup patch at lambda 0.5, three untouched patches:
  // (0.5*own + 0.5*partner)/4 + 3*own/4 = [0.875, 0.125, 0, 0]
  std::vector<AugAction> actions(n);
  actions[0].op = OpKind::Mixup;
  actions[0].applied = true;
  actions[0].lambda = 0.5;
  actions[0].partner_image = 1;
  auto y = mix_labels(actions, own, partner_label);
  CHECK(y[0] == doctest::Approx(0.875).epsilon(1e-7));
  CHECK(y[1] == doctest::Approx(0.125).epsilon(1e-7));
  CHECK(y[2] == 0.0f);
  CHECK(y[3] == 0.0f);

  // one CutMix patch: partner/4 + 3*own/4 = [0.75, 0.25, 0, 0]
  std::vector<AugAction> actions2(n);
  actions2[0].op = OpKind::CutMix;
  actions2[0].applied = true;
  actions2[0].partner_image = 1;
  auto y2 = mix_labels(actions2, own, partner_label);
  CHECK(y2[0] == doctest::Approx(0.75).epsilon(1e-7));
  CHECK(y2[1] == doctest::Approx(0.25).epsilon(1e-7));

  // non-mixing / not-applied / degraded patches all keep the own label
  std::vector<AugAction> actions3(n);
  actions3[0].op = OpKind::Mixup;
  actions3[0].applied = true;
  actions3[0].degraded = true;
  auto y3 = mix_labels(actions3, own, partner_label);
  CHECK(y3[0] == doctest::Approx(1.0).epsilon(1e-6));

  // output is a simplex
  float s = 0.0f;
  for (long j = 0; j < classes; ++j) s += y[j];
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));

  Tensor not_onehot({4}, std::vector<float>{0.5f, 0.5f, 0.0f, 0.0f});
  CHECK_THROWS_AS(mix_labels(actions, not_onehot, partner_label),
                  std::invalid_argument);
}

TEST_CASE("finalize_plan: determinism, partner validity, degraded singletons") {
  long batch = 6, n = 4;
  auto make_actions = [&]() {
    std::vector<AugAction> actions(batch * n);
    CounterRng rng(4242);
    for (auto& a : actions) {
      a.op = static_cast<OpKind>(rng.below(kNumOps));
      a.p = rng.uniform();
    }
    return actions;
  };

  auto a1 = make_actions();
  auto a2 = make_actions();
  finalize_plan(a1, batch, n, 7, 3);
  finalize_plan(a2, batch, n, 7, 3);
  for (std::size_t i = 0; i < a1.size(); ++i) {
    CHECK(a1[i].applied == a2[i].applied);
    CHECK(a1[i].partner_image == a2[i].partner_image);
    CHECK(a1[i].partner_patch == a2[i].partner_patch);
    CHECK(a1[i].rng_key == a2[i].rng_key);
  }
  auto a3 = make_actions();
  finalize_plan(a3, batch, n, 8, 3);  // different seed changes the plan
  bool any_diff = false;
  for (std::size_t i = 0; i < a1.size(); ++i)
    if (a1[i].applied != a3[i].applied || a1[i].rng_key != a3[i].rng_key)
      any_diff = true;
  CHECK(any_diff);

  // every applied mixing patch has a valid partner that is not itself and
  // belongs to the same applied-op group
  for (long f = 0; f < batch * n; ++f) {
    const AugAction& a = a1[f];
    if (!a.applied || !is_mixing_op(a.op) || a.degraded) continue;
    long pf = a.partner_image * n + a.partner_patch;
    CHECK(pf != f);
    CHECK(a.partner_image >= 0);
    CHECK(a.partner_image < batch);
    CHECK(a.partner_patch >= 0);
    CHECK(a.partner_patch < n);
    CHECK(a1[pf].op == a.op);
    CHECK(a1[pf].applied);
  }

  // p = 0 never applies; p = 1 always applies
  std::vector<AugAction> edge(batch * n);
  for (long f = 0; f < batch * n; ++f) {
    edge[f].op = OpKind::Brightness;
    edge[f].p = f % 2 == 0 ? 0.0 : 1.0;
  }
  finalize_plan(edge, batch, n, 9, 0);
  for (long f = 0; f < batch * n; ++f)
    CHECK(edge[f].applied == (f % 2 != 0));

  // a lone applied mixing patch degrades to identity
  std::vector<AugAction> lone(batch * n);
  for (auto& a : lone) {
    a.op = OpKind::Brightness;
    a.p = 0.0;
  }
  lone[5].op = OpKind::Mixup;
  lone[5].p = 1.0;
  finalize_plan(lone, batch, n, 10, 0);
  CHECK(lone[5].applied);
  CHECK(lone[5].degraded);

  std::vector<AugAction> wrong(3);
  CHECK_THROWS_AS(finalize_plan(wrong, batch, n, 1, 0), std::invalid_argument);
}

TEST_CASE("grouped executor is bit-identical to the sequential reference") {
  long batch = 5, n = 4, classes = 3;
  PatchGrid grid{n};
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    auto imgs = rand_image_batch(batch, 3, 16, 16, 500 + seed);
    Tensor labels = Tensor::zeros({batch, classes});
    for (long b = 0; b < batch; ++b) labels[b * classes + b % classes] = 1.0f;

    std::vector<AugAction> actions(batch * n);
    CounterRng rng(900 + seed);
    for (auto& a : actions) {
      a.op = static_cast<OpKind>(rng.below(kNumOps));
      sample_action_params(a, 0.7, rng);
      a.p = 0.8;  // high apply rate to exercise the kernels
    }
    finalize_plan(actions, batch, n, seed, 17);

    auto grouped = execute_plan(imgs, labels, actions, grid);
    auto sequential = execute_sequential(imgs, labels, actions, grid);
    CHECK(bit_equal(grouped.images, sequential.images));
    CHECK(bit_equal(grouped.soft_labels, sequential.soft_labels));
    CHECK(grouped.report.kernel_launches <= kNumOps);
    // soft labels stay simplex rows
    for (long b = 0; b < batch; ++b) {
      float s = 0.0f;
      for (long j = 0; j < classes; ++j) s += grouped.soft_labels[b * classes + j];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
    for (long j = 0; j < grouped.images.numel(); ++j) {
      CHECK(grouped.images[j] >= 0.0f);
      CHECK(grouped.images[j] <= 1.0f);
    }
  }
}

TEST_CASE("sample_action_params maps epoch_frac to the documented ranges") {
  CounterRng rng(777);
  for (int trial = 0; trial < 50; ++trial) {
    AugAction a;
    a.op = OpKind::Brightness;
    sample_action_params(a, 0.0, rng);
    CHECK(a.m == doctest::Approx(0.95));
    sample_action_params(a, 1.0, rng);
    CHECK(a.m == doctest::Approx(0.5));

    a.op = OpKind::Rotate;
    sample_action_params(a, 1.0, rng);
    CHECK(std::abs(a.m) == doctest::Approx(30.0));
    sample_action_params(a, 0.0, rng);
    CHECK(a.m == 0.0);

    a.op = OpKind::Mixup;
    sample_action_params(a, 0.5, rng);
    CHECK(a.lambda >= 0.0);
    CHECK(a.lambda <= 1.0);

    a.op = OpKind::Translate;
    sample_action_params(a, 0.5, rng);
    CHECK(std::abs(a.m) <= 0.2 + 1e-12);
    CHECK(a.p >= 0.0);
    CHECK(a.p < 1.0);
  }
}
