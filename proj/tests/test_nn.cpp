#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "paa/nn.hpp"
#include "paa/rng.hpp"
#include "paa/tensor.hpp"

using namespace paa;

namespace {

Tensor rand_tensor(Shape shape, std::uint64_t key, double lo = -1.0,
                   double hi = 1.0) {
  CounterRng rng(key);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

bool params_bit_equal(nn::Network<float>& a, nn::Network<float>& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!bit_equal(*pa[i], *pb[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("actor output is a probability simplex over the 15 ops") {
  auto actor = nn::build_actor<float>(16 + 16, 1);
  actor.train_mode = false;
  for (long hw : {8, 16}) {
    auto x = rand_tensor({5, 32, hw, hw}, 100 + hw);
    auto p = actor.infer(x);
    REQUIRE(p.shape() == Shape{5, nn::kNumOps});
    for (long i = 0; i < 5; ++i) {
      float s = 0.0f;
      for (long j = 0; j < nn::kNumOps; ++j) {
        CHECK(p[i * nn::kNumOps + j] >= 0.0f);
        s += p[i * nn::kNumOps + j];
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("critic maps state vectors to one value per sample") {
  auto critic = nn::build_critic<float>(1568, 1);
  auto s = rand_tensor({3, 1568}, 7);
  auto v = critic.infer(s);
  CHECK(v.shape() == Shape{3, 1});
  CHECK(v.all_finite());
}

TEST_CASE("encoder geometry: state map, observation, embedding") {
  auto enc = nn::build_encoder<float>(1);
  auto imgs = rand_tensor({2, 3, 32, 32}, 11, 0.0, 1.0);
  auto state = enc.state_map(imgs);
  CHECK(state.shape() == Shape{2, 32, 7, 7});
  CHECK(state.numel() / 2 == 1568);

  auto patches = rand_tensor({8, 3, 16, 16}, 12, 0.0, 1.0);
  auto obs = enc.observation(patches);
  CHECK(obs.shape() == Shape{8, 16, 8, 8});

  auto emb = enc.state_embedding(state);
  CHECK(emb.shape() == Shape{2, 16});
  CHECK(emb.all_finite());

  CHECK_FALSE(enc.net.trainable);
  CHECK_FALSE(enc.net.train_mode);
}

TEST_CASE("target CNN maps images to class logits") {
  auto net = nn::build_target_cnn<float>(10, 1);
  auto x = rand_tensor({4, 3, 32, 32}, 13, 0.0, 1.0);
  auto logits = net.infer(x);
  CHECK(logits.shape() == Shape{4, 10});
  CHECK(logits.all_finite());
}

TEST_CASE("seeded initialization is deterministic and seed-sensitive") {
  auto a1 = nn::build_actor<float>(32, 5);
  auto a2 = nn::build_actor<float>(32, 5);
  auto a3 = nn::build_actor<float>(32, 6);
  CHECK(params_bit_equal(a1, a2));
  CHECK_FALSE(params_bit_equal(a1, a3));

  auto t1 = nn::build_target_cnn<float>(10, 5);
  auto t2 = nn::build_target_cnn<float>(10, 5);
  CHECK(params_bit_equal(t1, t2));

  // component networks under the same seed draw from distinct streams
  auto c1 = nn::build_critic<float>(1568, 5);
  CHECK(c1.layers[0].w[0] != a1.layers[1].w[0]);
}

TEST_CASE("soft cross entropy on uniform logits equals ln(num_classes)") {
  auto z10 = Tensor::zeros({2, 10});
  auto y10 = Tensor::zeros({2, 10});
  y10[4] = 1.0f;
  y10[10 + 9] = 1.0f;
  CHECK(nn::soft_cross_entropy_value(z10, y10) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-6));

  auto z15 = Tensor::zeros({1, 15});
  auto y15 = Tensor::zeros({1, 15});
  y15[3] = 1.0f;
  CHECK(nn::soft_cross_entropy_value(z15, y15) ==
        doctest::Approx(std::log(15.0)).epsilon(1e-6));
}

TEST_CASE("sgd_step applies w -= lr * (g + wd * w) exactly") {
  Tensor w({3}, std::vector<float>{1.0f, -2.0f, 0.5f});
  Tensor g({3}, std::vector<float>{0.1f, 0.2f, -0.3f});
  Tensor expect = w;
  float lr = 0.5f, wd = 0.01f;
  for (long i = 0; i < 3; ++i) expect[i] -= lr * (g[i] + wd * expect[i]);
  nn::sgd_step(w, g, lr, wd);
  CHECK(bit_equal(w, expect));
  Tensor bad({2}, std::vector<float>{0, 0});
  CHECK_THROWS_AS(nn::sgd_step(w, bad, lr, wd), std::invalid_argument);
}

TEST_CASE("Sgd with momentum matches the hand-rolled velocity recurrence") {
  nn::Sgd<float> opt;
  opt.lr = 0.1f;
  opt.momentum = 0.9f;
  opt.weight_decay = 0.01f;

  Tensor w({2}, std::vector<float>{1.0f, -1.0f});
  Tensor g1({2}, std::vector<float>{0.5f, -0.25f});
  Tensor g2({2}, std::vector<float>{-0.125f, 0.75f});

  Tensor wr = w;
  Tensor v = Tensor::zeros({2});
  for (const Tensor* g : {&g1, &g2}) {
    for (long i = 0; i < 2; ++i) {
      v[i] = opt.momentum * v[i] + (*g)[i] + opt.weight_decay * wr[i];
      wr[i] -= opt.lr * v[i];
    }
  }

  std::vector<Tensor*> params{&w};
  opt.step(params, {g1});
  opt.step(params, {g2});
  CHECK(bit_equal(w, wr));

  CHECK_THROWS_AS(opt.step(params, {}), std::invalid_argument);
}

TEST_CASE("batchnorm eval path applies the running-statistics affine map") {
  nn::Network<float> net;
  net.name = "bn";
  net.train_mode = false;
  auto bn = nn::detail::bn_layer<float>(2);
  bn.gamma = Tensor({2}, std::vector<float>{2.0f, 0.5f});
  bn.beta = Tensor({2}, std::vector<float>{0.1f, -0.1f});
  bn.run_mean = Tensor({2}, std::vector<float>{0.25f, -0.5f});
  bn.run_var = Tensor({2}, std::vector<float>{4.0f, 1.0f});
  net.layers.push_back(bn);

  auto x = rand_tensor({2, 2, 2, 2}, 31);
  auto y = net.infer(x);
  for (long i = 0; i < 2; ++i)
    for (long ch = 0; ch < 2; ++ch)
      for (long j = 0; j < 4; ++j) {
        long off = (i * 2 + ch) * 4 + j;
        float inv = 1.0f / std::sqrt(bn.run_var[ch] + 1e-5f);
        float expect =
            bn.gamma[ch] * (x[off] - bn.run_mean[ch]) * inv + bn.beta[ch];
        CHECK(y[off] == doctest::Approx(expect).epsilon(1e-6));
      }
}

TEST_CASE("tape forward matches infer in eval mode and records parameters") {
  auto net = nn::build_target_cnn<float>(4, 3);
  net.train_mode = false;
  auto x = rand_tensor({2, 3, 16, 16}, 41, 0.0, 1.0);

  ad::Tape<float> tape;
  nn::ForwardRecord<float> rec;
  auto out = net.forward(tape, tape.leaf(x, false), &rec);
  CHECK(bit_equal(out.value(), net.infer(x)));
  CHECK(rec.params.size() == net.parameters().size());
  CHECK(rec.last_conv_node >= 0);
  // the hook points at a conv output: [B, 32, h, w] for the second conv
  CHECK(tape.value(rec.last_conv_node).dim(1) == 32);
}
