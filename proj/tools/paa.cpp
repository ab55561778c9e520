// paa: patch-wise learned augmentation toolkit.
// Subcommands: train, augment, inspect, bench, selftest.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error, 3 data error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "paa/augment.hpp"
#include "paa/autodiff.hpp"
#include "paa/dataset.hpp"
#include "paa/image_io.hpp"
#include "paa/marl.hpp"
#include "paa/nn.hpp"
#include "paa/simd.hpp"
#include "paa/tensor.hpp"
#include "paa/trainer.hpp"

namespace fs = std::filesystem;
using paa::Tensor;
using paa::TensorT;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

void add_train_options(CLI::App* cmd, paa::trainer::TrainConfig& cfg) {
  cmd->add_option("--n_patches", cfg.n_patches, "patches per image (perfect square)");
  cmd->add_option("--batch_size", cfg.batch_size, "training batch size");
  cmd->add_option("--epochs", cfg.epochs, "training epochs");
  cmd->add_option("--target_lr", cfg.target_lr, "target network learning rate");
  cmd->add_option("--target_wd", cfg.target_wd, "target network weight decay");
  cmd->add_option("--target_momentum", cfg.target_momentum, "target SGD momentum");
  cmd->add_option("--lr_decay", cfg.lr_decay, "lr schedule: cosine | multistep");
  cmd->add_option("--lr_steps", cfg.lr_steps, "multistep decay epochs");
  cmd->add_option("--policy_lr", cfg.policy_lr, "actor/critic learning rate");
  cmd->add_option("--entropy_coef", cfg.entropy_coef, "entropy bonus weight");
  cmd->add_option("--gamma", cfg.gamma, "discount factor (inert at horizon 1)");
  cmd->add_option("--horizon", cfg.horizon, "decision steps per image");
  cmd->add_option("--seed", cfg.seed, "master random seed");
  cmd->add_option("--dataset", cfg.dataset, "dataset: synth | cifar10");
  cmd->add_option("--data_dir", cfg.data_dir, "cifar10 binary batch directory");
  cmd->add_option("--subset", cfg.subset, "cifar10: keep first k images per class");
  cmd->add_option("--synth_train", cfg.synth_train, "synthetic train set size");
  cmd->add_option("--synth_test", cfg.synth_test, "synthetic test set size");
  cmd->add_option("--synth_classes", cfg.synth_classes, "synthetic class count");
  cmd->add_option("--policy", cfg.policy,
                  "augmentation policy: marl | random | independent | off");
  cmd->add_option("--reward_sign", cfg.reward_sign,
                  "reward orientation: paper | adversarial");
  cmd->add_option("--probe_size", cfg.probe_size,
                  "images probed for the per-epoch usage analysis");
}

// ---- train ----

int cmd_train(const paa::trainer::TrainConfig& cfg, const std::string& out_dir,
              const std::string& resume, bool quiet, long stop_after) {
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  }
  if (cfg.dataset == "cifar10" && !fs::is_directory(cfg.data_dir)) {
    std::fprintf(stderr, "data error: cifar10 directory not found: %s\n",
                 cfg.data_dir.c_str());
    return kExitData;
  }
  paa::trainer::Trainer tr;
  tr.cfg = cfg;
  try {
    tr.init();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  }
  try {
    auto last =
        paa::trainer::run_training_loop(tr, out_dir, resume, quiet, stop_after);
    if (!quiet)
      std::fprintf(stderr, "done: final test accuracy %.4f\n",
                   last.test_accuracy);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}

// ---- augment ----

int cmd_augment(const std::string& ckpt, const std::string& image_dir,
                const std::string& out_dir, long n_patches,
                const std::string& mode, const std::string& policy_name,
                std::uint64_t seed, double epoch_frac) {
  if (mode != "greedy" && mode != "sample") {
    std::fprintf(stderr, "config error: mode must be greedy or sample\n");
    return kExitUsage;
  }
  if (policy_name != "marl" && policy_name != "random") {
    std::fprintf(stderr, "config error: policy must be marl or random\n");
    return kExitUsage;
  }
  if (!fs::is_directory(image_dir)) {
    std::fprintf(stderr, "data error: image directory not found: %s\n",
                 image_dir.c_str());
    return kExitData;
  }
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(image_dir))
    if (entry.path().extension() == ".png") inputs.push_back(entry.path());
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) {
    std::fprintf(stderr, "data error: no .png files under %s\n",
                 image_dir.c_str());
    return kExitData;
  }
  fs::create_directories(out_dir);

  paa::marl::PolicyBundle<float> bundle;
  bool built = false;
  long ok = 0, failed = 0, index = 0;
  for (const auto& path : inputs) {
    ++index;
    try {
      Tensor img = paa::io::read_png(path.string());
      long hw = img.dim(1);
      if (img.dim(2) != hw)
        throw std::runtime_error("image is not square");
      paa::augment::PatchGrid grid{n_patches};
      if (hw % grid.side() != 0)
        throw std::runtime_error("image side not divisible by grid side");
      if (!built) {
        bundle = paa::marl::build_policy<float>(
            n_patches, hw,
            policy_name == "random" ? paa::marl::PolicyMode::Random
                                    : paa::marl::PolicyMode::Marl,
            seed);
        if (policy_name == "marl") {
          if (ckpt.empty())
            throw std::runtime_error("policy marl needs --checkpoint");
          paa::trainer::restore_policy(bundle,
                                       paa::trainer::load_arrays(ckpt));
        }
        bundle.actor.train_mode = false;  // inference on running statistics
        built = true;
      }
      Tensor x = img.reshape({1, img.dim(0), hw, hw});
      auto sel = paa::marl::select_actions(bundle, x, epoch_frac,
                                           mode == "greedy", seed,
                                           static_cast<std::uint64_t>(index));
      paa::augment::finalize_plan(sel.actions, 1, n_patches, seed,
                                  static_cast<std::uint64_t>(index));
      Tensor label = Tensor::zeros({1, 2});
      label[0] = 1.0f;
      auto aug = paa::augment::execute_plan(x, label, sel.actions, grid);

      fs::path stem = path.stem();
      Tensor out_img = aug.images.reshape({img.dim(0), hw, hw});
      paa::io::write_png((fs::path(out_dir) / (stem.string() + ".aug.png"))
                             .string(),
                         out_img);
      std::ofstream sidecar(fs::path(out_dir) / (stem.string() + ".ops.txt"));
      for (long i = 0; i < n_patches; ++i) {
        const auto& a = sel.actions[i];
        char buf[128];
        std::snprintf(buf, sizeof(buf), "patch %ld: op=%s p=%.4f m=%.4f\n", i,
                      paa::augment::op_name(a.op), a.p, a.m);
        sidecar << buf;
      }
      ++ok;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "warning: skipping %s: %s\n", path.c_str(),
                   e.what());
      ++failed;
    }
  }
  std::fprintf(stderr, "augmented %ld image(s), %ld skipped\n", ok, failed);
  return ok == 0 ? kExitRuntime : kExitOk;
}

// ---- inspect ----

int cmd_inspect(const std::string& run_dir, const std::string& overlay_out,
                std::uint64_t seed) {
  fs::path usage_path = fs::path(run_dir) / "policy_usage.csv";
  if (!fs::is_directory(run_dir) || !fs::exists(usage_path)) {
    std::fprintf(stderr, "data error: run directory (policy_usage.csv) not found: %s\n",
                 run_dir.c_str());
    return kExitData;
  }
  std::ifstream in(usage_path);
  std::string line;
  std::getline(in, line);  // header
  // (epoch, bin) -> op -> fraction
  std::map<std::pair<long, std::string>, std::map<std::string, double>> table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string epoch_s, bin, op, frac_s;
    std::getline(row, epoch_s, ',');
    std::getline(row, bin, ',');
    std::getline(row, op, ',');
    std::getline(row, frac_s, ',');
    table[{std::stol(epoch_s), bin}][op] += std::stod(frac_s);
  }
  bool sums_ok = true;
  for (const auto& [key, ops] : table) {
    double sum = 0.0;
    for (const auto& [op, f] : ops) sum += f;
    if (std::abs(sum - 1.0) > 1e-6) {
      sums_ok = false;
      std::fprintf(stderr, "epoch %ld bin %s: fractions sum to %.9f\n",
                   key.first, key.second.c_str(), sum);
    }
  }
  std::printf("epoch,bin,op,fraction\n");
  for (const auto& [key, ops] : table)
    for (const auto& [op, f] : ops)
      std::printf("%ld,%s,%s,%.9g\n", key.first, key.second.c_str(),
                  op.c_str(), f);

  if (!overlay_out.empty()) {
    // latest checkpoint drives a Grad-CAM overlay on one synthetic probe image
    long best = -1;
    fs::path best_path;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
      std::string name = entry.path().filename().string();
      if (name.rfind("ckpt_epoch_", 0) == 0 &&
          entry.path().extension() == ".bin") {
        long e = std::stol(name.substr(11));
        if (e > best) {
          best = e;
          best_path = entry.path();
        }
      }
    }
    if (best < 0) {
      std::fprintf(stderr, "data error: no checkpoints in %s\n",
                   run_dir.c_str());
      return kExitData;
    }
    auto arrays = paa::trainer::load_arrays(best_path.string());
    auto cfg = paa::trainer::parse_config_text(
        paa::trainer::checkpoint_config_text(arrays));
    paa::trainer::Trainer tr;
    tr.cfg = cfg;
    tr.cfg.seed = seed ? seed : cfg.seed;
    tr.init();
    tr.load_checkpoint(best_path.string());
    auto probe = paa::data::take(tr.train_set, 0, 1);
    long classes = probe.num_classes;
    long truth = 0;
    for (long c = 0; c < classes; ++c)
      if (probe.labels[c] == 1.0f) truth = c;
    Tensor map = paa::trainer::grad_cam(tr.target, probe.images, truth);
    float peak = 0.0f;
    for (long i = 0; i < map.numel(); ++i) peak = std::max(peak, map[i]);
    long hw = probe.images.dim(2);
    Tensor base = probe.images.reshape({3, hw, hw});
    Tensor overlay = base;
    long mh = map.dim(0), mw = map.dim(1);
    for (long y = 0; y < hw; ++y)
      for (long x = 0; x < hw; ++x) {
        float heat = peak > 0.0f
                         ? map[(y * mh / hw) * mw + (x * mw / hw)] / peak
                         : 0.0f;
        long off = y * hw + x;
        overlay[off] = 0.5f * base[off] + 0.5f * heat;          // red channel
        overlay[hw * hw + off] = 0.5f * base[hw * hw + off];
        overlay[2 * hw * hw + off] = 0.5f * base[2 * hw * hw + off];
      }
    paa::io::write_png(overlay_out, paa::io::hstack_images({base, overlay}));
    std::fprintf(stderr, "wrote overlay %s (checkpoint epoch %ld)\n",
                 overlay_out.c_str(), best);
  }
  return sums_ok ? kExitOk : kExitRuntime;
}

// ---- bench ----

int cmd_bench(long batch, long n_patches, long iters, std::uint64_t seed) {
  if (iters <= 0) {
    std::fprintf(stderr, "config error: iters must be > 0\n");
    return kExitUsage;
  }
  paa::augment::PatchGrid grid{n_patches};
  paa::CounterRng rng(paa::CounterRng::derive_key(seed, {99}));
  Tensor images = Tensor::zeros({batch, 3, 32, 32});
  for (long i = 0; i < images.numel(); ++i)
    images[i] = static_cast<float>(rng.uniform());
  Tensor labels = Tensor::zeros({batch, 2});
  for (long b = 0; b < batch; ++b) labels[b * 2 + (b % 2)] = 1.0f;

  std::vector<paa::augment::AugAction> actions(
      static_cast<std::size_t>(batch * n_patches));
  for (auto& a : actions) {
    a.op = static_cast<paa::augment::OpKind>(rng.below(paa::nn::kNumOps));
    paa::augment::sample_action_params(a, 0.5, rng);
  }
  paa::augment::finalize_plan(actions, batch, n_patches, seed, 0);

  auto grouped = paa::augment::execute_plan(images, labels, actions, grid);
  auto sequential =
      paa::augment::execute_sequential(images, labels, actions, grid);
  if (!paa::bit_equal(grouped.images, sequential.images) ||
      !paa::bit_equal(grouped.soft_labels, sequential.soft_labels)) {
    std::fprintf(stderr, "equality gate FAILED: grouped != sequential\n");
    return kExitRuntime;
  }
  std::printf("equality gate: ok (max abs diff 0)\n");

  using clock = std::chrono::steady_clock;
  auto time_loop = [&](auto&& fn) {
    auto t0 = clock::now();
    for (long i = 0; i < iters; ++i) fn();
    auto t1 = clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / double(iters);
  };
  double tg = time_loop([&] {
    paa::augment::execute_plan(images, labels, actions, grid);
  });
  double ts = time_loop([&] {
    paa::augment::execute_sequential(images, labels, actions, grid);
  });
  double speedup = tg > 0.0 ? ts / tg : 0.0;
  std::printf("grouped   : %.6f s/iter\n", tg);
  std::printf("sequential: %.6f s/iter\n", ts);
  std::printf("speedup   : %.2fx (%d kernel launches, isa %s)\n", speedup,
              grouped.report.kernel_launches,
              paa::simd::isa_name(paa::simd::active_isa()).c_str());
  if (speedup < 1.0)
    std::printf("note: grouped path slower than sequential on this input "
                "(possible regression)\n");
  return kExitOk;
}

// ---- selftest ----

struct CheckResult {
  std::string name;
  bool ok;
  std::string detail;
};

void report(std::vector<CheckResult>& out, const std::string& name, bool ok,
            const std::string& detail = "") {
  out.push_back({name, ok, detail});
}

void selftest_grad(std::vector<CheckResult>& out, std::uint64_t seed,
                   bool inject_bug) {
  using D = double;
  const D tol = 1e-5;
  paa::CounterRng rng(paa::CounterRng::derive_key(seed, {55}));
  auto rand_tensor = [&](paa::Shape shape) {
    TensorT<D> t = TensorT<D>::zeros(shape);
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
  };

  {  // conv2d input gradient
    TensorT<D> x = rand_tensor({2, 2, 5, 5});
    TensorT<D> w = rand_tensor({3, 2, 3, 3});
    TensorT<D> b = rand_tensor({3});
    paa::ad::Tape<D> tape;
    auto xv = tape.leaf(x, true);
    auto y = paa::ad::conv2d(xv, tape.leaf(w, false), tape.leaf(b, false), 2, 1);
    auto loss = paa::ad::mean_all(paa::ad::square(y));
    tape.backward(loss);
    TensorT<D> g = tape.grad(xv);
    if (inject_bug) g[0] += 1e-3;
    auto f = [&](const TensorT<D>& xx) {
      paa::ad::Tape<D> t2;
      auto yy = paa::ad::conv2d(t2.leaf(xx, false), t2.leaf(w, false),
                                t2.leaf(b, false), 2, 1);
      return paa::ad::mean_all(paa::ad::square(yy)).value().item();
    };
    D err = paa::ad::finite_diff_check<D>(f, x, g, 1e-5);
    report(out, "grad.conv2d", err <= tol, "max rel err " + std::to_string(err));
  }
  {  // batchnorm gamma gradient, train mode
    TensorT<D> x = rand_tensor({3, 2, 4, 4});
    TensorT<D> gamma = rand_tensor({2});
    TensorT<D> beta = rand_tensor({2});
    paa::ad::Tape<D> tape;
    auto gv = tape.leaf(gamma, true);
    auto y = paa::ad::batchnorm2d<D>(tape.leaf(x, false), gv,
                                  tape.leaf(beta, false), nullptr, nullptr,
                                  true, false);
    auto loss = paa::ad::mean_all(paa::ad::square(y));
    tape.backward(loss);
    TensorT<D> g = tape.grad(gv);
    auto f = [&](const TensorT<D>& gg) {
      paa::ad::Tape<D> t2;
      auto yy = paa::ad::batchnorm2d<D>(t2.leaf(x, false), t2.leaf(gg, false),
                                     t2.leaf(beta, false), nullptr, nullptr,
                                     true, false);
      return paa::ad::mean_all(paa::ad::square(yy)).value().item();
    };
    D err = paa::ad::finite_diff_check<D>(f, gamma, g, 1e-6);
    report(out, "grad.batchnorm", err <= tol,
           "max rel err " + std::to_string(err));
  }
  {  // soft cross-entropy logits gradient
    TensorT<D> logits = rand_tensor({4, 5});
    TensorT<D> labels = TensorT<D>::zeros({4, 5});
    for (long i = 0; i < 4; ++i) labels[i * 5 + (i % 5)] = 1.0;
    paa::ad::Tape<D> tape;
    auto lv = tape.leaf(logits, true);
    auto loss = paa::ad::soft_cross_entropy(lv, labels);
    tape.backward(loss);
    TensorT<D> g = tape.grad(lv);
    auto f = [&](const TensorT<D>& ll) {
      paa::ad::Tape<D> t2;
      return paa::ad::soft_cross_entropy(t2.leaf(ll, false), labels)
          .value()
          .item();
    };
    D err = paa::ad::finite_diff_check<D>(f, logits, g, 1e-6);
    report(out, "grad.soft_cross_entropy", err <= tol,
           "max rel err " + std::to_string(err));
  }
  {  // policy-gradient style loss through softmax + gather + log
    TensorT<D> logits = rand_tensor({3, 6});
    std::vector<long> picks = {1, 4, 2};
    paa::ad::Tape<D> tape;
    auto lv = tape.leaf(logits, true);
    auto probs = paa::ad::softmax_rows(lv);
    auto loss = paa::ad::mean_all(
        paa::ad::log(paa::ad::gather_rows(probs, picks)));
    tape.backward(loss);
    TensorT<D> g = tape.grad(lv);
    auto f = [&](const TensorT<D>& ll) {
      paa::ad::Tape<D> t2;
      auto p = paa::ad::softmax_rows(t2.leaf(ll, false));
      return paa::ad::mean_all(paa::ad::log(paa::ad::gather_rows(p, picks)))
          .value()
          .item();
    };
    D err = paa::ad::finite_diff_check<D>(f, logits, g, 1e-6);
    report(out, "grad.actor_logprob", err <= tol,
           "max rel err " + std::to_string(err));
  }
}

void selftest_kernels(std::vector<CheckResult>& out, std::uint64_t seed) {
  using namespace paa::augment;
  paa::CounterRng rng(paa::CounterRng::derive_key(seed, {56}));
  Tensor patch = Tensor::zeros({1, 3, 8, 8});
  for (long i = 0; i < patch.numel(); ++i)
    patch[i] = static_cast<float>(rng.uniform());

  auto apply_one = [&](OpKind op, const Tensor& in, float m) {
    std::vector<AugAction> acts(1);
    acts[0].op = op;
    acts[0].m = m;
    acts[0].applied = true;
    acts[0].rng_key = 42;
    return apply_operation(op, in, acts, nullptr);
  };

  Tensor inv2 = apply_one(OpKind::Invert, apply_one(OpKind::Invert, patch, 0),
                          0);
  // 1-(1-x) can differ from x by one rounding step near 0
  report(out, "kernel.invert_involution",
         paa::max_abs_diff(inv2, patch) <= 1e-7f);

  Tensor eq1 = apply_one(OpKind::Equalize, patch, 0);
  Tensor eq2 = apply_one(OpKind::Equalize, eq1, 0);
  report(out, "kernel.equalize_idempotent", paa::bit_equal(eq1, eq2));

  Tensor bright = apply_one(OpKind::Brightness, patch, 1.0f);
  report(out, "kernel.brightness_identity", paa::bit_equal(bright, patch));

  {  // grouped vs sequential
    long batch = 4, n = 4;
    PatchGrid grid{n};
    Tensor images = Tensor::zeros({batch, 3, 32, 32});
    for (long i = 0; i < images.numel(); ++i)
      images[i] = static_cast<float>(rng.uniform());
    Tensor labels = Tensor::zeros({batch, 2});
    for (long b = 0; b < batch; ++b) labels[b * 2 + (b % 2)] = 1.0f;
    std::vector<AugAction> actions(static_cast<std::size_t>(batch * n));
    for (auto& a : actions) {
      a.op = static_cast<OpKind>(rng.below(paa::nn::kNumOps));
      sample_action_params(a, 0.5, rng);
    }
    finalize_plan(actions, batch, n, seed, 1);
    auto grouped = execute_plan(images, labels, actions, grid);
    auto sequential = execute_sequential(images, labels, actions, grid);
    report(out, "kernel.grouped_equals_sequential",
           paa::bit_equal(grouped.images, sequential.images) &&
               paa::bit_equal(grouped.soft_labels, sequential.soft_labels));
  }

  if (paa::simd::avx2_supported()) {
    Tensor a = Tensor::zeros({37, 23}), b = Tensor::zeros({23, 19});
    for (long i = 0; i < a.numel(); ++i)
      a[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
    for (long i = 0; i < b.numel(); ++i)
      b[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
    paa::simd::Isa prev = paa::simd::active_isa();
    paa::simd::force_isa(paa::simd::Isa::Scalar);
    Tensor c_scalar = paa::matmul(a, b);
    paa::simd::force_isa(paa::simd::Isa::Avx2Fma);
    Tensor c_avx2 = paa::matmul(a, b);
    paa::simd::force_isa(prev);
    report(out, "kernel.simd_matmul_bitexact", paa::bit_equal(c_scalar, c_avx2));
  } else {
    report(out, "kernel.simd_matmul_bitexact", true, "skipped: no AVX2");
  }
}

void selftest_bandit(std::vector<CheckResult>& out, std::uint64_t seed) {
  double p = paa::marl::run_bandit<float>(4, 800, 1e-3f, seed);
  report(out, "bandit.convergence", p >= 0.5,
         "mean prob " + std::to_string(p) + " after 800 updates");
}

int cmd_selftest(const std::string& only, std::uint64_t seed,
                 bool inject_bug) {
  if (only != "all" && only != "grad" && only != "kernels" &&
      only != "bandit") {
    std::fprintf(stderr,
                 "config error: --only must be all|grad|kernels|bandit\n");
    return kExitUsage;
  }
  std::vector<CheckResult> results;
  if (only == "all" || only == "grad") selftest_grad(results, seed, inject_bug);
  if (only == "all" || only == "kernels") selftest_kernels(results, seed);
  if (only == "all" || only == "bandit") selftest_bandit(results, seed);
  int failures = 0;
  for (const auto& r : results) {
    std::printf("[%s] %s%s%s\n", r.ok ? "pass" : "FAIL", r.name.c_str(),
                r.detail.empty() ? "" : ": ", r.detail.c_str());
    if (!r.ok) ++failures;
  }
  if (failures) std::printf("%d self-test failure(s)\n", failures);
  return failures ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patch-wise learned augmentation toolkit"};
  app.require_subcommand(1);

  // train
  paa::trainer::TrainConfig cfg;
  std::string out_dir = "run";
  std::string resume;
  bool quiet = false;
  long stop_after = -1;
  CLI::App* train = app.add_subcommand("train", "co-train policy and target");
  add_train_options(train, cfg);
  train->add_option("--out", out_dir, "run directory");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_flag("--quiet", quiet, "suppress progress output");
  train->add_option("--stop_after", stop_after,
                    "stop after this epoch index (simulated interruption)");
  train->set_config("--config", "", "flat key = value config file");
  train->allow_config_extras(false);

  // augment
  std::string a_ckpt, a_images, a_out = "augmented";
  long a_n = 4;
  std::string a_mode = "greedy", a_policy = "marl";
  std::uint64_t a_seed = 1;
  double a_frac = 1.0;
  CLI::App* aug = app.add_subcommand("augment", "apply a policy to PNG images");
  aug->add_option("--checkpoint", a_ckpt, "trained checkpoint (.bin)");
  aug->add_option("--images", a_images, "input PNG directory")->required();
  aug->add_option("--out", a_out, "output directory");
  aug->add_option("--n_patches", a_n, "patches per image");
  aug->add_option("--mode", a_mode, "greedy | sample");
  aug->add_option("--policy", a_policy, "marl | random");
  aug->add_option("--seed", a_seed, "random seed");
  aug->add_option("--epoch_frac", a_frac, "magnitude schedule position [0,1]");

  // inspect
  std::string i_run, i_overlay;
  std::uint64_t i_seed = 0;
  CLI::App* ins = app.add_subcommand("inspect", "summarize a run directory");
  ins->add_option("--run", i_run, "run directory")->required();
  ins->add_option("--overlay", i_overlay, "write a Grad-CAM overlay PNG here");
  ins->add_option("--seed", i_seed, "random seed (0 = reuse run seed)");

  // bench
  long b_batch = 16, b_n = 16, b_iters = 20;
  std::uint64_t b_seed = 1;
  CLI::App* bench =
      app.add_subcommand("bench", "time grouped vs sequential execution");
  bench->add_option("--batch", b_batch, "batch size");
  bench->add_option("--n_patches", b_n, "patches per image");
  bench->add_option("--iters", b_iters, "timing iterations");
  bench->add_option("--seed", b_seed, "random seed");

  // selftest
  std::string s_only = "all";
  std::uint64_t s_seed = 1;
  bool s_inject = false;
  CLI::App* self = app.add_subcommand("selftest", "run built-in checks");
  self->add_option("--only", s_only, "all | grad | kernels | bandit");
  self->add_option("--seed", s_seed, "random seed");
  self->add_flag("--inject_grad_bug", s_inject,
                 "perturb one analytic gradient (verifies the checker)")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(cfg, out_dir, resume, quiet, stop_after);
    if (aug->parsed())
      return cmd_augment(a_ckpt, a_images, a_out, a_n, a_mode, a_policy,
                         a_seed, a_frac);
    if (ins->parsed()) return cmd_inspect(i_run, i_overlay, i_seed);
    if (bench->parsed()) return cmd_bench(b_batch, b_n, b_iters, b_seed);
    if (self->parsed()) return cmd_selftest(s_only, s_seed, s_inject);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
