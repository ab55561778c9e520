#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "paa/augment.hpp"
#include "paa/dataset.hpp"
#include "paa/marl.hpp"
#include "paa/nn.hpp"
#include "paa/tensor.hpp"

namespace paa::trainer {

struct TrainConfig {
  long n_patches = 4;
  long batch_size = 128;
  long epochs = 10;
  double target_lr = 0.1;
  double target_wd = 5e-4;
  double target_momentum = 0.9;
  std::string lr_decay = "cosine";  // cosine | multistep
  std::vector<long> lr_steps = {30, 60, 90};
  double policy_lr = 1e-4;
  double entropy_coef = 0.0;
  double gamma = 0.99;
  long horizon = 1;
  std::uint64_t seed = 1;
  std::string dataset = "synth";  // synth | cifar10
  std::string data_dir;
  long subset = 0;  // cifar10: first k per class
  long synth_train = 2000;
  long synth_test = 500;
  long synth_classes = 2;
  std::string policy = "marl";       // marl | random | independent | off
  std::string reward_sign = "paper";  // paper | adversarial
  long probe_size = 256;
  long log_interval_epochs = 1;

  void validate() const {
    augment::PatchGrid{n_patches}.side();  // perfect square check
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (target_lr <= 0 || policy_lr <= 0)
      throw std::invalid_argument("learning rates must be > 0");
    if (dataset != "synth" && dataset != "cifar10")
      throw std::invalid_argument("unknown dataset: " + dataset);
    if (policy != "marl" && policy != "random" && policy != "independent" &&
        policy != "off")
      throw std::invalid_argument("unknown policy: " + policy);
    if (reward_sign != "paper" && reward_sign != "adversarial")
      throw std::invalid_argument("unknown reward_sign: " + reward_sign);
    if (lr_decay != "cosine" && lr_decay != "multistep")
      throw std::invalid_argument("unknown lr_decay: " + lr_decay);
  }

  marl::PolicyMode policy_mode() const {
    if (policy == "marl") return marl::PolicyMode::Marl;
    if (policy == "random") return marl::PolicyMode::Random;
    if (policy == "independent") return marl::PolicyMode::Independent;
    return marl::PolicyMode::Off;
  }

  std::string snapshot() const {
    std::ostringstream os;
    os << "n_patches = " << n_patches << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "epochs = " << epochs << "\n";
    os << "target_lr = " << target_lr << "\n";
    os << "target_wd = " << target_wd << "\n";
    os << "target_momentum = " << target_momentum << "\n";
    os << "lr_decay = " << lr_decay << "\n";
    os << "lr_steps =";
    for (long s : lr_steps) os << " " << s;
    os << "\n";
    os << "policy_lr = " << policy_lr << "\n";
    os << "entropy_coef = " << entropy_coef << "\n";
    os << "gamma = " << gamma << "\n";
    os << "horizon = " << horizon << "\n";
    os << "seed = " << seed << "\n";
    os << "dataset = " << dataset << "\n";
    os << "data_dir = " << data_dir << "\n";
    os << "subset = " << subset << "\n";
    os << "synth_train = " << synth_train << "\n";
    os << "synth_test = " << synth_test << "\n";
    os << "synth_classes = " << synth_classes << "\n";
    os << "policy = " << policy << "\n";
    os << "reward_sign = " << reward_sign << "\n";
    os << "probe_size = " << probe_size << "\n";
    return os.str();
  }
};

// ---- Grad-CAM ----

// alpha_k = spatial mean of d(logit_class)/dA_k over the last conv maps A_k;
// map = relu(sum_k alpha_k A_k)
inline Tensor grad_cam(nn::Network<float>& target, const Tensor& image,
                       long class_index) {
  ad::Tape<float> tape;
  auto x = tape.leaf(image, false);
  nn::ForwardRecord<float> rec;
  bool was_train = target.train_mode;
  target.train_mode = false;
  auto logits = target.forward(tape, x, &rec, false);
  target.train_mode = was_train;
  if (rec.last_conv_node < 0)
    throw std::invalid_argument("grad_cam: network has no conv layer");
  long classes = logits.value().dim(1);
  if (class_index < 0 || class_index >= classes)
    throw std::out_of_range("grad_cam: class index " +
                            std::to_string(class_index));
  auto picked = ad::gather_rows(logits, {class_index});
  auto scalar = ad::sum_all(picked);
  tape.backward(scalar);

  ad::Var<float> conv{&tape, rec.last_conv_node};
  Tensor act = tape.value(rec.last_conv_node);
  Tensor grad = tape.grad(conv);
  long c = act.dim(1), h = act.dim(2), w = act.dim(3);
  Tensor map = Tensor::zeros({h, w});
  for (long k = 0; k < c; ++k) {
    float alpha = 0.0f;
    for (long j = 0; j < h * w; ++j) alpha += grad[k * h * w + j];
    alpha /= float(h * w);
    for (long j = 0; j < h * w; ++j) map[j] += alpha * act[k * h * w + j];
  }
  return relu(map);
}

inline const char* bin_name(int bin) {
  static const char* names[4] = {"very-important", "important", "normal",
                                 "not-important"};
  return names[bin];
}

// Patch score = mean map value over the patch footprint (nearest-neighbor
// resampling of the map to image resolution); quartile split over ranked
// patches, ties broken by patch index.
inline std::vector<int> bin_patch_importance(const Tensor& map,
                                             const augment::PatchGrid& grid,
                                             long image_hw) {
  long s = grid.side();
  long mh = map.dim(0), mw = map.dim(1);
  long ph = image_hw / s;
  std::vector<double> scores(grid.n, 0.0);
  for (long gy = 0; gy < s; ++gy)
    for (long gx = 0; gx < s; ++gx) {
      double sum = 0.0;
      for (long y = 0; y < ph; ++y)
        for (long x = 0; x < ph; ++x) {
          long iy = gy * ph + y, ix = gx * ph + x;
          long my = iy * mh / image_hw, mx = ix * mw / image_hw;
          sum += map[my * mw + mx];
        }
      scores[gy * s + gx] = sum / double(ph * ph);
    }
  std::vector<long> order(grid.n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<int> bins(grid.n, 0);
  for (long rank = 0; rank < grid.n; ++rank)
    bins[order[rank]] = static_cast<int>(rank * 4 / grid.n);
  return bins;
}

// ---- checkpoint format ----
// little-endian: magic "PAA1", version u32, array count u32; per array:
// name length u32, name bytes, dtype u8 (0=f32,1=f64,2=u64), ndim u32,
// dims u64[], raw data

struct NamedArrays {
  std::vector<std::pair<std::string, Tensor>> f32;
  std::vector<std::pair<std::string, std::vector<std::uint64_t>>> u64;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_arrays(const std::string& path, const NamedArrays& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write("PAA1", 4);
  detail::write_pod<std::uint32_t>(os, 1);
  detail::write_pod<std::uint32_t>(
      os, static_cast<std::uint32_t>(arrays.f32.size() + arrays.u64.size()));
  auto header = [&](const std::string& name, std::uint8_t dtype,
                    const std::vector<std::uint64_t>& dims) {
    detail::write_pod<std::uint32_t>(os,
                                     static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint8_t>(os, dtype);
    detail::write_pod<std::uint32_t>(os,
                                     static_cast<std::uint32_t>(dims.size()));
    for (std::uint64_t d : dims) detail::write_pod<std::uint64_t>(os, d);
  };
  for (const auto& [name, t] : arrays.f32) {
    std::vector<std::uint64_t> dims;
    for (long d : t.shape()) dims.push_back(static_cast<std::uint64_t>(d));
    header(name, 0, dims);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(float) * t.numel()));
  }
  for (const auto& [name, v] : arrays.u64) {
    header(name, 2, {static_cast<std::uint64_t>(v.size())});
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(sizeof(std::uint64_t) * v.size()));
  }
}

inline NamedArrays load_arrays(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PAA1", 4) != 0)
    throw std::runtime_error("checkpoint " + path + ": bad magic");
  std::uint32_t version = detail::read_pod<std::uint32_t>(is);
  if (version != 1)
    throw std::runtime_error("checkpoint " + path + ": unsupported version " +
                             std::to_string(version));
  std::uint32_t count = detail::read_pod<std::uint32_t>(is);
  NamedArrays out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t nlen = detail::read_pod<std::uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    std::uint8_t dtype = detail::read_pod<std::uint8_t>(is);
    std::uint32_t ndim = detail::read_pod<std::uint32_t>(is);
    std::vector<std::uint64_t> dims;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      dims.push_back(detail::read_pod<std::uint64_t>(is));
      numel *= dims.back();
    }
    if (dtype == 0) {
      Shape shape;
      for (std::uint64_t d : dims) shape.push_back(static_cast<long>(d));
      std::vector<float> data(numel);
      is.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(sizeof(float) * numel));
      if (!is) throw std::runtime_error("checkpoint: truncated data");
      out.f32.emplace_back(name, Tensor(shape, std::move(data)));
    } else if (dtype == 2) {
      std::vector<std::uint64_t> data(numel);
      is.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(sizeof(std::uint64_t) * numel));
      if (!is) throw std::runtime_error("checkpoint: truncated data");
      out.u64.emplace_back(name, std::move(data));
    } else {
      throw std::runtime_error("checkpoint: unknown dtype tag " +
                               std::to_string(int(dtype)));
    }
  }
  return out;
}

inline void collect_network(const std::string& prefix, nn::Network<float>& net,
                            NamedArrays& a) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    std::string base = prefix + "." + std::to_string(i) + ".";
    if (l.kind == nn::LayerKind::Conv2d || l.kind == nn::LayerKind::Linear) {
      a.f32.emplace_back(base + "w", l.w);
      a.f32.emplace_back(base + "b", l.b);
    } else if (l.kind == nn::LayerKind::BatchNorm) {
      a.f32.emplace_back(base + "gamma", l.gamma);
      a.f32.emplace_back(base + "beta", l.beta);
      a.f32.emplace_back(base + "run_mean", l.run_mean);
      a.f32.emplace_back(base + "run_var", l.run_var);
    }
  }
}

inline void restore_network(const std::string& prefix, nn::Network<float>& net,
                            const std::map<std::string, Tensor>& f32) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    std::string base = prefix + "." + std::to_string(i) + ".";
    if (l.kind == nn::LayerKind::Conv2d || l.kind == nn::LayerKind::Linear) {
      l.w = f32.at(base + "w");
      l.b = f32.at(base + "b");
    } else if (l.kind == nn::LayerKind::BatchNorm) {
      l.gamma = f32.at(base + "gamma");
      l.beta = f32.at(base + "beta");
      l.run_mean = f32.at(base + "run_mean");
      l.run_var = f32.at(base + "run_var");
    }
  }
}

// config text embedded in a checkpoint (length-prefixed bytes packed in u64s)
inline std::string checkpoint_config_text(const NamedArrays& a) {
  for (const auto& [name, v] : a.u64) {
    if (name != "config.snapshot") continue;
    if (v.empty()) return "";
    std::string s(reinterpret_cast<const char*>(v.data() + 1),
                  static_cast<std::size_t>(v[0]));
    return s;
  }
  throw std::runtime_error("checkpoint carries no config snapshot");
}

// flat `key = value` lines, '#' comments; unknown keys are errors
inline TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  auto trim = [](std::string s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "n_patches") cfg.n_patches = std::stol(val);
    else if (key == "batch_size") cfg.batch_size = std::stol(val);
    else if (key == "epochs") cfg.epochs = std::stol(val);
    else if (key == "target_lr") cfg.target_lr = std::stod(val);
    else if (key == "target_wd") cfg.target_wd = std::stod(val);
    else if (key == "target_momentum") cfg.target_momentum = std::stod(val);
    else if (key == "lr_decay") cfg.lr_decay = val;
    else if (key == "lr_steps") {
      cfg.lr_steps.clear();
      std::istringstream vs(val);
      long v;
      while (vs >> v) cfg.lr_steps.push_back(v);
    } else if (key == "policy_lr") cfg.policy_lr = std::stod(val);
    else if (key == "entropy_coef") cfg.entropy_coef = std::stod(val);
    else if (key == "gamma") cfg.gamma = std::stod(val);
    else if (key == "horizon") cfg.horizon = std::stol(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "dataset") cfg.dataset = val;
    else if (key == "data_dir") cfg.data_dir = val;
    else if (key == "subset") cfg.subset = std::stol(val);
    else if (key == "synth_train") cfg.synth_train = std::stol(val);
    else if (key == "synth_test") cfg.synth_test = std::stol(val);
    else if (key == "synth_classes") cfg.synth_classes = std::stol(val);
    else if (key == "policy") cfg.policy = val;
    else if (key == "reward_sign") cfg.reward_sign = val;
    else if (key == "probe_size") cfg.probe_size = std::stol(val);
    else
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": unknown key '" + key + "'");
  }
  return cfg;
}

// rebuild just the policy networks (no dataset) from a checkpoint
inline void restore_policy(marl::PolicyBundle<float>& policy,
                           const NamedArrays& a) {
  std::map<std::string, Tensor> f32;
  for (const auto& [name, t] : a.f32) f32.emplace(name, t);
  restore_network("actor", policy.actor, f32);
  restore_network("critic", policy.critic, f32);
  restore_network("encoder", policy.encoder.net, f32);
  policy.encoder.state_proj = f32.at("encoder.state_proj");
}

// ---- trainer ----

struct EpochMetrics {
  double train_loss = 0.0;
  double mean_reward = 0.0;
  double test_accuracy = 0.0;
};

inline double evaluate(const nn::Network<float>& target,
                       const data::DatasetSplit& test, long eval_batch = 256) {
  long n = test.size();
  long correct = 0;
  long img = test.images.numel() / n;
  long classes = test.num_classes;
  for (long start = 0; start < n; start += eval_batch) {
    long b = std::min(eval_batch, n - start);
    Shape s = test.images.shape();
    s[0] = b;
    Tensor batch(s, std::vector<float>(test.images.data() + start * img,
                                       test.images.data() + (start + b) * img));
    Tensor logits = const_cast<nn::Network<float>&>(target).infer(batch);
    for (long i = 0; i < b; ++i) {
      long pred = 0;
      for (long c = 1; c < classes; ++c)
        if (logits[i * classes + c] > logits[i * classes + pred]) pred = c;
      long truth = 0;
      for (long c = 0; c < classes; ++c)
        if (test.labels[(start + i) * classes + c] == 1.0f) truth = c;
      if (pred == truth) ++correct;
    }
  }
  return double(correct) / double(n);
}

class Trainer {
 public:
  TrainConfig cfg;
  data::DatasetSplit train_set, test_set;
  marl::PolicyBundle<float> policy;
  nn::Network<float> target;
  nn::Sgd<float> target_opt;
  long epoch = 0;        // next epoch to run
  long global_step = 0;
  std::string run_dir;

  void init() {
    cfg.validate();
    if (cfg.dataset == "synth") {
      train_set = data::make_synth_dataset(cfg.synth_train, cfg.synth_classes,
                                           cfg.seed);
      test_set = data::make_synth_dataset(cfg.synth_test, cfg.synth_classes,
                                          cfg.seed + 1);
    } else {
      auto [tr, te] = data::load_cifar10(cfg.data_dir, cfg.subset);
      train_set = std::move(tr);
      test_set = std::move(te);
    }
    long image_hw = train_set.images.dim(2);
    policy = marl::build_policy<float>(cfg.n_patches, image_hw,
                                       cfg.policy_mode(), cfg.seed,
                                       static_cast<float>(cfg.policy_lr));
    policy.entropy_coef = static_cast<float>(cfg.entropy_coef);
    policy.gamma = static_cast<float>(cfg.gamma);
    policy.reward_sign = cfg.reward_sign == "adversarial"
                             ? marl::RewardSign::Adversarial
                             : marl::RewardSign::Paper;
    target = nn::build_target_cnn<float>(train_set.num_classes, cfg.seed);
    target_opt.lr = static_cast<float>(cfg.target_lr);
    target_opt.momentum = static_cast<float>(cfg.target_momentum);
    target_opt.weight_decay = static_cast<float>(cfg.target_wd);
  }

  double lr_at(long e) const {
    double lr = cfg.target_lr;
    if (cfg.lr_decay == "cosine") {
      lr *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * double(e) /
                                  double(cfg.epochs)));
    } else {
      for (long s : cfg.lr_steps)
        if (e >= s) lr *= 0.1;
    }
    return lr;
  }

  EpochMetrics train_epoch(std::ostream* metrics_csv,
                           std::ostream* usage_csv) {
    long n = train_set.size();
    long img = train_set.images.numel() / n;
    long classes = train_set.num_classes;
    marl::PolicyMode mode = cfg.policy_mode();
    augment::PatchGrid grid{cfg.n_patches};
    target_opt.lr = static_cast<float>(lr_at(epoch));

    // per-epoch shuffle, keyed so resume sees the same order
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    CounterRng shuffle_rng(CounterRng::derive_key(
        cfg.seed, {static_cast<std::uint64_t>(epoch), 31}));
    for (long i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);

    EpochMetrics em;
    long batches = 0;
    double frac_denom = std::max<long>(1, cfg.epochs - 1);
    double epoch_frac = cfg.epochs <= 1 ? 1.0 : double(epoch) / frac_denom;

    for (long start = 0; start + cfg.batch_size <= n;
         start += cfg.batch_size) {
      long b = cfg.batch_size;
      Shape s = train_set.images.shape();
      s[0] = b;
      std::vector<float> px(static_cast<std::size_t>(b * img));
      std::vector<float> lb(static_cast<std::size_t>(b * classes));
      for (long i = 0; i < b; ++i) {
        long src = order[start + i];
        std::copy_n(train_set.images.data() + src * img, img,
                    px.data() + i * img);
        std::copy_n(train_set.labels.data() + src * classes, classes,
                    lb.data() + i * classes);
      }
      Tensor x(s, std::move(px));
      Tensor y({b, classes}, std::move(lb));

      double loss_clean = 0.0, loss_aug = 0.0, reward = 0.0;
      double critic_value = 0.0, actor_loss = 0.0, critic_loss = 0.0,
             entropy = 0.0;

      if (mode == marl::PolicyMode::Off) {
        ad::Tape<float> tape;
        nn::ForwardRecord<float> rec;
        auto xv = tape.leaf(x, false);
        auto logits = target.forward(tape, xv, &rec);
        auto loss = ad::soft_cross_entropy(logits, y);
        loss_clean = loss.value().item();
        loss_aug = loss_clean;
        tape.backward(loss);
        step_target(tape, rec);
      } else {
        auto sel = marl::select_actions(policy, x, epoch_frac, false,
                                        cfg.seed, global_step);
        entropy = sel.mean_entropy;
        augment::finalize_plan(sel.actions, b, cfg.n_patches, cfg.seed,
                               static_cast<std::uint64_t>(global_step));
        auto aug = augment::execute_plan(x, y, sel.actions, grid);

        // both reward losses with the same pre-update target parameters
        loss_clean = nn::soft_cross_entropy_value(target.infer(x), y);
        ad::Tape<float> tape;
        nn::ForwardRecord<float> rec;
        auto xa = tape.leaf(aug.images, false);
        auto logits = target.forward(tape, xa, &rec);
        auto loss = ad::soft_cross_entropy(logits, aug.soft_labels);
        loss_aug = loss.value().item();

        reward = marl::compute_reward<float>(
            policy, static_cast<float>(loss_clean),
            static_cast<float>(loss_aug));

        if (mode != marl::PolicyMode::Random) {
          Tensor rvec = Tensor::full({b}, static_cast<float>(reward));
          auto st = marl::a2c_update(policy, sel, rvec);
          critic_value = st.mean_value;
          actor_loss = st.actor_loss;
          critic_loss = st.critic_loss;
        }

        // target trains on the augmented loss
        tape.backward(loss);
        step_target(tape, rec);
      }

      if (!std::isfinite(loss_aug) || !std::isfinite(loss_clean))
        throw std::runtime_error("non-finite loss at batch " +
                                 std::to_string(batches) + " of epoch " +
                                 std::to_string(epoch));

      em.train_loss += loss_aug;
      em.mean_reward += reward;
      ++batches;
      if (metrics_csv) {
        char buf[320];
        std::snprintf(buf, sizeof(buf),
                      "%ld,%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      global_step, epoch, loss_clean, loss_aug, reward,
                      critic_value, actor_loss, critic_loss, entropy);
        (*metrics_csv) << buf;
      }
      ++global_step;
    }

    if (batches > 0) {
      em.train_loss /= batches;
      em.mean_reward /= batches;
    }
    if (usage_csv && mode != marl::PolicyMode::Off) log_policy_usage(*usage_csv);
    ++epoch;
    em.test_accuracy = evaluate(target, test_set);
    return em;
  }

  // Usage analysis: greedy-free sampled actions on a fixed probe set,
  // patch importance from Grad-CAM quartiles, operation fractions per bin.
  void log_policy_usage(std::ostream& usage_csv) {
    long probe = std::min<long>(cfg.probe_size, train_set.size());
    long img = train_set.images.numel() / train_set.size();
    long classes = train_set.num_classes;
    long image_hw = train_set.images.dim(2);
    augment::PatchGrid grid{cfg.n_patches};
    Shape s = train_set.images.shape();
    s[0] = probe;
    Tensor x(s, std::vector<float>(train_set.images.data(),
                                   train_set.images.data() + probe * img));
    auto sel = marl::select_actions(policy, x, 1.0, false, cfg.seed,
                                    0x50524F42ULL + epoch);
    // counts[bin][op]
    std::vector<std::vector<long>> counts(4, std::vector<long>(nn::kNumOps, 0));
    for (long i = 0; i < probe; ++i) {
      std::vector<float> one(train_set.images.data() + i * img,
                             train_set.images.data() + (i + 1) * img);
      Shape ss = train_set.images.shape();
      ss[0] = 1;
      long truth = 0;
      for (long c = 0; c < classes; ++c)
        if (train_set.labels[i * classes + c] == 1.0f) truth = c;
      Tensor map = grad_cam(target, Tensor(ss, std::move(one)), truth);
      auto bins = bin_patch_importance(map, grid, image_hw);
      for (long pi = 0; pi < cfg.n_patches; ++pi)
        ++counts[bins[pi]][sel.chosen[i * cfg.n_patches + pi]];
    }
    for (int bin = 0; bin < 4; ++bin) {
      long total = 0;
      for (long c : counts[bin]) total += c;
      if (total == 0) continue;
      for (int op = 0; op < nn::kNumOps; ++op) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%ld,%s,%s,%.9g\n", epoch,
                      bin_name(bin),
                      augment::op_name(static_cast<augment::OpKind>(op)),
                      double(counts[bin][op]) / double(total));
        usage_csv << buf;
      }
    }
  }

  // ---- persistence ----

  NamedArrays state_arrays() {
    NamedArrays a;
    collect_network("actor", policy.actor, a);
    collect_network("critic", policy.critic, a);
    collect_network("encoder", policy.encoder.net, a);
    a.f32.emplace_back("encoder.state_proj", policy.encoder.state_proj);
    collect_network("target", target, a);
    for (std::size_t i = 0; i < target_opt.velocity.size(); ++i)
      a.f32.emplace_back("target.opt.v" + std::to_string(i),
                         target_opt.velocity[i]);
    a.u64.emplace_back(
        "rng_state",
        std::vector<std::uint64_t>{cfg.seed, static_cast<std::uint64_t>(epoch),
                                   static_cast<std::uint64_t>(global_step)});
    std::string snap = cfg.snapshot();
    std::vector<std::uint64_t> packed((snap.size() + 7) / 8 + 1, 0);
    packed[0] = snap.size();
    std::memcpy(packed.data() + 1, snap.data(), snap.size());
    a.u64.emplace_back("config.snapshot", std::move(packed));
    return a;
  }

  void save_checkpoint(const std::string& path) {
    save_arrays(path, state_arrays());
  }

  void load_checkpoint(const std::string& path) {
    NamedArrays a = load_arrays(path);
    std::map<std::string, Tensor> f32;
    for (auto& [name, t] : a.f32) f32.emplace(name, std::move(t));
    restore_network("actor", policy.actor, f32);
    restore_network("critic", policy.critic, f32);
    restore_network("encoder", policy.encoder.net, f32);
    policy.encoder.state_proj = f32.at("encoder.state_proj");
    restore_network("target", target, f32);
    target_opt.velocity.clear();
    for (std::size_t i = 0;; ++i) {
      auto it = f32.find("target.opt.v" + std::to_string(i));
      if (it == f32.end()) break;
      target_opt.velocity.push_back(it->second);
    }
    for (auto& [name, v] : a.u64) {
      if (name == "rng_state") {
        if (v.size() != 3 || v[0] != cfg.seed)
          throw std::runtime_error(
              "checkpoint seed does not match the config seed");
        epoch = static_cast<long>(v[1]);
        global_step = static_cast<long>(v[2]);
      }
    }
  }

 private:
  void step_target(ad::Tape<float>& tape, nn::ForwardRecord<float>& rec) {
    std::vector<Tensor*> params;
    std::vector<Tensor> grads;
    for (auto& [ptr, var] : rec.params) {
      params.push_back(ptr);
      grads.push_back(tape.grad(var));
    }
    target_opt.step(params, grads);
  }
};

// Full run driver used by the CLI: writes config.snapshot, metrics.csv,
// policy_usage.csv and per-epoch checkpoints under run_dir.
inline EpochMetrics run_training_loop(Trainer& tr, const std::string& run_dir,
                                      const std::string& resume_from = "",
                                      bool quiet = false,
                                      long stop_after = -1) {
  namespace fs = std::filesystem;
  const TrainConfig& cfg = tr.cfg;
  fs::create_directories(run_dir);
  tr.run_dir = run_dir;
  {
    std::ofstream snap(fs::path(run_dir) / "config.snapshot");
    snap << cfg.snapshot();
  }
  bool fresh = resume_from.empty();
  if (!fresh) tr.load_checkpoint(resume_from);
  std::ofstream metrics(fs::path(run_dir) / "metrics.csv",
                        fresh ? std::ios::trunc : std::ios::app);
  if (fresh)
    metrics << "step,epoch,loss_clean,loss_aug,reward,critic_value,"
               "actor_loss,critic_loss,entropy\n";
  std::ofstream usage(fs::path(run_dir) / "policy_usage.csv",
                      fresh ? std::ios::trunc : std::ios::app);
  if (fresh) usage << "epoch,bin,op,fraction\n";

  EpochMetrics last;
  while (tr.epoch < cfg.epochs &&
         (stop_after < 0 || tr.epoch < stop_after)) {
    long e = tr.epoch;
    last = tr.train_epoch(&metrics, &usage);
    metrics.flush();
    usage.flush();
    tr.save_checkpoint((fs::path(run_dir) /
                        ("ckpt_epoch_" + std::to_string(e) + ".bin"))
                           .string());
    if (!quiet)
      std::fprintf(stderr,
                   "epoch %ld: train_loss %.4f mean_reward %+.5f acc %.4f\n",
                   e, last.train_loss, last.mean_reward, last.test_accuracy);
  }
  return last;
}

inline EpochMetrics run_training(TrainConfig cfg, const std::string& run_dir,
                                 const std::string& resume_from = "",
                                 bool quiet = false) {
  Trainer tr;
  tr.cfg = cfg;
  tr.init();
  return run_training_loop(tr, run_dir, resume_from, quiet);
}

}  // namespace paa::trainer
