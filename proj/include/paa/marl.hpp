#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "paa/augment.hpp"
#include "paa/nn.hpp"
#include "paa/rng.hpp"
#include "paa/tensor.hpp"

namespace paa::marl {

enum class PolicyMode { Marl, Random, Independent, Off };

inline const char* policy_mode_name(PolicyMode m) {
  switch (m) {
    case PolicyMode::Marl: return "marl";
    case PolicyMode::Random: return "random";
    case PolicyMode::Independent: return "independent";
    default: return "off";
  }
}

enum class RewardSign { Paper, Adversarial };

// One shared actor serves all N agents; the critic consumes global state
// (or, in the independent ablation, each agent's own observation).
template <typename T>
struct PolicyBundle {
  nn::Encoder<T> encoder;  // frozen
  nn::Network<T> actor;
  nn::Network<T> critic;
  long n_agents = 4;
  long state_dim = 0;   // flattened state features
  long obs_dim = 0;     // flattened observation (independent-critic input)
  PolicyMode mode = PolicyMode::Marl;
  RewardSign reward_sign = RewardSign::Paper;
  T entropy_coef = T(0);
  T gamma = T(0.99);  // inert at horizon T=1
  long horizon = 1;
  nn::Sgd<T> actor_opt;
  nn::Sgd<T> critic_opt;
};

template <typename T>
struct StateFeatures {
  TensorT<T> map;    // [B,32,h,w]
  TensorT<T> flat;   // [B,state_dim]
  TensorT<T> embed;  // [B,16]
};

template <typename T>
StateFeatures<T> extract_state(const PolicyBundle<T>& bundle,
                               const TensorT<T>& images) {
  StateFeatures<T> s;
  s.map = bundle.encoder.state_map(images);
  s.flat = s.map.reshape({s.map.dim(0), s.map.numel() / s.map.dim(0)});
  s.embed = bundle.encoder.state_embedding(s.map);
  return s;
}

// [B*N,C,h,w] -> [B*N,16,h',w']; observation i derives only from patch i
template <typename T>
TensorT<T> extract_observations(const PolicyBundle<T>& bundle,
                                const TensorT<T>& flat_patches) {
  return bundle.encoder.observation(flat_patches);
}

// Probe the encoder geometry once so actor/critic dims always match the
// image and patch sizes in play.
template <typename T>
PolicyBundle<T> build_policy(long n_agents, long image_hw, PolicyMode mode,
                             std::uint64_t seed, T policy_lr = T(1e-4)) {
  PolicyBundle<T> b;
  b.n_agents = n_agents;
  b.mode = mode;
  b.encoder = nn::build_encoder<T>(seed);
  augment::PatchGrid grid{n_agents};
  long patch_hw = image_hw / grid.side();

  TensorT<T> probe_img = TensorT<T>::zeros({1, 3, image_hw, image_hw});
  TensorT<T> smap = b.encoder.state_map(probe_img);
  b.state_dim = smap.numel();
  TensorT<T> probe_patch = TensorT<T>::zeros({1, 3, patch_hw, patch_hw});
  TensorT<T> omap = b.encoder.observation(probe_patch);
  b.obs_dim = omap.numel();

  b.actor = nn::build_actor<T>(32, seed);
  long critic_in = mode == PolicyMode::Independent ? b.obs_dim : b.state_dim;
  b.critic = nn::build_critic<T>(critic_in, seed);
  b.actor_opt.lr = policy_lr;
  b.critic_opt.lr = policy_lr;
  return b;
}

// Everything a2c_update needs to differentiate the step; built during action
// selection so sampling and the update share one train-mode forward pass.
template <typename T>
struct StepContext {
  std::unique_ptr<ad::Tape<T>> tape;
  nn::ForwardRecord<T> actor_rec;
  nn::ForwardRecord<T> critic_rec;
  ad::Var<T> probs;  // [B*N,15]
  ad::Var<T> value;  // [B,1] (marl) or [B*N,1] (independent)
  bool has_tape = false;
  long batch = 0;
  long n_agents = 0;
};

template <typename T>
struct ActionSelection {
  std::vector<augment::AugAction> actions;  // B*N, fully parameterized
  std::vector<long> chosen;                 // op index per patch
  TensorT<T> probs;                         // [B*N,15]
  double joint_log_prob = 0.0;              // sum over batch and agents
  double mean_entropy = 0.0;                // nats per agent
  StepContext<T> ctx;
};

namespace detail {

template <typename T>
TensorT<T> actor_input(const StateFeatures<T>& state, const TensorT<T>& obs,
                       long batch, long n) {
  long oc = obs.dim(1), h = obs.dim(2), w = obs.dim(3);
  long ec = state.embed.dim(1);
  TensorT<T> in = TensorT<T>::zeros({batch * n, oc + ec, h, w});
  long hw = h * w;
  for (long f = 0; f < batch * n; ++f) {
    const T* src = obs.data() + f * oc * hw;
    T* dst = in.data() + f * (oc + ec) * hw;
    std::copy_n(src, oc * hw, dst);
    long b = f / n;
    for (long e = 0; e < ec; ++e) {
      T v = state.embed[b * ec + e];
      std::fill_n(dst + (oc + e) * hw, hw, v);
    }
  }
  return in;
}

}  // namespace detail

// Per patch the actor sees concat(observation, broadcast state embedding)
// and emits a 15-way distribution; the joint log-probability is the sum of
// the per-agent log-probabilities.
template <typename T>
ActionSelection<T> select_actions(PolicyBundle<T>& bundle,
                                  const TensorT<T>& images,
                                  double epoch_frac, bool greedy,
                                  std::uint64_t seed, std::uint64_t step) {
  augment::PatchGrid grid{bundle.n_agents};
  long batch = images.dim(0);
  long n = bundle.n_agents;
  ActionSelection<T> sel;
  sel.ctx.batch = batch;
  sel.ctx.n_agents = n;

  if (bundle.mode == PolicyMode::Random) {
    sel.probs = TensorT<T>::full({batch * n, nn::kNumOps},
                                 T(1) / T(nn::kNumOps));
  } else {
    StateFeatures<T> state = extract_state(bundle, images);
    TensorT<T> patches = augment::split_patches(
        images.template cast<float>(), grid).template cast<T>();
    TensorT<T> flat = patches.reshape({batch * n, patches.dim(2),
                                       patches.dim(3), patches.dim(4)});
    TensorT<T> obs = extract_observations(bundle, flat);
    TensorT<T> input = detail::actor_input(state, obs, batch, n);

    sel.ctx.tape = std::make_unique<ad::Tape<T>>();
    sel.ctx.has_tape = true;
    auto x = sel.ctx.tape->leaf(input, false);
    sel.ctx.probs = bundle.actor.forward(*sel.ctx.tape, x, &sel.ctx.actor_rec);
    sel.probs = sel.ctx.probs.value();

    TensorT<T> critic_in =
        bundle.mode == PolicyMode::Independent
            ? obs.reshape({batch * n, bundle.obs_dim})
            : state.flat;
    auto cx = sel.ctx.tape->leaf(critic_in, false);
    sel.ctx.value = bundle.critic.forward(*sel.ctx.tape, cx,
                                          &sel.ctx.critic_rec);
  }

  for (long i = 0; i < sel.probs.numel(); ++i)
    if (!std::isfinite(double(sel.probs[i])))
      throw std::runtime_error("select_actions: non-finite action logits");

  sel.actions.resize(static_cast<std::size_t>(batch * n));
  sel.chosen.resize(static_cast<std::size_t>(batch * n));
  double ent_sum = 0.0;
  for (long f = 0; f < batch * n; ++f) {
    const T* row = sel.probs.data() + f * nn::kNumOps;
    long pick = 0;
    if (greedy) {
      for (long j = 1; j < nn::kNumOps; ++j)
        if (row[j] > row[pick]) pick = j;
    } else {
      CounterRng rng(CounterRng::derive_key(
          seed, {step, static_cast<std::uint64_t>(f), 20}));
      double u = rng.uniform();
      double cdf = 0.0;
      pick = nn::kNumOps - 1;
      for (long j = 0; j < nn::kNumOps; ++j) {
        cdf += double(row[j]);
        if (u < cdf) {
          pick = j;
          break;
        }
      }
    }
    sel.chosen[f] = pick;
    sel.joint_log_prob += std::log(std::max(1e-30, double(row[pick])));
    for (long j = 0; j < nn::kNumOps; ++j) {
      double pj = double(row[j]);
      if (pj > 0.0) ent_sum -= pj * std::log(pj);
    }
    augment::AugAction& a = sel.actions[f];
    a.op = static_cast<augment::OpKind>(pick);
    CounterRng prng(CounterRng::derive_key(
        seed, {step, static_cast<std::uint64_t>(f), 21}));
    augment::sample_action_params(a, epoch_frac, prng);
  }
  sel.mean_entropy = ent_sum / double(batch * n);
  return sel;
}

// Team reward: both losses measured with the same pre-update target
// parameters. Shared identically by all agents.
template <typename T>
T compute_reward(const PolicyBundle<T>& bundle, T loss_clean, T loss_aug) {
  if (!std::isfinite(double(loss_clean)) || !std::isfinite(double(loss_aug)))
    throw std::runtime_error("compute_reward: non-finite loss");
  T r = loss_clean - loss_aug;
  return bundle.reward_sign == RewardSign::Adversarial ? -r : r;
}

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mean_value = 0.0;
  double mean_advantage = 0.0;
};

// One-step A2C: the realized return at horizon 1 is the reward itself, so
// A = r - V(s). Critic loss is the mean squared advantage; the actor loss
// scales the joint log-probability by the detached advantage.
template <typename T>
UpdateStats a2c_update(PolicyBundle<T>& bundle, ActionSelection<T>& sel,
                       const TensorT<T>& rewards /* [B] */) {
  if (bundle.mode == PolicyMode::Random || bundle.mode == PolicyMode::Off)
    throw std::logic_error("a2c_update: policy mode has no learnable parameters");
  if (!sel.ctx.has_tape)
    throw std::logic_error("a2c_update: selection carries no tape");
  StepContext<T>& ctx = sel.ctx;
  long batch = ctx.batch, n = ctx.n_agents;
  if (rewards.numel() != batch)
    throw std::invalid_argument("a2c_update: need one reward per image");

  bool independent = bundle.mode == PolicyMode::Independent;
  long rows = independent ? batch * n : batch;
  TensorT<T> reward_col = TensorT<T>::zeros({rows, 1});
  for (long i = 0; i < rows; ++i)
    reward_col[i] = rewards[independent ? i / n : i];

  // critic: A = r - V, loss = mean A^2
  auto adv_var = ad::sub_from_const(reward_col, ctx.value);
  auto critic_loss = ad::mean_all(ad::square(adv_var));

  // detached advantage per actor row
  TensorT<T> adv = adv_var.value();
  for (long i = 0; i < adv.numel(); ++i)
    if (!std::isfinite(double(adv[i])))
      throw std::runtime_error("a2c_update: non-finite advantage");
  TensorT<T> row_weight = TensorT<T>::zeros({batch * n});
  for (long f = 0; f < batch * n; ++f)
    row_weight[f] = adv[independent ? f : f / n];

  auto logp = ad::log(ad::gather_rows(ctx.probs, sel.chosen));
  auto weighted = ad::mul_const(logp, row_weight);
  auto actor_loss = ad::scale(ad::sum_all(weighted), T(-1) / T(batch));
  if (bundle.entropy_coef != T(0)) {
    auto plogp = ad::mul(ctx.probs, ad::log(ctx.probs));
    auto neg_entropy = ad::scale(ad::sum_all(plogp), T(1) / T(batch * n));
    actor_loss = ad::add(actor_loss, ad::scale(neg_entropy, bundle.entropy_coef));
  }

  auto total = ad::add(actor_loss, critic_loss);
  ctx.tape->backward(total);

  auto apply = [&](nn::ForwardRecord<T>& rec, nn::Sgd<T>& opt) {
    std::vector<TensorT<T>*> params;
    std::vector<TensorT<T>> grads;
    for (auto& [ptr, var] : rec.params) {
      params.push_back(ptr);
      grads.push_back(ctx.tape->grad(var));
    }
    opt.step(params, grads);
  };
  apply(ctx.actor_rec, bundle.actor_opt);
  apply(ctx.critic_rec, bundle.critic_opt);

  UpdateStats st;
  st.critic_loss = double(critic_loss.value().item());
  st.actor_loss = double(actor_loss.value().item());
  st.mean_value = double(paa::mean_all(ctx.value.value()));
  st.mean_advantage = double(paa::mean_all(adv));
  return st;
}

// Contextual-bandit convergence harness: one OpKind pays reward 1 when
// chosen (per-image reward = fraction of agents picking it). Returns the
// mean probability the policy assigns to the rewarded op after `updates`
// A2C steps. Used by the self-test and validation suites.
template <typename T>
double run_bandit(int rewarded_op, long updates, T lr, std::uint64_t seed,
                  long batch = 8, long n_agents = 4) {
  if (rewarded_op < 0 || rewarded_op >= nn::kNumOps)
    throw std::invalid_argument("run_bandit: bad op index");
  const long image_hw = 8;
  PolicyBundle<T> bundle =
      build_policy<T>(n_agents, image_hw, PolicyMode::Marl, seed, lr);

  CounterRng rng(CounterRng::derive_key(seed, {77}));
  TensorT<T> images = TensorT<T>::zeros({batch, 3, image_hw, image_hw});
  for (long i = 0; i < images.numel(); ++i)
    images[i] = static_cast<T>(rng.uniform());

  for (long u = 0; u < updates; ++u) {
    auto sel = select_actions(bundle, images, 0.5, false, seed,
                              static_cast<std::uint64_t>(u));
    TensorT<T> rewards = TensorT<T>::zeros({batch});
    for (long b = 0; b < batch; ++b) {
      long hits = 0;
      for (long i = 0; i < n_agents; ++i)
        if (sel.chosen[b * n_agents + i] == rewarded_op) ++hits;
      rewards[b] = static_cast<T>(hits) / static_cast<T>(n_agents);
    }
    a2c_update(bundle, sel, rewards);
  }

  auto sel = select_actions(bundle, images, 0.5, true, seed, updates + 1);
  double mean_p = 0.0;
  long rows = batch * n_agents;
  for (long f = 0; f < rows; ++f)
    mean_p += double(sel.probs[f * nn::kNumOps + rewarded_op]);
  return mean_p / double(rows);
}

}  // namespace paa::marl
