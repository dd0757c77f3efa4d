#include "vip/actor_critic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vip/optimizer.hpp"
#include "vip/policies.hpp"
#include "vip/rng.hpp"

namespace vip::policy {
namespace {

struct Transition {
  Observation s;
  double a = 0.0;
  double r = 0.0;
  Observation s2;
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) { data_.reserve(capacity); }

  void push(const Transition& t) {
    if (data_.size() < capacity_) {
      data_.push_back(t);
    } else {
      data_[next_] = t;
    }
    next_ = (next_ + 1) % capacity_;
  }
  std::size_t size() const { return data_.size(); }
  const Transition& operator[](std::size_t i) const { return data_[i]; }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

nn::Tensor state_input(const Observation& o) { return nn::Tensor({1, 2}, {o.theta_norm, o.omega_norm}); }

nn::Tensor critic_input(const Observation& o, double a) {
  return nn::Tensor({1, 3}, {o.theta_norm, o.omega_norm, a});
}

double actor_out(const nn::NetworkModel& actor, const Observation& o) {
  return nn::forward_sequence(actor, state_input(o))[0];
}

void accumulate(nn::Gradients& dst, const nn::Gradients& src) {
  for (std::size_t l = 0; l < dst.size(); ++l) {
    for (std::size_t k = 0; k < dst[l].size(); ++k) {
      for (std::size_t i = 0; i < dst[l][k].size(); ++i) dst[l][k][i] += src[l][k][i];
    }
  }
}

void soft_update(nn::NetworkModel& target, const nn::NetworkModel& online, double tau) {
  for (std::size_t l = 0; l < target.weights.size(); ++l) {
    for (std::size_t k = 0; k < target.weights[l].size(); ++k) {
      auto& t = target.weights[l][k].values;
      const auto& o = online.weights[l][k].values;
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * o[i] + (1.0 - tau) * t[i];
    }
  }
}

/// Gradient of -mean Q(s, mu(s)) with respect to the actor weights.
nn::Gradients actor_gradient(const nn::NetworkModel& actor, const nn::NetworkModel& critic,
                             const std::vector<Observation>& states, Exec exec) {
  const std::size_t n = states.size();
  std::vector<nn::Gradients> per(n, nn::zeros_like(actor));
  auto one = [&](std::size_t i) {
    const nn::Tape ta = nn::forward_tape(actor, state_input(states[i]));
    const double a = ta.last_output()[0];
    const nn::Tape tc = nn::forward_tape(critic, critic_input(states[i], a));
    nn::Gradients unused = nn::zeros_like(critic);
    nn::Tensor d_in;
    const double one_seed[1] = {1.0};
    nn::backward_tape(critic, tc, one_seed, unused, &d_in);
    const double seed[1] = {-d_in.at(0, 2)};
    nn::backward_tape(actor, ta, seed, per[i]);
  };
  if (exec == Exec::serial) {
    for (std::size_t i = 0; i < n; ++i) one(i);
  } else {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) one(static_cast<std::size_t>(i));
  }
  nn::Gradients out = nn::zeros_like(actor);
  for (const auto& g : per) accumulate(out, g);
  for (auto& layer : out) {
    for (auto& t : layer) {
      for (double& v : t.values) v /= static_cast<double>(n);
      if (!t.all_finite()) throw nn::TrainingFault("actor-critic: non-finite actor gradient");
    }
  }
  return out;
}

}  // namespace

void ActorCriticConfig::validate() const {
  if (episodes == 0 || batch_size == 0 || replay_capacity == 0 || update_every == 0 ||
      hidden == 0) {
    throw std::invalid_argument("ActorCriticConfig: counts must be positive");
  }
  if (!(episode_len_s > 0.0 && actor_lr > 0.0 && critic_lr > 0.0 && explore_sd >= 0.0)) {
    throw std::invalid_argument("ActorCriticConfig: rates and lengths must be positive");
  }
  if (!(gamma >= 0.0 && gamma < 1.0) || !(tau > 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("ActorCriticConfig: gamma must lie in [0, 1) and tau in (0, 1]");
  }
}

std::vector<nn::LayerSpec> actor_arch(std::size_t hidden) {
  using nn::Activation;
  using nn::LayerSpec;
  return {LayerSpec::dense(2, hidden, Activation::tanh),
          LayerSpec::dense(hidden, hidden, Activation::tanh),
          LayerSpec::dense(hidden, 1, Activation::tanh)};
}

std::vector<nn::LayerSpec> critic_arch(std::size_t hidden) {
  using nn::Activation;
  using nn::LayerSpec;
  return {LayerSpec::dense(3, hidden, Activation::relu),
          LayerSpec::dense(hidden, hidden, Activation::relu),
          LayerSpec::dense(hidden, 1, Activation::identity)};
}

ActorCriticResult train_actor_critic(const sim::SimConfig& env, const ActorCriticConfig& hyper,
                                     std::uint64_t seed,
                                     const std::function<void(const EpisodeStats&)>& progress) {
  env.validate();
  hyper.validate();

  nn::NetworkModel actor = nn::make_network(actor_arch(hyper.hidden), Rng::derive(seed, 10));
  nn::NetworkModel critic = nn::make_network(critic_arch(hyper.hidden), Rng::derive(seed, 11));
  nn::NetworkModel actor_target = actor;
  nn::NetworkModel critic_target = critic;
  auto actor_opt = nn::AdamState::for_model(actor);
  auto critic_opt = nn::AdamState::for_model(critic);

  Rng env_rng(Rng::derive(seed, 0));
  Rng explore(Rng::derive(seed, 1));
  Rng sampler(Rng::derive(seed, 3));
  ReplayBuffer replay(hyper.replay_capacity);

  const auto ticks = static_cast<std::size_t>(std::lround(hyper.episode_len_s / env.dt));
  std::size_t total_steps = 0;
  ActorCriticResult result;

  std::vector<nn::Example> critic_batch(hyper.batch_size);
  std::vector<Observation> states(hyper.batch_size);

  for (std::size_t ep = 0; ep < hyper.episodes; ++ep) {
    sim::PendulumState st;
    st.theta = env_rng.uniform(-env.reset_range_deg, env.reset_range_deg);
    EpisodeStats stats;
    stats.episode = ep + 1;
    std::size_t updates = 0;

    for (std::size_t k = 0; k < ticks; ++k) {
      const Observation s = Observation::from_state(st.theta, st.omega, env);
      double a;
      if (total_steps < hyper.warmup_steps) {
        a = explore.uniform(-1.0, 1.0);
      } else {
        a = std::clamp(actor_out(actor, s) + hyper.explore_sd * explore.normal(), -1.0, 1.0);
      }
      const auto res = sim::step(st, a, env, env_rng);
      const Observation s2 = Observation::from_state(res.state.theta, res.state.omega, env);
      const double r = reward(s, a, res.crashed_this_tick);
      replay.push({s, a, r, s2, res.crashed_this_tick});
      stats.total_reward += r;
      stats.crashes += res.crashed_this_tick ? 1 : 0;
      st = res.state;
      ++total_steps;

      if (total_steps < hyper.warmup_steps || replay.size() < hyper.batch_size ||
          total_steps % hyper.update_every != 0) {
        continue;
      }

      for (std::size_t b = 0; b < hyper.batch_size; ++b) {
        const Transition& tr = replay[sampler.below(replay.size())];
        double y = tr.r;
        if (!tr.done) {
          const double a2 = actor_out(actor_target, tr.s2);
          y += hyper.gamma * nn::forward_sequence(critic_target, critic_input(tr.s2, a2))[0];
        }
        critic_batch[b] = {critic_input(tr.s, tr.a), {y}};
        states[b] = tr.s;
      }
      const auto cg = nn::backward(critic, critic_batch, nn::LossKind::mse, hyper.exec);
      nn::optimizer_step(critic.weights, cg.grads, critic_opt, hyper.critic_lr);
      const auto ag = actor_gradient(actor, critic, states, hyper.exec);
      nn::optimizer_step(actor.weights, ag, actor_opt, hyper.actor_lr);
      soft_update(actor_target, actor, hyper.tau);
      soft_update(critic_target, critic, hyper.tau);
      stats.critic_loss += cg.loss;
      ++updates;
    }
    if (updates > 0) stats.critic_loss /= static_cast<double>(updates);
    result.curve.push_back(stats);
    if (progress) progress(stats);
  }

  stamp_meta(actor, PolicyKind::actor_critic, env);
  actor.meta["reward"] = "-(theta_n^2 + 0.1 omega_n^2 + 0.01 u^2) - 10 crash";
  actor.meta["episodes"] = std::to_string(hyper.episodes);
  actor.meta["episode_len_s"] = std::to_string(hyper.episode_len_s);
  actor.meta["train_seed"] = std::to_string(seed);
  actor.meta["note"] = "toy deterministic-policy-gradient actor trained on the native environment";
  critic.meta["kind"] = "critic";
  result.actor = std::move(actor);
  result.critic = std::move(critic);
  return result;
}

}  // namespace vip::policy
