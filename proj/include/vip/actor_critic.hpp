#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "vip/exec.hpp"
#include "vip/network.hpp"
#include "vip/sim.hpp"

namespace vip::policy {

/// Deterministic policy gradient with replay and soft-updated target networks.
struct ActorCriticConfig {
  std::size_t episodes = 300;
  double episode_len_s = 20.0;
  std::size_t hidden = 32;
  double gamma = 0.99;
  double tau = 0.005;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t replay_capacity = 100000;
  std::size_t warmup_steps = 1000;  ///< uniform random actions before learning starts
  std::size_t update_every = 4;     ///< environment steps per gradient update
  double explore_sd = 0.2;
  Exec exec = Exec::parallel;

  void validate() const;
};

struct EpisodeStats {
  std::size_t episode = 0;
  double total_reward = 0.0;
  std::uint64_t crashes = 0;
  double critic_loss = 0.0;  ///< mean over the episode's updates
};

struct ActorCriticResult {
  nn::NetworkModel actor;  ///< meta kind actor_critic, usable via PolicyHandle::learned
  nn::NetworkModel critic;
  std::vector<EpisodeStats> curve;
};

std::vector<nn::LayerSpec> actor_arch(std::size_t hidden);
std::vector<nn::LayerSpec> critic_arch(std::size_t hidden);

/// Throws nn::TrainingFault when a loss or gradient turns non-finite.
ActorCriticResult train_actor_critic(const sim::SimConfig& env, const ActorCriticConfig& hyper,
                                     std::uint64_t seed,
                                     const std::function<void(const EpisodeStats&)>& progress = {});

}  // namespace vip::policy
