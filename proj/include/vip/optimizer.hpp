#pragma once

#include <cstdint>

#include "vip/network.hpp"

namespace vip::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment estimates, shaped like the model weights.
struct AdamState {
  Gradients m;
  Gradients v;
  std::uint64_t t = 0;

  static AdamState for_model(const NetworkModel& model);
};

/// One bias-corrected adaptive-moment update of `weights` in place.
void optimizer_step(std::vector<LayerWeights>& weights, const Gradients& grads, AdamState& state,
                    double learning_rate, const AdamConfig& cfg = {});

}  // namespace vip::nn
