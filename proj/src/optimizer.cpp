#include "vip/optimizer.hpp"

#include <cmath>

namespace vip::nn {

AdamState AdamState::for_model(const NetworkModel& model) {
  return {zeros_like(model), zeros_like(model), 0};
}

void optimizer_step(std::vector<LayerWeights>& weights, const Gradients& grads, AdamState& state,
                    double learning_rate, const AdamConfig& cfg) {
  if (grads.size() != weights.size() || state.m.size() != weights.size()) {
    throw ShapeError("optimizer_step: gradient structure does not match weights");
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (grads[l].size() != weights[l].size()) throw ShapeError("optimizer_step: layer mismatch");
    for (std::size_t k = 0; k < weights[l].size(); ++k) {
      Tensor& w = weights[l][k];
      const Tensor& g = grads[l][k];
      Tensor& m = state.m[l][k];
      Tensor& v = state.v[l][k];
      if (!w.same_shape(g) || !w.same_shape(m)) throw ShapeError("optimizer_step: shape mismatch");
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        w[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
      }
    }
  }
}

}  // namespace vip::nn
