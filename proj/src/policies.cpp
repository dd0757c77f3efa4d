#include "vip/policies.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vip::policy {
namespace {

double clamp_unit(double u) {
  if (!std::isfinite(u)) return 0.0;
  return std::clamp(u, -1.0, 1.0);
}

int ticks_for(double seconds, double dt) {
  return static_cast<int>(std::lround(seconds / dt));
}

}  // namespace

Observation Observation::from_state(double theta, double omega, const sim::SimConfig& cfg) {
  Observation o;
  o.theta_norm = std::clamp(theta / cfg.crash_deg, -1.0, 1.0);
  o.omega_norm = std::clamp(omega, -cfg.omega_max, cfg.omega_max) / cfg.omega_max;
  return o;
}

const char* to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::pd: return "pd";
    case PolicyKind::intermittent: return "intermittent";
    case PolicyKind::dense_bc: return "dense_bc";
    case PolicyKind::gru_bc: return "gru_bc";
    case PolicyKind::actor_critic: return "actor_critic";
  }
  return "pd";
}

PolicyKind parse_policy_kind(const std::string& s) {
  for (PolicyKind k : {PolicyKind::pd, PolicyKind::intermittent, PolicyKind::dense_bc,
                       PolicyKind::gru_bc, PolicyKind::actor_critic}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown policy kind: " + s);
}

bool is_learned(PolicyKind kind) {
  return kind == PolicyKind::dense_bc || kind == PolicyKind::gru_bc ||
         kind == PolicyKind::actor_critic;
}

PdGains PdGains::pole_placement(const sim::SimConfig& cfg, double lambda) {
  // Linearized: theta'' = a*theta + gain*u with a = k_p*pi/180. With
  // u = -(kp*theta + kd*omega)/gain the characteristic polynomial is
  // s^2 + kd*s + (kp - a); matching (s + lambda)^2 gives the gains.
  const double a = cfg.k_p * std::numbers::pi / 180.0;
  return {lambda * lambda + a, 2.0 * lambda};
}

double pd_control(double theta, double omega, const PdGains& gains, const sim::SimConfig& cfg) {
  return clamp_unit(-(gains.kp * theta + gains.kd * omega) / cfg.joystick_gain);
}

void IntermittentParams::validate() const {
  if (!(trigger_deg >= 0.0 && reaction_delay_s >= 0.0 && pulse_mag >= 0.0 &&
        pulse_dur_s >= 0.0 && noise_sd >= 0.0 && anticipation_s >= 0.0)) {
    throw std::invalid_argument("IntermittentParams: values must be nonnegative");
  }
  if (pulse_mag > 1.0) throw std::invalid_argument("IntermittentParams: pulse_mag exceeds 1");
}

double intermittent_control(double theta, double omega, const IntermittentParams& params,
                            IntermittentState& st, Rng& rng, const sim::SimConfig& cfg) {
  // Decide now, act after the reaction delay.
  double intent = 0.0;
  if (st.pulse_left > 0) {
    --st.pulse_left;
    intent = st.direction * params.pulse_mag;
  } else {
    // Internal model: velocity still to come from pulses already committed.
    double pending = 0.0;
    for (double q : st.pipeline) pending += q;
    const double predicted =
        theta + params.anticipation_s * (omega + pending * cfg.joystick_gain * cfg.dt);
    if (std::abs(predicted) > params.trigger_deg) {
      st.direction = predicted > 0.0 ? -1.0 : 1.0;
      st.pulse_left = std::max(1, ticks_for(params.pulse_dur_s, cfg.dt)) - 1;
      intent = st.direction * params.pulse_mag;
    }
  }
  st.pipeline.push_back(intent);
  if (st.pipeline.size() <= static_cast<std::size_t>(ticks_for(params.reaction_delay_s, cfg.dt))) {
    return 0.0;
  }
  double u = st.pipeline.front();
  st.pipeline.pop_front();
  if (u != 0.0 && params.noise_sd > 0.0) u += params.noise_sd * rng.normal();
  return clamp_unit(u);
}

PolicyHandle PolicyHandle::pd(const sim::SimConfig& cfg, std::optional<PdGains> gains) {
  PolicyHandle h;
  h.id_ = "pd";
  h.kind_ = PolicyKind::pd;
  h.cfg_ = cfg;
  h.gains_ = gains.value_or(PdGains::pole_placement(cfg));
  h.note_ = "scripted proportional-derivative controller; idealized, settles without oscillation";
  return h;
}

PolicyHandle PolicyHandle::intermittent(const sim::SimConfig& cfg, IntermittentParams params) {
  params.validate();
  PolicyHandle h;
  h.id_ = "intermittent";
  h.kind_ = PolicyKind::intermittent;
  h.cfg_ = cfg;
  h.params_ = params;
  h.note_ = "scripted human-like controller; dead zone, reaction delay, brief noisy pulses";
  return h;
}

PolicyHandle PolicyHandle::learned(std::string id, std::shared_ptr<const nn::NetworkModel> model,
                                   const sim::SimConfig& cfg) {
  if (!model) throw std::invalid_argument("learned policy requires a model");
  model->validate();
  if (model->input_dim() != 2 || model->output_dim() != 1) {
    throw nn::ShapeError("policy model must map 2 inputs to 1 output");
  }
  PolicyHandle h;
  h.id_ = std::move(id);
  const auto it = model->meta.find("kind");
  if (it != model->meta.end()) {
    h.kind_ = parse_policy_kind(it->second);
    if (!is_learned(h.kind_)) throw std::invalid_argument("model kind is not a learned policy");
  } else {
    h.kind_ = model->recurrent() ? PolicyKind::gru_bc : PolicyKind::dense_bc;
  }
  h.cfg_ = cfg;
  h.model_ = std::move(model);
  h.hidden_ = nn::zero_hidden(*h.model_);
  const auto note = h.model_->meta.find("note");
  h.note_ = note != h.model_->meta.end() ? note->second : std::string("learned ") + to_string(h.kind_);
  return h;
}

double PolicyHandle::act(const Observation& obs, Rng& rng) {
  switch (kind_) {
    case PolicyKind::pd:
      return pd_control(obs.theta_deg(cfg_), obs.omega_dps(cfg_), gains_, cfg_);
    case PolicyKind::intermittent:
      return intermittent_control(obs.theta_deg(cfg_), obs.omega_dps(cfg_), params_, istate_, rng,
                                  cfg_);
    default: {
      const double in[2] = {obs.theta_norm, obs.omega_norm};
      const auto out = nn::forward(*model_, in, hidden_);
      return clamp_unit(out[0]);
    }
  }
}

void PolicyHandle::reset() {
  istate_ = IntermittentState{};
  if (model_) hidden_ = nn::zero_hidden(*model_);
}

double reward(const Observation& obs, double u, bool crashed) {
  return -(obs.theta_norm * obs.theta_norm + 0.1 * obs.omega_norm * obs.omega_norm +
           0.01 * u * u) -
         (crashed ? 10.0 : 0.0);
}

std::vector<telemetry::ControlSample> rollout(PolicyHandle& policy, const RolloutSpec& spec,
                                              const sim::SimConfig& cfg) {
  Rng env(Rng::derive(spec.seed, 0));
  Rng pol(Rng::derive(spec.seed, 1));
  policy.reset();
  sim::PendulumState s;
  s.theta = spec.theta0;
  s.omega = spec.omega0;

  std::vector<telemetry::ControlSample> out;
  out.reserve(spec.ticks);
  for (std::size_t i = 0; i < spec.ticks; ++i) {
    const double u = policy.act(Observation::from_state(s.theta, s.omega, cfg), pol);
    telemetry::ControlSample sample;
    sample.t = s.t;
    sample.theta = s.theta;
    sample.omega = s.omega;
    sample.ai_u = u;
    sample.applied_u = u;
    sample.phase = spec.phase;
    const auto res = sim::step(s, u, cfg, env);
    sample.crashed = res.crashed_this_tick;
    out.push_back(sample);
    s = res.state;
    if (res.crashed_this_tick) policy.reset();
  }
  return out;
}

RolloutSpec random_start(std::uint64_t seed, std::size_t ticks, const sim::SimConfig& cfg,
                         double omega0_range) {
  Rng r(Rng::derive(seed, 2));
  RolloutSpec spec;
  spec.seed = seed;
  spec.ticks = ticks;
  spec.theta0 = r.uniform(-cfg.reset_range_deg, cfg.reset_range_deg);
  spec.omega0 = omega0_range > 0.0 ? r.uniform(-omega0_range, omega0_range) : 0.0;
  return spec;
}

std::vector<Demonstration> collect_demonstrations(PolicyHandle teacher, std::size_t n_trials,
                                                  double trial_len_s, std::uint64_t seed,
                                                  const sim::SimConfig& cfg) {
  const auto ticks = static_cast<std::size_t>(std::lround(trial_len_s / cfg.dt));
  std::vector<Demonstration> demos(n_trials);
  for (std::size_t i = 0; i < n_trials; ++i) {
    const auto samples = rollout(teacher, random_start(Rng::derive(seed, i), ticks, cfg), cfg);
    auto& d = demos[i];
    d.obs.reserve(samples.size());
    d.u.reserve(samples.size());
    for (const auto& s : samples) {
      d.obs.push_back(Observation::from_state(s.theta, s.omega, cfg));
      d.u.push_back(s.applied_u);
    }
  }
  return demos;
}

std::vector<nn::Example> bc_examples(std::span<const Demonstration> demos, bool recurrent,
                                     std::size_t window) {
  if (recurrent && window == 0) throw std::invalid_argument("bc_examples: window must be >= 1");
  std::vector<nn::Example> out;
  for (const auto& d : demos) {
    if (d.obs.size() != d.u.size()) throw std::invalid_argument("bc_examples: ragged demonstration");
    for (std::size_t k = 0; k < d.obs.size(); ++k) {
      const std::size_t first = recurrent && k + 1 > window ? k + 1 - window : (recurrent ? 0 : k);
      const std::size_t T = k + 1 - first;
      nn::Tensor input({T, 2});
      for (std::size_t j = 0; j < T; ++j) {
        input.at(j, 0) = d.obs[first + j].theta_norm;
        input.at(j, 1) = d.obs[first + j].omega_norm;
      }
      out.push_back({std::move(input), {d.u[k]}});
    }
  }
  return out;
}

std::vector<nn::LayerSpec> dense_bc_arch(std::size_t hidden) {
  using nn::Activation;
  using nn::LayerSpec;
  return {LayerSpec::dense(2, hidden, Activation::tanh),
          LayerSpec::dense(hidden, hidden, Activation::tanh),
          LayerSpec::dense(hidden, 1, Activation::identity)};
}

std::vector<nn::LayerSpec> gru_bc_arch(std::size_t hidden) {
  return {nn::LayerSpec::gru(2, hidden),
          nn::LayerSpec::dense(hidden, 1, nn::Activation::identity)};
}

void stamp_meta(nn::NetworkModel& model, PolicyKind kind, const sim::SimConfig& cfg) {
  model.meta["kind"] = to_string(kind);
  model.meta["obs_theta_scale"] = std::to_string(cfg.crash_deg);
  model.meta["obs_omega_scale"] = std::to_string(cfg.omega_max);
}

CloneResult behavior_clone(std::span<const Demonstration> demos, std::vector<nn::LayerSpec> arch,
                           nn::TrainConfig cfg, const sim::SimConfig& sim_cfg, std::size_t window,
                           const nn::ProgressFn& progress) {
  auto model = nn::make_network(std::move(arch), cfg.seed);
  const bool recurrent = model.recurrent();
  const auto examples = bc_examples(demos, recurrent, window);
  if (examples.empty()) throw std::invalid_argument("behavior_clone: empty dataset");
  stamp_meta(model, recurrent ? PolicyKind::gru_bc : PolicyKind::dense_bc, sim_cfg);
  if (recurrent) model.meta["bc_window"] = std::to_string(window);
  cfg.loss = nn::LossKind::mse;

  auto result = nn::train(std::move(model), examples, cfg, progress);
  CloneResult out{result.model, std::move(result)};
  out.model.meta["bc_examples"] = std::to_string(examples.size());
  return out;
}

}  // namespace vip::policy
