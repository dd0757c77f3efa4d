#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vip/network.hpp"
#include "vip/phase.hpp"
#include "vip/rng.hpp"
#include "vip/sim.hpp"
#include "vip/telemetry.hpp"
#include "vip/train.hpp"

namespace vip::policy {

/// Normalized policy input.
struct Observation {
  double theta_norm = 0.0;  ///< theta / crash_deg
  double omega_norm = 0.0;  ///< clamp(omega, +-omega_max) / omega_max

  static Observation from_state(double theta, double omega, const sim::SimConfig& cfg);
  double theta_deg(const sim::SimConfig& cfg) const { return theta_norm * cfg.crash_deg; }
  double omega_dps(const sim::SimConfig& cfg) const { return omega_norm * cfg.omega_max; }
  bool operator==(const Observation&) const = default;
};

enum class PolicyKind { pd, intermittent, dense_bc, gru_bc, actor_critic };
const char* to_string(PolicyKind kind);
PolicyKind parse_policy_kind(const std::string& s);
bool is_learned(PolicyKind kind);

/// Gains per degree and per deg/s; u = -(kp*theta + kd*omega) / joystick_gain.
struct PdGains {
  double kp = 0.0;
  double kd = 0.0;

  /// Places both closed-loop poles of the linearized plant at -lambda.
  static PdGains pole_placement(const sim::SimConfig& cfg, double lambda = 8.0);
};

double pd_control(double theta, double omega, const PdGains& gains, const sim::SimConfig& cfg);

struct IntermittentParams {
  double trigger_deg = 6.0;
  double reaction_delay_s = 0.25;
  double pulse_mag = 0.35;
  double pulse_dur_s = 0.2;
  double noise_sd = 0.05;
  /// Look-ahead of the trigger test, which also counts velocity from pulses
  /// already committed but not yet executed.
  double anticipation_s = 0.2;

  void validate() const;
};

/// Controller memory: the reaction delay line of intended deflections and the
/// pulse currently being planned.
struct IntermittentState {
  std::deque<double> pipeline;
  int pulse_left = 0;
  double direction = 0.0;
};

/// One tick of the dead-zone, delayed, pulsed controller.
double intermittent_control(double theta, double omega, const IntermittentParams& params,
                            IntermittentState& state, Rng& rng, const sim::SimConfig& cfg);

/// A controller that proposes a deflection every tick.
class PolicyHandle {
 public:
  static PolicyHandle pd(const sim::SimConfig& cfg, std::optional<PdGains> gains = std::nullopt);
  static PolicyHandle intermittent(const sim::SimConfig& cfg, IntermittentParams params = {});
  /// Kind is taken from meta "kind" (dense_bc, gru_bc or actor_critic).
  static PolicyHandle learned(std::string id, std::shared_ptr<const nn::NetworkModel> model,
                              const sim::SimConfig& cfg);

  /// Deflection in [-1, 1]; non-finite network output maps to 0.
  double act(const Observation& obs, Rng& rng);
  void reset();

  const std::string& id() const { return id_; }
  PolicyKind kind() const { return kind_; }
  const std::string& note() const { return note_; }
  const std::shared_ptr<const nn::NetworkModel>& model() const { return model_; }
  const sim::SimConfig& sim_config() const { return cfg_; }
  void set_id(std::string id) { id_ = std::move(id); }

 private:
  std::string id_;
  PolicyKind kind_ = PolicyKind::pd;
  std::string note_;
  sim::SimConfig cfg_;
  PdGains gains_;
  IntermittentParams params_;
  IntermittentState istate_;
  std::shared_ptr<const nn::NetworkModel> model_;
  nn::Hidden hidden_;
};

/// Per-step actor-critic reward.
double reward(const Observation& obs, double u, bool crashed);

/// Solo trial: the policy actuates, samples record the pre-step state.
struct RolloutSpec {
  double theta0 = 0.0;
  double omega0 = 0.0;
  std::size_t ticks = 0;
  std::uint64_t seed = 0;  ///< env stream derive(seed, 0), policy stream derive(seed, 1)
  SessionPhase phase = SessionPhase::AiSolo;
};

std::vector<telemetry::ControlSample> rollout(PolicyHandle& policy, const RolloutSpec& spec,
                                              const sim::SimConfig& cfg);

/// Seeded start: theta0 uniform in +-reset_range_deg, omega0 uniform in +-omega0_range.
RolloutSpec random_start(std::uint64_t seed, std::size_t ticks, const sim::SimConfig& cfg,
                         double omega0_range = 0.0);

/// One ordered demonstration trace.
struct Demonstration {
  std::vector<Observation> obs;
  std::vector<double> u;
};

std::vector<Demonstration> collect_demonstrations(PolicyHandle teacher, std::size_t n_trials,
                                                  double trial_len_s, std::uint64_t seed,
                                                  const sim::SimConfig& cfg);

/// Supervised examples. Dense models get single observations; recurrent
/// models get the `window` observations ending at each tick.
std::vector<nn::Example> bc_examples(std::span<const Demonstration> demos, bool recurrent,
                                     std::size_t window);

inline constexpr std::size_t kDefaultHidden = 32;
inline constexpr std::size_t kDefaultBcWindow = 16;

std::vector<nn::LayerSpec> dense_bc_arch(std::size_t hidden = kDefaultHidden);
std::vector<nn::LayerSpec> gru_bc_arch(std::size_t hidden = kDefaultHidden);

struct CloneResult {
  nn::NetworkModel model;
  nn::TrainResult training;
};

/// Mean-squared regression of u on the observation. Throws on empty data.
CloneResult behavior_clone(std::span<const Demonstration> demos, std::vector<nn::LayerSpec> arch,
                           nn::TrainConfig cfg, const sim::SimConfig& sim_cfg,
                           std::size_t window = kDefaultBcWindow,
                           const nn::ProgressFn& progress = {});

/// Writes kind and normalization constants into model meta.
void stamp_meta(nn::NetworkModel& model, PolicyKind kind, const sim::SimConfig& cfg);

}  // namespace vip::policy
