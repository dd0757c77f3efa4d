#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include "vip/rng.hpp"

namespace vip::sim {

/// Parameters of the virtual inverted pendulum. Angles are degrees and rates
/// are degrees per second throughout.
struct SimConfig {
  double k_p = 600.0;              ///< destabilizing constant, deg/s^2
  double dt = 1.0 / 60.0;          ///< tick duration, s
  double crash_deg = 60.0;         ///< crash boundary, deg from the DOB
  double dob_deg = 0.0;            ///< direction of balance in the display frame
  double joystick_gain = 1200.0;   ///< angular acceleration at full deflection
  double reset_range_deg = 20.0;   ///< post-crash reset half-width
  double omega_max = 240.0;        ///< velocity clamp for observation scaling

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

/// theta is the signed deviation from the direction of balance.
struct PendulumState {
  double theta = 0.0;
  double omega = 0.0;
  double t = 0.0;
  std::uint64_t crash_count = 0;
  bool just_crashed = false;
};

struct StepResult {
  PendulumState state;
  bool crashed_this_tick = false;
};

/// Raised when integration produces a non-finite state.
class SimulationFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// k_p * sin(theta) + u * joystick_gain, in deg/s^2.
double angular_accel(double theta, double u, const SimConfig& cfg);

/// One classical RK4 step of (theta, omega) over h seconds with u held
/// constant. No crash handling.
std::pair<double, double> rk4_step(double theta, double omega, double u, double h,
                                   const SimConfig& cfg);

/// Advance one tick: RK4 integration, time update, crash detection and reset.
/// `rng` is consumed only when a crash occurs.
StepResult step(const PendulumState& state, double u, const SimConfig& cfg, Rng& rng);

struct ResetState {
  double theta = 0.0;
  double omega = 0.0;
};

/// Fresh post-crash state: theta uniform in +-reset_range_deg, omega zero.
ResetState reset_after_crash(Rng& rng, const SimConfig& cfg);

/// 0.5 * omega^2 + k_p * (180/pi) * cos(theta); conserved when u == 0.
double total_energy(const PendulumState& state, const SimConfig& cfg);

}  // namespace vip::sim
