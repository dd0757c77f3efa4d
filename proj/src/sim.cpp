#include "vip/sim.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace vip::sim {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("SimConfig: ") + what);
}

}  // namespace

void SimConfig::validate() const {
  require(std::isfinite(k_p) && k_p > 0.0, "k_p must be positive");
  require(std::isfinite(dt) && dt > 0.0, "dt must be positive");
  require(crash_deg > 0.0 && crash_deg <= 90.0, "crash_deg must lie in (0, 90]");
  require(std::isfinite(dob_deg), "dob_deg must be finite");
  require(joystick_gain > k_p * std::sin(crash_deg * kDegToRad),
          "joystick_gain must exceed k_p * sin(crash_deg)");
  require(reset_range_deg >= 0.0 && reset_range_deg < crash_deg,
          "reset_range_deg must lie in [0, crash_deg)");
  require(omega_max > 0.0, "omega_max must be positive");
}

double angular_accel(double theta, double u, const SimConfig& cfg) {
  if (!std::isfinite(theta) || !std::isfinite(u)) {
    throw std::invalid_argument("angular_accel: non-finite input");
  }
  if (u < -1.0 || u > 1.0) {
    throw std::invalid_argument("angular_accel: deflection outside [-1, 1]");
  }
  return cfg.k_p * std::sin(theta * kDegToRad) + u * cfg.joystick_gain;
}

std::pair<double, double> rk4_step(double theta, double omega, double u, double h,
                                   const SimConfig& cfg) {
  const double g = u * cfg.joystick_gain;
  auto accel = [&](double th) { return cfg.k_p * std::sin(th * kDegToRad) + g; };

  const double k1t = omega;
  const double k1w = accel(theta);
  const double k2t = omega + 0.5 * h * k1w;
  const double k2w = accel(theta + 0.5 * h * k1t);
  const double k3t = omega + 0.5 * h * k2w;
  const double k3w = accel(theta + 0.5 * h * k2t);
  const double k4t = omega + h * k3w;
  const double k4w = accel(theta + h * k3t);

  return {theta + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
          omega + h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)};
}

StepResult step(const PendulumState& state, double u, const SimConfig& cfg, Rng& rng) {
  if (!std::isfinite(state.theta) || !std::isfinite(state.omega) || !std::isfinite(state.t)) {
    throw SimulationFault("step: non-finite input state");
  }
  if (!std::isfinite(u) || u < -1.0 || u > 1.0) {
    throw std::invalid_argument("step: deflection outside [-1, 1]");
  }

  StepResult out;
  out.state = state;
  out.state.just_crashed = false;
  auto [theta, omega] = rk4_step(state.theta, state.omega, u, cfg.dt, cfg);
  if (!std::isfinite(theta) || !std::isfinite(omega)) {
    std::ostringstream msg;
    msg << "step: integration diverged from theta=" << state.theta << " omega=" << state.omega;
    throw SimulationFault(msg.str());
  }
  out.state.theta = theta;
  out.state.omega = omega;
  out.state.t = state.t + cfg.dt;

  // Closed boundary: reaching the crash angle counts.
  if (std::abs(theta) >= cfg.crash_deg) {
    const ResetState fresh = reset_after_crash(rng, cfg);
    out.state.theta = fresh.theta;
    out.state.omega = fresh.omega;
    out.state.crash_count = state.crash_count + 1;
    out.state.just_crashed = true;
    out.crashed_this_tick = true;
  }
  return out;
}

ResetState reset_after_crash(Rng& rng, const SimConfig& cfg) {
  return {rng.uniform(-cfg.reset_range_deg, cfg.reset_range_deg), 0.0};
}

double total_energy(const PendulumState& state, const SimConfig& cfg) {
  return 0.5 * state.omega * state.omega +
         cfg.k_p * (180.0 / std::numbers::pi) * std::cos(state.theta * kDegToRad);
}

}  // namespace vip::sim
