#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vip/phase.hpp"
#include "vip/sim.hpp"

namespace vip::telemetry {

inline constexpr const char* kLogVersion = "vip-log/1";
inline constexpr double kBalancedDeg = 12.0;

enum class CueDirection { left, right };
const char* to_string(CueDirection d);
CueDirection parse_cue_direction(const std::string& s);

struct CueMark {
  CueDirection direction = CueDirection::left;
  double magnitude = 0.0;
  bool operator==(const CueMark&) const = default;
};

/// One tick as observed: the pre-step state, every party's deflection, the
/// cue shown, and whether the step from this state crashed.
struct ControlSample {
  double t = 0.0;
  double theta = 0.0;
  double omega = 0.0;
  std::optional<double> human_u;
  std::optional<double> ai_u;
  double applied_u = 0.0;
  std::optional<CueMark> cue;
  bool crashed = false;
  SessionPhase phase = SessionPhase::AiSolo;

  bool operator==(const ControlSample&) const = default;
};

struct TrialMetrics {
  std::uint64_t crash_count = 0;
  double mean_abs_theta = 0.0;
  double mean_abs_omega = 0.0;
  double mean_abs_applied_u = 0.0;
  double balanced_fraction = 0.0;  ///< ticks with |theta| < 12 deg
  double duration_s = 0.0;
  std::uint64_t ticks = 0;
};

/// Throws std::invalid_argument on an empty trace.
TrialMetrics compute_metrics(std::span<const ControlSample> samples, double dt);

/// Tick-weighted combination of per-trial metrics.
TrialMetrics combine_metrics(std::span<const TrialMetrics> trials);

enum class PortraitFormat { table, svg };

/// table: tab-separated "theta_deg\tomega_dps" header then one row per sample.
/// svg: trajectory polyline on axes spanning +-crash_deg and +-omega_max with
/// the crash boundary marked.
void export_phase_portrait(std::span<const ControlSample> samples,
                           const std::filesystem::path& out, PortraitFormat format,
                           const sim::SimConfig& cfg = {});

/// First line of every trial log.
struct TrialHeader {
  std::string format = kLogVersion;
  std::string session_id;
  std::string trial_id;
  std::uint64_t seed = 0;
  SessionPhase phase = SessionPhase::AiSolo;
  std::string assistant_id;      ///< empty when no assistant was loaded
  std::string assistant_model;   ///< model path for learned assistants
  std::string predictor_model;   ///< crash predictor path, if any
  std::string human_id;          ///< scripted stand-in for the human, if any
  double duration_s = 0.0;
  double cue_p_min = 0.8;
  double cue_theta_min_deg = 12.0;
  std::uint64_t n_dots = 200;
  double coherence = 0.5;
  sim::SimConfig sim;
};

class LogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Line-delimited JSON trial writer: open_trial writes the header, each
/// append_sample writes one line, close_trial flushes.
class TrialWriter {
 public:
  TrialWriter() = default;
  TrialWriter(const TrialWriter&) = delete;
  TrialWriter& operator=(const TrialWriter&) = delete;
  TrialWriter(TrialWriter&&) = default;
  TrialWriter& operator=(TrialWriter&&) = default;
  ~TrialWriter();

  void open_trial(const std::filesystem::path& path, const TrialHeader& header);
  /// Rejects samples whose time does not advance, and writes after close.
  void append_sample(const ControlSample& sample);
  void close_trial();
  bool is_open() const { return open_; }
  std::uint64_t count() const { return count_; }

 private:
  std::ofstream out_;
  bool open_ = false;
  bool closed_ = false;
  std::optional<double> last_t_;
  std::uint64_t count_ = 0;
};

struct TrialLog {
  TrialHeader header;
  std::vector<ControlSample> samples;
};

TrialLog read_trial_log(const std::filesystem::path& path);

std::string serialize_sample(const ControlSample& s);
ControlSample parse_sample(const std::string& line);
std::string serialize_header(const TrialHeader& h);
TrialHeader parse_header(const std::string& line);

/// runs/<session>/trials/<seq>_<phase>.log
std::filesystem::path trial_log_path(const std::filesystem::path& runs_dir,
                                     const std::string& session_id, std::uint64_t seq,
                                     SessionPhase phase);

}  // namespace vip::telemetry
