#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vip/adaptation.hpp"
#include "vip/crash_predictor.hpp"
#include "vip/network.hpp"
#include "vip/phase.hpp"
#include "vip/policies.hpp"
#include "vip/protocol.hpp"
#include "vip/rdk.hpp"
#include "vip/sim.hpp"
#include "vip/telemetry.hpp"

namespace vip::session {

inline constexpr std::size_t kDots = 200;

/// Everything that determines a trial. Together with the human input trace
/// it reproduces the trial exactly.
struct TrialSpec {
  std::string session_id = "headless";
  std::string trial_id;
  std::uint64_t seed = 0;
  SessionPhase phase = SessionPhase::HumanBaseline;
  double duration_s = 100.0;
  double coherence = 0.5;
  std::size_t n_dots = kDots;
  crash::CueThresholds cue;

  std::optional<policy::PolicyHandle> assistant;
  std::string assistant_model;  ///< path, logged for replay
  std::shared_ptr<const nn::NetworkModel> predictor;
  std::string predictor_model;
  /// Scripted stand-in for the human; when absent the caller supplies input.
  std::optional<policy::PolicyHandle> human;

  /// Defaults from the phase rules: duration and coherence.
  static TrialSpec for_phase(SessionPhase phase, std::uint64_t seed);
};

/// What the display needs after one tick.
struct FrameOut {
  std::uint64_t tick = 0;
  double t = 0.0;  ///< time after the step
  double theta = 0.0;
  double omega = 0.0;
  const std::vector<rdk::Dot>* dots = nullptr;  ///< valid until the next tick
  std::optional<telemetry::CueMark> cue;
  SessionPhase phase = SessionPhase::HumanBaseline;
  bool crashed = false;
  std::uint64_t crash_count = 0;
  double applied_u = 0.0;
};

class SessionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One trial of one phase: the per-tick composition of assistant, cue gate,
/// actuation, dynamics, stimulus and recording.
///
/// Streams: environment derive(seed, 0), assistant derive(seed, 1), scripted
/// human derive(seed, 5), dots derive(seed, 4); the start state is
/// random_start(seed).
class TrialRunner {
 public:
  TrialRunner(TrialSpec spec, const sim::SimConfig& cfg);

  /// Logs every tick to `path`, starting with the header.
  void open_log(const std::filesystem::path& path);

  /// Advances one tick. `human_input` is clamped to [-1, 1]; it is ignored
  /// when a scripted human is set. Throws SessionError once done().
  FrameOut tick(std::optional<double> human_input);

  bool done() const { return tick_ >= ticks_; }
  std::uint64_t ticks_total() const { return ticks_; }
  std::uint64_t ticks_done() const { return tick_; }
  const sim::PendulumState& state() const { return state_; }
  const rdk::DotField& dots() const { return dots_; }
  const protocol::PhaseRules& rules() const { return rules_; }
  const TrialSpec& spec() const { return spec_; }
  const std::vector<telemetry::ControlSample>& samples() const { return samples_; }
  const std::vector<adapt::DisagreementRecord>& disagreements() const { return records_; }
  telemetry::TrialHeader header() const;

  /// Closes the log if open. Metrics need at least one tick.
  void finish();
  telemetry::TrialMetrics metrics() const;

 private:
  TrialSpec spec_;
  sim::SimConfig cfg_;
  protocol::PhaseRules rules_;
  std::uint64_t ticks_ = 0;
  std::uint64_t tick_ = 0;
  sim::PendulumState state_;
  Rng env_rng_;
  Rng assistant_rng_;
  Rng human_rng_;
  Rng dot_rng_;
  rdk::DotField dots_;
  crash::CrashWindow window_;
  std::vector<telemetry::ControlSample> samples_;
  std::vector<adapt::DisagreementRecord> records_;
  telemetry::TrialWriter writer_;
};

/// Builds the assistant named in a log header: "pd", "intermittent", or a
/// learned model read from the recorded path.
std::optional<policy::PolicyHandle> assistant_from_header(const telemetry::TrialHeader& h);

struct ReplayReport {
  std::size_t total = 0;
  std::size_t identical = 0;
  std::optional<std::size_t> first_mismatch;
  bool ok() const { return total > 0 && identical == total; }
  /// "OK, N/N ticks identical" or "MISMATCH at tick k, i/N ticks identical".
  std::string summary() const;
};

/// Re-runs the logged trial from its header and human input trace and
/// compares every serialized sample.
ReplayReport replay_trial(const telemetry::TrialLog& log);
ReplayReport replay_trial(const std::filesystem::path& log_path);

struct PhaseEntry {
  SessionPhase phase = SessionPhase::Tutorial;
  std::string trial_id;
  telemetry::TrialMetrics metrics;
};

struct FinetuneEntry {
  std::size_t round = 0;
  adapt::FinetuneReport report;
  std::string model_path;
};

/// Append-only account of one session.
struct SessionRecord {
  std::string session_id;
  std::string assistant_id;
  std::vector<PhaseEntry> phases;
  std::vector<FinetuneEntry> finetunes;
  std::vector<protocol::Event> decisions;  ///< operator_accept / operator_repeat
};

std::string serialize_record(const SessionRecord& r);
SessionRecord parse_record(const std::string& text);

struct SessionConfig {
  std::string session_id = "session";
  std::filesystem::path runs_dir = "runs";
  std::uint64_t seed = 0;
  sim::SimConfig sim;
  crash::CueThresholds cue;
  std::size_t n_dots = kDots;
  /// Replaces every phase's trial length when set.
  std::optional<double> trial_duration_s;
  /// Scripted human for headless sessions.
  std::optional<policy::PolicyHandle> human;
};

/// Work handed to a background worker when the session enters FineTuning.
struct FinetuneJob {
  std::size_t round = 0;
  nn::NetworkModel model;
  std::vector<adapt::DisagreementRecord> records;
  adapt::FinetuneSpec spec;
  std::uint64_t seed = 0;
};

/// Summary of a finished trial.
struct TrialEnd {
  SessionPhase phase = SessionPhase::Tutorial;
  std::string trial_id;
  telemetry::TrialMetrics metrics;
  std::filesystem::path log_path;
};

struct TickOutcome {
  std::optional<FrameOut> frame;
  std::optional<TrialEnd> ended;
};

/// The full dyadic protocol for one participant. One trial per simulating
/// phase; AiReevaluation waits for an operator decision after its trial;
/// FineTuning hands a job to the caller and resumes on finish_finetune.
class Session {
 public:
  Session(SessionConfig config, policy::PolicyHandle assistant, std::string assistant_model,
          std::shared_ptr<const nn::NetworkModel> predictor, std::string predictor_model);

  SessionPhase phase() const { return phase_; }
  bool trial_running() const { return runner_.has_value(); }
  bool awaiting_decision() const { return phase_ == SessionPhase::AiReevaluation && !runner_; }
  bool faulted() const { return faulted_; }
  const SessionRecord& record() const { return record_; }
  const policy::PolicyHandle& assistant() const { return assistant_; }
  const TrialRunner* runner() const { return runner_ ? &*runner_ : nullptr; }
  std::filesystem::path session_dir() const;

  /// One tick of the running trial. No frame outside simulating phases. When
  /// the trial completes it is persisted and the phase advances.
  TickOutcome tick(std::optional<double> human_input);

  /// Operator events. Throws protocol::IllegalTransition for pairs outside
  /// the table; trial_done and finetune_done are raised internally only.
  /// Ends and persists a running trial first.
  std::optional<TrialEnd> operator_event(protocol::Event event);

  /// The job to run while in FineTuning, once.
  std::optional<FinetuneJob> take_finetune_job();
  /// Installs the fine-tuned assistant, saves it and enters AiReevaluation.
  void finish_finetune(adapt::FinetuneResult result);

  /// Closes and persists any running trial (disconnect).
  std::optional<TrialEnd> abort_trial();

 private:
  void start_trial();
  TrialEnd end_trial();
  void advance(protocol::Event event);
  void enter_phase(SessionPhase next);
  void save_record() const;

  SessionConfig config_;
  policy::PolicyHandle assistant_;
  std::string assistant_model_;
  std::shared_ptr<const nn::NetworkModel> predictor_;
  std::string predictor_model_;
  SessionPhase phase_ = SessionPhase::Tutorial;
  std::optional<TrialRunner> runner_;
  std::filesystem::path log_path_;
  std::uint64_t seq_ = 0;
  std::size_t round_ = 0;
  std::vector<adapt::DisagreementRecord> pending_records_;
  bool job_taken_ = false;
  bool faulted_ = false;
  SessionRecord record_;
};

/// Runs a fine-tune job to completion on the calling thread.
adapt::FinetuneResult run_finetune_job(const FinetuneJob& job,
                                       const nn::ProgressFn& progress = {});

}  // namespace vip::session
