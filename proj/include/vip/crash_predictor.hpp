#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vip/exec.hpp"
#include "vip/network.hpp"
#include "vip/policies.hpp"
#include "vip/sim.hpp"
#include "vip/telemetry.hpp"
#include "vip/train.hpp"

namespace vip::crash {

using Trace = std::vector<telemetry::ControlSample>;

/// Window features per tick: theta_norm, omega_norm, applied u.
inline constexpr std::size_t kFeatures = 3;

struct WindowConfig {
  std::size_t window = 30;  ///< ticks (0.5 s at 60 Hz)
  double horizon_s = 2.0;
  std::size_t stride = 1;   ///< ticks between consecutive window ends
};

struct CrashDataset {
  std::vector<nn::Example> examples;  ///< input [W, 3], target {0} or {1}
  std::vector<std::size_t> trial;     ///< source trace of each example
  std::vector<double> t_end;          ///< time of the last tick in each window
  std::size_t skipped_short = 0;      ///< traces shorter than W
  std::size_t excluded_reset = 0;     ///< windows spanning a crash reset
  std::size_t excluded_tail = 0;      ///< negative windows whose horizon passes the trace end
  std::size_t positives = 0;

  double positive_fraction() const;
};

/// Window ending at tick t is labeled 1 iff a crash occurs in (t, t + horizon].
CrashDataset build_crash_dataset(std::span<const Trace> traces, const WindowConfig& wc,
                                 const sim::SimConfig& cfg);

/// Seeded solo trials of the intermittent controller. Trial i uses
/// random_start(derive(seed, i)); the parallel path yields identical traces.
std::vector<Trace> generate_corpus(std::size_t n_trials, double trial_len_s, std::uint64_t seed,
                                   const sim::SimConfig& cfg,
                                   const policy::IntermittentParams& params = {},
                                   Exec exec = Exec::parallel);

/// Two stacked GRU layers and a sigmoid head.
std::vector<nn::LayerSpec> predictor_arch(std::size_t hidden = 32);

struct PredictorTraining {
  nn::NetworkModel model;
  nn::TrainResult training;
};

/// Binary cross-entropy training. Rejects datasets holding a single class.
PredictorTraining train_crash_predictor(const CrashDataset& data, const WindowConfig& wc,
                                        nn::TrainConfig cfg, const sim::SimConfig& sim_cfg,
                                        std::size_t hidden = 32,
                                        const nn::ProgressFn& progress = {});

struct CrashPrediction {
  double p_crash = 0.0;
  double horizon_s = 2.0;
};

/// Window length comes from model meta "window"; a mismatch throws ShapeError.
CrashPrediction predict(const nn::NetworkModel& model, const nn::Tensor& window);

struct CueThresholds {
  double p_min = 0.8;
  double theta_min_deg = 12.0;
};

struct Cue {
  telemetry::CueDirection direction = telemetry::CueDirection::left;
  double magnitude = 0.0;
  std::string source_policy;
};

/// A cue iff p >= p_min, |theta| > theta_min and u != 0. theta is measured
/// from the DOB; negative u points left.
std::optional<Cue> gate_cue(const CrashPrediction& p, double theta, double suggested_u,
                            const CueThresholds& th = {}, const std::string& source = {});

/// Area under the ROC curve with tied scores counted as half.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// The last W ticks seen by a live session.
class CrashWindow {
 public:
  explicit CrashWindow(std::size_t window = 30) : window_(window) {}

  void push(double theta, double omega, double applied_u, const sim::SimConfig& cfg);
  void clear() { rows_.clear(); }
  bool ready() const { return rows_.size() == window_; }
  std::size_t size() const { return rows_.size(); }
  std::size_t capacity() const { return window_; }
  /// [W, 3] tensor, oldest tick first. Requires ready().
  nn::Tensor tensor() const;

 private:
  std::size_t window_;
  std::deque<std::array<double, kFeatures>> rows_;
};

/// Window length recorded in a predictor's meta, or nullopt.
std::optional<std::size_t> model_window(const nn::NetworkModel& model);

}  // namespace vip::crash
