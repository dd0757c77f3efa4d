#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
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

namespace vip::adapt {

inline constexpr double kDeadzone = 0.05;

/// A tick where the human and the assistant pushed in opposite directions.
/// The human action is the training target.
struct DisagreementRecord {
  policy::Observation obs;
  double human_u = 0.0;
  double ai_u = 0.0;
  double t = 0.0;
  std::string trial_id;
  bool operator==(const DisagreementRecord&) const = default;
};

/// -1, 0 or +1 with |x| <= deadzone mapping to 0.
int deadzone_sign(double x, double deadzone = kDeadzone);

/// Recorded iff |human| > deadzone and the deadzone signs differ. Samples
/// lacking either deflection yield nothing.
std::optional<DisagreementRecord> record_disagreement(const telemetry::ControlSample& sample,
                                                      const sim::SimConfig& cfg,
                                                      const std::string& trial_id,
                                                      double deadzone = kDeadzone);

enum class Recipe { behavior_cloning, supervised };

struct FinetuneSpec {
  policy::PolicyKind target_kind = policy::PolicyKind::dense_bc;
  Recipe recipe = Recipe::supervised;
  std::size_t epochs = 20;
  double learning_rate = 1e-7;
  std::size_t batch_size = 16;
  double train_fraction = 0.9;

  /// actor_critic: behavior cloning, 100 epochs, lr 1e-5, batch 64, all data.
  /// dense_bc and gru_bc: supervised, 20 epochs, lr 1e-7, batch 16, 9:1 split.
  static FinetuneSpec for_kind(policy::PolicyKind kind);
};

struct FinetuneReport {
  std::size_t records = 0;
  bool unchanged = false;  ///< true when there was nothing to learn
  double initial_train_loss = 0.0;
  std::optional<double> initial_test_loss;
  double final_train_loss = 0.0;
  std::optional<double> final_test_loss;
  std::vector<nn::EpochStats> history;
  std::size_t steps = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double duration_s = 0.0;
};

struct FinetuneResult {
  nn::NetworkModel model;
  FinetuneReport report;
};

/// Examples for fine-tuning: observation in, human deflection out. Recurrent
/// models receive length-1 sequences.
std::vector<nn::Example> finetune_examples(std::span<const DisagreementRecord> records);

/// Runs the recipe with mean-squared error on the human targets. An empty
/// record set returns the model untouched with `unchanged` set. Throws
/// std::invalid_argument when the model kind does not match the spec.
FinetuneResult finetune(const nn::NetworkModel& model, std::span<const DisagreementRecord> records,
                        const FinetuneSpec& spec, std::uint64_t seed,
                        const nn::ProgressFn& progress = {}, Exec exec = Exec::parallel);

/// Kind recorded in model meta, falling back on the architecture.
policy::PolicyKind model_kind(const nn::NetworkModel& model);

struct EvalConfig {
  std::size_t n_trials = 50;
  double trial_len_s = 20.0;
  std::uint64_t seed = 0;
  double omega0_range = 0.0;  ///< start velocity uniform in +-omega0_range
  Exec exec = Exec::parallel;
};

struct EvalResult {
  telemetry::TrialMetrics metrics;  ///< pooled over every trial
  std::vector<telemetry::TrialMetrics> trials;
  double crash_rate = 0.0;  ///< crashes per trial
};

/// Seeded solo trials; trial i starts from random_start(derive(seed, i)).
EvalResult evaluate_policy(const policy::PolicyHandle& policy, const EvalConfig& ec,
                           const sim::SimConfig& cfg);

struct DyadicConfig {
  std::size_t rounds = 3;
  std::uint64_t seed = 0;
  double correction_s = 100.0;  ///< total corrector time per round
  double episode_s = 2.0;       ///< correction time from each random start
  double correction_omega0_range = 0.0;
  double deadzone = kDeadzone;
  EvalConfig eval;              ///< its seed is replaced by derive(seed, 1000)
  Exec exec = Exec::parallel;
  /// Replaces the kind's fixed recipe; for experiments only.
  std::optional<FinetuneSpec> recipe;
};

struct RoundResult {
  std::size_t round = 0;  ///< 1-based
  std::size_t correction_ticks = 0;
  std::vector<DisagreementRecord> records;
  FinetuneReport finetune;
  EvalResult eval;
};

struct DyadicResult {
  EvalResult baseline;  ///< round 0, before any correction
  std::vector<RoundResult> rounds;
  nn::NetworkModel model;  ///< assistant after the last round
};

struct DyadicHooks {
  std::function<void(const RoundResult&)> on_round;
  nn::ProgressFn on_epoch;
};

/// The corrector actuates while the assistant shadows; each round records
/// disagreements, fine-tunes the assistant on them and re-evaluates it.
DyadicResult dyadic_cycle(const policy::PolicyHandle& assistant, policy::PolicyHandle corrector,
                          const DyadicConfig& dc, const sim::SimConfig& cfg,
                          const DyadicHooks& hooks = {});

/// One correction run: episodes of episode_s from random starts with the
/// corrector actuating. Returns the samples (human_u = corrector, ai_u =
/// assistant) of every episode in order.
std::vector<std::vector<telemetry::ControlSample>> correction_run(
    policy::PolicyHandle& assistant, policy::PolicyHandle& corrector, double total_s,
    double episode_s, std::uint64_t seed, const sim::SimConfig& cfg, double omega0_range = 0.0);

/// One JSON object per line.
void write_disagreements(const std::filesystem::path& path,
                         std::span<const DisagreementRecord> records);
std::vector<DisagreementRecord> read_disagreements(const std::filesystem::path& path);

}  // namespace vip::adapt
