#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vip/network.hpp"
#include "vip/policies.hpp"
#include "vip/sim.hpp"
#include "vip/train.hpp"

namespace vip::app {

/// Directories and port, overridable by VIP_MODELS_DIR, VIP_RUNS_DIR and
/// VIP_PORT.
struct Env {
  std::filesystem::path models_dir = "models";
  std::filesystem::path runs_dir = "runs";
  std::uint16_t port = 8080;

  static Env from_environment();
};

struct BcOptions {
  std::string teacher = "intermittent";
  bool recurrent = false;
  std::size_t demos = 40;
  double demo_s = 60.0;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t hidden = policy::kDefaultHidden;
  std::size_t window = policy::kDefaultBcWindow;
  std::uint64_t seed = 7;
};

/// Clones a scripted teacher from seeded demonstrations.
nn::NetworkModel build_bc(const BcOptions& opt, const sim::SimConfig& cfg, std::ostream* log);

/// Catalog lookup by id. "bc-from-<teacher>" is trained with the default
/// BcOptions and saved to the models directory the first time it is asked for.
policy::PolicyHandle resolve_policy(const std::string& id,
                                    const std::filesystem::path& models_dir,
                                    const sim::SimConfig& cfg, std::ostream& log);

struct PredictorOptions {
  std::size_t trials = 200;
  double trial_s = 30.0;
  std::uint64_t corpus_seed = 2024;
  std::size_t window = 30;
  double horizon_s = 2.0;
  std::size_t stride = 15;
  double holdout = 0.2;  ///< trailing fraction of trials held out
  std::size_t epochs = 15;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t hidden = 32;
  std::uint64_t train_seed = 1;
};

struct PredictorReport {
  nn::NetworkModel model;
  double auc = 0.0;  ///< on the held-out trials
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double positive_train = 0.0;
  double positive_test = 0.0;
  double seconds = 0.0;
};

/// Corpus, trial-wise split, training and held-out ROC-AUC.
PredictorReport train_predictor(const PredictorOptions& opt, const sim::SimConfig& cfg,
                                const nn::ProgressFn& progress = {});

/// The vipctl command line. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vip::app
