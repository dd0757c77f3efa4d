#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "vip/network.hpp"
#include "vip/optimizer.hpp"

namespace vip::nn {

struct TrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  double train_fraction = 1.0;  ///< in (0, 1]
  std::uint64_t seed = 0;
  LossKind loss = LossKind::mse;
  Exec exec = Exec::parallel;

  void validate() const;
};

/// Number of training examples for a dataset of size n: ceil(fraction * n).
std::size_t train_count(std::size_t n, double train_fraction);

struct EpochStats {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  std::optional<double> test_loss;
  std::size_t steps = 0;  ///< cumulative optimizer steps
};

struct TrainResult {
  NetworkModel model;
  double initial_train_loss = 0.0;
  std::optional<double> initial_test_loss;
  std::vector<EpochStats> history;
  std::size_t steps = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

using ProgressFn = std::function<void(const EpochStats&)>;

/// Mini-batch training. The data are permuted once by `seed` and split into a
/// leading train part and a held-out remainder; each epoch reshuffles the
/// train part and takes ceil(n_train / batch_size) optimizer steps. Losses in
/// the history are full passes over each split after the epoch.
TrainResult train(NetworkModel model, std::span<const Example> data, const TrainConfig& cfg,
                  const ProgressFn& progress = {});

}  // namespace vip::nn
