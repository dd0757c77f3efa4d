#include "vip/train.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vip/rng.hpp"

namespace vip::nn {
namespace {

void shuffle(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.below(i)]);
  }
}

std::vector<Example> gather(std::span<const Example> data, std::span<const std::size_t> idx) {
  std::vector<Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw std::invalid_argument("TrainConfig: train_fraction must lie in (0, 1]");
  }
}

std::size_t train_count(std::size_t n, double train_fraction) {
  // The small slack keeps exact products such as 0.9 * 100 from rounding up.
  const double raw = std::ceil(train_fraction * static_cast<double>(n) - 1e-9);
  const auto k = static_cast<std::size_t>(std::max(raw, 1.0));
  return std::min(k, n);
}

TrainResult train(NetworkModel model, std::span<const Example> data, const TrainConfig& cfg,
                  const ProgressFn& progress) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  model.validate();

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);

  TrainResult result;
  result.n_train = train_count(data.size(), cfg.train_fraction);
  result.n_test = data.size() - result.n_train;
  const std::vector<Example> train_set =
      gather(data, std::span(order).first(result.n_train));
  const std::vector<Example> test_set = gather(data, std::span(order).subspan(result.n_train));

  result.initial_train_loss = batch_loss(model, train_set, cfg.loss, cfg.exec);
  if (!test_set.empty()) result.initial_test_loss = batch_loss(model, test_set, cfg.loss, cfg.exec);

  AdamState adam = AdamState::for_model(model);
  std::vector<std::size_t> perm(train_set.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<Example> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(perm, rng);
    for (std::size_t start = 0; start < perm.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, perm.size());
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[perm[i]]);
      const BatchGradients bg = backward(model, batch, cfg.loss, cfg.exec);
      optimizer_step(model.weights, bg.grads, adam, cfg.learning_rate);
      ++result.steps;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.steps = result.steps;
    stats.train_loss = batch_loss(model, train_set, cfg.loss, cfg.exec);
    if (!test_set.empty()) stats.test_loss = batch_loss(model, test_set, cfg.loss, cfg.exec);
    result.history.push_back(stats);
    if (progress) progress(stats);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace vip::nn
