#include "vip/crash_predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vip::crash {
namespace {

std::array<double, kFeatures> features(const telemetry::ControlSample& s,
                                       const sim::SimConfig& cfg) {
  const auto o = policy::Observation::from_state(s.theta, s.omega, cfg);
  return {o.theta_norm, o.omega_norm, s.applied_u};
}

}  // namespace

double CrashDataset::positive_fraction() const {
  return examples.empty() ? 0.0
                          : static_cast<double>(positives) / static_cast<double>(examples.size());
}

CrashDataset build_crash_dataset(std::span<const Trace> traces, const WindowConfig& wc,
                                 const sim::SimConfig& cfg) {
  if (wc.window == 0 || wc.stride == 0 || !(wc.horizon_s > 0.0)) {
    throw std::invalid_argument("build_crash_dataset: window, stride and horizon must be positive");
  }
  const auto W = wc.window;
  const auto H = static_cast<std::size_t>(std::lround(wc.horizon_s / cfg.dt));
  CrashDataset out;

  for (std::size_t tr = 0; tr < traces.size(); ++tr) {
    const Trace& s = traces[tr];
    const std::size_t n = s.size();
    if (n < W) {
      ++out.skipped_short;
      continue;
    }
    // Sample k crashing means the crash lands at tick k + 1. next_crash[e]
    // is the first crashing sample index >= e.
    std::vector<std::size_t> next_crash(n + 1, n);
    for (std::size_t k = n; k-- > 0;) next_crash[k] = s[k].crashed ? k : next_crash[k + 1];
    // crashed_before[e] counts crashing samples in [0, e).
    std::vector<std::size_t> crashed_before(n + 1, 0);
    for (std::size_t k = 0; k < n; ++k) crashed_before[k + 1] = crashed_before[k] + (s[k].crashed ? 1 : 0);

    for (std::size_t e = W - 1; e < n; e += wc.stride) {
      const std::size_t first = e + 1 - W;
      if (crashed_before[e] - crashed_before[first] > 0) {
        ++out.excluded_reset;
        continue;
      }
      const std::size_t k = next_crash[e];
      const bool positive = k < n && k + 1 - e <= H;
      if (!positive && e + H > n) {
        ++out.excluded_tail;
        continue;
      }
      nn::Tensor input({W, kFeatures});
      for (std::size_t j = 0; j < W; ++j) {
        const auto f = features(s[first + j], cfg);
        for (std::size_t c = 0; c < kFeatures; ++c) input.at(j, c) = f[c];
      }
      out.examples.push_back({std::move(input), {positive ? 1.0 : 0.0}});
      out.trial.push_back(tr);
      out.t_end.push_back(s[e].t);
      out.positives += positive ? 1 : 0;
    }
  }
  return out;
}

std::vector<Trace> generate_corpus(std::size_t n_trials, double trial_len_s, std::uint64_t seed,
                                   const sim::SimConfig& cfg,
                                   const policy::IntermittentParams& params, Exec exec) {
  const auto ticks = static_cast<std::size_t>(std::lround(trial_len_s / cfg.dt));
  std::vector<Trace> out(n_trials);
  auto one = [&](std::size_t i) {
    auto handle = policy::PolicyHandle::intermittent(cfg, params);
    out[i] = policy::rollout(handle, policy::random_start(Rng::derive(seed, i), ticks, cfg), cfg);
  };
  if (exec == Exec::serial) {
    for (std::size_t i = 0; i < n_trials; ++i) one(i);
  } else {
    const auto count = static_cast<std::ptrdiff_t>(n_trials);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i) one(static_cast<std::size_t>(i));
  }
  return out;
}

std::vector<nn::LayerSpec> predictor_arch(std::size_t hidden) {
  return {nn::LayerSpec::gru(kFeatures, hidden), nn::LayerSpec::gru(hidden, hidden),
          nn::LayerSpec::dense(hidden, 1, nn::Activation::sigmoid)};
}

PredictorTraining train_crash_predictor(const CrashDataset& data, const WindowConfig& wc,
                                        nn::TrainConfig cfg, const sim::SimConfig& sim_cfg,
                                        std::size_t hidden, const nn::ProgressFn& progress) {
  if (data.examples.empty()) throw std::invalid_argument("train_crash_predictor: empty dataset");
  if (data.positives == 0 || data.positives == data.examples.size()) {
    throw std::invalid_argument("train_crash_predictor: dataset holds a single class");
  }
  auto model = nn::make_network(predictor_arch(hidden), cfg.seed);
  model.meta["kind"] = "crash_predictor";
  model.meta["window"] = std::to_string(wc.window);
  model.meta["horizon_s"] = std::to_string(wc.horizon_s);
  model.meta["features"] = "theta_norm,omega_norm,applied_u";
  model.meta["obs_theta_scale"] = std::to_string(sim_cfg.crash_deg);
  model.meta["obs_omega_scale"] = std::to_string(sim_cfg.omega_max);
  model.meta["positive_fraction"] = std::to_string(data.positive_fraction());
  cfg.loss = nn::LossKind::bce;
  auto result = nn::train(std::move(model), data.examples, cfg, progress);
  return {result.model, std::move(result)};
}

std::optional<std::size_t> model_window(const nn::NetworkModel& model) {
  const auto it = model.meta.find("window");
  if (it == model.meta.end()) return std::nullopt;
  return static_cast<std::size_t>(std::stoul(it->second));
}

CrashPrediction predict(const nn::NetworkModel& model, const nn::Tensor& window) {
  const auto W = model_window(model);
  if (window.shape.size() != 2 || window.cols() != kFeatures || (W && window.rows() != *W)) {
    throw nn::ShapeError("predict: window must be [" + (W ? std::to_string(*W) : std::string("W")) +
                         ", 3]");
  }
  CrashPrediction out;
  out.p_crash = std::clamp(nn::forward_sequence(model, window)[0], 0.0, 1.0);
  const auto h = model.meta.find("horizon_s");
  if (h != model.meta.end()) out.horizon_s = std::stod(h->second);
  return out;
}

std::optional<Cue> gate_cue(const CrashPrediction& p, double theta, double suggested_u,
                            const CueThresholds& th, const std::string& source) {
  if (!(p.p_crash >= th.p_min) || !(std::abs(theta) > th.theta_min_deg) || suggested_u == 0.0) {
    return std::nullopt;
  }
  Cue cue;
  cue.direction = suggested_u < 0.0 ? telemetry::CueDirection::left : telemetry::CueDirection::right;
  cue.magnitude = std::min(1.0, std::abs(suggested_u));
  cue.source_policy = source;
  return cue;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mann-Whitney U with average ranks for ties.
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] != 0) {
        rank_sum += avg_rank;
        pos += 1.0;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("roc_auc: need both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

void CrashWindow::push(double theta, double omega, double applied_u, const sim::SimConfig& cfg) {
  const auto o = policy::Observation::from_state(theta, omega, cfg);
  rows_.push_back({o.theta_norm, o.omega_norm, applied_u});
  if (rows_.size() > window_) rows_.pop_front();
}

nn::Tensor CrashWindow::tensor() const {
  if (!ready()) throw std::logic_error("CrashWindow: fewer than W ticks");
  nn::Tensor t({window_, kFeatures});
  for (std::size_t j = 0; j < window_; ++j) {
    for (std::size_t c = 0; c < kFeatures; ++c) t.at(j, c) = rows_[j][c];
  }
  return t;
}

}  // namespace vip::crash
