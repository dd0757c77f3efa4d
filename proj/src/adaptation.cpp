#include "vip/adaptation.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "json.hpp"

namespace vip::adapt {
namespace {

using json = nlohmann::json;
using policy::PolicyKind;

std::size_t ticks_of(double seconds, const sim::SimConfig& cfg) {
  return static_cast<std::size_t>(std::lround(seconds / cfg.dt));
}

}  // namespace

int deadzone_sign(double x, double deadzone) {
  if (x > deadzone) return 1;
  if (x < -deadzone) return -1;
  return 0;
}

std::optional<DisagreementRecord> record_disagreement(const telemetry::ControlSample& sample,
                                                      const sim::SimConfig& cfg,
                                                      const std::string& trial_id,
                                                      double deadzone) {
  if (!sample.human_u || !sample.ai_u) return std::nullopt;
  const int h = deadzone_sign(*sample.human_u, deadzone);
  const int a = deadzone_sign(*sample.ai_u, deadzone);
  // A passive assistant (a == 0) is not a directional conflict.
  if (h == 0 || a == 0 || h == a) return std::nullopt;
  DisagreementRecord r;
  r.obs = policy::Observation::from_state(sample.theta, sample.omega, cfg);
  r.human_u = *sample.human_u;
  r.ai_u = *sample.ai_u;
  r.t = sample.t;
  r.trial_id = trial_id;
  return r;
}

FinetuneSpec FinetuneSpec::for_kind(PolicyKind kind) {
  FinetuneSpec s;
  s.target_kind = kind;
  switch (kind) {
    case PolicyKind::actor_critic:
      s.recipe = Recipe::behavior_cloning;
      s.epochs = 100;
      s.learning_rate = 1e-5;
      s.batch_size = 64;
      s.train_fraction = 1.0;
      return s;
    case PolicyKind::dense_bc:
    case PolicyKind::gru_bc:
      s.recipe = Recipe::supervised;
      s.epochs = 20;
      s.learning_rate = 1e-7;
      s.batch_size = 16;
      s.train_fraction = 0.9;
      return s;
    default:
      throw std::invalid_argument(std::string("no fine-tune recipe for scripted kind ") +
                                  policy::to_string(kind));
  }
}

PolicyKind model_kind(const nn::NetworkModel& model) {
  const auto it = model.meta.find("kind");
  if (it != model.meta.end()) return policy::parse_policy_kind(it->second);
  return model.recurrent() ? PolicyKind::gru_bc : PolicyKind::dense_bc;
}

std::vector<nn::Example> finetune_examples(std::span<const DisagreementRecord> records) {
  std::vector<nn::Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({nn::Tensor({1, 2}, {r.obs.theta_norm, r.obs.omega_norm}), {r.human_u}});
  }
  return out;
}

FinetuneResult finetune(const nn::NetworkModel& model, std::span<const DisagreementRecord> records,
                        const FinetuneSpec& spec, std::uint64_t seed,
                        const nn::ProgressFn& progress, Exec exec) {
  const auto kind = model_kind(model);
  if (kind != spec.target_kind) {
    throw std::invalid_argument(std::string("finetune: model kind ") + policy::to_string(kind) +
                                " does not match recipe for " + policy::to_string(spec.target_kind));
  }
  const auto t0 = std::chrono::steady_clock::now();
  FinetuneResult out;
  out.report.records = records.size();
  if (records.empty()) {
    out.model = model;
    out.report.unchanged = true;
    return out;
  }

  nn::TrainConfig tc;
  tc.epochs = spec.epochs;
  tc.learning_rate = spec.learning_rate;
  tc.batch_size = spec.batch_size;
  tc.train_fraction = spec.train_fraction;
  tc.seed = seed;
  tc.loss = nn::LossKind::mse;
  tc.exec = exec;

  // Only the policy network is touched; for the actor-critic kind that is
  // the actor, cloned toward the human's actions.
  const auto examples = finetune_examples(records);
  auto tr = nn::train(model, examples, tc, progress);

  auto& rep = out.report;
  rep.initial_train_loss = tr.initial_train_loss;
  rep.initial_test_loss = tr.initial_test_loss;
  rep.final_train_loss = tr.history.back().train_loss;
  rep.final_test_loss = tr.history.back().test_loss;
  rep.history = tr.history;
  rep.steps = tr.steps;
  rep.n_train = tr.n_train;
  rep.n_test = tr.n_test;
  out.model = std::move(tr.model);
  const int rounds = out.model.meta.count("finetune_rounds")
                         ? std::stoi(out.model.meta["finetune_rounds"])
                         : 0;
  out.model.meta["finetune_rounds"] = std::to_string(rounds + 1);
  out.model.meta["finetune_recipe"] = spec.recipe == Recipe::behavior_cloning ? "behavior_cloning"
                                                                              : "supervised";
  rep.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

EvalResult evaluate_policy(const policy::PolicyHandle& policy, const EvalConfig& ec,
                           const sim::SimConfig& cfg) {
  if (ec.n_trials == 0) throw std::invalid_argument("evaluate_policy: n_trials must be >= 1");
  const auto ticks = ticks_of(ec.trial_len_s, cfg);
  if (ticks == 0) throw std::invalid_argument("evaluate_policy: trial shorter than one tick");

  EvalResult out;
  out.trials.resize(ec.n_trials);
  auto one = [&](std::size_t i) {
    policy::PolicyHandle h = policy;
    const auto spec = policy::random_start(Rng::derive(ec.seed, i), ticks, cfg, ec.omega0_range);
    const auto samples = policy::rollout(h, spec, cfg);
    out.trials[i] = telemetry::compute_metrics(samples, cfg.dt);
  };
  if (ec.exec == Exec::serial) {
    for (std::size_t i = 0; i < ec.n_trials; ++i) one(i);
  } else {
    const auto count = static_cast<std::ptrdiff_t>(ec.n_trials);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i) one(static_cast<std::size_t>(i));
  }
  out.metrics = telemetry::combine_metrics(out.trials);
  out.crash_rate = static_cast<double>(out.metrics.crash_count) / static_cast<double>(ec.n_trials);
  return out;
}

std::vector<std::vector<telemetry::ControlSample>> correction_run(
    policy::PolicyHandle& assistant, policy::PolicyHandle& corrector, double total_s,
    double episode_s, std::uint64_t seed, const sim::SimConfig& cfg, double omega0_range) {
  if (!(episode_s > 0.0) || !(total_s >= episode_s)) {
    throw std::invalid_argument("correction_run: need total_s >= episode_s > 0");
  }
  const auto episodes = static_cast<std::size_t>(std::lround(total_s / episode_s));
  const auto ticks = ticks_of(episode_s, cfg);
  std::vector<std::vector<telemetry::ControlSample>> out(episodes);

  for (std::size_t e = 0; e < episodes; ++e) {
    const auto spec = policy::random_start(Rng::derive(seed, e), ticks, cfg, omega0_range);
    Rng env(Rng::derive(spec.seed, 0));
    Rng rc(Rng::derive(spec.seed, 1));
    Rng ra(Rng::derive(spec.seed, 3));
    assistant.reset();
    corrector.reset();
    sim::PendulumState s;
    s.theta = spec.theta0;
    s.omega = spec.omega0;
    auto& samples = out[e];
    samples.reserve(ticks);
    for (std::size_t k = 0; k < ticks; ++k) {
      const auto obs = policy::Observation::from_state(s.theta, s.omega, cfg);
      telemetry::ControlSample sample;
      sample.t = s.t;
      sample.theta = s.theta;
      sample.omega = s.omega;
      sample.ai_u = assistant.act(obs, ra);
      sample.human_u = corrector.act(obs, rc);
      sample.applied_u = *sample.human_u;
      sample.phase = SessionPhase::AiCorrection;
      const auto res = sim::step(s, sample.applied_u, cfg, env);
      sample.crashed = res.crashed_this_tick;
      samples.push_back(sample);
      s = res.state;
      if (res.crashed_this_tick) {
        assistant.reset();
        corrector.reset();
      }
    }
  }
  return out;
}

DyadicResult dyadic_cycle(const policy::PolicyHandle& assistant, policy::PolicyHandle corrector,
                          const DyadicConfig& dc, const sim::SimConfig& cfg,
                          const DyadicHooks& hooks) {
  if (dc.rounds == 0) throw std::invalid_argument("dyadic_cycle: rounds must be >= 1");
  if (!assistant.model()) throw std::invalid_argument("dyadic_cycle: assistant must be learned");
  const auto spec = dc.recipe.value_or(FinetuneSpec::for_kind(assistant.kind()));

  EvalConfig ec = dc.eval;
  ec.seed = Rng::derive(dc.seed, 1000);
  ec.exec = dc.exec;

  DyadicResult out;
  out.baseline = evaluate_policy(assistant, ec, cfg);
  nn::NetworkModel current = *assistant.model();

  for (std::size_t r = 1; r <= dc.rounds; ++r) {
    RoundResult rr;
    rr.round = r;
    auto shadow = policy::PolicyHandle::learned(assistant.id(),
                                                std::make_shared<nn::NetworkModel>(current), cfg);
    const auto episodes = correction_run(shadow, corrector, dc.correction_s, dc.episode_s,
                                         Rng::derive(dc.seed, r), cfg, dc.correction_omega0_range);
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      const std::string trial_id = "round" + std::to_string(r) + "-ep" + std::to_string(e);
      for (const auto& s : episodes[e]) {
        ++rr.correction_ticks;
        if (auto rec = record_disagreement(s, cfg, trial_id, dc.deadzone)) {
          rr.records.push_back(std::move(*rec));
        }
      }
    }
    auto ft = finetune(current, rr.records, spec, Rng::derive(dc.seed, 100 + r), hooks.on_epoch,
                       dc.exec);
    current = std::move(ft.model);
    rr.finetune = std::move(ft.report);
    rr.eval = evaluate_policy(
        policy::PolicyHandle::learned(assistant.id(), std::make_shared<nn::NetworkModel>(current),
                                      cfg),
        ec, cfg);
    if (hooks.on_round) hooks.on_round(rr);
    out.rounds.push_back(std::move(rr));
  }
  out.model = std::move(current);
  return out;
}

void write_disagreements(const std::filesystem::path& path,
                         std::span<const DisagreementRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    out << json{{"t", r.t},
                {"trial_id", r.trial_id},
                {"theta_norm", r.obs.theta_norm},
                {"omega_norm", r.obs.omega_norm},
                {"human_u", r.human_u},
                {"ai_u", r.ai_u}}
               .dump()
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<DisagreementRecord> read_disagreements(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<DisagreementRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      DisagreementRecord r;
      r.t = j.at("t").get<double>();
      r.trial_id = j.at("trial_id").get<std::string>();
      r.obs.theta_norm = j.at("theta_norm").get<double>();
      r.obs.omega_norm = j.at("omega_norm").get<double>();
      r.human_u = j.at("human_u").get<double>();
      r.ai_u = j.at("ai_u").get<double>();
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace vip::adapt
