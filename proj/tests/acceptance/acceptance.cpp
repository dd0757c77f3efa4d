// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "commands.hpp"
#include "vip/actor_critic.hpp"
#include "vip/adaptation.hpp"
#include "vip/crash_predictor.hpp"
#include "vip/model_io.hpp"
#include "vip/rdk.hpp"
#include "vip/server.hpp"
#include "vip/session.hpp"
#include "ws_client.hpp"

using namespace vip;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::filesystem::path g_root;

std::filesystem::path scratch(const std::string& name) {
  auto dir = g_root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// Models shared between criteria, built once.
std::filesystem::path models_dir() { return g_root / "models"; }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- physics

// Explicit midpoint at a tiny step; second order, written independently of
// the library integrator.
std::pair<double, double> midpoint_oracle(double theta, double omega, double u, double T,
                                          double h, const sim::SimConfig& cfg) {
  auto acc = [&](double th) {
    return cfg.k_p * std::sin(th * std::numbers::pi / 180.0) + cfg.joystick_gain * u;
  };
  const auto n = static_cast<long>(std::ceil(T / h));
  h = T / static_cast<double>(n);  // land exactly on T
  for (long i = 0; i < n; ++i) {
    const double th_m = theta + 0.5 * h * omega;
    const double om_m = omega + 0.5 * h * acc(theta);
    theta += h * om_m;
    omega += h * acc(th_m);
  }
  return {theta, omega};
}

Outcome physics() {
  const sim::SimConfig cfg;
  const auto [th, om] = sim::rk4_step(10.0, 50.0, -0.3, cfg.dt, cfg);
  const auto [th_o, om_o] = midpoint_oracle(10.0, 50.0, -0.3, cfg.dt, 1e-5, cfg);
  const double step_err = std::abs(th - th_o);

  // Energy over 10 s at dt = 1/600 without control. The upright orbit leaves
  // the valid range within a second, so the bounded orbit about the hanging
  // position is used.
  sim::PendulumState s;
  s.theta = 180.0 + 40.0;
  const double e0 = sim::total_energy(s, cfg);
  double drift = 0.0;
  for (int i = 0; i < 6000; ++i) {
    std::tie(s.theta, s.omega) = sim::rk4_step(s.theta, s.omega, 0.0, 1.0 / 600.0, cfg);
    drift = std::max(drift, std::abs(sim::total_energy(s, cfg) - e0) / std::abs(e0));
  }
  return {step_err <= 1e-6 && drift <= 1e-6,
          fmt("rk4 step |dtheta| %.2e deg (<= 1e-6); energy drift %.2e (<= 1e-6)", step_err,
              drift)};
}

// ---------------------------------------------------------------- parameters

Outcome parameters() {
  std::vector<std::string> bad;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  const sim::SimConfig cfg;
  expect(cfg.k_p == 600.0, "k_p");
  expect(cfg.crash_deg == 60.0, "crash_deg");
  expect(sim::angular_accel(90.0, 0.0, cfg) == 600.0, "accel at 90 deg");

  Rng rng(1);
  sim::PendulumState s;
  s.theta = 60.0;
  const double hold = -600.0 * std::sin(std::numbers::pi / 3.0) / 1200.0;
  expect(sim::step(s, hold, cfg, rng).crashed_this_tick, "crash at exactly 60");
  s.theta = 59.99;
  s.omega = 0.0;
  const double hold2 = -600.0 * std::sin(59.99 * std::numbers::pi / 180.0) / 1200.0;
  expect(!sim::step(s, hold2, cfg, rng).crashed_this_tick, "no crash at 59.99");

  auto field = rdk::init_dots(200, rng, 0.5);
  for (int frame = 0; frame < 50; ++frame) {
    std::vector<std::size_t> idx;
    const auto next = rdk::advance(field, 3.0, rng, &idx);
    std::size_t rigid = 0;
    for (std::size_t i = 0; i < 200; ++i) {
      const double r0 = std::hypot(field.dots[i].x, field.dots[i].y);
      const double r1 = std::hypot(next.dots[i].x, next.dots[i].y);
      const double a = std::remainder(std::atan2(next.dots[i].y, next.dots[i].x) -
                                          std::atan2(field.dots[i].y, field.dots[i].x),
                                      2.0 * std::numbers::pi);
      if (std::abs(r1 - r0) < 1e-12 && std::abs(a - 3.0 * std::numbers::pi / 180.0) < 1e-9) ++rigid;
    }
    expect(idx.size() == 100 && rigid >= 100, "half the dots rotate");
    field = next;
  }

  const crash::CueThresholds th;
  expect(th.p_min == 0.8 && th.theta_min_deg == 12.0, "cue thresholds");
  expect(crash::gate_cue({0.8, 2.0}, 12.5, 0.1).has_value(), "gate at p = 0.8");
  expect(!crash::gate_cue({0.9, 2.0}, 12.0, 0.1).has_value(), "gate at |theta| = 12");

  const auto ac = adapt::FinetuneSpec::for_kind(policy::PolicyKind::actor_critic);
  expect(ac.epochs == 100 && ac.learning_rate == 1e-5 && ac.batch_size == 64 &&
             ac.train_fraction == 1.0 && ac.recipe == adapt::Recipe::behavior_cloning,
         "actor-critic recipe");
  for (auto k : {policy::PolicyKind::dense_bc, policy::PolicyKind::gru_bc}) {
    const auto r = adapt::FinetuneSpec::for_kind(k);
    expect(r.epochs == 20 && r.learning_rate == 1e-7 && r.batch_size == 16 &&
               r.train_fraction == 0.9 && r.recipe == adapt::Recipe::supervised,
           "supervised recipe");
  }
  expect(nn::train_count(5000, 0.9) == 4500, "9:1 split");

  std::string detail = "k_p 600, crash 60, 100/200 dots rigid, gate 0.8/12, recipes 100/1e-5/64 "
                       "and 20/1e-7/16 at 9:1";
  if (!bad.empty()) {
    detail = "mismatch:";
    for (const auto& b : bad) detail += " " + b + ";";
  }
  return {bad.empty(), detail};
}

// ---------------------------------------------------------------- gradients

double oracle_loss(const nn::NetworkModel& m, const std::vector<nn::Example>& batch, bool bce) {
  double total = 0.0;
  for (const auto& e : batch) {
    const auto y = nn::forward_sequence(m, e.input);
    double l = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      const double t = e.target[k];
      l += bce ? -(t * std::log(y[k]) + (1.0 - t) * std::log(1.0 - y[k])) : (y[k] - t) * (y[k] - t);
    }
    total += l / static_cast<double>(y.size());
  }
  return total / static_cast<double>(batch.size());
}

double worst_relative(nn::NetworkModel m, std::size_t T, bool bce, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<nn::Example> batch;
  for (int i = 0; i < 4; ++i) {
    nn::Example e;
    e.input = nn::Tensor({T, m.input_dim()});
    for (auto& v : e.input.values) v = rng.uniform(-1.0, 1.0);
    for (std::size_t k = 0; k < m.output_dim(); ++k) {
      e.target.push_back(bce ? static_cast<double>(rng.below(2)) : rng.uniform(-1.0, 1.0));
    }
    batch.push_back(std::move(e));
  }
  const auto g = nn::backward(m, batch, bce ? nn::LossKind::bce : nn::LossKind::mse);
  // Truncation error is O(eps^2); a smaller eps lets cancellation swamp the
  // 1e-7-sized recurrent gradients.
  const double eps = 1e-4;
  double worst = 0.0;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    for (std::size_t k = 0; k < m.weights[l].size(); ++k) {
      for (std::size_t i = 0; i < m.weights[l][k].size(); ++i) {
        double& w = m.weights[l][k].values[i];
        const double w0 = w;
        w = w0 + eps;
        const double up = oracle_loss(m, batch, bce);
        w = w0 - eps;
        const double down = oracle_loss(m, batch, bce);
        w = w0;
        const double fd = (up - down) / (2.0 * eps);
        const double a = g.grads[l][k].values[i];
        const double scale = std::max(std::abs(a), std::abs(fd));
        if (scale > 1e-7) worst = std::max(worst, std::abs(a - fd) / scale);
      }
    }
  }
  return worst;
}

Outcome gradients() {
  using nn::Activation;
  using nn::LayerSpec;
  double worst = 0.0;
  for (auto act : {Activation::identity, Activation::tanh, Activation::relu}) {
    auto m = nn::make_network({LayerSpec::dense(3, 6, act), LayerSpec::dense(6, 2, Activation::tanh)},
                              31);
    for (auto& b : m.weights[0][1].values) b = 0.1;
    worst = std::max(worst, worst_relative(m, 1, false, 1));
  }
  worst = std::max(worst, worst_relative(nn::make_network({LayerSpec::dense(3, 5, Activation::tanh),
                                                           LayerSpec::dense(5, 1, Activation::sigmoid)},
                                                          32),
                                         1, true, 2));
  worst = std::max(worst, worst_relative(nn::make_network({LayerSpec::gru(3, 5), LayerSpec::gru(5, 4),
                                                           LayerSpec::dense(4, 1, Activation::sigmoid)},
                                                          33),
                                         12, true, 3));
  worst = std::max(worst, worst_relative(nn::make_network({LayerSpec::gru(2, 6),
                                                           LayerSpec::dense(6, 1, Activation::identity)},
                                                          34),
                                         16, false, 4));
  return {worst <= 1e-4,
          fmt("worst relative error %.2e over dense (3 activations), sigmoid/bce, stacked gru "
              "(<= 1e-4)",
              worst)};
}

// ---------------------------------------------------------------- predictor

Outcome predictor() {
  const sim::SimConfig cfg;
  const auto t0 = Clock::now();
  const auto rep = app::train_predictor(app::PredictorOptions{}, cfg);
  const double secs = seconds_since(t0);
  std::filesystem::create_directories(models_dir());
  nn::save_model(rep.model, models_dir() / "crash-predictor.vipmodel");

  int exact = 0;
  for (int cell = 0; cell < 8; ++cell) {
    const bool hi = cell & 1, far = cell & 2, acts = cell & 4;
    const auto cue = crash::gate_cue({hi ? 0.85 : 0.75, 2.0}, far ? -15.0 : 11.0, acts ? 0.4 : 0.0);
    if (cue.has_value() == (hi && far && acts)) ++exact;
  }
  return {rep.auc >= 0.85 && exact == 8 && secs <= 300.0,
          fmt("held-out ROC-AUC %.4f (>= 0.85) on %.0f windows; gate %.0f/8 cells; %.0f s (<= 300)",
              rep.auc, static_cast<double>(rep.n_test), exact, secs)};
}

// ---------------------------------------------------------------- headline

Outcome headline() {
  const auto dir = scratch("dyadic");
  std::ostringstream out, err;
  const auto t0 = Clock::now();
  const int code =
      app::run_cli({"--models", models_dir().string(), "--runs", (dir / "runs").string(), "dyadic",
                    "--assistant", "bc-from-intermittent", "--corrector", "pd", "--rounds", "3",
                    "--seed", "7"},
                   out, err);
  const double secs = seconds_since(t0);
  const auto text = out.str();
  std::cout << text;
  if (code != 0) return {false, "dyadic exited " + std::to_string(code) + ": " + err.str()};
  bool crash_lower = false, theta_lower = false;
  std::string lines;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    if (line.rfind("final ", 0) != 0) continue;
    lines += (lines.empty() ? "" : "; ") + line;
    const bool lower = line.size() >= 7 && line.compare(line.size() - 7, 7, ": lower") == 0;
    if (line.rfind("final crash rate", 0) == 0) crash_lower = lower;
    if (line.rfind("final mean |theta|", 0) == 0) theta_lower = lower;
  }
  return {crash_lower && theta_lower && secs <= 600.0,
          lines + fmt("; %.0f s (<= 600)", secs)};
}

// ---------------------------------------------------------------- fine-tune budget

Outcome finetune_budget() {
  const sim::SimConfig cfg;
  Rng rng(5);
  std::vector<adapt::DisagreementRecord> recs(5000);
  for (auto& r : recs) {
    r.obs = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    r.human_u = std::clamp(-1.2 * r.obs.theta_norm - 0.3 * r.obs.omega_norm, -1.0, 1.0);
    r.ai_u = -r.human_u;
  }
  struct Case {
    policy::PolicyKind kind;
    std::vector<nn::LayerSpec> arch;
  };
  const std::vector<Case> cases{
      {policy::PolicyKind::actor_critic, policy::actor_arch(32)},
      {policy::PolicyKind::dense_bc, policy::dense_bc_arch(32)},
      {policy::PolicyKind::gru_bc, policy::gru_bc_arch(32)},
  };
  double worst = 0.0;
  std::string detail;
  for (const auto& c : cases) {
    auto m = nn::make_network(c.arch, 3);
    policy::stamp_meta(m, c.kind, cfg);
    const auto res = adapt::finetune(m, recs, adapt::FinetuneSpec::for_kind(c.kind), 1);
    worst = std::max(worst, res.report.duration_s);
    detail += std::string(policy::to_string(c.kind)) + fmt(" %.1f s, ", res.report.duration_s);
  }
  return {worst <= 60.0, "5000 records: " + detail + fmt("worst %.1f s (<= 60)", worst)};
}

// ---------------------------------------------------------------- replay

Outcome replay() {
  const sim::SimConfig cfg;
  const auto dir = scratch("replay");
  const auto pred_path = models_dir() / "crash-predictor.vipmodel";
  const auto bc_path = models_dir() / "bc-from-intermittent.vipmodel";
  std::shared_ptr<const nn::NetworkModel> pred;
  if (std::filesystem::exists(pred_path)) {
    pred = std::make_shared<nn::NetworkModel>(nn::load_model(pred_path));
  }
  std::optional<policy::PolicyHandle> bc;
  if (std::filesystem::exists(bc_path)) {
    bc = policy::PolicyHandle::learned(
        "bc-from-intermittent", std::make_shared<nn::NetworkModel>(nn::load_model(bc_path)), cfg);
  }

  std::vector<std::filesystem::path> logs;
  std::size_t n = 0;
  for (auto phase : {SessionPhase::Tutorial, SessionPhase::HumanBaseline,
                     SessionPhase::HumanAssisted, SessionPhase::AiSolo, SessionPhase::AiCorrection,
                     SessionPhase::AiReevaluation}) {
    for (int variant = 0; variant < 2; ++variant) {
      auto spec = session::TrialSpec::for_phase(phase, Rng::derive(77, ++n));
      spec.session_id = "acceptance";
      spec.trial_id = std::to_string(n);
      spec.assistant = (variant == 0 && bc) ? *bc : policy::PolicyHandle::intermittent(cfg);
      if (variant == 0 && bc) spec.assistant_model = bc_path.string();
      if (pred) {
        spec.predictor = pred;
        spec.predictor_model = pred_path.string();
      }
      session::TrialRunner r(std::move(spec), cfg);
      const auto path = dir / (std::to_string(n) + ".log");
      r.open_log(path);
      Rng input(n);
      double u = 0.0;
      while (!r.done()) {
        // A jittery, sometimes silent stick with occasional full pushes.
        if (input.below(4) == 0) u = std::clamp(u + 0.4 * input.normal(), -1.0, 1.0);
        r.tick(input.below(20) == 0 ? std::nullopt : std::optional<double>(u));
      }
      r.finish();
      logs.push_back(path);
    }
  }
  std::size_t ok = 0, ticks = 0;
  std::string first_bad;
  for (const auto& p : logs) {
    std::ostringstream out, err;
    const int code = app::run_cli({"replay", "--log", p.string()}, out, err);
    ticks += telemetry::read_trial_log(p).samples.size();
    if (code == 0 && out.str().rfind("OK, ", 0) == 0) {
      ++ok;
    } else if (first_bad.empty()) {
      first_bad = p.filename().string() + ": " + out.str() + err.str();
    }
  }
  std::string detail = fmt("%.0f/%.0f logged trials replay bit-exact (%.0f ticks)",
                           static_cast<double>(ok), static_cast<double>(logs.size()),
                           static_cast<double>(ticks));
  if (!first_bad.empty()) detail += "; " + first_bad;
  return {ok == logs.size(), detail};
}

// ---------------------------------------------------------------- real time

Outcome realtime() {
  const auto dir = scratch("realtime");
  service::ServiceConfig sc;
  sc.address = "127.0.0.1";
  sc.port = 0;
  sc.models_dir = models_dir();
  sc.runs_dir = dir / "runs";
  sc.static_dir = dir;
  sc.seed = 11;
  sc.trial_duration_s = 12.0;
  service::Server server(sc, service::Catalog::load(sc.models_dir, sc.sim));
  server.start();

  std::vector<double> arrivals;
  {
    test::WsClient c(server.port());
    c.read();  // catalog
    c.send(wire::encode(wire::Hello{"acceptance"}));
    c.send(wire::encode(wire::SelectAssistant{"intermittent"}));
    Rng rng(3);
    const auto t0 = Clock::now();
    while (seconds_since(t0) < 61.0) {
      auto m = c.read_message();
      if (!m) break;
      if (std::holds_alternative<wire::Frame>(*m)) {
        arrivals.push_back(seconds_since(t0));
        c.send(wire::encode(wire::Input{std::sin(arrivals.size() * 0.03) + 0.1 * rng.normal(),
                                        arrivals.back()}));
      }
    }
  }
  server.stop();

  // Frames cover 60 s from the first one.
  std::vector<double> jitter;
  for (std::size_t i = 1; i < arrivals.size() && arrivals[i] - arrivals[0] <= 60.0; ++i) {
    jitter.push_back(std::abs(arrivals[i] - arrivals[i - 1] - 1.0 / 60.0) * 1000.0);
  }
  if (jitter.size() < 100) return {false, "too few frames received"};
  std::sort(jitter.begin(), jitter.end());
  const double p99 = jitter[static_cast<std::size_t>(std::ceil(0.99 * jitter.size())) - 1];
  const double rate = static_cast<double>(jitter.size()) / 60.0;
  return {p99 <= 5.0, fmt("p99 tick jitter %.3f ms (<= 5), max %.3f ms, %.2f frames/s over 60 s",
                          p99, jitter.back(), rate)};
}

}  // namespace

int main() {
  const char* base = std::getenv("VIP_TEST_TMP");
  g_root = base && *base ? std::filesystem::path(base)
                         : std::filesystem::temp_directory_path() / "vip_acceptance";
  std::filesystem::create_directories(g_root);
  std::filesystem::remove_all(models_dir());

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"physics oracle", physics},
      {"parameter exactness", parameters},
      {"gradient suite", gradients},
      {"crash predictor", predictor},
      {"dyadic improvement", headline},
      {"fine-tune budget", finetune_budget},
      {"replay determinism", replay},
      {"real-time loop", realtime},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS  " : "FAIL  ") << name << "  " << o.detail
              << fmt("  [%.1f s]", seconds_since(t0)) << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
