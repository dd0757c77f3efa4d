#include "commands.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <thread>

#include "CLI11.hpp"
#include "vip/actor_critic.hpp"
#include "vip/adaptation.hpp"
#include "vip/catalog.hpp"
#include "vip/crash_predictor.hpp"
#include "vip/model_io.hpp"
#include "vip/server.hpp"
#include "vip/session.hpp"
#include "vip/telemetry.hpp"

namespace vip::app {
namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, ...) {
  va_list ap;
  va_start(ap, f);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

Exec exec_of(bool serial) { return serial ? Exec::serial : Exec::parallel; }

std::string metrics_line(const telemetry::TrialMetrics& m) {
  return fmt("crash_count %llu  mean_abs_theta %.4f  mean_abs_omega %.4f  mean_abs_u %.4f  "
             "balanced %.4f  duration_s %.2f",
             static_cast<unsigned long long>(m.crash_count), m.mean_abs_theta, m.mean_abs_omega,
             m.mean_abs_applied_u, m.balanced_fraction, m.duration_s);
}

std::string eval_line(const adapt::EvalResult& e) {
  return fmt("%9.3f  %14.4f  %14.4f  %8.4f", e.crash_rate, e.metrics.mean_abs_theta,
             e.metrics.mean_abs_omega, e.metrics.balanced_fraction);
}

}  // namespace

Env Env::from_environment() {
  Env e;
  if (const char* m = std::getenv("VIP_MODELS_DIR"); m && *m) e.models_dir = m;
  if (const char* r = std::getenv("VIP_RUNS_DIR"); r && *r) e.runs_dir = r;
  if (const char* p = std::getenv("VIP_PORT"); p && *p) {
    const long v = std::strtol(p, nullptr, 10);
    if (v < 0 || v > 65535) throw std::invalid_argument(std::string("bad VIP_PORT: ") + p);
    e.port = static_cast<std::uint16_t>(v);
  }
  return e;
}

nn::NetworkModel build_bc(const BcOptions& opt, const sim::SimConfig& cfg, std::ostream* log) {
  policy::PolicyHandle teacher = opt.teacher == "pd" ? policy::PolicyHandle::pd(cfg)
                                 : opt.teacher == "intermittent"
                                     ? policy::PolicyHandle::intermittent(cfg)
                                     : throw std::invalid_argument("teacher must be pd or intermittent");
  const auto t0 = Clock::now();
  const auto demos = policy::collect_demonstrations(teacher, opt.demos, opt.demo_s, opt.seed, cfg);
  nn::TrainConfig tc;
  tc.epochs = opt.epochs;
  tc.learning_rate = opt.learning_rate;
  tc.batch_size = opt.batch_size;
  tc.train_fraction = 0.9;
  tc.seed = opt.seed;
  auto arch = opt.recurrent ? policy::gru_bc_arch(opt.hidden) : policy::dense_bc_arch(opt.hidden);
  auto progress = [&](const nn::EpochStats& s) {
    if (log) *log << fmt("  epoch %3zu  train %.5f  test %.5f\n", s.epoch, s.train_loss,
                         s.test_loss.value_or(0.0));
  };
  auto res = policy::behavior_clone(demos, std::move(arch), tc, cfg, opt.window, progress);
  res.model.meta["teacher"] = opt.teacher;
  res.model.meta["note"] = "behavior clone of the " + opt.teacher + " controller (" +
                           std::to_string(opt.demos) + " demonstrations)";
  if (log) *log << fmt("cloned %s in %.1f s\n", opt.teacher.c_str(), since(t0));
  return std::move(res.model);
}

policy::PolicyHandle resolve_policy(const std::string& id,
                                    const std::filesystem::path& models_dir,
                                    const sim::SimConfig& cfg, std::ostream& log) {
  auto catalog = service::Catalog::load(models_dir, cfg);
  if (catalog.find(id)) return catalog.make(id);
  const std::string prefix = "bc-from-";
  if (id.rfind(prefix, 0) == 0) {
    BcOptions opt;
    opt.teacher = id.substr(prefix.size());
    log << "building " << id << " (not found in " << models_dir.string() << ")\n";
    auto model = build_bc(opt, cfg, &log);
    const auto path = models_dir / (id + ".vipmodel");
    std::filesystem::create_directories(models_dir);
    nn::save_model(model, path);
    log << "saved " << path.string() << '\n';
    return policy::PolicyHandle::learned(id, std::make_shared<nn::NetworkModel>(std::move(model)),
                                         cfg);
  }
  throw service::CatalogError("unknown assistant '" + id + "'");
}

PredictorReport train_predictor(const PredictorOptions& opt, const sim::SimConfig& cfg,
                                const nn::ProgressFn& progress) {
  if (!(opt.holdout > 0.0 && opt.holdout < 1.0)) {
    throw std::invalid_argument("holdout must be in (0, 1)");
  }
  const auto t0 = Clock::now();
  const auto corpus = crash::generate_corpus(opt.trials, opt.trial_s, opt.corpus_seed, cfg);
  const auto n_test = static_cast<std::size_t>(std::llround(opt.holdout * opt.trials));
  const auto n_train = corpus.size() - n_test;
  std::vector<crash::Trace> train(corpus.begin(), corpus.begin() + n_train);
  std::vector<crash::Trace> test(corpus.begin() + n_train, corpus.end());

  crash::WindowConfig wc;
  wc.window = opt.window;
  wc.horizon_s = opt.horizon_s;
  wc.stride = opt.stride;
  const auto dtrain = crash::build_crash_dataset(train, wc, cfg);
  const auto dtest = crash::build_crash_dataset(test, wc, cfg);

  nn::TrainConfig tc;
  tc.epochs = opt.epochs;
  tc.learning_rate = opt.learning_rate;
  tc.batch_size = opt.batch_size;
  tc.seed = opt.train_seed;
  auto res = crash::train_crash_predictor(dtrain, wc, tc, cfg, opt.hidden, progress);

  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& e : dtest.examples) {
    scores.push_back(crash::predict(res.model, e.input).p_crash);
    labels.push_back(e.target[0] > 0.5 ? 1 : 0);
  }
  PredictorReport rep;
  rep.auc = crash::roc_auc(scores, labels);
  rep.n_train = dtrain.examples.size();
  rep.n_test = dtest.examples.size();
  rep.positive_train = dtrain.positive_fraction();
  rep.positive_test = dtest.positive_fraction();
  rep.model = std::move(res.model);
  rep.model.meta["heldout_auc"] = fmt("%.4f", rep.auc);
  rep.seconds = since(t0);
  return rep;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Env env;
  try {
    env = Env::from_environment();
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return 2;
  }
  const sim::SimConfig cfg;

  CLI::App app{"Virtual inverted pendulum dyadic learning platform"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Expand all help");
  std::string models_dir = env.models_dir.string();
  std::string runs_dir = env.runs_dir.string();
  app.add_option("--models", models_dir, "Models directory (env VIP_MODELS_DIR)");
  app.add_option("--runs", runs_dir, "Runs directory (env VIP_RUNS_DIR)");

  // serve
  auto* serve = app.add_subcommand("serve", "Host the real-time service and static UI assets");
  service::ServiceConfig sc;
  sc.port = env.port;
  std::uint64_t serve_seed = 0;
  double trial_seconds = 0.0;
  std::string static_dir = "web";
  serve->add_option("--address", sc.address, "Listen address");
  serve->add_option("--port", sc.port, "Listen port (env VIP_PORT)");
  serve->add_option("--static", static_dir, "Static asset directory");
  serve->add_option("--tick-hz", sc.tick_hz, "Tick rate")->check(CLI::PositiveNumber);
  serve->add_option("--idle-timeout", sc.idle_timeout_s, "Idle timeout, s")
      ->check(CLI::PositiveNumber);
  auto* serve_seed_opt = serve->add_option("--seed", serve_seed, "Fixed session seed");
  auto* trial_opt = serve->add_option("--trial-seconds", trial_seconds,
                                      "Override every phase's trial length")
                        ->check(CLI::PositiveNumber);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Headless trials; prints metrics, writes logs");
  std::string sim_assistant;
  std::string sim_human = "none";
  std::string sim_phase;
  std::size_t sim_trials = 1;
  std::uint64_t sim_seed = 0;
  double sim_duration = 0.0;
  std::string sim_session;
  simulate->add_option("--assistant", sim_assistant, "Assistant id (omit for none)");
  simulate->add_option("--human", sim_human, "Scripted human stand-in")
      ->check(CLI::IsMember({"pd", "intermittent", "none"}));
  simulate->add_option("--phase", sim_phase, "Session phase (default from --human/--assistant)");
  simulate->add_option("--trials", sim_trials, "Number of trials")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim_seed, "Seed");
  simulate->add_option("--duration", sim_duration, "Trial length, s (default per phase)")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--session", sim_session, "Session id for the log directory");

  // train-actor
  auto* train_actor = app.add_subcommand("train-actor", "Train the actor-critic assistant");
  policy::ActorCriticConfig ac;
  std::uint64_t ac_seed = 0;
  std::string ac_out;
  bool ac_serial = false;
  train_actor->add_option("--episodes", ac.episodes, "Episodes");
  train_actor->add_option("--episode-seconds", ac.episode_len_s, "Episode length, s");
  train_actor->add_option("--hidden", ac.hidden, "Hidden width");
  train_actor->add_option("--seed", ac_seed, "Seed");
  train_actor->add_option("--out", ac_out, "Output model (default <models>/actor-critic.vipmodel)");
  train_actor->add_flag("--serial", ac_serial, "Use the serial reference kernels");

  // train-bc
  auto* train_bc = app.add_subcommand("train-bc", "Behavior-clone a scripted controller");
  BcOptions bc;
  std::string bc_arch = "dense";
  std::string bc_out;
  train_bc->add_option("--teacher", bc.teacher, "Teacher")
      ->check(CLI::IsMember({"pd", "intermittent"}));
  train_bc->add_option("--arch", bc_arch, "Architecture")->check(CLI::IsMember({"dense", "gru"}));
  train_bc->add_option("--demos", bc.demos, "Demonstration trials");
  train_bc->add_option("--demo-seconds", bc.demo_s, "Demonstration length, s");
  train_bc->add_option("--epochs", bc.epochs, "Epochs");
  train_bc->add_option("--lr", bc.learning_rate, "Learning rate");
  train_bc->add_option("--batch", bc.batch_size, "Batch size");
  train_bc->add_option("--hidden", bc.hidden, "Hidden width");
  train_bc->add_option("--window", bc.window, "GRU input window, ticks");
  train_bc->add_option("--seed", bc.seed, "Seed");
  train_bc->add_option("--out", bc_out, "Output model (default <models>/bc-from-<teacher>.vipmodel)");

  // train-crash-predictor
  auto* train_cp = app.add_subcommand("train-crash-predictor", "Train the GRU crash predictor");
  PredictorOptions po;
  std::string cp_out;
  train_cp->add_option("--trials", po.trials, "Corpus trials");
  train_cp->add_option("--trial-seconds", po.trial_s, "Corpus trial length, s");
  train_cp->add_option("--corpus-seed", po.corpus_seed, "Corpus seed");
  train_cp->add_option("--window", po.window, "Window, ticks");
  train_cp->add_option("--horizon", po.horizon_s, "Prediction horizon, s");
  train_cp->add_option("--stride", po.stride, "Ticks between windows");
  train_cp->add_option("--holdout", po.holdout, "Held-out fraction of trials");
  train_cp->add_option("--epochs", po.epochs, "Epochs");
  train_cp->add_option("--lr", po.learning_rate, "Learning rate");
  train_cp->add_option("--batch", po.batch_size, "Batch size");
  train_cp->add_option("--hidden", po.hidden, "Hidden width");
  train_cp->add_option("--seed", po.train_seed, "Training seed");
  train_cp->add_option("--out", cp_out, "Output model (default <models>/crash-predictor.vipmodel)");

  // dyadic
  auto* dyadic = app.add_subcommand("dyadic", "Run correction, fine-tune and re-evaluation rounds");
  std::string dy_assistant;
  std::string dy_corrector = "pd";
  adapt::DyadicConfig dc;
  dc.seed = 7;
  dc.eval.omega0_range = 120.0;
  std::string dy_out;
  bool dy_serial = false;
  dyadic->add_option("--assistant", dy_assistant, "Assistant id")->required();
  dyadic->add_option("--corrector", dy_corrector, "Scripted corrector standing in for the human")
      ->check(CLI::IsMember({"pd", "intermittent"}));
  dyadic->add_option("--rounds", dc.rounds, "Rounds")->check(CLI::PositiveNumber);
  dyadic->add_option("--seed", dc.seed, "Seed");
  dyadic->add_option("--eval-trials", dc.eval.n_trials, "Evaluation trials")
      ->check(CLI::PositiveNumber);
  dyadic->add_option("--eval-seconds", dc.eval.trial_len_s, "Evaluation trial length, s");
  dyadic->add_option("--eval-omega0", dc.eval.omega0_range,
                     "Evaluation start velocity range, deg/s");
  dyadic->add_option("--correction-seconds", dc.correction_s, "Correction time per round, s");
  dyadic->add_option("--episode-seconds", dc.episode_s, "Correction episode length, s");
  dyadic->add_option("--out", dy_out, "Write the final assistant here");
  dyadic->add_flag("--serial", dy_serial, "Use the serial reference kernels");

  // finetune
  auto* finetune = app.add_subcommand("finetune", "Fine-tune a model on disagreement records");
  std::string ft_model, ft_records, ft_out;
  std::uint64_t ft_seed = 0;
  finetune->add_option("--model", ft_model, "Model file")->required()->check(CLI::ExistingFile);
  finetune->add_option("--records", ft_records, "Disagreement records (.jsonl)")
      ->required()
      ->check(CLI::ExistingFile);
  finetune->add_option("--out", ft_out, "Output model (default <model>.ft.vipmodel)");
  finetune->add_option("--seed", ft_seed, "Seed");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a policy over seeded solo trials");
  std::string ev_model, ev_assistant;
  adapt::EvalConfig ec;
  eval->add_option("--model", ev_model, "Model file")->check(CLI::ExistingFile);
  eval->add_option("--assistant", ev_assistant, "Catalog id instead of a model file");
  eval->add_option("--trials", ec.n_trials, "Trials")->check(CLI::PositiveNumber);
  eval->add_option("--seconds", ec.trial_len_s, "Trial length, s")->check(CLI::PositiveNumber);
  eval->add_option("--omega0", ec.omega0_range, "Start velocity range, deg/s");
  eval->add_option("--seed", ec.seed, "Seed");

  // portrait
  auto* portrait = app.add_subcommand("portrait", "Export a phase portrait of a trial log");
  std::string pt_log, pt_out, pt_format;
  portrait->add_option("--log", pt_log, "Trial log")->required()->check(CLI::ExistingFile);
  portrait->add_option("--out", pt_out, "Output file")->required();
  portrait->add_option("--format", pt_format, "table or svg (default from extension)")
      ->check(CLI::IsMember({"table", "svg"}));

  // replay
  auto* replay = app.add_subcommand("replay", "Verify bit-exact replay of a trial log");
  std::string rp_log;
  replay->add_option("--log", rp_log, "Trial log")->required()->check(CLI::ExistingFile);

  std::vector<const char*> argv;
  argv.push_back("vipctl");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const std::filesystem::path models(models_dir);
  const std::filesystem::path runs(runs_dir);

  try {
    if (*serve) {
      sc.models_dir = models;
      sc.runs_dir = runs;
      sc.static_dir = static_dir;
      if (*serve_seed_opt) sc.seed = serve_seed;
      if (*trial_opt) sc.trial_duration_s = trial_seconds;
      auto catalog = service::Catalog::load(models, cfg);
      for (const auto& p : catalog.problems()) err << "skipping " << p << '\n';
      out << "assistants:";
      for (const auto& a : catalog.assistants()) out << ' ' << a.id;
      out << "\npredictor: "
          << (catalog.predictor() ? catalog.predictor_path().string() : std::string("none"))
          << '\n';
      service::Server server(sc, std::move(catalog));
      server.start();
      out << "serving http://" << sc.address << ':' << server.port() << "/ (ws vip-wire/1)"
          << std::endl;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      return 0;
    }

    if (*simulate) {
      std::optional<policy::PolicyHandle> assistant;
      std::string assistant_path;
      if (!sim_assistant.empty()) {
        assistant = resolve_policy(sim_assistant, models, cfg, err);
        if (const auto* e = service::Catalog::load(models, cfg).find(sim_assistant)) {
          assistant_path = e->path.string();
        }
      }
      std::optional<policy::PolicyHandle> human;
      if (sim_human == "pd") human = policy::PolicyHandle::pd(cfg);
      if (sim_human == "intermittent") human = policy::PolicyHandle::intermittent(cfg);
      SessionPhase phase;
      if (!sim_phase.empty()) {
        phase = parse_phase(sim_phase);
      } else if (human) {
        phase = assistant ? SessionPhase::HumanAssisted : SessionPhase::HumanBaseline;
      } else {
        phase = SessionPhase::AiSolo;
      }
      const auto rules = protocol::phase_rules(phase, assistant.has_value());
      if (!rules.simulating) throw std::invalid_argument("no trial runs in phase " + sim_phase);
      if (rules.actuator == protocol::Actuator::assistant && !assistant) {
        throw std::invalid_argument(std::string(vip::to_string(phase)) + " needs --assistant");
      }
      std::shared_ptr<const nn::NetworkModel> predictor;
      std::string predictor_path;
      if (rules.cues_enabled) {
        const auto cat = service::Catalog::load(models, cfg);
        predictor = cat.predictor();
        predictor_path = cat.predictor_path().string();
        if (!predictor) err << "note: no crash predictor in " << models.string() << "; no cues\n";
      }
      const std::string session_id =
          sim_session.empty() ? "simulate-" + std::to_string(sim_seed) : sim_session;

      std::vector<telemetry::TrialMetrics> all;
      for (std::size_t i = 0; i < sim_trials; ++i) {
        auto spec = session::TrialSpec::for_phase(phase, Rng::derive(sim_seed, i));
        spec.session_id = session_id;
        spec.trial_id = fmt("%03zu_%s", i + 1, vip::to_string(phase));
        if (sim_duration > 0.0) spec.duration_s = sim_duration;
        spec.assistant = assistant;
        spec.assistant_model = assistant_path;
        spec.predictor = predictor;
        spec.predictor_model = predictor_path;
        spec.human = human;
        session::TrialRunner runner(std::move(spec), cfg);
        const auto path = telemetry::trial_log_path(runs, session_id, i + 1, phase);
        runner.open_log(path);
        while (!runner.done()) runner.tick(std::nullopt);
        runner.finish();
        const auto m = runner.metrics();
        all.push_back(m);
        out << fmt("trial %3zu  ", i + 1) << metrics_line(m) << "  log " << path.string() << '\n';
      }
      out << "total      " << metrics_line(telemetry::combine_metrics(all)) << '\n';
      return 0;
    }

    if (*train_actor) {
      ac.exec = exec_of(ac_serial);
      const auto t0 = Clock::now();
      auto res = policy::train_actor_critic(cfg, ac, ac_seed, [&](const policy::EpisodeStats& s) {
        if (s.episode % 10 == 0 || s.episode == ac.episodes) {
          out << fmt("episode %4zu  reward %10.2f  crashes %3llu  critic_loss %.5f  %.1fs\n",
                     s.episode, s.total_reward, static_cast<unsigned long long>(s.crashes),
                     s.critic_loss, since(t0))
              << std::flush;
        }
      });
      const std::filesystem::path path =
          ac_out.empty() ? models / "actor-critic.vipmodel" : std::filesystem::path(ac_out);
      if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
      nn::save_model(res.actor, path);
      out << "saved " << path.string() << '\n';
      return 0;
    }

    if (*train_bc) {
      bc.recurrent = bc_arch == "gru";
      auto model = build_bc(bc, cfg, &out);
      const std::string stem = "bc-from-" + bc.teacher + (bc.recurrent ? "-gru" : "");
      const std::filesystem::path path =
          bc_out.empty() ? models / (stem + ".vipmodel") : std::filesystem::path(bc_out);
      if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
      nn::save_model(model, path);
      out << "saved " << path.string() << '\n';
      return 0;
    }

    if (*train_cp) {
      const auto t0 = Clock::now();
      auto rep = train_predictor(po, cfg, [&](const nn::EpochStats& s) {
        out << fmt("epoch %3zu  train_bce %.5f  test_bce %.5f  %.1fs\n", s.epoch, s.train_loss,
                   s.test_loss.value_or(0.0), since(t0))
            << std::flush;
      });
      out << fmt("windows train %zu (positive %.3f)  held out %zu (positive %.3f)\n", rep.n_train,
                 rep.positive_train, rep.n_test, rep.positive_test);
      out << fmt("held-out ROC-AUC %.4f\n", rep.auc);
      const std::filesystem::path path =
          cp_out.empty() ? models / "crash-predictor.vipmodel" : std::filesystem::path(cp_out);
      if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
      nn::save_model(rep.model, path);
      out << "saved " << path.string() << '\n';
      return 0;
    }

    if (*dyadic) {
      dc.exec = exec_of(dy_serial);
      const auto assistant = resolve_policy(dy_assistant, models, cfg, err);
      const auto corrector = dy_corrector == "pd" ? policy::PolicyHandle::pd(cfg)
                                                  : policy::PolicyHandle::intermittent(cfg);
      const auto t0 = Clock::now();
      out << fmt("assistant %s  corrector %s  rounds %zu  seed %llu  eval %zu x %.0f s\n",
                 dy_assistant.c_str(), dy_corrector.c_str(), dc.rounds,
                 static_cast<unsigned long long>(dc.seed), dc.eval.n_trials, dc.eval.trial_len_s);
      out << "round  records  crash_rate  mean_abs_theta  mean_abs_omega  balanced\n";
      const auto res = adapt::dyadic_cycle(assistant, corrector, dc, cfg);
      out << fmt("%5d  %7s  ", 0, "-") << eval_line(res.baseline) << '\n';
      for (const auto& r : res.rounds) {
        out << fmt("%5zu  %7zu  ", r.round, r.records.size()) << eval_line(r.eval) << '\n';
      }
      const auto& last = res.rounds.back().eval;
      const bool lower_crash = last.crash_rate < res.baseline.crash_rate;
      const bool lower_theta = last.metrics.mean_abs_theta < res.baseline.metrics.mean_abs_theta;
      out << fmt("final crash rate %.3f vs baseline %.3f: %s\n", last.crash_rate,
                 res.baseline.crash_rate, lower_crash ? "lower" : "not lower");
      out << fmt("final mean |theta| %.4f vs baseline %.4f: %s\n", last.metrics.mean_abs_theta,
                 res.baseline.metrics.mean_abs_theta, lower_theta ? "lower" : "not lower");
      out << fmt("elapsed %.1f s\n", since(t0));
      if (!dy_out.empty()) {
        nn::save_model(res.model, dy_out);
        out << "saved " << dy_out << '\n';
      }
      return 0;
    }

    if (*finetune) {
      const auto model = nn::load_model(ft_model);
      const auto records = adapt::read_disagreements(ft_records);
      const auto spec = adapt::FinetuneSpec::for_kind(adapt::model_kind(model));
      auto res = adapt::finetune(model, records, spec, ft_seed, [&](const nn::EpochStats& s) {
        out << fmt("epoch %3zu  train %.6f  test %.6f\n", s.epoch, s.train_loss,
                   s.test_loss.value_or(0.0));
      });
      const auto& r = res.report;
      if (r.unchanged) {
        out << "no records; model unchanged\n";
      } else {
        out << fmt("records %zu (train %zu, test %zu)  loss %.6f -> %.6f  steps %zu  %.2f s\n",
                   r.records, r.n_train, r.n_test, r.initial_train_loss, r.final_train_loss,
                   r.steps, r.duration_s);
      }
      std::filesystem::path path = ft_out;
      if (path.empty()) {
        path = ft_model;
        path.replace_extension(".ft.vipmodel");
      }
      nn::save_model(res.model, path);
      out << "saved " << path.string() << '\n';
      return 0;
    }

    if (*eval) {
      if (ev_model.empty() == ev_assistant.empty()) {
        throw std::invalid_argument("eval needs exactly one of --model or --assistant");
      }
      const auto handle =
          ev_model.empty()
              ? resolve_policy(ev_assistant, models, cfg, err)
              : policy::PolicyHandle::learned(
                    std::filesystem::path(ev_model).stem().string(),
                    std::make_shared<nn::NetworkModel>(nn::load_model(ev_model)), cfg);
      const auto res = adapt::evaluate_policy(handle, ec, cfg);
      out << fmt("%s over %zu trials of %.1f s: crash_rate %.3f\n", handle.id().c_str(),
                 ec.n_trials, ec.trial_len_s, res.crash_rate)
          << metrics_line(res.metrics) << '\n';
      return 0;
    }

    if (*portrait) {
      const auto log = telemetry::read_trial_log(pt_log);
      std::string format = pt_format;
      if (format.empty()) format = std::filesystem::path(pt_out).extension() == ".svg" ? "svg" : "table";
      telemetry::export_phase_portrait(
          log.samples, pt_out,
          format == "svg" ? telemetry::PortraitFormat::svg : telemetry::PortraitFormat::table,
          log.header.sim);
      out << "wrote " << pt_out << " (" << log.samples.size() << " samples)\n";
      return 0;
    }

    if (*replay) {
      const auto rep = session::replay_trial(std::filesystem::path(rp_log));
      out << rep.summary() << '\n';
      return rep.ok() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace vip::app
