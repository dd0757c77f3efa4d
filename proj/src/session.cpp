#include "vip/session.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vip/model_io.hpp"

namespace vip::session {
namespace {

using json = nlohmann::json;
using telemetry::ControlSample;

std::uint64_t ticks_of(double seconds, const sim::SimConfig& cfg) {
  return static_cast<std::uint64_t>(std::llround(seconds / cfg.dt));
}

double clamp_unit(double u) {
  if (!std::isfinite(u)) return 0.0;
  return std::clamp(u, -1.0, 1.0);
}

json metrics_json(const telemetry::TrialMetrics& m) {
  return {{"crash_count", m.crash_count},
          {"mean_abs_theta", m.mean_abs_theta},
          {"mean_abs_omega", m.mean_abs_omega},
          {"mean_abs_applied_u", m.mean_abs_applied_u},
          {"balanced_fraction", m.balanced_fraction},
          {"duration_s", m.duration_s},
          {"ticks", m.ticks}};
}

telemetry::TrialMetrics metrics_from(const json& j) {
  telemetry::TrialMetrics m;
  m.crash_count = j.at("crash_count").get<std::uint64_t>();
  m.mean_abs_theta = j.at("mean_abs_theta").get<double>();
  m.mean_abs_omega = j.at("mean_abs_omega").get<double>();
  m.mean_abs_applied_u = j.at("mean_abs_applied_u").get<double>();
  m.balanced_fraction = j.at("balanced_fraction").get<double>();
  m.duration_s = j.at("duration_s").get<double>();
  m.ticks = j.at("ticks").get<std::uint64_t>();
  return m;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json report_json(const adapt::FinetuneReport& r) {
  json history = json::array();
  for (const auto& e : r.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss},
                       {"test_loss", opt_json(e.test_loss)}});
  }
  return {{"records", r.records},
          {"unchanged", r.unchanged},
          {"initial_train_loss", r.initial_train_loss},
          {"initial_test_loss", opt_json(r.initial_test_loss)},
          {"final_train_loss", r.final_train_loss},
          {"final_test_loss", opt_json(r.final_test_loss)},
          {"steps", r.steps},
          {"n_train", r.n_train},
          {"n_test", r.n_test},
          {"duration_s", r.duration_s},
          {"history", history}};
}

adapt::FinetuneReport report_from(const json& j) {
  adapt::FinetuneReport r;
  r.records = j.at("records").get<std::size_t>();
  r.unchanged = j.at("unchanged").get<bool>();
  r.initial_train_loss = j.at("initial_train_loss").get<double>();
  r.initial_test_loss = opt_from(j.at("initial_test_loss"));
  r.final_train_loss = j.at("final_train_loss").get<double>();
  r.final_test_loss = opt_from(j.at("final_test_loss"));
  r.steps = j.at("steps").get<std::size_t>();
  r.n_train = j.at("n_train").get<std::size_t>();
  r.n_test = j.at("n_test").get<std::size_t>();
  r.duration_s = j.at("duration_s").get<double>();
  for (const auto& e : j.at("history")) {
    nn::EpochStats s;
    s.epoch = e.at("epoch").get<std::size_t>();
    s.train_loss = e.at("train_loss").get<double>();
    s.test_loss = opt_from(e.at("test_loss"));
    r.history.push_back(s);
  }
  return r;
}

std::string seq_prefix(std::uint64_t seq) {
  std::ostringstream os;
  os.width(3);
  os.fill('0');
  os << seq;
  return os.str();
}

}  // namespace

TrialSpec TrialSpec::for_phase(SessionPhase phase, std::uint64_t seed) {
  const auto rules = protocol::phase_rules(phase);
  TrialSpec s;
  s.phase = phase;
  s.seed = seed;
  s.duration_s = rules.duration_s;
  s.coherence = rules.coherence;
  return s;
}

TrialRunner::TrialRunner(TrialSpec spec, const sim::SimConfig& cfg)
    : spec_(std::move(spec)),
      cfg_(cfg),
      rules_(protocol::phase_rules(spec_.phase, spec_.assistant.has_value())),
      env_rng_(Rng::derive(spec_.seed, 0)),
      assistant_rng_(Rng::derive(spec_.seed, 1)),
      human_rng_(Rng::derive(spec_.seed, 5)),
      dot_rng_(Rng::derive(spec_.seed, 4)) {
  cfg_.validate();
  if (!rules_.simulating) {
    throw SessionError(std::string("no trial runs in phase ") + vip::to_string(spec_.phase));
  }
  ticks_ = ticks_of(spec_.duration_s, cfg_);
  if (ticks_ == 0) throw SessionError("trial shorter than one tick");
  if (spec_.predictor) {
    window_ = crash::CrashWindow(crash::model_window(*spec_.predictor).value_or(30));
  }
  const auto start = policy::random_start(spec_.seed, ticks_, cfg_);
  state_.theta = start.theta0;
  state_.omega = start.omega0;
  dots_ = rdk::init_dots(spec_.n_dots, dot_rng_, spec_.coherence);
  if (spec_.assistant) spec_.assistant->reset();
  if (spec_.human) spec_.human->reset();
  samples_.reserve(ticks_);
}

telemetry::TrialHeader TrialRunner::header() const {
  telemetry::TrialHeader h;
  h.session_id = spec_.session_id;
  h.trial_id = spec_.trial_id;
  h.seed = spec_.seed;
  h.phase = spec_.phase;
  if (spec_.assistant) h.assistant_id = spec_.assistant->id();
  h.assistant_model = spec_.assistant_model;
  h.predictor_model = spec_.predictor_model;
  if (spec_.human) h.human_id = spec_.human->id();
  h.duration_s = spec_.duration_s;
  h.cue_p_min = spec_.cue.p_min;
  h.cue_theta_min_deg = spec_.cue.theta_min_deg;
  h.n_dots = spec_.n_dots;
  h.coherence = spec_.coherence;
  h.sim = cfg_;
  return h;
}

void TrialRunner::open_log(const std::filesystem::path& path) {
  if (tick_ != 0) throw SessionError("open_log: trial already started");
  writer_.open_trial(path, header());
}

FrameOut TrialRunner::tick(std::optional<double> human_input) {
  if (done()) throw SessionError("tick: trial already complete");
  const auto obs = policy::Observation::from_state(state_.theta, state_.omega, cfg_);

  ControlSample sample;
  sample.t = state_.t;
  sample.theta = state_.theta;
  sample.omega = state_.omega;
  sample.phase = spec_.phase;
  // The assistant runs in every phase it is loaded in so that shadow
  // disagreements and cues see its proposal.
  if (spec_.assistant) sample.ai_u = spec_.assistant->act(obs, assistant_rng_);
  if (spec_.human) {
    sample.human_u = spec_.human->act(obs, human_rng_);
  } else if (human_input) {
    sample.human_u = clamp_unit(*human_input);
  }
  switch (rules_.actuator) {
    case protocol::Actuator::human: sample.applied_u = sample.human_u.value_or(0.0); break;
    case protocol::Actuator::assistant: sample.applied_u = sample.ai_u.value_or(0.0); break;
    case protocol::Actuator::none: sample.applied_u = 0.0; break;
  }

  if (spec_.predictor) {
    window_.push(sample.theta, sample.omega, sample.applied_u, cfg_);
    // Prediction is the expensive part; skip it when the gate is already shut.
    if (rules_.cues_enabled && sample.ai_u && window_.ready() &&
        std::abs(sample.theta) > spec_.cue.theta_min_deg && *sample.ai_u != 0.0) {
      const auto p = crash::predict(*spec_.predictor, window_.tensor());
      if (auto cue = crash::gate_cue(p, sample.theta, *sample.ai_u, spec_.cue)) {
        sample.cue = telemetry::CueMark{cue->direction, cue->magnitude};
      }
    }
  }

  const double before = state_.theta;
  const auto res = sim::step(state_, sample.applied_u, cfg_, env_rng_);
  sample.crashed = res.crashed_this_tick;
  state_ = res.state;

  if (res.crashed_this_tick) {
    dots_ = rdk::init_dots(spec_.n_dots, dot_rng_, spec_.coherence);
    window_.clear();
    if (spec_.assistant) spec_.assistant->reset();
    if (spec_.human) spec_.human->reset();
  } else {
    dots_ = rdk::advance(dots_, state_.theta - before, dot_rng_);
  }

  if (rules_.record_disagreements) {
    if (auto rec = adapt::record_disagreement(sample, cfg_, spec_.trial_id)) {
      records_.push_back(std::move(*rec));
    }
  }
  if (writer_.is_open()) writer_.append_sample(sample);
  samples_.push_back(sample);
  ++tick_;

  FrameOut f;
  f.tick = tick_;
  f.t = state_.t;
  f.theta = state_.theta;
  f.omega = state_.omega;
  f.dots = &dots_.dots;
  f.cue = sample.cue;
  f.phase = spec_.phase;
  f.crashed = sample.crashed;
  f.crash_count = state_.crash_count;
  f.applied_u = sample.applied_u;
  return f;
}

void TrialRunner::finish() {
  if (writer_.is_open()) writer_.close_trial();
}

telemetry::TrialMetrics TrialRunner::metrics() const {
  return telemetry::compute_metrics(samples_, cfg_.dt);
}

std::optional<policy::PolicyHandle> assistant_from_header(const telemetry::TrialHeader& h) {
  if (h.assistant_id.empty()) return std::nullopt;
  if (!h.assistant_model.empty()) {
    auto model = std::make_shared<nn::NetworkModel>(nn::load_model(h.assistant_model));
    return policy::PolicyHandle::learned(h.assistant_id, std::move(model), h.sim);
  }
  if (h.assistant_id == "pd") return policy::PolicyHandle::pd(h.sim);
  if (h.assistant_id == "intermittent") return policy::PolicyHandle::intermittent(h.sim);
  throw SessionError("log names assistant '" + h.assistant_id + "' without a model path");
}

std::string ReplayReport::summary() const {
  std::ostringstream os;
  if (ok()) {
    os << "OK, " << identical << "/" << total << " ticks identical";
  } else if (total == 0) {
    os << "EMPTY, no ticks logged";
  } else {
    os << "MISMATCH at tick " << first_mismatch.value_or(0) << ", " << identical << "/" << total
       << " ticks identical";
  }
  return os.str();
}

ReplayReport replay_trial(const telemetry::TrialLog& log) {
  const auto& h = log.header;
  TrialSpec spec;
  spec.session_id = h.session_id;
  spec.trial_id = h.trial_id;
  spec.seed = h.seed;
  spec.phase = h.phase;
  spec.duration_s = h.duration_s;
  spec.coherence = h.coherence;
  spec.n_dots = h.n_dots;
  spec.cue = {h.cue_p_min, h.cue_theta_min_deg};
  spec.assistant = assistant_from_header(h);
  spec.assistant_model = h.assistant_model;
  if (!h.predictor_model.empty()) {
    spec.predictor = std::make_shared<nn::NetworkModel>(nn::load_model(h.predictor_model));
    spec.predictor_model = h.predictor_model;
  }
  // The human is replaced by the logged input trace.
  TrialRunner runner(std::move(spec), h.sim);

  ReplayReport rep;
  rep.total = log.samples.size();
  for (std::size_t k = 0; k < log.samples.size(); ++k) {
    const auto& logged = log.samples[k];
    if (runner.done()) {
      rep.first_mismatch = rep.first_mismatch.value_or(k);
      break;
    }
    runner.tick(logged.human_u);
    if (telemetry::serialize_sample(runner.samples().back()) ==
        telemetry::serialize_sample(logged)) {
      ++rep.identical;
    } else if (!rep.first_mismatch) {
      rep.first_mismatch = k;
    }
  }
  return rep;
}

ReplayReport replay_trial(const std::filesystem::path& log_path) {
  return replay_trial(telemetry::read_trial_log(log_path));
}

std::string serialize_record(const SessionRecord& r) {
  json phases = json::array();
  for (const auto& p : r.phases) {
    phases.push_back({{"phase", vip::to_string(p.phase)},
                      {"trial_id", p.trial_id},
                      {"metrics", metrics_json(p.metrics)}});
  }
  json finetunes = json::array();
  for (const auto& f : r.finetunes) {
    finetunes.push_back(
        {{"round", f.round}, {"model_path", f.model_path}, {"report", report_json(f.report)}});
  }
  json decisions = json::array();
  for (auto d : r.decisions) decisions.push_back(protocol::to_string(d));
  return json{{"session_id", r.session_id},
              {"assistant_id", r.assistant_id},
              {"phases", phases},
              {"finetunes", finetunes},
              {"decisions", decisions}}
      .dump(2);
}

SessionRecord parse_record(const std::string& text) {
  const auto j = json::parse(text);
  SessionRecord r;
  r.session_id = j.at("session_id").get<std::string>();
  r.assistant_id = j.at("assistant_id").get<std::string>();
  for (const auto& p : j.at("phases")) {
    r.phases.push_back({parse_phase(p.at("phase").get<std::string>()),
                        p.at("trial_id").get<std::string>(), metrics_from(p.at("metrics"))});
  }
  for (const auto& f : j.at("finetunes")) {
    r.finetunes.push_back({f.at("round").get<std::size_t>(), report_from(f.at("report")),
                           f.at("model_path").get<std::string>()});
  }
  for (const auto& d : j.at("decisions")) r.decisions.push_back(protocol::parse_event(d));
  return r;
}

Session::Session(SessionConfig config, policy::PolicyHandle assistant, std::string assistant_model,
                 std::shared_ptr<const nn::NetworkModel> predictor, std::string predictor_model)
    : config_(std::move(config)),
      assistant_(std::move(assistant)),
      assistant_model_(std::move(assistant_model)),
      predictor_(std::move(predictor)),
      predictor_model_(std::move(predictor_model)) {
  config_.sim.validate();
  record_.session_id = config_.session_id;
  record_.assistant_id = assistant_.id();
  enter_phase(SessionPhase::Tutorial);
}

std::filesystem::path Session::session_dir() const {
  return config_.runs_dir / config_.session_id;
}

void Session::start_trial() {
  ++seq_;
  auto spec = TrialSpec::for_phase(phase_, Rng::derive(config_.seed, seq_));
  spec.session_id = config_.session_id;
  spec.trial_id = seq_prefix(seq_) + "_" + vip::to_string(phase_);
  if (config_.trial_duration_s) spec.duration_s = *config_.trial_duration_s;
  spec.n_dots = config_.n_dots;
  spec.cue = config_.cue;
  spec.assistant = assistant_;
  spec.assistant_model = assistant_model_;
  spec.predictor = predictor_;
  spec.predictor_model = predictor_model_;
  spec.human = config_.human;
  runner_.emplace(std::move(spec), config_.sim);
  log_path_ = telemetry::trial_log_path(config_.runs_dir, config_.session_id, seq_, phase_);
  runner_->open_log(log_path_);
}

TrialEnd Session::end_trial() {
  auto& r = *runner_;
  r.finish();
  TrialEnd end;
  end.phase = phase_;
  end.trial_id = r.spec().trial_id;
  end.log_path = log_path_;
  if (r.ticks_done() > 0) {
    end.metrics = r.metrics();
    record_.phases.push_back({phase_, end.trial_id, end.metrics});
  }
  if (phase_ == SessionPhase::AiCorrection) {
    pending_records_ = r.disagreements();
    auto path = log_path_;
    path.replace_extension(".disagreements.jsonl");
    adapt::write_disagreements(path, pending_records_);
  }
  runner_.reset();
  save_record();
  return end;
}

void Session::advance(protocol::Event event) {
  enter_phase(protocol::advance_phase(phase_, event));
}

void Session::enter_phase(SessionPhase next) {
  phase_ = next;
  const auto rules = protocol::phase_rules(next);
  if (rules.simulating) {
    start_trial();
    return;
  }
  if (next == SessionPhase::FineTuning) {
    ++round_;
    job_taken_ = false;
    if (!assistant_.model()) {
      // A scripted assistant has nothing to learn.
      adapt::FinetuneReport rep;
      rep.records = pending_records_.size();
      rep.unchanged = true;
      record_.finetunes.push_back({round_, rep, assistant_model_});
      save_record();
      advance(protocol::Event::finetune_done);
    }
    return;
  }
  save_record();
}

TickOutcome Session::tick(std::optional<double> human_input) {
  if (faulted_) throw SessionError("session is frozen after a simulation fault");
  TickOutcome out;
  if (!runner_) return out;
  try {
    out.frame = runner_->tick(human_input);
  } catch (const sim::SimulationFault&) {
    faulted_ = true;
    runner_->finish();
    runner_.reset();
    throw;
  }
  if (runner_->done()) {
    out.ended = end_trial();
    if (phase_ != SessionPhase::AiReevaluation) advance(protocol::Event::trial_done);
  }
  return out;
}

std::optional<TrialEnd> Session::operator_event(protocol::Event event) {
  if (faulted_) throw SessionError("session is frozen after a simulation fault");
  if (event == protocol::Event::trial_done || event == protocol::Event::finetune_done ||
      !protocol::transition(phase_, event)) {
    throw protocol::IllegalTransition(phase_, event);
  }
  std::optional<TrialEnd> end;
  if (runner_) end = end_trial();
  if (phase_ == SessionPhase::AiReevaluation) record_.decisions.push_back(event);
  advance(event);
  return end;
}

std::optional<FinetuneJob> Session::take_finetune_job() {
  if (phase_ != SessionPhase::FineTuning || job_taken_) return std::nullopt;
  job_taken_ = true;
  FinetuneJob job;
  job.round = round_;
  job.model = *assistant_.model();
  job.records = pending_records_;
  job.spec = adapt::FinetuneSpec::for_kind(assistant_.kind());
  job.seed = Rng::derive(config_.seed, 100 + round_);
  return job;
}

void Session::finish_finetune(adapt::FinetuneResult result) {
  if (phase_ != SessionPhase::FineTuning) {
    throw protocol::IllegalTransition(phase_, protocol::Event::finetune_done);
  }
  const auto path = session_dir() / "models" / (std::to_string(round_) + ".vipmodel");
  std::filesystem::create_directories(path.parent_path());
  nn::save_model(result.model, path);
  assistant_ = policy::PolicyHandle::learned(
      assistant_.id(), std::make_shared<nn::NetworkModel>(std::move(result.model)), config_.sim);
  assistant_model_ = path.string();
  record_.finetunes.push_back({round_, std::move(result.report), assistant_model_});
  save_record();
  advance(protocol::Event::finetune_done);
}

std::optional<TrialEnd> Session::abort_trial() {
  if (!runner_) return std::nullopt;
  return end_trial();
}

void Session::save_record() const {
  const auto path = session_dir() / "session.record";
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize_record(record_) << '\n';
}

adapt::FinetuneResult run_finetune_job(const FinetuneJob& job, const nn::ProgressFn& progress) {
  return adapt::finetune(job.model, job.records, job.spec, job.seed, progress);
}

}  // namespace vip::session
