#include "vip/telemetry.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace vip {

const char* to_string(SessionPhase phase) {
  switch (phase) {
    case SessionPhase::Tutorial: return "Tutorial";
    case SessionPhase::HumanBaseline: return "HumanBaseline";
    case SessionPhase::HumanAssisted: return "HumanAssisted";
    case SessionPhase::AiSolo: return "AiSolo";
    case SessionPhase::AiCorrection: return "AiCorrection";
    case SessionPhase::FineTuning: return "FineTuning";
    case SessionPhase::AiReevaluation: return "AiReevaluation";
    case SessionPhase::Summary: return "Summary";
  }
  return "Summary";
}

SessionPhase parse_phase(const std::string& name) {
  for (SessionPhase p : kAllPhases) {
    if (name == to_string(p)) return p;
  }
  throw std::invalid_argument("unknown session phase: " + name);
}

}  // namespace vip

namespace vip::telemetry {
namespace {

using json = nlohmann::json;

json config_to_json(const sim::SimConfig& c) {
  return {{"k_p", c.k_p},
          {"dt", c.dt},
          {"crash_deg", c.crash_deg},
          {"dob_deg", c.dob_deg},
          {"joystick_gain", c.joystick_gain},
          {"reset_range_deg", c.reset_range_deg},
          {"omega_max", c.omega_max}};
}

sim::SimConfig config_from_json(const json& j) {
  sim::SimConfig c;
  c.k_p = j.at("k_p").get<double>();
  c.dt = j.at("dt").get<double>();
  c.crash_deg = j.at("crash_deg").get<double>();
  c.dob_deg = j.at("dob_deg").get<double>();
  c.joystick_gain = j.at("joystick_gain").get<double>();
  c.reset_range_deg = j.at("reset_range_deg").get<double>();
  c.omega_max = j.at("omega_max").get<double>();
  return c;
}

}  // namespace

const char* to_string(CueDirection d) { return d == CueDirection::left ? "left" : "right"; }

CueDirection parse_cue_direction(const std::string& s) {
  if (s == "left") return CueDirection::left;
  if (s == "right") return CueDirection::right;
  throw std::invalid_argument("unknown cue direction: " + s);
}

TrialMetrics compute_metrics(std::span<const ControlSample> samples, double dt) {
  if (samples.empty()) throw std::invalid_argument("compute_metrics: empty trace");
  TrialMetrics m;
  std::uint64_t balanced = 0;
  for (const auto& s : samples) {
    m.mean_abs_theta += std::abs(s.theta);
    m.mean_abs_omega += std::abs(s.omega);
    m.mean_abs_applied_u += std::abs(s.applied_u);
    if (std::abs(s.theta) < kBalancedDeg) ++balanced;
    if (s.crashed) ++m.crash_count;
  }
  const double n = static_cast<double>(samples.size());
  m.mean_abs_theta /= n;
  m.mean_abs_omega /= n;
  m.mean_abs_applied_u /= n;
  m.balanced_fraction = static_cast<double>(balanced) / n;
  m.ticks = samples.size();
  m.duration_s = n * dt;
  return m;
}

TrialMetrics combine_metrics(std::span<const TrialMetrics> trials) {
  TrialMetrics out;
  double ticks = 0.0;
  for (const auto& t : trials) {
    const double w = static_cast<double>(t.ticks);
    out.crash_count += t.crash_count;
    out.mean_abs_theta += t.mean_abs_theta * w;
    out.mean_abs_omega += t.mean_abs_omega * w;
    out.mean_abs_applied_u += t.mean_abs_applied_u * w;
    out.balanced_fraction += t.balanced_fraction * w;
    out.duration_s += t.duration_s;
    out.ticks += t.ticks;
    ticks += w;
  }
  if (ticks > 0.0) {
    out.mean_abs_theta /= ticks;
    out.mean_abs_omega /= ticks;
    out.mean_abs_applied_u /= ticks;
    out.balanced_fraction /= ticks;
  }
  return out;
}

void export_phase_portrait(std::span<const ControlSample> samples,
                           const std::filesystem::path& out, PortraitFormat format,
                           const sim::SimConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("export_phase_portrait: empty trace");
  std::ofstream file(out, std::ios::trunc);
  if (!file) throw LogError("export_phase_portrait: cannot write " + out.string());

  if (format == PortraitFormat::table) {
    file << "theta_deg\tomega_dps\n";
    for (const auto& s : samples) file << json(s.theta).dump() << '\t' << json(s.omega).dump() << '\n';
  } else {
    constexpr double W = 640.0, H = 480.0, pad = 40.0;
    const double xr = cfg.crash_deg, yr = cfg.omega_max;
    auto px = [&](double theta) { return pad + (theta + xr) / (2.0 * xr) * (W - 2.0 * pad); };
    auto py = [&](double omega) {
      const double c = std::clamp(omega, -yr, yr);
      return H - pad - (c + yr) / (2.0 * yr) * (H - 2.0 * pad);
    };
    file << std::fixed << std::setprecision(2);
    file << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
         << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
    file << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    file << "<line x1=\"" << pad << "\" y1=\"" << py(0) << "\" x2=\"" << W - pad << "\" y2=\""
         << py(0) << "\" stroke=\"black\"/>\n";
    file << "<line x1=\"" << px(0) << "\" y1=\"" << pad << "\" x2=\"" << px(0) << "\" y2=\""
         << H - pad << "\" stroke=\"black\"/>\n";
    for (double b : {-cfg.crash_deg, cfg.crash_deg}) {
      file << "<line class=\"crash-boundary\" x1=\"" << px(b) << "\" y1=\"" << pad << "\" x2=\""
           << px(b) << "\" y2=\"" << H - pad << "\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n";
    }
    file << "<text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">theta (deg), "
         << "axis +-" << xr << "</text>\n";
    file << "<text x=\"12\" y=\"" << H / 2 << "\" transform=\"rotate(-90 12 " << H / 2
         << ")\" text-anchor=\"middle\">omega (deg/s), axis +-" << yr << "</text>\n";
    file << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"";
    for (const auto& s : samples) file << px(s.theta) << ',' << py(s.omega) << ' ';
    file << "\"/>\n</svg>\n";
  }
  if (!file) throw LogError("export_phase_portrait: write failed for " + out.string());
}

std::string serialize_sample(const ControlSample& s) {
  json j{{"t", s.t},
         {"theta", s.theta},
         {"omega", s.omega},
         {"applied_u", s.applied_u},
         {"crashed", s.crashed},
         {"phase", to_string(s.phase)}};
  if (s.human_u) j["human_u"] = *s.human_u;
  if (s.ai_u) j["ai_u"] = *s.ai_u;
  if (s.cue) j["cue"] = {{"direction", to_string(s.cue->direction)}, {"magnitude", s.cue->magnitude}};
  return j.dump();
}

ControlSample parse_sample(const std::string& line) {
  try {
    const json j = json::parse(line);
    ControlSample s;
    s.t = j.at("t").get<double>();
    s.theta = j.at("theta").get<double>();
    s.omega = j.at("omega").get<double>();
    s.applied_u = j.at("applied_u").get<double>();
    s.crashed = j.at("crashed").get<bool>();
    s.phase = parse_phase(j.at("phase").get<std::string>());
    if (j.contains("human_u")) s.human_u = j["human_u"].get<double>();
    if (j.contains("ai_u")) s.ai_u = j["ai_u"].get<double>();
    if (j.contains("cue")) {
      s.cue = CueMark{parse_cue_direction(j["cue"].at("direction").get<std::string>()),
                      j["cue"].at("magnitude").get<double>()};
    }
    return s;
  } catch (const std::exception& e) {
    throw LogError(std::string("bad sample line: ") + e.what());
  }
}

std::string serialize_header(const TrialHeader& h) {
  json j{{"format", h.format},
         {"session_id", h.session_id},
         {"trial_id", h.trial_id},
         {"seed", h.seed},
         {"phase", to_string(h.phase)},
         {"assistant_id", h.assistant_id},
         {"assistant_model", h.assistant_model},
         {"predictor_model", h.predictor_model},
         {"human_id", h.human_id},
         {"duration_s", h.duration_s},
         {"cue_p_min", h.cue_p_min},
         {"cue_theta_min_deg", h.cue_theta_min_deg},
         {"n_dots", h.n_dots},
         {"coherence", h.coherence},
         {"sim", config_to_json(h.sim)}};
  return j.dump();
}

TrialHeader parse_header(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const std::exception& e) {
    throw LogError(std::string("bad header line: ") + e.what());
  }
  const std::string format = j.value("format", "");
  if (format != kLogVersion) {
    throw LogError("unsupported log format '" + format + "' (expected " + kLogVersion + ")");
  }
  try {
    TrialHeader h;
    h.format = format;
    h.session_id = j.at("session_id").get<std::string>();
    h.trial_id = j.at("trial_id").get<std::string>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.phase = parse_phase(j.at("phase").get<std::string>());
    h.assistant_id = j.value("assistant_id", "");
    h.assistant_model = j.value("assistant_model", "");
    h.predictor_model = j.value("predictor_model", "");
    h.human_id = j.value("human_id", "");
    h.duration_s = j.at("duration_s").get<double>();
    h.cue_p_min = j.value("cue_p_min", 0.8);
    h.cue_theta_min_deg = j.value("cue_theta_min_deg", 12.0);
    h.n_dots = j.value("n_dots", std::uint64_t{200});
    h.coherence = j.value("coherence", 0.5);
    h.sim = config_from_json(j.at("sim"));
    return h;
  } catch (const LogError&) {
    throw;
  } catch (const std::exception& e) {
    throw LogError(std::string("bad header line: ") + e.what());
  }
}

TrialWriter::~TrialWriter() {
  if (open_) {
    try {
      close_trial();
    } catch (...) {
    }
  }
}

void TrialWriter::open_trial(const std::filesystem::path& path, const TrialHeader& header) {
  if (open_) throw LogError("open_trial: a trial is already open");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::trunc);
  if (!out_) throw LogError("open_trial: cannot write " + path.string());
  out_ << serialize_header(header) << '\n';
  open_ = true;
  closed_ = false;
  last_t_.reset();
  count_ = 0;
}

void TrialWriter::append_sample(const ControlSample& sample) {
  if (!open_) {
    throw LogError(closed_ ? "append_sample: trial already closed" : "append_sample: no open trial");
  }
  if (last_t_ && !(sample.t > *last_t_)) {
    throw LogError("append_sample: time does not advance");
  }
  out_ << serialize_sample(sample) << '\n';
  last_t_ = sample.t;
  ++count_;
}

void TrialWriter::close_trial() {
  if (!open_) return;
  out_.flush();
  const bool ok = static_cast<bool>(out_);
  out_.close();
  open_ = false;
  closed_ = true;
  if (!ok) throw LogError("close_trial: write failed");
}

TrialLog read_trial_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LogError("cannot read " + path.string());
  TrialLog log;
  std::string line;
  if (!std::getline(in, line)) throw LogError("empty log: " + path.string());
  log.header = parse_header(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    log.samples.push_back(parse_sample(line));
  }
  return log;
}

std::filesystem::path trial_log_path(const std::filesystem::path& runs_dir,
                                     const std::string& session_id, std::uint64_t seq,
                                     SessionPhase phase) {
  std::ostringstream name;
  name << std::setw(3) << std::setfill('0') << seq << '_' << to_string(phase) << ".log";
  return runs_dir / session_id / "trials" / name.str();
}

}  // namespace vip::telemetry
