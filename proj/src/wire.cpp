#include "vip/wire.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace vip::wire {
namespace {

using json = nlohmann::json;

json envelope(const char* type) { return json{{"v", kWireVersion}, {"type", type}}; }

template <typename T>
T field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw WireError("bad_field", std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw WireError("bad_field", std::string("wrong type for field '") + key + "'");
  }
}

json parse_envelope(const std::string& text, std::string& type) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw WireError("malformed", e.what());
  }
  if (!j.is_object()) throw WireError("malformed", "message is not an object");
  const auto v = j.find("v");
  if (v == j.end() || !v->is_string() || v->get<std::string>() != kWireVersion) {
    throw WireError("version", std::string("expected protocol ") + kWireVersion);
  }
  type = field<std::string>(j, "type");
  return j;
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
  m.crash_count = field<std::uint64_t>(j, "crash_count");
  m.mean_abs_theta = field<double>(j, "mean_abs_theta");
  m.mean_abs_omega = field<double>(j, "mean_abs_omega");
  m.mean_abs_applied_u = field<double>(j, "mean_abs_applied_u");
  m.balanced_fraction = field<double>(j, "balanced_fraction");
  m.duration_s = field<double>(j, "duration_s");
  m.ticks = field<std::uint64_t>(j, "ticks");
  return m;
}

SessionPhase phase_field(const json& j, const char* key) {
  try {
    return parse_phase(field<std::string>(j, key));
  } catch (const std::invalid_argument& e) {
    throw WireError("bad_field", e.what());
  }
}

}  // namespace

double quantize(double x) { return std::round(x * 1000.0) / 1000.0; }

ClientMessage parse_client(const std::string& text) {
  std::string type;
  const auto j = parse_envelope(text, type);
  if (type == "hello") return Hello{field<std::string>(j, "name")};
  if (type == "select_assistant") return SelectAssistant{field<std::string>(j, "id")};
  if (type == "operator_event") {
    try {
      return OperatorEvent{protocol::parse_event(field<std::string>(j, "event"))};
    } catch (const std::invalid_argument& e) {
      throw WireError("bad_field", e.what());
    }
  }
  if (type == "input") {
    Input in;
    in.u = std::clamp(field<double>(j, "u"), -1.0, 1.0);
    in.client_t = j.contains("client_t") ? field<double>(j, "client_t") : 0.0;
    return in;
  }
  throw WireError("unknown_type", "unknown client message type '" + type + "'");
}

std::string encode(const Hello& m) {
  auto j = envelope("hello");
  j["name"] = m.name;
  return j.dump();
}

std::string encode(const SelectAssistant& m) {
  auto j = envelope("select_assistant");
  j["id"] = m.id;
  return j.dump();
}

std::string encode(const OperatorEvent& m) {
  auto j = envelope("operator_event");
  j["event"] = protocol::to_string(m.event);
  return j.dump();
}

std::string encode(const Input& m) {
  auto j = envelope("input");
  j["u"] = m.u;
  j["client_t"] = m.client_t;
  return j.dump();
}

std::string encode_catalog(const std::vector<CatalogEntry>& entries) {
  auto j = envelope("catalog");
  json list = json::array();
  for (const auto& e : entries) list.push_back({{"id", e.id}, {"kind", e.kind}, {"note", e.note}});
  j["assistants"] = std::move(list);
  return j.dump();
}

std::string encode(const Frame& m) {
  auto j = envelope("frame");
  j["tick"] = m.tick;
  j["t"] = m.t;
  j["theta"] = m.theta;
  j["omega"] = m.omega;
  json dots = json::array();
  for (const auto& d : m.dots) dots.push_back(json::array({quantize(d.x), quantize(d.y)}));
  j["dots"] = std::move(dots);
  if (m.cue) {
    j["cue"] = {{"direction", telemetry::to_string(m.cue->direction)},
                {"magnitude", m.cue->magnitude}};
  }
  j["phase"] = to_string(m.phase);
  j["crashed"] = m.crashed;
  j["crash_count"] = m.crash_count;
  j["applied_u"] = m.applied_u;
  return j.dump();
}

std::string encode_frame(const session::FrameOut& f) {
  Frame m;
  m.tick = f.tick;
  m.t = f.t;
  m.theta = f.theta;
  m.omega = f.omega;
  if (f.dots) m.dots = *f.dots;
  m.cue = f.cue;
  m.phase = f.phase;
  m.crashed = f.crashed;
  m.crash_count = f.crash_count;
  m.applied_u = f.applied_u;
  return encode(m);
}

std::string encode(const PhaseSummary& m) {
  auto j = envelope("phase_summary");
  j["phase"] = to_string(m.phase);
  j["trial_id"] = m.trial_id;
  j["metrics"] = metrics_json(m.metrics);
  j["next_phase"] = to_string(m.next_phase);
  return j.dump();
}

std::string encode(const FinetuneProgress& m) {
  auto j = envelope("finetune_progress");
  j["epoch"] = m.epoch;
  j["epochs"] = m.epochs;
  j["loss"] = m.loss;
  if (m.test_loss) j["test_loss"] = *m.test_loss;
  return j.dump();
}

std::string encode(const ErrorMsg& m) {
  auto j = envelope("error");
  j["code"] = m.code;
  j["detail"] = m.detail;
  return j.dump();
}

ServerMessage parse_server(const std::string& text) {
  std::string type;
  const auto j = parse_envelope(text, type);
  if (type == "catalog") {
    std::vector<CatalogEntry> out;
    for (const auto& e : field<json>(j, "assistants")) {
      out.push_back({field<std::string>(e, "id"), field<std::string>(e, "kind"),
                     field<std::string>(e, "note")});
    }
    return out;
  }
  if (type == "frame") {
    Frame m;
    m.tick = field<std::uint64_t>(j, "tick");
    m.t = field<double>(j, "t");
    m.theta = field<double>(j, "theta");
    m.omega = field<double>(j, "omega");
    for (const auto& d : field<json>(j, "dots")) {
      if (!d.is_array() || d.size() != 2) throw WireError("bad_field", "dot is not a pair");
      m.dots.push_back({d[0].get<double>(), d[1].get<double>()});
    }
    if (j.contains("cue")) {
      const auto& c = j["cue"];
      try {
        m.cue = telemetry::CueMark{
            telemetry::parse_cue_direction(field<std::string>(c, "direction")),
            field<double>(c, "magnitude")};
      } catch (const std::invalid_argument& e) {
        throw WireError("bad_field", e.what());
      }
    }
    m.phase = phase_field(j, "phase");
    m.crashed = field<bool>(j, "crashed");
    m.crash_count = field<std::uint64_t>(j, "crash_count");
    m.applied_u = field<double>(j, "applied_u");
    return m;
  }
  if (type == "phase_summary") {
    PhaseSummary m;
    m.phase = phase_field(j, "phase");
    m.trial_id = field<std::string>(j, "trial_id");
    m.metrics = metrics_from(field<json>(j, "metrics"));
    m.next_phase = phase_field(j, "next_phase");
    return m;
  }
  if (type == "finetune_progress") {
    FinetuneProgress m;
    m.epoch = field<std::size_t>(j, "epoch");
    m.epochs = field<std::size_t>(j, "epochs");
    m.loss = field<double>(j, "loss");
    if (j.contains("test_loss")) m.test_loss = field<double>(j, "test_loss");
    return m;
  }
  if (type == "error") return ErrorMsg{field<std::string>(j, "code"), field<std::string>(j, "detail")};
  throw WireError("unknown_type", "unknown server message type '" + type + "'");
}

}  // namespace vip::wire
