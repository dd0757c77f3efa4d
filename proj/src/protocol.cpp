#include "vip/protocol.hpp"

namespace vip::protocol {

const char* to_string(Actuator a) {
  switch (a) {
    case Actuator::none: return "none";
    case Actuator::human: return "human";
    case Actuator::assistant: return "assistant";
  }
  return "none";
}

PhaseRules phase_rules(SessionPhase phase, bool assistant_loaded) {
  PhaseRules r;
  switch (phase) {
    case SessionPhase::Tutorial:
      r.actuator = Actuator::human;
      r.simulating = true;
      r.duration_s = 30.0;
      r.coherence = 1.0;
      break;
    case SessionPhase::HumanBaseline:
      r.actuator = Actuator::human;
      r.simulating = true;
      break;
    case SessionPhase::HumanAssisted:
      r.actuator = Actuator::human;
      r.cues_enabled = true;
      r.simulating = true;
      r.needs_assistant = true;
      break;
    case SessionPhase::AiSolo:
    case SessionPhase::AiReevaluation:
      r.actuator = Actuator::assistant;
      r.simulating = true;
      r.needs_assistant = true;
      break;
    case SessionPhase::AiCorrection:
      r.actuator = Actuator::human;
      r.record_disagreements = assistant_loaded;
      r.simulating = true;
      r.needs_assistant = true;
      break;
    case SessionPhase::FineTuning:
    case SessionPhase::Summary:
      r.duration_s = 0.0;
      break;
  }
  return r;
}

const char* to_string(Event e) {
  switch (e) {
    case Event::trial_done: return "trial_done";
    case Event::finetune_done: return "finetune_done";
    case Event::operator_accept: return "operator_accept";
    case Event::operator_repeat: return "operator_repeat";
    case Event::operator_skip: return "operator_skip";
  }
  return "trial_done";
}

Event parse_event(const std::string& s) {
  for (Event e : kAllEvents) {
    if (s == to_string(e)) return e;
  }
  throw std::invalid_argument("unknown event: " + s);
}

IllegalTransition::IllegalTransition(SessionPhase from, Event event)
    : std::runtime_error(std::string("illegal transition: ") + to_string(event) + " in phase " +
                         vip::to_string(from)),
      from_(from),
      event_(event) {}

std::optional<SessionPhase> transition(SessionPhase current, Event event) {
  using P = SessionPhase;
  switch (current) {
    case P::Tutorial:
      if (event == Event::trial_done || event == Event::operator_skip) return P::HumanBaseline;
      break;
    case P::HumanBaseline:
      if (event == Event::trial_done) return P::HumanAssisted;
      break;
    case P::HumanAssisted:
      if (event == Event::trial_done) return P::AiSolo;
      break;
    case P::AiSolo:
      if (event == Event::trial_done) return P::AiCorrection;
      break;
    case P::AiCorrection:
      if (event == Event::trial_done) return P::FineTuning;
      break;
    case P::FineTuning:
      if (event == Event::finetune_done) return P::AiReevaluation;
      break;
    case P::AiReevaluation:
      if (event == Event::operator_accept) return P::Summary;
      if (event == Event::operator_repeat) return P::AiCorrection;
      break;
    case P::Summary:
      break;
  }
  return std::nullopt;
}

SessionPhase advance_phase(SessionPhase current, Event event) {
  if (auto next = transition(current, event)) return *next;
  throw IllegalTransition(current, event);
}

}  // namespace vip::protocol
