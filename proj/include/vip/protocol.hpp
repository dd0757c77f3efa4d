#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "vip/phase.hpp"

namespace vip::protocol {

enum class Actuator { none, human, assistant };
const char* to_string(Actuator a);

struct PhaseRules {
  Actuator actuator = Actuator::none;
  bool cues_enabled = false;
  bool record_disagreements = false;
  bool simulating = false;   ///< a trial runs in this phase
  bool needs_assistant = false;
  double duration_s = 100.0;
  double coherence = 0.5;
};

/// Per-phase actuation, cueing and recording. Disagreements are recorded
/// only while the human actuates and an assistant is loaded.
PhaseRules phase_rules(SessionPhase phase, bool assistant_loaded = true);

enum class Event { trial_done, finetune_done, operator_accept, operator_repeat, operator_skip };
inline constexpr Event kAllEvents[] = {Event::trial_done, Event::finetune_done,
                                       Event::operator_accept, Event::operator_repeat,
                                       Event::operator_skip};
const char* to_string(Event e);
Event parse_event(const std::string& s);

class IllegalTransition : public std::runtime_error {
 public:
  IllegalTransition(SessionPhase from, Event event);
  SessionPhase from() const { return from_; }
  Event event() const { return event_; }

 private:
  SessionPhase from_;
  Event event_;
};

/// Table lookup; nullopt for illegal (phase, event) pairs.
std::optional<SessionPhase> transition(SessionPhase current, Event event);

/// Throws IllegalTransition for pairs outside the table.
SessionPhase advance_phase(SessionPhase current, Event event);

}  // namespace vip::protocol
