#pragma once

#include <string>

namespace vip {

/// Stages of the dyadic session, in protocol order.
enum class SessionPhase {
  Tutorial,
  HumanBaseline,
  HumanAssisted,
  AiSolo,
  AiCorrection,
  FineTuning,
  AiReevaluation,
  Summary,
};

inline constexpr SessionPhase kAllPhases[] = {
    SessionPhase::Tutorial,     SessionPhase::HumanBaseline, SessionPhase::HumanAssisted,
    SessionPhase::AiSolo,       SessionPhase::AiCorrection,  SessionPhase::FineTuning,
    SessionPhase::AiReevaluation, SessionPhase::Summary,
};

const char* to_string(SessionPhase phase);
/// Throws std::invalid_argument for unknown names.
SessionPhase parse_phase(const std::string& name);

}  // namespace vip
