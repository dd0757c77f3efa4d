#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "vip/phase.hpp"
#include "vip/protocol.hpp"
#include "vip/rdk.hpp"
#include "vip/session.hpp"
#include "vip/telemetry.hpp"

namespace vip::wire {

inline constexpr const char* kWireVersion = "vip-wire/1";

/// Decoding failure; `code` is the ErrorMsg code sent back to the client.
class WireError : public std::runtime_error {
 public:
  WireError(std::string code, const std::string& detail)
      : std::runtime_error(detail), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Client to server.
struct Hello {
  std::string name;
};
struct SelectAssistant {
  std::string id;
};
struct OperatorEvent {
  protocol::Event event = protocol::Event::operator_accept;
};
struct Input {
  double u = 0.0;  ///< clamped to [-1, 1] on decode
  double client_t = 0.0;
};
using ClientMessage = std::variant<Hello, SelectAssistant, OperatorEvent, Input>;

/// Throws WireError with code "malformed", "version", "unknown_type" or
/// "bad_field".
ClientMessage parse_client(const std::string& text);

std::string encode(const Hello& m);
std::string encode(const SelectAssistant& m);
std::string encode(const OperatorEvent& m);
std::string encode(const Input& m);

// Server to client.
struct CatalogEntry {
  std::string id;
  std::string kind;
  std::string note;
};

struct Frame {
  std::uint64_t tick = 0;
  double t = 0.0;
  double theta = 0.0;
  double omega = 0.0;
  std::vector<rdk::Dot> dots;  ///< quantized to 3 decimals
  std::optional<telemetry::CueMark> cue;
  SessionPhase phase = SessionPhase::Tutorial;
  bool crashed = false;
  std::uint64_t crash_count = 0;
  double applied_u = 0.0;
};

struct PhaseSummary {
  SessionPhase phase = SessionPhase::Tutorial;
  std::string trial_id;
  telemetry::TrialMetrics metrics;
  SessionPhase next_phase = SessionPhase::Tutorial;
};

struct FinetuneProgress {
  std::size_t epoch = 0;
  std::size_t epochs = 0;
  double loss = 0.0;
  std::optional<double> test_loss;
};

struct ErrorMsg {
  std::string code;
  std::string detail;
};

double quantize(double x);

std::string encode_catalog(const std::vector<CatalogEntry>& entries);
std::string encode(const Frame& m);
std::string encode_frame(const session::FrameOut& f);
std::string encode(const PhaseSummary& m);
std::string encode(const FinetuneProgress& m);
std::string encode(const ErrorMsg& m);

using ServerMessage =
    std::variant<std::vector<CatalogEntry>, Frame, PhaseSummary, FinetuneProgress, ErrorMsg>;

/// Decoder for server messages, used by headless clients and tests.
ServerMessage parse_server(const std::string& text);

}  // namespace vip::wire
