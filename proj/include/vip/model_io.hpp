#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "vip/network.hpp"

namespace vip::nn {

/// Structured load failure for `.vipmodel` documents.
class ModelFormatError : public std::runtime_error {
 public:
  enum class Kind { version, malformed, shape, io };

  ModelFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// JSON document: version, layer specs, weights as 16-digit hex words of the
/// IEEE-754 bit patterns, and the meta map. Lossless.
std::string serialize_model(const NetworkModel& model);
NetworkModel parse_model(const std::string& text);

void save_model(const NetworkModel& model, const std::filesystem::path& path);
NetworkModel load_model(const std::filesystem::path& path);

std::string encode_hex(double value);
double decode_hex(const std::string& word);

}  // namespace vip::nn
