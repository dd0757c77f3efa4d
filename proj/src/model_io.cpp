#include "vip/model_io.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace vip::nn {
namespace {

using json = nlohmann::json;

[[noreturn]] void malformed(const std::string& what) {
  throw ModelFormatError(ModelFormatError::Kind::malformed, "malformed model: " + what);
}

}  // namespace

std::string encode_hex(double value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[bits & 0xf];
    bits >>= 4;
  }
  return out;
}

double decode_hex(const std::string& word) {
  if (word.size() != 16) malformed("hex word must have 16 digits: '" + word + "'");
  std::uint64_t bits = 0;
  const auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), bits, 16);
  if (ec != std::errc{} || ptr != word.data() + word.size()) malformed("bad hex word '" + word + "'");
  return std::bit_cast<double>(bits);
}

std::string serialize_model(const NetworkModel& model) {
  model.validate();
  json doc;
  doc["version"] = model.version;
  json layers = json::array();
  for (const auto& spec : model.layers) {
    json l{{"kind", to_string(spec.kind)}, {"in", spec.in_dim}, {"out", spec.out_dim}};
    if (spec.kind == LayerKind::dense) l["activation"] = to_string(spec.activation);
    layers.push_back(std::move(l));
  }
  doc["layers"] = std::move(layers);
  json weights = json::array();
  for (const auto& layer : model.weights) {
    json tensors = json::array();
    for (const auto& t : layer) {
      json hex = json::array();
      for (double v : t.values) hex.push_back(encode_hex(v));
      tensors.push_back({{"shape", t.shape}, {"hex", std::move(hex)}});
    }
    weights.push_back(std::move(tensors));
  }
  doc["weights"] = std::move(weights);
  doc["meta"] = model.meta;
  return doc.dump(1);
}

NetworkModel parse_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    malformed(e.what());
  }
  if (!doc.is_object()) malformed("top level is not an object");
  if (!doc.contains("version") || !doc["version"].is_string()) malformed("missing version");
  const std::string version = doc["version"].get<std::string>();
  if (version != kModelVersion) {
    throw ModelFormatError(ModelFormatError::Kind::version,
                           "unsupported model version '" + version + "' (expected " +
                               kModelVersion + ")");
  }

  NetworkModel model;
  model.version = version;
  try {
    for (const auto& l : doc.at("layers")) {
      LayerSpec spec;
      spec.kind = parse_layer_kind(l.at("kind").get<std::string>());
      spec.in_dim = l.at("in").get<std::size_t>();
      spec.out_dim = l.at("out").get<std::size_t>();
      if (spec.kind == LayerKind::dense) {
        spec.activation = parse_activation(l.at("activation").get<std::string>());
      }
      model.layers.push_back(spec);
    }
    for (const auto& layer : doc.at("weights")) {
      LayerWeights lw;
      for (const auto& t : layer) {
        Tensor tensor;
        tensor.shape = t.at("shape").get<std::vector<std::size_t>>();
        for (const auto& word : t.at("hex")) tensor.values.push_back(decode_hex(word.get<std::string>()));
        lw.push_back(std::move(tensor));
      }
      model.weights.push_back(std::move(lw));
    }
    if (doc.contains("meta")) model.meta = doc["meta"].get<std::map<std::string, std::string>>();
  } catch (const ModelFormatError&) {
    throw;
  } catch (const std::exception& e) {
    malformed(e.what());
  }

  try {
    model.validate();
  } catch (const ShapeError& e) {
    throw ModelFormatError(ModelFormatError::Kind::shape, e.what());
  }
  return model;
}

void save_model(const NetworkModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ModelFormatError(ModelFormatError::Kind::io, "cannot write " + path.string());
  }
  out << serialize_model(model) << '\n';
  if (!out) throw ModelFormatError(ModelFormatError::Kind::io, "write failed: " + path.string());
}

NetworkModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFormatError(ModelFormatError::Kind::io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

}  // namespace vip::nn
