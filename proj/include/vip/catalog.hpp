#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vip/network.hpp"
#include "vip/policies.hpp"
#include "vip/sim.hpp"
#include "vip/wire.hpp"

namespace vip::service {

class CatalogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AssistantEntry {
  std::string id;
  policy::PolicyKind kind = policy::PolicyKind::pd;
  std::string note;
  std::filesystem::path path;  ///< empty for scripted controllers
  std::shared_ptr<const nn::NetworkModel> model;
};

/// Read-only set of assistants and the crash predictor, shared by every
/// session. Always offers the scripted "pd" and "intermittent" controllers;
/// learned assistants are the `.vipmodel` files in the models directory,
/// identified by file stem.
class Catalog {
 public:
  static Catalog load(const std::filesystem::path& models_dir, const sim::SimConfig& cfg = {});

  const std::vector<AssistantEntry>& assistants() const { return assistants_; }
  /// Files that could not be loaded, with the reason.
  const std::vector<std::string>& problems() const { return problems_; }
  const AssistantEntry* find(const std::string& id) const;
  /// Fresh controller for `id`; throws CatalogError for unknown ids.
  policy::PolicyHandle make(const std::string& id) const;

  /// The crash predictor: "crash-predictor.vipmodel" if present, else the
  /// first model whose kind is crash_predictor.
  std::shared_ptr<const nn::NetworkModel> predictor() const { return predictor_; }
  const std::filesystem::path& predictor_path() const { return predictor_path_; }

  std::vector<wire::CatalogEntry> wire_entries() const;

 private:
  sim::SimConfig cfg_;
  std::vector<AssistantEntry> assistants_;
  std::vector<std::string> problems_;
  std::shared_ptr<const nn::NetworkModel> predictor_;
  std::filesystem::path predictor_path_;
};

}  // namespace vip::service
