#include "vip/catalog.hpp"

#include <algorithm>

#include "vip/model_io.hpp"

namespace vip::service {

Catalog Catalog::load(const std::filesystem::path& models_dir, const sim::SimConfig& cfg) {
  Catalog c;
  c.cfg_ = cfg;
  {
    const auto pd = policy::PolicyHandle::pd(cfg);
    c.assistants_.push_back({pd.id(), pd.kind(), pd.note(), {}, nullptr});
    const auto im = policy::PolicyHandle::intermittent(cfg);
    c.assistants_.push_back({im.id(), im.kind(), im.note(), {}, nullptr});
  }
  if (!std::filesystem::is_directory(models_dir)) return c;

  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(models_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".vipmodel") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    try {
      auto model = std::make_shared<const nn::NetworkModel>(nn::load_model(path));
      const auto kind_it = model->meta.find("kind");
      if (kind_it != model->meta.end() && kind_it->second == "crash_predictor") {
        if (!c.predictor_ || path.stem() == "crash-predictor") {
          c.predictor_ = model;
          c.predictor_path_ = path;
        }
        continue;
      }
      const auto id = path.stem().string();
      auto handle = policy::PolicyHandle::learned(id, model, cfg);
      c.assistants_.push_back({id, handle.kind(), handle.note(), path, std::move(model)});
    } catch (const std::exception& e) {
      c.problems_.push_back(path.string() + ": " + e.what());
    }
  }
  return c;
}

const AssistantEntry* Catalog::find(const std::string& id) const {
  for (const auto& a : assistants_) {
    if (a.id == id) return &a;
  }
  return nullptr;
}

policy::PolicyHandle Catalog::make(const std::string& id) const {
  const auto* a = find(id);
  if (!a) throw CatalogError("unknown assistant '" + id + "'");
  if (a->model) return policy::PolicyHandle::learned(a->id, a->model, cfg_);
  if (a->kind == policy::PolicyKind::intermittent) return policy::PolicyHandle::intermittent(cfg_);
  return policy::PolicyHandle::pd(cfg_);
}

std::vector<wire::CatalogEntry> Catalog::wire_entries() const {
  std::vector<wire::CatalogEntry> out;
  for (const auto& a : assistants_) out.push_back({a.id, policy::to_string(a.kind), a.note});
  return out;
}

}  // namespace vip::service
