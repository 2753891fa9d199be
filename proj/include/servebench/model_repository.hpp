#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "servebench/hardware.hpp"
#include "servebench/model.hpp"

namespace servebench {

inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp + "'");
    out << content;
    if (!out) throw Error("short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline bool is_safe_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    if (!ok) return false;
  }
  return true;
}

struct ModelQuery {
  std::optional<std::string> family;
  // Generator parameter filters by canonical axis name (num_layers, width, ...).
  std::map<std::string, std::uint64_t> params;
};

inline std::optional<std::uint64_t> param_value(const GeneratorParams& p, const std::string& name) {
  const std::string n = canonical_axis_name(name);
  if (n == "num_layers") return p.num_layers;
  if (n == "width") return p.width;
  if (n == "seq_len") return p.seq_len;
  if (n == "precision_bytes") return p.precision_bytes;
  return std::nullopt;
}

// One metadata file per model under `root`. The in-memory index is rebuilt
// from a directory scan at construction. Mutations are single-writer.
class ModelRepository {
 public:
  explicit ModelRepository(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
    for (const auto& entry : std::filesystem::directory_iterator(root_)) {
      if (entry.path().extension() != ".json") continue;
      const json doc = parse_json_document(read_text_file(entry.path()));
      ModelDescriptor m = descriptor_from_json(doc, entry.path().filename().string());
      index_.emplace(m.model_id, std::move(m));
    }
  }

  const std::filesystem::path& root() const { return root_; }

  ModelDescriptor register_model(ModelDescriptor m) {
    std::unique_lock lock(mu_);
    validate(m);
    if (!is_safe_id(m.model_id)) throw ValidationError("model_id", "must match [A-Za-z0-9._-]+");
    if (index_.count(m.model_id)) throw ConflictError("model '" + m.model_id + "' already registered");
    m.version = 1;
    persist(m);
    return index_.emplace(m.model_id, m).first->second;
  }

  ModelDescriptor update(ModelDescriptor m) {
    std::unique_lock lock(mu_);
    validate(m);
    auto it = index_.find(m.model_id);
    if (it == index_.end()) throw NotFoundError("model '" + m.model_id + "' not found");
    m.version = it->second.version + 1;
    persist(m);
    it->second = m;
    return m;
  }

  void remove(const std::string& model_id) {
    std::unique_lock lock(mu_);
    auto it = index_.find(model_id);
    if (it == index_.end()) throw NotFoundError("model '" + model_id + "' not found");
    std::filesystem::remove(path_for(model_id));
    index_.erase(it);
  }

  std::optional<ModelDescriptor> get(const std::string& model_id) const {
    std::shared_lock lock(mu_);
    auto it = index_.find(model_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Results ordered by model_id.
  std::vector<ModelDescriptor> search(const ModelQuery& q) const {
    std::shared_lock lock(mu_);
    std::vector<ModelDescriptor> out;
    for (const auto& [id, m] : index_) {
      if (q.family && m.family != *q.family) continue;
      bool ok = true;
      for (const auto& [name, value] : q.params) {
        if (!m.params || param_value(*m.params, name) != value) {
          ok = false;
          break;
        }
      }
      if (ok) out.push_back(m);
    }
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return index_.size();
  }

 private:
  std::filesystem::path path_for(const std::string& id) const { return root_ / (id + ".json"); }

  void persist(const ModelDescriptor& m) const { write_file_atomic(path_for(m.model_id), to_json(m).dump(2) + "\n"); }

  std::filesystem::path root_;
  mutable std::shared_mutex mu_;
  std::map<std::string, ModelDescriptor> index_;
};

}  // namespace servebench
