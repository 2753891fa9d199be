#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "servebench/model_repository.hpp"
#include "servebench/records.hpp"

namespace servebench {

struct PerfIndexEntry {
  std::string job_id;
  std::string family;
  std::string hardware;
  std::string backend;
  std::string started;  // UTC, from env_log.timestamps
  std::string content_hash;
};

struct PerfQuery {
  std::optional<std::string> family;
  std::optional<std::string> hardware;
  std::optional<std::string> backend;
  std::optional<std::string> since;  // UTC timestamp prefix, compared lexicographically

  bool matches(const PerfIndexEntry& e) const {
    if (family && e.family != *family) return false;
    if (hardware && e.hardware != *hardware) return false;
    if (backend && e.backend != *backend) return false;
    if (since && e.started < *since) return false;
    return true;
  }
};

inline PerfIndexEntry index_entry(const PerfRecord& r) {
  PerfIndexEntry e;
  e.job_id = r.job_id;
  const json& env = r.env_log;
  if (env.contains("model") && env["model"].is_object()) e.family = env["model"].value("family", "");
  if (env.contains("hardware") && env["hardware"].is_object()) e.hardware = env["hardware"].value("id", "");
  if (env.contains("backend") && env["backend"].is_object()) e.backend = env["backend"].value("kind", "");
  if (env.contains("timestamps") && env["timestamps"].is_object()) e.started = env["timestamps"].value("started", "");
  e.content_hash = content_hash(r);
  return e;
}

// Append-only store: records/<job_id>.json plus index.json, which can always
// be rebuilt from the records directory.
class PerfDB {
 public:
  explicit PerfDB(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "records");
    if (!load_index()) rebuild_index();
  }

  const std::filesystem::path& root() const { return root_; }

  // Assigns a fresh job id when the record has none. Existing ids are never
  // overwritten.
  std::string append(PerfRecord r) {
    std::unique_lock lock(mu_);
    if (r.job_id.empty()) r.job_id = fresh_id_locked();
    if (!is_safe_id(r.job_id)) throw ValidationError("job_id", "must match [A-Za-z0-9._-]+");
    if (std::filesystem::exists(record_path(r.job_id))) {
      throw ConflictError("record '" + r.job_id + "' already exists; records are append-only");
    }
    write_file_atomic(record_path(r.job_id), to_json(r).dump(1) + "\n");
    index_.push_back(index_entry(r));
    save_index_locked();
    return r.job_id;
  }

  bool contains(const std::string& job_id) const {
    std::shared_lock lock(mu_);
    return std::any_of(index_.begin(), index_.end(), [&](const auto& e) { return e.job_id == job_id; });
  }

  PerfRecord get(const std::string& job_id) const {
    if (!is_safe_id(job_id) || !std::filesystem::exists(record_path(job_id))) {
      throw NotFoundError("no record '" + job_id + "' in " + root_.string());
    }
    return perf_record_from_json(parse_json_document(read_text_file(record_path(job_id))));
  }

  std::vector<PerfIndexEntry> index(const PerfQuery& q = {}) const {
    std::shared_lock lock(mu_);
    std::vector<PerfIndexEntry> out;
    for (const auto& e : index_) {
      if (q.matches(e)) out.push_back(e);
    }
    return out;
  }

  // Records matching q, ordered by job id.
  std::vector<PerfRecord> query(const PerfQuery& q = {}) const {
    std::vector<PerfRecord> out;
    for (const auto& e : index(q)) out.push_back(get(e.job_id));
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return index_.size();
  }

  void rebuild_index() {
    std::unique_lock lock(mu_);
    index_.clear();
    for (const auto& entry : std::filesystem::directory_iterator(root_ / "records")) {
      if (entry.path().extension() != ".json") continue;
      index_.push_back(index_entry(perf_record_from_json(parse_json_document(read_text_file(entry.path())))));
    }
    sort_index();
    save_index_locked();
  }

  std::string fresh_id(const std::string& prefix = "run") {
    std::unique_lock lock(mu_);
    return fresh_id_locked(prefix);
  }

 private:
  std::filesystem::path record_path(const std::string& id) const { return root_ / "records" / (id + ".json"); }

  std::string fresh_id_locked(const std::string& prefix = "run") const {
    char buf[64];
    for (std::size_t n = index_.size() + 1;; ++n) {
      std::snprintf(buf, sizeof buf, "%s-%06zu", prefix.c_str(), n);
      if (!std::filesystem::exists(record_path(buf))) return buf;
    }
  }

  void sort_index() {
    std::sort(index_.begin(), index_.end(), [](const auto& a, const auto& b) { return a.job_id < b.job_id; });
  }

  bool load_index() {
    const auto path = root_ / "index.json";
    if (!std::filesystem::exists(path)) return false;
    try {
      const json doc = json::parse(read_text_file(path));
      std::vector<PerfIndexEntry> loaded;
      for (const auto& e : doc.at("records")) {
        loaded.push_back({e.at("job_id"), e.at("family"), e.at("hardware"), e.at("backend"), e.at("started"),
                          e.at("content_hash")});
      }
      std::size_t on_disk = 0;
      for (const auto& entry : std::filesystem::directory_iterator(root_ / "records")) {
        if (entry.path().extension() == ".json") ++on_disk;
      }
      if (on_disk != loaded.size()) return false;
      index_ = std::move(loaded);
      sort_index();
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  void save_index_locked() {
    sort_index();
    json recs = json::array();
    for (const auto& e : index_) {
      recs.push_back({{"job_id", e.job_id},
                      {"family", e.family},
                      {"hardware", e.hardware},
                      {"backend", e.backend},
                      {"started", e.started},
                      {"content_hash", e.content_hash}});
    }
    write_file_atomic(root_ / "index.json", json{{"schema_version", kSchemaVersion}, {"records", recs}}.dump(1) + "\n");
  }

  std::filesystem::path root_;
  mutable std::shared_mutex mu_;
  std::vector<PerfIndexEntry> index_;
};

}  // namespace servebench
