#pragma once

#include <optional>
#include <string>
#include <vector>

#include "servebench/common.hpp"

namespace servebench {

enum class JobState { submitted, queued, running, collecting, done, failed };

inline const char* to_string(JobState s) {
  switch (s) {
    case JobState::submitted: return "SUBMITTED";
    case JobState::queued: return "QUEUED";
    case JobState::running: return "RUNNING";
    case JobState::collecting: return "COLLECTING";
    case JobState::done: return "DONE";
    case JobState::failed: return "FAILED";
  }
  return "?";
}

inline JobState parse_job_state(const std::string& s) {
  for (auto st : {JobState::submitted, JobState::queued, JobState::running, JobState::collecting, JobState::done,
                  JobState::failed}) {
    if (s == to_string(st)) return st;
  }
  throw ValidationError("state", "unknown job state '" + s + "'");
}

inline bool is_terminal(JobState s) { return s == JobState::done || s == JobState::failed; }

// Forward along SUBMITTED -> QUEUED -> RUNNING -> COLLECTING -> DONE, FAILED
// from any non-terminal state, and QUEUED -> SUBMITTED when a worker dies
// before starting the job.
inline bool transition_allowed(JobState from, JobState to) {
  if (is_terminal(from)) return false;
  if (to == JobState::failed) return true;
  if (from == JobState::queued && to == JobState::submitted) return true;
  return static_cast<int>(to) == static_cast<int>(from) + 1;
}

struct StateChange {
  JobState state;
  double at;  // unix seconds
  std::string reason;
};

struct JobStatus {
  std::string job_id;
  JobState state = JobState::submitted;
  double submitted_at = 0;
  std::optional<double> started_at;
  std::optional<double> finished_at;
  std::optional<std::string> worker_id;
  std::string reason;
  std::vector<StateChange> history;

  static JobStatus create(std::string id, double now) {
    JobStatus s;
    s.job_id = std::move(id);
    s.submitted_at = now;
    s.history.push_back({JobState::submitted, now, ""});
    return s;
  }

  // Returns false (and leaves the status untouched) on an illegal transition.
  bool advance(JobState to, double now, std::string why = {}) {
    if (!transition_allowed(state, to)) return false;
    state = to;
    if (to == JobState::running && !started_at) started_at = now;
    if (to == JobState::submitted) {
      worker_id.reset();
      started_at.reset();
    }
    if (is_terminal(to)) finished_at = now;
    if (!why.empty()) reason = why;
    history.push_back({to, now, std::move(why)});
    return true;
  }
};

inline json to_json(const JobStatus& s) {
  json hist = json::array();
  for (const auto& h : s.history) hist.push_back({{"state", to_string(h.state)}, {"at", h.at}, {"reason", h.reason}});
  json j = {{"job_id", s.job_id},
            {"state", to_string(s.state)},
            {"submitted_at", s.submitted_at},
            {"reason", s.reason},
            {"history", hist}};
  j["started_at"] = s.started_at ? json(*s.started_at) : json(nullptr);
  j["finished_at"] = s.finished_at ? json(*s.finished_at) : json(nullptr);
  j["worker_id"] = s.worker_id ? json(*s.worker_id) : json(nullptr);
  return j;
}

inline JobStatus job_status_from_json(const json& j) {
  JobStatus s;
  s.job_id = j.at("job_id").get<std::string>();
  s.state = parse_job_state(j.at("state").get<std::string>());
  s.submitted_at = j.at("submitted_at").get<double>();
  s.reason = j.value("reason", "");
  if (j.contains("started_at") && !j["started_at"].is_null()) s.started_at = j["started_at"].get<double>();
  if (j.contains("finished_at") && !j["finished_at"].is_null()) s.finished_at = j["finished_at"].get<double>();
  if (j.contains("worker_id") && !j["worker_id"].is_null()) s.worker_id = j["worker_id"].get<std::string>();
  for (const auto& h : j.value("history", json::array())) {
    s.history.push_back({parse_job_state(h.at("state").get<std::string>()), h.at("at").get<double>(), h.value("reason", "")});
  }
  return s;
}

}  // namespace servebench
