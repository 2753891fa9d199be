#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "servebench/common.hpp"
#include "servebench/digest.hpp"

namespace servebench {

// Per-request stage boundaries, nanoseconds from job start. For ok requests
// they are non-decreasing in declaration order, so the stage durations
// partition [t_send, t_response] exactly.
struct RequestRecord {
  std::uint64_t req_id = 0;
  Nanos scheduled_offset = 0;
  Nanos t_send = 0;
  Nanos t_preproc_done = 0;
  Nanos t_arrive_server = 0;
  Nanos t_enqueue = 0;
  Nanos t_batch_dispatch = 0;
  Nanos t_infer_done = 0;
  Nanos t_postproc_done = 0;
  Nanos t_response = 0;
  std::int64_t batch_id = -1;
  std::uint64_t batch_size = 0;
  bool ok = true;
  std::string fail_reason;

  Nanos e2e() const { return t_response - t_send; }

  bool monotone() const {
    const std::array<Nanos, 8> ts{t_send,           t_preproc_done, t_arrive_server, t_enqueue,
                                  t_batch_dispatch, t_infer_done,   t_postproc_done, t_response};
    for (std::size_t i = 1; i < ts.size(); ++i) {
      if (ts[i] < ts[i - 1]) return false;
    }
    return true;
  }

  bool operator==(const RequestRecord&) const = default;
};

enum class Stage { preprocess, transmission, batching, inference, postprocess };

inline constexpr std::array<Stage, 5> kStages{Stage::preprocess, Stage::transmission, Stage::batching,
                                              Stage::inference, Stage::postprocess};

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::preprocess: return "preprocess";
    case Stage::transmission: return "transmission";
    case Stage::batching: return "batching";
    case Stage::inference: return "inference";
    case Stage::postprocess: return "postprocess";
  }
  return "?";
}

// Transmission covers both directions; arrive->enqueue->dispatch is batching.
inline Nanos stage_duration(const RequestRecord& r, Stage s) {
  switch (s) {
    case Stage::preprocess: return r.t_preproc_done - r.t_send;
    case Stage::transmission: return (r.t_arrive_server - r.t_preproc_done) + (r.t_response - r.t_postproc_done);
    case Stage::batching: return r.t_batch_dispatch - r.t_arrive_server;
    case Stage::inference: return r.t_infer_done - r.t_batch_dispatch;
    case Stage::postprocess: return r.t_postproc_done - r.t_infer_done;
  }
  return 0;
}

inline json to_json(const RequestRecord& r) {
  json j = {{"req_id", r.req_id},
            {"scheduled_offset", r.scheduled_offset},
            {"t_send", r.t_send},
            {"t_preproc_done", r.t_preproc_done},
            {"t_arrive_server", r.t_arrive_server},
            {"t_enqueue", r.t_enqueue},
            {"t_batch_dispatch", r.t_batch_dispatch},
            {"t_infer_done", r.t_infer_done},
            {"t_postproc_done", r.t_postproc_done},
            {"t_response", r.t_response},
            {"batch_id", r.batch_id},
            {"batch_size", r.batch_size},
            {"status", r.ok ? "ok" : "failed"}};
  if (!r.ok) j["reason"] = r.fail_reason;
  return j;
}

inline RequestRecord request_record_from_json(const json& j) {
  RequestRecord r;
  r.req_id = j.at("req_id").get<std::uint64_t>();
  r.scheduled_offset = j.at("scheduled_offset").get<Nanos>();
  r.t_send = j.at("t_send").get<Nanos>();
  r.t_preproc_done = j.at("t_preproc_done").get<Nanos>();
  r.t_arrive_server = j.at("t_arrive_server").get<Nanos>();
  r.t_enqueue = j.at("t_enqueue").get<Nanos>();
  r.t_batch_dispatch = j.at("t_batch_dispatch").get<Nanos>();
  r.t_infer_done = j.at("t_infer_done").get<Nanos>();
  r.t_postproc_done = j.at("t_postproc_done").get<Nanos>();
  r.t_response = j.at("t_response").get<Nanos>();
  r.batch_id = j.at("batch_id").get<std::int64_t>();
  r.batch_size = j.at("batch_size").get<std::uint64_t>();
  r.ok = j.at("status").get<std::string>() == "ok";
  r.fail_reason = j.value("reason", "");
  return r;
}

struct ResourceSample {
  double t = 0;            // window end, s from job start
  double utilization = 0;  // [0,1]
  double mem_used = 0;     // bytes

  bool operator==(const ResourceSample&) const = default;
};

struct CloudCost {
  std::string provider_label;
  std::string instance_label;
  double cost_per_req = 0;  // USD

  bool operator==(const CloudCost&) const = default;
};

struct Costs {
  double energy_per_req = 0;  // J
  double co2_per_req = 0;     // g
  std::vector<CloudCost> cloud;

  bool operator==(const Costs&) const = default;
};

// Aggregated result of one job plus everything needed to replay it.
struct PerfRecord {
  std::string job_id;
  std::map<std::string, std::string> labels;
  LatencyDigest e2e;
  std::map<std::string, LatencyDigest> stages;  // keyed by stage name
  std::map<std::string, double> percentiles;    // "p99" -> seconds (e2e)
  std::map<std::string, double> stage_fractions;
  std::uint64_t scheduled_count = 0;
  std::uint64_t ok_count = 0;
  std::uint64_t failed_count = 0;
  double throughput = 0;   // ok / (last response - first send), req/s
  double error_rate = 0;   // failed / scheduled
  double cold_start = 0;   // s
  double wall_time = 0;    // s, throughput window
  double busy_time = 0;    // s of device service (sim only)
  double mean_batch_size = 0;
  double mean_utilization = 0;
  std::vector<ResourceSample> resources;
  std::optional<Costs> costs;
  json env_log = json::object();

  double p99() const { return e2e.empty() ? 0.0 : e2e.percentile(0.99); }

  bool operator==(const PerfRecord& o) const { return to_json_impl() == o.to_json_impl(); }

  json to_json_impl() const;
};

inline std::string percentile_key(double q) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%g", q * 100.0);
  return buf;
}

inline json PerfRecord::to_json_impl() const {
  json st = json::object();
  for (const auto& [k, d] : stages) st[k] = d.to_json();
  json res = json::array();
  for (const auto& r : resources) res.push_back({{"t", r.t}, {"utilization", r.utilization}, {"mem_used", r.mem_used}});
  json j = {{"schema_version", kSchemaVersion},
            {"job_id", job_id},
            {"labels", labels},
            {"e2e", e2e.to_json()},
            {"stages", st},
            {"percentiles", percentiles},
            {"stage_fractions", stage_fractions},
            {"scheduled_count", scheduled_count},
            {"ok_count", ok_count},
            {"failed_count", failed_count},
            {"throughput", throughput},
            {"error_rate", error_rate},
            {"cold_start", cold_start},
            {"wall_time", wall_time},
            {"busy_time", busy_time},
            {"mean_batch_size", mean_batch_size},
            {"mean_utilization", mean_utilization},
            {"resources", res},
            {"env_log", env_log}};
  if (costs) {
    json cloud = json::array();
    for (const auto& c : costs->cloud) {
      cloud.push_back({{"provider_label", c.provider_label}, {"instance_label", c.instance_label}, {"cost_per_req", c.cost_per_req}});
    }
    j["costs"] = {{"energy_per_req", costs->energy_per_req}, {"co2_per_req", costs->co2_per_req}, {"cloud", cloud}};
  } else {
    j["costs"] = nullptr;
  }
  return j;
}

inline json to_json(const PerfRecord& r) { return r.to_json_impl(); }

inline PerfRecord perf_record_from_json(const json& j) {
  PerfRecord r;
  r.job_id = j.at("job_id").get<std::string>();
  r.labels = j.value("labels", std::map<std::string, std::string>{});
  r.e2e = LatencyDigest::from_json(j.at("e2e"));
  for (auto it = j.at("stages").begin(); it != j.at("stages").end(); ++it) {
    r.stages.emplace(it.key(), LatencyDigest::from_json(it.value()));
  }
  r.percentiles = j.at("percentiles").get<std::map<std::string, double>>();
  r.stage_fractions = j.at("stage_fractions").get<std::map<std::string, double>>();
  r.scheduled_count = j.at("scheduled_count").get<std::uint64_t>();
  r.ok_count = j.at("ok_count").get<std::uint64_t>();
  r.failed_count = j.at("failed_count").get<std::uint64_t>();
  r.throughput = j.at("throughput").get<double>();
  r.error_rate = j.at("error_rate").get<double>();
  r.cold_start = j.at("cold_start").get<double>();
  r.wall_time = j.at("wall_time").get<double>();
  r.busy_time = j.at("busy_time").get<double>();
  r.mean_batch_size = j.at("mean_batch_size").get<double>();
  r.mean_utilization = j.at("mean_utilization").get<double>();
  for (const auto& s : j.at("resources")) {
    r.resources.push_back({s.at("t").get<double>(), s.at("utilization").get<double>(), s.at("mem_used").get<double>()});
  }
  if (!j.at("costs").is_null()) {
    Costs c;
    c.energy_per_req = j["costs"].at("energy_per_req").get<double>();
    c.co2_per_req = j["costs"].at("co2_per_req").get<double>();
    for (const auto& o : j["costs"].at("cloud")) {
      c.cloud.push_back({o.at("provider_label").get<std::string>(), o.at("instance_label").get<std::string>(),
                         o.at("cost_per_req").get<double>()});
    }
    r.costs = c;
  }
  r.env_log = j.at("env_log");
  return r;
}

// Hash of the measurement content: everything except the job id and the
// wall-clock timestamps in env_log. Two runs of the same spec and seed on the
// sim backend hash equal.
inline std::string content_hash(const PerfRecord& r) {
  json j = to_json(r);
  j.erase("job_id");
  if (j["env_log"].is_object()) j["env_log"].erase("timestamps");
  return json_hash(j);
}

// Minimum cloud cost per request across offers, if any.
inline std::optional<double> min_cloud_cost(const PerfRecord& r) {
  if (!r.costs || r.costs->cloud.empty()) return std::nullopt;
  double best = r.costs->cloud.front().cost_per_req;
  for (const auto& c : r.costs->cloud) best = std::min(best, c.cost_per_req);
  return best;
}

}  // namespace servebench
