#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "servebench/hardware.hpp"
#include "servebench/model.hpp"
#include "servebench/records.hpp"

namespace servebench {

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Shortest text that parses back to the same double.
inline std::string csv_number(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string csv_row(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += csv_field(cells[i]);
  }
  return out + "\n";
}

// ---------------------------------------------------------------------------
// Metrics over records
// ---------------------------------------------------------------------------
inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"p50",        "p95",          "p99",           "mean_latency",
                                              "throughput", "utilization",  "cost_per_req",  "energy_per_req",
                                              "co2_per_req", "error_rate",  "cold_start"};
  return names;
}

inline bool higher_is_better(const std::string& metric) { return metric == "throughput" || metric == "utilization"; }

inline std::string canonical_metric(const std::string& m) {
  if (m == "cloud_cost_per_req" || m == "cost") return "cost_per_req";
  if (m == "latency_p99") return "p99";
  if (m == "mean_utilization") return "utilization";
  if (std::find(metric_names().begin(), metric_names().end(), m) == metric_names().end()) {
    throw ValidationError("metric", "unknown metric '" + m + "'");
  }
  return m;
}

// nullopt when the record cannot provide the metric (e.g. no cloud offers).
inline std::optional<double> metric_value(const PerfRecord& r, const std::string& metric) {
  const std::string m = canonical_metric(metric);
  if (m == "p50" || m == "p95" || m == "p99") {
    if (r.e2e.empty()) return std::nullopt;
    return r.e2e.percentile(std::stod(m.substr(1)) / 100.0);
  }
  if (m == "mean_latency") return r.e2e.empty() ? std::nullopt : std::optional<double>(r.e2e.mean());
  if (m == "throughput") return r.throughput;
  if (m == "utilization") return r.mean_utilization;
  if (m == "cost_per_req") return min_cloud_cost(r);
  if (m == "energy_per_req") return r.costs ? std::optional<double>(r.costs->energy_per_req) : std::nullopt;
  if (m == "co2_per_req") return r.costs ? std::optional<double>(r.costs->co2_per_req) : std::nullopt;
  if (m == "error_rate") return r.error_rate;
  if (m == "cold_start") return r.cold_start;
  return std::nullopt;
}

// Attributes a record can be grouped or swept by. Generator params come from
// the logged descriptor; run settings from the logged effective spec.
inline std::optional<std::string> record_attribute(const PerfRecord& r, const std::string& name) {
  const json& env = r.env_log;
  auto number = [](const json& v) -> std::optional<std::string> {
    if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<std::int64_t>());
    if (v.is_number()) return csv_number(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    return std::nullopt;
  };
  auto at = [&](std::initializer_list<const char*> path) -> const json* {
    const json* cur = &env;
    for (const char* k : path) {
      if (!cur->is_object() || !cur->contains(k)) return nullptr;
      cur = &(*cur)[k];
    }
    return cur;
  };
  const json* v = nullptr;
  const std::string n = name == "layers" ? "num_layers" : name;
  if (n == "hardware") v = at({"hardware", "id"});
  else if (n == "backend") v = at({"backend", "kind"});
  else if (n == "model") v = at({"model", "model_id"});
  else if (n == "family") v = at({"model", "family"});
  else if (n == "batch" || n == "batch_size") v = at({"spec", "backend", "batching", "batch_size"});
  else if (n == "batching") v = at({"spec", "backend", "batching", "mode"});
  else if (n == "network") v = at({"spec", "backend", "network"});
  else if (n == "precision") v = at({"spec", "backend", "numeric_precision"});
  else if (n == "rate") v = at({"spec", "workload", "rate"});
  else if (n == "concurrency") v = at({"spec", "workload", "concurrency"});
  else if (n == "user") v = at({"spec", "user"});
  else if (n == "num_layers" || n == "width" || n == "seq_len" || n == "precision_bytes") v = at({"model", "params", n.c_str()});
  else if (n == "job_id") return r.job_id;
  else throw ValidationError("attribute", "unknown attribute '" + name + "'");
  if (!v) return std::nullopt;
  if (v->is_object()) return v->contains("kind") ? number((*v)["kind"]) : std::optional<std::string>(v->dump());
  return number(*v);
}

// Numeric-aware ordering for axis values.
inline bool axis_less(const std::string& a, const std::string& b) {
  char* ea = nullptr;
  char* eb = nullptr;
  const double da = std::strtod(a.c_str(), &ea);
  const double db = std::strtod(b.c_str(), &eb);
  const bool na = !a.empty() && *ea == '\0';
  const bool nb = !b.empty() && *eb == '\0';
  if (na && nb) return da < db || (da == db && a < b);
  if (na != nb) return na;
  return a < b;
}

// ---------------------------------------------------------------------------
// Roofline
// ---------------------------------------------------------------------------
enum class Bound { memory, compute };

inline const char* to_string(Bound b) { return b == Bound::memory ? "memory" : "compute"; }

struct Roof {
  double peak = 0;       // FLOP/s
  double bandwidth = 0;  // bytes/s

  double attainable(double intensity) const { return std::min(peak, bandwidth * intensity); }
  double ridge() const { return peak / bandwidth; }
  Bound classify(double intensity) const { return intensity < ridge() ? Bound::memory : Bound::compute; }
};

inline Roof hardware_roof(const HardwareProfile& h, Precision p = Precision::fp32) { return {h.peak_flops(p), h.mem_bandwidth}; }

inline double roofline_attainable(const HardwareProfile& h, double intensity, Precision p = Precision::fp32) {
  if (!(intensity > 0)) throw ValidationError("intensity", "must be > 0");
  return hardware_roof(h, p).attainable(intensity);
}

inline Bound roofline_bound(const HardwareProfile& h, double intensity, Precision p = Precision::fp32) {
  return hardware_roof(h, p).classify(intensity);
}

struct RooflinePoint {
  std::string label;
  double batch = 0;
  double intensity = 0;
  double achieved = 0;
  Bound bound = Bound::memory;
  bool valid = true;  // achieved within the hardware peak roof
};

struct RooflineReport {
  std::vector<RooflinePoint> points;
  std::vector<std::string> warnings;
};

// Which roof classifies a point: the nominal hardware peak, or (for sim
// records) the efficiency-scaled roof the simulator executes against.
enum class RoofKind { peak, effective };

inline std::optional<Roof> record_roof(const PerfRecord& r, RoofKind kind) {
  const json& env = r.env_log;
  if (!env.contains("hardware") || !env["hardware"].is_object()) return std::nullopt;
  const HardwareProfile h = hardware_from_json(env["hardware"], "env_log.hardware");
  Precision p = Precision::fp32;
  if (env.contains("spec")) p = parse_precision(env["spec"]["backend"].value("numeric_precision", "fp32"), "precision");
  Roof roof = hardware_roof(h, p);
  if (kind == RoofKind::effective && env["backend"].contains("sim")) {
    roof.peak *= env["backend"]["sim"].value("compute_efficiency", 1.0);
    roof.bandwidth *= env["backend"]["sim"].value("mem_efficiency", 1.0);
  }
  return roof;
}

// Intensity uses the realized mean batch size; achieved FLOP/s uses device
// busy time so idle gaps between batches do not deflate the point.
inline RooflineReport roofline_points(const std::vector<PerfRecord>& records, RoofKind kind = RoofKind::effective) {
  RooflineReport out;
  for (const auto& r : records) {
    const json& env = r.env_log;
    if (!env.contains("model") || !env.contains("model_hash")) {
      out.warnings.push_back(r.job_id + ": no model descriptor logged, skipped");
      continue;
    }
    const ModelDescriptor m = descriptor_from_json(env["model"], "env_log.model");
    if (descriptor_hash(m) != env["model_hash"].get<std::string>()) {
      out.warnings.push_back(r.job_id + ": model descriptor hash mismatch, skipped");
      continue;
    }
    if (!(r.busy_time > 0) || r.ok_count == 0) {
      out.warnings.push_back(r.job_id + ": no device busy time recorded, skipped");
      continue;
    }
    RooflinePoint p;
    p.label = r.job_id;
    p.batch = r.mean_batch_size;
    p.intensity = m.intensity(r.mean_batch_size);
    p.achieved = static_cast<double>(m.flops_per_sample) * static_cast<double>(r.ok_count) / r.busy_time;
    if (const auto roof = record_roof(r, kind)) {
      p.bound = roof->classify(p.intensity);
      const auto peak = record_roof(r, RoofKind::peak);
      p.valid = p.achieved <= peak->attainable(p.intensity) * (1 + 1e-9);
      if (!p.valid) out.warnings.push_back(r.job_id + ": achieved FLOP/s above the roofline, invalid measurement");
    }
    out.points.push_back(p);
  }
  return out;
}

inline std::string roofline_csv(const RooflineReport& rep) {
  std::string out = csv_row({"label", "batch", "intensity", "achieved_flops", "bound", "valid"});
  for (const auto& p : rep.points) {
    out += csv_row({p.label, csv_number(p.batch), csv_number(p.intensity), csv_number(p.achieved), to_string(p.bound),
                    p.valid ? "1" : "0"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heat maps
// ---------------------------------------------------------------------------
struct HeatGrid {
  std::string axis1;
  std::vector<std::string> values1;
  std::string axis2;
  std::vector<std::string> values2;
  std::string metric;
  std::vector<std::vector<double>> matrix;  // [i1][i2]
};

// Axis value lists default to the observed values. When several records land
// in one cell the one with the greatest job id wins.
inline HeatGrid build_heatgrid(const std::vector<PerfRecord>& records, const std::string& axis1,
                               const std::string& axis2, const std::string& metric,
                               std::vector<std::string> values1 = {}, std::vector<std::string> values2 = {}) {
  const std::string m = canonical_metric(metric);
  std::map<std::pair<std::string, std::string>, const PerfRecord*> cells;
  std::set<std::string> seen1, seen2;
  for (const auto& r : records) {
    const auto a = record_attribute(r, axis1);
    const auto b = record_attribute(r, axis2);
    if (!a || !b) continue;
    seen1.insert(*a);
    seen2.insert(*b);
    auto& slot = cells[{*a, *b}];
    if (!slot || slot->job_id < r.job_id) slot = &r;
  }
  auto fill = [](std::vector<std::string>& vals, const std::set<std::string>& seen) {
    if (vals.empty()) vals.assign(seen.begin(), seen.end());
    std::sort(vals.begin(), vals.end(), axis_less);
  };
  fill(values1, seen1);
  fill(values2, seen2);
  if (values1.empty() || values2.empty()) throw ValidationError("heatmap", "no records carry both axes");
  HeatGrid g{axis1, values1, axis2, values2, m, {}};
  std::vector<std::string> missing;
  for (const auto& v1 : values1) {
    std::vector<double> row;
    for (const auto& v2 : values2) {
      auto it = cells.find({v1, v2});
      std::optional<double> v;
      if (it != cells.end()) v = metric_value(*it->second, m);
      if (!v) {
        missing.push_back("(" + axis1 + "=" + v1 + ", " + axis2 + "=" + v2 + ")");
        row.push_back(0);
      } else {
        row.push_back(*v);
      }
    }
    g.matrix.push_back(std::move(row));
  }
  if (!missing.empty()) {
    std::string msg = "incomplete sweep, missing cells:";
    for (const auto& c : missing) msg += " " + c;
    throw ValidationError("heatmap", msg);
  }
  return g;
}

inline std::string heatgrid_csv(const HeatGrid& g) {
  std::vector<std::string> header{g.axis1 + "\\" + g.axis2};
  header.insert(header.end(), g.values2.begin(), g.values2.end());
  std::string out = csv_row(header);
  for (std::size_t i = 0; i < g.values1.size(); ++i) {
    std::vector<std::string> row{g.values1[i]};
    for (double v : g.matrix[i]) row.push_back(csv_number(v));
    out += csv_row(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recommender
// ---------------------------------------------------------------------------
struct Recommendation {
  std::vector<const PerfRecord*> top;
  std::optional<std::string> nearest_miss_job;  // set when nothing meets the SLO
  std::optional<double> nearest_miss_p99;
};

// Keeps records with p99 <= latency_p99 (and within budget when given),
// ranks by `rank_by`, ties by lower p99 then job id, returns at most `k`.
inline Recommendation recommend(const std::vector<PerfRecord>& records, double latency_p99,
                                const std::string& rank_by = "cost_per_req",
                                std::optional<double> budget_per_1k = std::nullopt, std::size_t k = 3) {
  const std::string m = canonical_metric(rank_by);
  struct Candidate {
    const PerfRecord* r;
    double value;
    double p99;
  };
  std::vector<Candidate> ok;
  Recommendation out;
  for (const auto& r : records) {
    if (r.e2e.empty()) continue;
    const double p99 = r.p99();
    if (!out.nearest_miss_p99 || p99 < *out.nearest_miss_p99 ||
        (p99 == *out.nearest_miss_p99 && r.job_id < *out.nearest_miss_job)) {
      out.nearest_miss_p99 = p99;
      out.nearest_miss_job = r.job_id;
    }
    if (p99 > latency_p99) continue;
    if (budget_per_1k) {
      const auto c = min_cloud_cost(r);
      if (!c || *c * 1000.0 > *budget_per_1k) continue;
    }
    const auto v = metric_value(r, m);
    if (!v) continue;
    ok.push_back({&r, *v, p99});
  }
  const bool desc = higher_is_better(m);
  std::sort(ok.begin(), ok.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.value != b.value) return desc ? a.value > b.value : a.value < b.value;
    if (a.p99 != b.p99) return a.p99 < b.p99;
    return a.r->job_id < b.r->job_id;
  });
  for (std::size_t i = 0; i < ok.size() && i < k; ++i) out.top.push_back(ok[i].r);
  if (!out.top.empty()) {
    out.nearest_miss_job.reset();
    out.nearest_miss_p99.reset();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Leaderboard and plot data
// ---------------------------------------------------------------------------
struct LeaderboardRow {
  std::string group;
  std::string job_id;
  double value = 0;
};

// Best record per group by `sort_metric`, groups ordered best first.
inline std::vector<LeaderboardRow> leaderboard(const std::vector<PerfRecord>& records, const std::string& group_by,
                                               const std::string& sort_metric) {
  const std::string m = canonical_metric(sort_metric);
  const bool desc = higher_is_better(m);
  auto better = [&](double a, double b) { return desc ? a > b : a < b; };
  std::map<std::string, LeaderboardRow> best;
  for (const auto& r : records) {
    const auto g = record_attribute(r, group_by);
    const auto v = metric_value(r, m);
    if (!g || !v) continue;
    auto it = best.find(*g);
    if (it == best.end() || better(*v, it->second.value) ||
        (*v == it->second.value && r.job_id < it->second.job_id)) {
      best[*g] = {*g, r.job_id, *v};
    }
  }
  std::vector<LeaderboardRow> rows;
  for (auto& [_, row] : best) rows.push_back(row);
  std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    if (a.value != b.value) return better(a.value, b.value);
    return a.group < b.group;
  });
  return rows;
}

inline std::string leaderboard_csv(const std::vector<LeaderboardRow>& rows, const std::string& group_by,
                                   const std::string& metric) {
  std::string out = csv_row({"rank", group_by, "job_id", metric});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += csv_row({std::to_string(i + 1), rows[i].group, rows[i].job_id, csv_number(rows[i].value)});
  }
  return out;
}

// Empirical CDF: n rows (value, i/n), i = 1..n. Needs an exact digest.
inline std::string cdf_csv(const LatencyDigest& d) {
  if (d.mode() != LatencyDigest::Mode::exact) throw ValidationError("digest", "CDF needs an exact digest");
  std::string out = csv_row({"latency", "fraction"});
  const auto& s = d.sorted_samples();
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += csv_row({csv_number(s[i]), csv_number(static_cast<double>(i + 1) / static_cast<double>(s.size()))});
  }
  return out;
}

// Histogram density in place of a rendered KDE.
inline std::string density_csv(const LatencyDigest& d, std::size_t bins = 50) {
  std::string out = csv_row({"bin_lo", "bin_hi", "density"});
  if (d.mode() != LatencyDigest::Mode::exact || d.empty()) return out;
  const auto& s = d.sorted_samples();
  const double lo = s.front(), hi = s.back();
  const double w = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  std::vector<std::size_t> counts(bins, 0);
  for (double v : s) counts[std::min(bins - 1, static_cast<std::size_t>((v - lo) / w))]++;
  for (std::size_t i = 0; i < bins; ++i) {
    const double density = static_cast<double>(counts[i]) / (static_cast<double>(s.size()) * w);
    out += csv_row({csv_number(lo + w * static_cast<double>(i)), csv_number(lo + w * static_cast<double>(i + 1)),
                    csv_number(density)});
  }
  return out;
}

inline std::string bars_csv(const std::vector<PerfRecord>& records, const std::string& label_by,
                            const std::string& metric) {
  std::string out = csv_row({label_by, "job_id", metric});
  for (const auto& r : records) {
    const auto v = metric_value(r, metric);
    if (!v) continue;
    out += csv_row({record_attribute(r, label_by).value_or(""), r.job_id, csv_number(*v)});
  }
  return out;
}

struct SpeedupRow {
  std::string job_id;
  double latency = 0;
  double speedup = 0;  // baseline latency / record latency
};

inline std::vector<SpeedupRow> speedup_table(const PerfRecord& baseline, const std::vector<PerfRecord>& records,
                                             const std::string& latency_metric = "p99") {
  const auto base = metric_value(baseline, latency_metric);
  if (!base) throw ValidationError("baseline", "baseline record has no " + latency_metric);
  std::vector<SpeedupRow> rows;
  for (const auto& r : records) {
    const auto v = metric_value(r, latency_metric);
    if (!v || !(*v > 0)) continue;
    rows.push_back({r.job_id, *v, *base / *v});
  }
  return rows;
}

inline std::string speedup_csv(const std::vector<SpeedupRow>& rows, const std::string& baseline_id) {
  std::string out = csv_row({"job_id", "latency", "baseline", "speedup"});
  for (const auto& r : rows) out += csv_row({r.job_id, csv_number(r.latency), baseline_id, csv_number(r.speedup)});
  return out;
}

}  // namespace servebench
