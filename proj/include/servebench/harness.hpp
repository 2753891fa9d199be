#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <queue>
#include <set>
#include <thread>
#include <vector>

#include "servebench/backend.hpp"
#include "servebench/http_backend.hpp"
#include "servebench/job_spec.hpp"
#include "servebench/records.hpp"
#include "servebench/workload.hpp"

namespace servebench {

// ---------------------------------------------------------------------------
// Pre/post processors. Durations are configurable constants; real processors
// would plug in here.
// ---------------------------------------------------------------------------
inline double processor_default_duration(const std::string& name) {
  if (name == "byte_resize") return 2e-3;
  if (name == "tokenize") return 1e-3;
  if (name == "label_lookup") return 1e-4;
  return 0.0;
}

inline double processor_duration(const ProcessorRef& p) { return p.duration.value_or(processor_default_duration(p.name)); }

// ---------------------------------------------------------------------------
// Job resolution
// ---------------------------------------------------------------------------
struct ResolvedJob {
  JobSpec spec;
  ModelDescriptor model;
  std::optional<HardwareProfile> hardware;
};

inline ResolvedJob resolve_job(const JobSpec& spec, const HardwareCatalog& catalog) {
  ResolvedJob r{spec, resolve_model(spec.model), std::nullopt};
  if (!spec.backend.hardware_id.empty()) r.hardware = catalog.at(spec.backend.hardware_id);
  return r;
}

inline std::unique_ptr<ServingBackend> make_backend(const ResolvedJob& job) {
  if (job.spec.backend.kind == BackendKind::sim) {
    return std::make_unique<SimBackend>(make_sim_config(job.spec.backend, *job.hardware, job.model));
  }
  return std::make_unique<HttpBackend>(job.spec.backend.endpoint, job.spec.backend.http.timeout);
}

// ---------------------------------------------------------------------------
// Stage breakdown and costs
// ---------------------------------------------------------------------------
struct StageBreakdown {
  std::map<std::string, LatencyDigest> digests;
  std::map<std::string, double> fractions;  // of mean e2e; sums to 1
};

inline StageBreakdown stage_breakdown(std::span<const RequestRecord> records,
                                      LatencyDigest::Mode mode = LatencyDigest::Mode::exact) {
  StageBreakdown out;
  std::map<std::string, Nanos> sums;
  Nanos total = 0;
  for (Stage s : kStages) out.digests.emplace(to_string(s), LatencyDigest(mode));
  for (const auto& r : records) {
    if (!r.ok) continue;
    for (Stage s : kStages) {
      const Nanos d = stage_duration(r, s);
      out.digests.at(to_string(s)).record(to_seconds(d));
      sums[to_string(s)] += d;
    }
    total += r.e2e();
  }
  for (Stage s : kStages) {
    out.fractions[to_string(s)] = total > 0 ? static_cast<double>(sums[to_string(s)]) / static_cast<double>(total) : 0.0;
  }
  return out;
}

// energy/request = tdp * mean_utilization * wall_time / n;
// co2/request = energy in kWh * carbon intensity;
// cloud cost/request = hourly_rate / (throughput * 3600).
// Hardware without cloud offers yields an empty cloud list, never zeros.
inline Costs compute_costs(const PerfRecord& r, const HardwareProfile& h, double carbon_intensity) {
  if (!(r.throughput > 0)) throw ValidationError("throughput", "must be > 0 to compute costs");
  Costs c;
  const double n = static_cast<double>(r.ok_count);
  const double mean_power = h.tdp_power * r.mean_utilization;
  c.energy_per_req = n > 0 ? mean_power * r.wall_time / n : 0.0;
  c.co2_per_req = c.energy_per_req / 3.6e6 * carbon_intensity;
  for (const auto& o : h.cloud_offers) {
    c.cloud.push_back({o.provider_label, o.instance_label, o.hourly_rate / (r.throughput * 3600.0)});
  }
  return c;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------
struct JobRun {
  PerfRecord record;
  std::vector<RequestRecord> requests;
};

namespace detail {

struct PayloadSizes {
  const WorkloadSpec& w;
  std::vector<std::filesystem::path> files;
  explicit PayloadSizes(const WorkloadSpec& ws) : w(ws) {
    if (!w.payload.dataset_dir.empty()) files = dataset_files(w.payload.dataset_dir);
  }
  std::uint64_t operator()(std::uint64_t i) const { return payload_size(w, files, i); }
};

// Discrete-event execution against a virtual-time backend. Same inputs give
// bit-identical records.
class VirtualRun {
 public:
  VirtualRun(const ResolvedJob& job, ServingBackend& backend)
      : job_(job),
        w_(job.spec.workload),
        backend_(backend),
        batcher_(job.spec.backend.batching),
        sizes_(w_),
        pre_(to_nanos(processor_duration(job.spec.processors.pre))),
        post_(to_nanos(processor_duration(job.spec.processors.post))) {}

  std::vector<RequestRecord> run() {
    const ArrivalSchedule sched = gen_arrivals(w_);
    if (w_.open_loop()) {
      scheduled_total_ = sched.offsets.size();
      records_.resize(sched.offsets.size());
      for (std::uint64_t i = 0; i < sched.offsets.size(); ++i) {
        records_[i].req_id = i;
        records_[i].scheduled_offset = to_nanos(sched.offsets[i]);
        push(records_[i].scheduled_offset, Kind::send, i);
      }
    } else {
      for (std::size_t k = 0; k < sched.offsets.size(); ++k) new_closed_loop_send(0);
    }
    while (!events_.empty()) {
      const Nanos now = events_.top().t;
      while (!events_.empty() && events_.top().t == now) {
        const Event e = events_.top();
        events_.pop();
        handle(e);
      }
      try_dispatch(now);
    }
    return std::move(records_);
  }

 private:
  enum class Kind { send, arrive, response, device_free, timer };
  struct Event {
    Nanos t;
    std::uint64_t seq;
    Kind kind;
    std::uint64_t req;
    bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };

  void push(Nanos t, Kind k, std::uint64_t req = 0) { events_.push({t, seq_++, k, req}); }

  bool closed_loop_can_send(Nanos now) const {
    if (w_.num_requests && records_.size() >= *w_.num_requests) return false;
    if (w_.duration && to_seconds(now) >= *w_.duration) return false;
    return true;
  }

  void new_closed_loop_send(Nanos now) {
    RequestRecord r;
    r.req_id = records_.size();
    r.scheduled_offset = now;
    records_.push_back(r);
    push(now, Kind::send, r.req_id);
  }

  void handle(const Event& e) {
    switch (e.kind) {
      case Kind::send: {
        auto& r = records_[e.req];
        r.t_send = e.t;
        r.t_preproc_done = e.t + pre_;
        r.t_arrive_server = r.t_preproc_done + to_nanos(one_way_delay(sizes_(e.req), job_.spec.backend.network));
        ++in_transit_;
        ++sent_;
        push(r.t_arrive_server, Kind::arrive, e.req);
        break;
      }
      case Kind::arrive: {
        auto& r = records_[e.req];
        r.t_enqueue = e.t;
        --in_transit_;
        batcher_.enqueue(e.req, e.t);
        break;
      }
      case Kind::response: {
        --outstanding_;
        if (!w_.open_loop() && closed_loop_can_send(e.t)) new_closed_loop_send(e.t);
        break;
      }
      case Kind::device_free:
      case Kind::timer: break;
    }
  }

  bool no_more_arrivals() const {
    if (in_transit_ > 0) return false;
    if (w_.open_loop()) return sent_ >= scheduled_total_;
    if (outstanding_ == 0) return true;
    return w_.num_requests && records_.size() >= *w_.num_requests;
  }

  void try_dispatch(Nanos now) {
    while (device_free_ <= now && batcher_.ready(now, no_more_arrivals())) {
      const auto members = batcher_.take();
      std::vector<InferRequest> reqs;
      reqs.reserve(members.size());
      for (auto id : members) reqs.push_back({id, {}, sizes_(id)});
      const auto outcomes = backend_.infer(reqs, now);
      const Nanos down = to_nanos(one_way_delay(job_.spec.backend.sim.response_bytes, job_.spec.backend.network));
      Nanos done = now;
      for (std::size_t k = 0; k < members.size(); ++k) {
        auto& r = records_[members[k]];
        r.t_batch_dispatch = now;
        r.t_infer_done = now + outcomes[k].elapsed;
        r.t_postproc_done = r.t_infer_done + post_;
        r.t_response = r.t_postproc_done + down;
        r.batch_id = batch_id_;
        r.batch_size = members.size();
        r.ok = outcomes[k].ok;
        r.fail_reason = outcomes[k].reason;
        done = std::max(done, r.t_infer_done);
        ++outstanding_;
        push(r.t_response, Kind::response, members[k]);
      }
      ++batch_id_;
      device_free_ = done;
      push(done, Kind::device_free);
    }
    if (const auto dl = batcher_.deadline(); dl && *dl > now && *dl != timer_at_) {
      timer_at_ = *dl;
      push(*dl, Kind::timer);
    }
  }

  const ResolvedJob& job_;
  const WorkloadSpec& w_;
  ServingBackend& backend_;
  Batcher batcher_;
  PayloadSizes sizes_;
  Nanos pre_;
  Nanos post_;
  std::vector<RequestRecord> records_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t seq_ = 0;
  std::uint64_t scheduled_total_ = 0;
  std::uint64_t sent_ = 0;
  std::uint64_t in_transit_ = 0;
  std::uint64_t outstanding_ = 0;
  std::int64_t batch_id_ = 0;
  Nanos device_free_ = 0;
  Nanos timer_at_ = -1;
};

// Wall-clock execution. A coordinator releases open-loop sends at their
// offsets to a pool of sender threads and never waits on responses; closed
// loop runs `concurrency` senders back to back. The whole client-observed
// round trip lands in the transmission stage.
inline std::vector<RequestRecord> run_wall_clock(const ResolvedJob& job, ServingBackend& backend) {
  using clock = std::chrono::steady_clock;
  const WorkloadSpec& w = job.spec.workload;
  const auto epoch = clock::now();
  auto since = [&](clock::time_point t) { return std::chrono::duration_cast<std::chrono::nanoseconds>(t - epoch).count(); };

  std::vector<RequestRecord> records;
  std::mutex rec_mu;

  auto execute = [&](RequestRecord& r) {
    const Payload p = gen_payload(w, r.req_id);
    r.t_send = since(clock::now());
    const InferRequest req{r.req_id, p.bytes, p.bytes.size()};
    const auto out = backend.infer(std::span<const InferRequest>(&req, 1), r.t_send);
    const Nanos end = std::max(since(clock::now()), r.t_send);
    r.t_preproc_done = r.t_arrive_server = r.t_enqueue = r.t_batch_dispatch = r.t_infer_done = r.t_postproc_done = r.t_send;
    r.t_response = end;
    r.batch_id = static_cast<std::int64_t>(r.req_id);
    r.batch_size = 1;
    r.ok = out.front().ok;
    r.fail_reason = out.front().reason;
  };

  if (w.open_loop()) {
    const ArrivalSchedule sched = gen_arrivals(w);
    records.resize(sched.offsets.size());
    std::queue<std::size_t> ready;
    std::mutex mu;
    std::condition_variable cv;
    bool closing = false;
    const std::size_t n_threads = std::max<std::size_t>(
        1, std::min<std::size_t>(job.spec.backend.http.max_senders, sched.offsets.size()));
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t i;
          {
            std::unique_lock lock(mu);
            cv.wait(lock, [&] { return closing || !ready.empty(); });
            if (ready.empty()) return;
            i = ready.front();
            ready.pop();
          }
          execute(records[i]);
        }
      });
    }
    for (std::size_t i = 0; i < sched.offsets.size(); ++i) {
      records[i].req_id = i;
      records[i].scheduled_offset = to_nanos(sched.offsets[i]);
      std::this_thread::sleep_until(epoch + std::chrono::nanoseconds(records[i].scheduled_offset));
      {
        std::lock_guard lock(mu);
        ready.push(i);
      }
      cv.notify_one();
    }
    {
      std::lock_guard lock(mu);
      closing = true;
    }
    cv.notify_all();
    pool.clear();
  } else {
    std::atomic<std::uint64_t> next{0};
    const auto deadline = epoch + std::chrono::nanoseconds(to_nanos(w.duration.value_or(0)));
    std::vector<std::jthread> senders;
    for (std::uint64_t k = 0; k < w.concurrency; ++k) {
      senders.emplace_back([&] {
        while (true) {
          if (w.duration && clock::now() >= deadline) return;
          const std::uint64_t i = next.fetch_add(1);
          if (w.num_requests && i >= *w.num_requests) return;
          RequestRecord r;
          r.req_id = i;
          r.scheduled_offset = since(clock::now());
          execute(r);
          std::lock_guard lock(rec_mu);
          records.push_back(std::move(r));
        }
      });
    }
    senders.clear();
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.req_id < b.req_id; });
  }
  return records;
}

}  // namespace detail

inline json sim_config_json(const BackendSpec& b) {
  return {{"profile", to_string(b.sim.profile)},
          {"compute_efficiency", b.sim.compute_efficiency},
          {"mem_efficiency", b.sim.mem_efficiency},
          {"fixed_overhead", b.sim.fixed_overhead},
          {"base_start", b.sim.base_start},
          {"load_bandwidth", b.sim.load_bandwidth},
          {"response_bytes", b.sim.response_bytes}};
}

inline json build_env_log(const ResolvedJob& job, const ServingBackend& backend) {
  const JobSpec& s = job.spec;
  json env = {
      {"hardware", job.hardware ? to_json(*job.hardware) : json(nullptr)},
      {"hardware_hash", job.hardware ? json_hash(to_json(*job.hardware)) : ""},
      {"backend", {{"kind", backend.kind()}, {"version", backend.version()}}},
      {"model", to_json(job.model)},
      {"model_hash", descriptor_hash(job.model)},
      {"spec", to_json(s)},
      {"seeds", {{"job", s.seed}, {"workload", s.workload.seed}}},
      {"prng", kPrngName},
      {"software", {{"servebench", kVersion}, {"compiler", __VERSION__}, {"cplusplus", __cplusplus}}},
      {"effective",
       {{"warmup", s.collect.warmup},
        {"preprocess_duration", processor_duration(s.processors.pre)},
        {"postprocess_duration", processor_duration(s.processors.post)},
        {"network", {{"kind", to_string(s.backend.network.kind)}, {"rtt", s.backend.network.rtt}, {"bandwidth", s.backend.network.bandwidth}}},
        {"digest", s.collect.digest == DigestKind::exact ? "exact" : "histogram"},
        {"throughput_definition", "ok_count / (last t_response - first t_send)"}}},
  };
  if (s.backend.kind == BackendKind::sim) env["backend"]["sim"] = sim_config_json(s.backend);
  return env;
}

// Builds the aggregated record from raw request records.
inline PerfRecord aggregate(const ResolvedJob& job, std::span<const RequestRecord> requests) {
  const JobSpec& s = job.spec;
  const auto mode = s.collect.digest == DigestKind::exact ? LatencyDigest::Mode::exact : LatencyDigest::Mode::histogram;
  PerfRecord rec;
  rec.e2e = LatencyDigest(mode);
  rec.scheduled_count = requests.size();
  const Nanos warmup = to_nanos(s.collect.warmup);
  std::vector<RequestRecord> kept;
  std::set<std::int64_t> batches;
  for (const auto& r : requests) {
    if (r.ok) {
      ++rec.ok_count;
    } else {
      ++rec.failed_count;
    }
    if (r.ok && r.t_send >= warmup) {
      kept.push_back(r);
      batches.insert(r.batch_id);
    }
  }
  rec.error_rate = rec.scheduled_count ? static_cast<double>(rec.failed_count) / static_cast<double>(rec.scheduled_count) : 0.0;
  for (const auto& r : kept) rec.e2e.record(to_seconds(r.e2e()));
  if (!kept.empty()) {
    Nanos first = kept.front().t_send, last = kept.front().t_response;
    for (const auto& r : kept) {
      first = std::min(first, r.t_send);
      last = std::max(last, r.t_response);
    }
    rec.wall_time = to_seconds(last - first);
    rec.throughput = rec.wall_time > 0 ? static_cast<double>(kept.size()) / rec.wall_time : 0.0;
    rec.mean_batch_size = static_cast<double>(kept.size()) / static_cast<double>(batches.size());
    for (double q : s.collect.percentiles) rec.percentiles[percentile_key(q)] = rec.e2e.percentile(q);
    if (s.collect.stages) {
      auto sb = stage_breakdown(kept, mode);
      rec.stages = std::move(sb.digests);
      rec.stage_fractions = std::move(sb.fractions);
    }
  }
  return rec;
}

// Runs one job end to end. Throws BackendError if the backend fails to
// start; per-request failures are counted, not thrown.
inline JobRun run_job(const ResolvedJob& job, ServingBackend& backend) {
  const std::string started = utc_timestamp();
  const double cold = backend.start();
  std::vector<RequestRecord> requests =
      backend.virtual_time() ? detail::VirtualRun(job, backend).run() : detail::run_wall_clock(job, backend);
  backend.stop();

  PerfRecord rec = aggregate(job, requests);
  rec.cold_start = cold;
  rec.env_log = build_env_log(job, backend);
  rec.env_log["timestamps"] = {{"started", started}, {"finished", utc_timestamp()}};

  if (auto* sim = dynamic_cast<SimBackend*>(&backend)) {
    const auto busy = sim->busy_intervals();
    rec.busy_time = sim->busy_seconds();
    Nanos horizon = 0;
    for (const auto& r : requests) horizon = std::max(horizon, r.t_response);
    if (job.spec.collect.resources) {
      rec.resources = sim_resource_sampler(busy, job.model, job.hardware->mem_capacity,
                                           job.spec.collect.resource_sample_interval, to_seconds(horizon));
    }
    if (rec.wall_time > 0) {
      Nanos first = std::numeric_limits<Nanos>::max(), last = 0;
      for (const auto& r : requests) {
        if (!r.ok || r.t_send < to_nanos(job.spec.collect.warmup)) continue;
        first = std::min(first, r.t_send);
        last = std::max(last, r.t_response);
      }
      rec.mean_utilization = std::clamp(busy_within(busy, first, last) / rec.wall_time, 0.0, 1.0);
    }
  }
  if (job.hardware && rec.throughput > 0) rec.costs = compute_costs(rec, *job.hardware, job.spec.carbon_intensity);
  return {std::move(rec), std::move(requests)};
}

inline JobRun run_job(const JobSpec& spec, const HardwareCatalog& catalog = HardwareCatalog{}) {
  const ResolvedJob job = resolve_job(spec, catalog);
  auto backend = make_backend(job);
  return run_job(job, *backend);
}

// Raw per-request records, one JSON object per line.
inline std::string records_jsonl(std::span<const RequestRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replay: re-executes a sim-backend job from its env_log.
// ---------------------------------------------------------------------------
struct ReplayResult {
  PerfRecord replayed;
  bool identical = false;
  std::vector<std::string> mismatches;
};

inline ResolvedJob job_from_env_log(const json& env) {
  if (!env.contains("spec") || !env.contains("model")) throw ValidationError("env_log", "missing spec or model");
  if (env["hardware"].is_null()) throw ValidationError("env_log.hardware", "replay needs a sim-backend record");
  const HardwareProfile hw = hardware_from_json(env["hardware"], "env_log.hardware");
  std::vector<HardwareProfile> profiles = bundled_hardware();
  std::erase_if(profiles, [&](const auto& h) { return h.id == hw.id; });
  profiles.push_back(hw);
  const HardwareCatalog catalog(std::move(profiles));
  json spec_doc = env["spec"];
  spec_doc["model"] = {{"descriptor", env["model"]}};
  JobSpec spec = parse_job_spec(spec_doc.dump(), catalog);
  if (spec.backend.kind != BackendKind::sim) throw ValidationError("env_log.spec.backend.kind", "replay supports sim only");
  return resolve_job(spec, catalog);
}

inline ReplayResult replay(const PerfRecord& original) {
  const ResolvedJob job = job_from_env_log(original.env_log);
  auto backend = make_backend(job);
  ReplayResult out;
  out.replayed = run_job(job, *backend).record;
  if (!(out.replayed.e2e == original.e2e)) out.mismatches.push_back("e2e");
  for (const auto& [name, d] : original.stages) {
    auto it = out.replayed.stages.find(name);
    if (it == out.replayed.stages.end() || !(it->second == d)) out.mismatches.push_back(name);
  }
  if (out.replayed.stages.size() != original.stages.size()) out.mismatches.push_back("stage set");
  out.identical = out.mismatches.empty();
  return out;
}

}  // namespace servebench
