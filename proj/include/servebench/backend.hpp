#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "servebench/common.hpp"
#include "servebench/hardware.hpp"
#include "servebench/job_spec.hpp"
#include "servebench/model.hpp"
#include "servebench/records.hpp"

namespace servebench {

// ---------------------------------------------------------------------------
// Roofline-consistent latency law.
// ---------------------------------------------------------------------------
struct SimBackendConfig {
  HardwareProfile hardware;
  ModelDescriptor model;
  BatchingSpec batching;
  Precision precision = Precision::fp32;
  double compute_efficiency = 0.6;
  double mem_efficiency = 0.75;
  double fixed_overhead = 0.5e-3;
  double base_start = 0.5;
  double load_bandwidth = 1e9;
  NetworkSpec network = network_preset(NetworkKind::lan);
  std::uint64_t response_bytes = 256;
};

inline SimBackendConfig make_sim_config(const BackendSpec& b, const HardwareProfile& h, const ModelDescriptor& m) {
  SimBackendConfig c;
  c.hardware = h;
  c.model = m;
  c.batching = b.batching;
  c.precision = b.numeric_precision;
  c.compute_efficiency = b.sim.compute_efficiency;
  c.mem_efficiency = b.sim.mem_efficiency;
  c.fixed_overhead = b.sim.fixed_overhead;
  c.base_start = b.sim.base_start;
  c.load_bandwidth = b.sim.load_bandwidth;
  c.network = b.network;
  c.response_bytes = b.sim.response_bytes;
  return c;
}

struct LatencyTerms {
  double compute = 0;  // s
  double memory = 0;   // s
  double total = 0;    // s, overhead + max(compute, memory)
  bool compute_bound() const { return compute >= memory; }
};

inline LatencyTerms sim_latency_terms(const ModelDescriptor& m, const HardwareProfile& h, std::uint64_t batch,
                                      const SimBackendConfig& cfg) {
  if (batch < 1) throw ValidationError("batch", "must be >= 1");
  const double b = static_cast<double>(batch);
  LatencyTerms t;
  t.compute = b * static_cast<double>(m.flops_per_sample) / (cfg.compute_efficiency * h.peak_flops(cfg.precision));
  t.memory = (static_cast<double>(m.weight_bytes) + b * static_cast<double>(m.activation_bytes_per_sample)) /
             (cfg.mem_efficiency * h.mem_bandwidth);
  t.total = cfg.fixed_overhead + std::max(t.compute, t.memory);
  return t;
}

inline double sim_infer_latency(const ModelDescriptor& m, const HardwareProfile& h, std::uint64_t batch,
                                const SimBackendConfig& cfg) {
  if (static_cast<double>(m.weight_bytes) > h.mem_capacity) {
    throw BackendError("model weights (" + std::to_string(m.weight_bytes) + " B) exceed device memory on " + h.id);
  }
  return sim_latency_terms(m, h, batch, cfg).total;
}

// Batch size where the compute term overtakes the memory term:
// b*f/(ec*P) = (W + b*a)/(em*B)  =>  b* = W / (f*em*B/(ec*P) - a).
// Returns nullopt when the model stays memory-bound for every batch.
inline std::optional<double> crossover_batch(const ModelDescriptor& m, const HardwareProfile& h,
                                             const SimBackendConfig& cfg) {
  const double f = static_cast<double>(m.flops_per_sample);
  const double a = static_cast<double>(m.activation_bytes_per_sample);
  const double W = static_cast<double>(m.weight_bytes);
  const double denom = f * cfg.mem_efficiency * h.mem_bandwidth / (cfg.compute_efficiency * h.peak_flops(cfg.precision)) - a;
  if (!(denom > 0)) return std::nullopt;
  return W / denom;
}

inline double sim_cold_start(const ModelDescriptor& m, const SimBackendConfig& cfg) {
  return cfg.base_start + static_cast<double>(m.weight_bytes) / cfg.load_bandwidth;
}

struct NetworkDelay {
  double uplink = 0;    // s
  double downlink = 0;  // s
};

inline double one_way_delay(std::uint64_t bytes, const NetworkSpec& net) {
  return net.rtt / 2.0 + static_cast<double>(bytes) / net.bandwidth;
}

inline NetworkDelay sim_network(std::uint64_t payload_bytes, std::uint64_t response_bytes, const NetworkSpec& net) {
  return {one_way_delay(payload_bytes, net), one_way_delay(response_bytes, net)};
}

// ---------------------------------------------------------------------------
// Batcher. Holds the FIFO queue of requests that reached the server and
// decides when a batch may leave:
//   dynamic: queue reaches B_max, or the oldest waited max_queue_delay;
//   static:  queue reaches batch_size, or no further arrival can happen
//            (flush), signalled by the caller.
// A batch holds every queued request up to B_max.
// ---------------------------------------------------------------------------
class Batcher {
 public:
  explicit Batcher(BatchingSpec spec) : spec_(std::move(spec)) {}

  void enqueue(std::uint64_t id, Nanos t) { queue_.push_back({id, t}); }

  bool empty() const { return queue_.empty(); }
  std::size_t size() const { return queue_.size(); }
  std::uint64_t max_batch() const { return spec_.batch_size; }

  // Deadline of the oldest queued request (dynamic only).
  std::optional<Nanos> deadline() const {
    if (queue_.empty() || spec_.mode != BatchingMode::dynamic_batch) return std::nullopt;
    return queue_.front().t + to_nanos(spec_.max_queue_delay.value_or(0.0));
  }

  bool ready(Nanos now, bool no_more_arrivals) const {
    if (queue_.empty()) return false;
    if (queue_.size() >= spec_.batch_size) return true;
    if (spec_.mode == BatchingMode::dynamic_batch) return now >= *deadline();
    return no_more_arrivals;
  }

  std::vector<std::uint64_t> take() {
    const std::size_t n = std::min<std::size_t>(queue_.size(), spec_.batch_size);
    std::vector<std::uint64_t> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(queue_.front().id);
      queue_.pop_front();
    }
    return out;
  }

 private:
  struct Entry {
    std::uint64_t id;
    Nanos t;
  };
  BatchingSpec spec_;
  std::deque<Entry> queue_;
};

struct BatchEvent {
  Nanos t = 0;
  std::vector<std::uint64_t> members;  // indices into the arrival list
};

// Dispatch events for sorted arrival times against an always-free device.
// Arrivals at the same instant as a deadline join that batch.
inline std::vector<BatchEvent> dynamic_batcher(std::span<const Nanos> arrivals, std::uint64_t max_batch,
                                               double max_queue_delay) {
  Batcher batcher({BatchingMode::dynamic_batch, max_batch, max_queue_delay});
  std::vector<BatchEvent> out;
  std::size_t next = 0;
  while (next < arrivals.size() || !batcher.empty()) {
    const bool more = next < arrivals.size();
    const auto dl = batcher.deadline();
    if (more && (!dl || arrivals[next] <= *dl)) {
      const Nanos t = arrivals[next];
      while (next < arrivals.size() && arrivals[next] == t) {
        batcher.enqueue(next, t);
        ++next;
      }
      while (batcher.size() >= max_batch) out.push_back({t, batcher.take()});
      continue;
    }
    out.push_back({*dl, batcher.take()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resource sampling from device busy intervals.
// ---------------------------------------------------------------------------
struct BusyInterval {
  Nanos start = 0;
  Nanos end = 0;
  std::uint64_t batch = 0;
};

inline double busy_within(std::span<const BusyInterval> busy, Nanos from, Nanos to) {
  Nanos acc = 0;
  for (const auto& b : busy) {
    const Nanos lo = std::max(b.start, from);
    const Nanos hi = std::min(b.end, to);
    if (hi > lo) acc += hi - lo;
  }
  return to_seconds(acc);
}

// One sample over [from, to). mem_used = weights + largest batch activation
// footprint resident in the window, capped at device capacity (spill is not
// modeled).
inline ResourceSample sample_window(std::span<const BusyInterval> busy, const ModelDescriptor& m, double mem_capacity,
                                    Nanos from, Nanos to) {
  const double util = busy_within(busy, from, to) / to_seconds(to - from);
  std::uint64_t max_batch = 0;
  for (const auto& b : busy) {
    if (b.end > from && b.start < to) max_batch = std::max(max_batch, b.batch);
  }
  const double mem = std::min(mem_capacity, static_cast<double>(m.weight_bytes) +
                                                static_cast<double>(max_batch) *
                                                    static_cast<double>(m.activation_bytes_per_sample));
  return {to_seconds(to), std::clamp(util, 0.0, 1.0), mem};
}

// Samples over consecutive windows [k*dt, (k+1)*dt) up to `horizon`.
inline std::vector<ResourceSample> sim_resource_sampler(std::span<const BusyInterval> busy,
                                                        const ModelDescriptor& m, double mem_capacity,
                                                        double window, double horizon) {
  std::vector<ResourceSample> out;
  if (!(window > 0) || !(horizon > 0)) return out;
  const Nanos dt = to_nanos(window);
  const Nanos end = to_nanos(horizon);
  for (Nanos from = 0; from < end; from += dt) {
    out.push_back(sample_window(busy, m, mem_capacity, from, std::min(from + dt, end)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backend interface.
// ---------------------------------------------------------------------------
struct InferRequest {
  std::uint64_t req_id = 0;
  std::string_view payload;  // may be empty for the sim backend
  std::uint64_t payload_bytes = 0;
};

struct InferOutcome {
  Nanos elapsed = 0;  // dispatch -> completion
  bool ok = true;
  std::string reason;
};

class ServingBackend {
 public:
  virtual ~ServingBackend() = default;

  virtual std::string kind() const = 0;
  virtual std::string version() const = 0;
  // True when the backend advances a simulated clock rather than wall time.
  virtual bool virtual_time() const = 0;

  // Returns the cold-start time in seconds. Throws BackendError on failure.
  virtual double start() = 0;
  // One outcome per request. `dispatch` is the job-relative dispatch time;
  // only virtual-time backends use it.
  virtual std::vector<InferOutcome> infer(std::span<const InferRequest> batch, Nanos dispatch) = 0;
  // Utilization over the window ending at t; nullopt when not observable.
  virtual std::optional<ResourceSample> sample_resources(double t, double window) = 0;
  virtual void stop() = 0;
};

// Simulated single device. Batches execute serially; completion times never
// overlap.
class SimBackend final : public ServingBackend {
 public:
  explicit SimBackend(SimBackendConfig cfg) : cfg_(std::move(cfg)) {}

  std::string kind() const override { return "sim"; }
  std::string version() const override { return std::string("servebench-sim/") + kVersion; }
  bool virtual_time() const override { return true; }
  const SimBackendConfig& config() const { return cfg_; }

  double start() override {
    std::lock_guard lock(mu_);
    if (started_) throw BackendError("sim backend already started");
    if (static_cast<double>(cfg_.model.weight_bytes) > cfg_.hardware.mem_capacity) {
      throw BackendError("load failure: model weights (" + std::to_string(cfg_.model.weight_bytes) +
                         " B) exceed device memory of " + cfg_.hardware.id);
    }
    started_ = true;
    return sim_cold_start(cfg_.model, cfg_);
  }

  std::vector<InferOutcome> infer(std::span<const InferRequest> batch, Nanos dispatch) override {
    std::lock_guard lock(mu_);
    if (!started_) throw BackendError("infer before start");
    if (batch.empty()) return {};
    if (!busy_.empty() && dispatch < busy_.back().end) throw BackendError("device busy: batches must not overlap");
    const double service = sim_infer_latency(cfg_.model, cfg_.hardware, batch.size(), cfg_);
    const Nanos elapsed = to_nanos(service);
    busy_.push_back({dispatch, dispatch + elapsed, batch.size()});
    busy_seconds_ += service;
    return std::vector<InferOutcome>(batch.size(), InferOutcome{elapsed, true, {}});
  }

  std::optional<ResourceSample> sample_resources(double t, double window) override {
    std::lock_guard lock(mu_);
    const Nanos from = to_nanos(std::max(0.0, t - window));
    const Nanos to = to_nanos(t);
    if (to <= from) return std::nullopt;
    return sample_window(busy_, cfg_.model, cfg_.hardware.mem_capacity, from, to);
  }

  void stop() override {
    std::lock_guard lock(mu_);
    started_ = false;
  }

  std::vector<BusyInterval> busy_intervals() const {
    std::lock_guard lock(mu_);
    return busy_;
  }

  double busy_seconds() const {
    std::lock_guard lock(mu_);
    return busy_seconds_;
  }

 private:
  SimBackendConfig cfg_;
  mutable std::mutex mu_;
  bool started_ = false;
  std::vector<BusyInterval> busy_;
  double busy_seconds_ = 0;
};

}  // namespace servebench
