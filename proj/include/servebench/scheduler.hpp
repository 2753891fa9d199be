#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "servebench/common.hpp"
#include "servebench/workload.hpp"

namespace servebench {

// Scheduler view of a benchmark job. Times in seconds.
struct Job {
  std::string job_id;
  double t_proc = 0;
  double submit_time = 0;
  int worker = 0;
  double start_time = 0;
  double completion_time = 0;

  double jct() const { return completion_time - submit_time; }
  bool operator==(const Job&) const = default;
};

enum class LoadBalance { round_robin, queue_aware };
enum class QueueOrder { fcfs, sjf };

struct SchedulerPolicy {
  LoadBalance lb = LoadBalance::queue_aware;
  QueueOrder order = QueueOrder::sjf;
  bool operator==(const SchedulerPolicy&) const = default;
};

inline std::string to_string(const SchedulerPolicy& p) {
  return std::string(p.lb == LoadBalance::queue_aware ? "QA" : "RR") + "+" + (p.order == QueueOrder::sjf ? "SJF" : "FCFS");
}

inline SchedulerPolicy parse_policy(const std::string& s) {
  const auto plus = s.find('+');
  if (plus == std::string::npos) throw ValidationError("policy", "expected LB+ORDER, e.g. QA+SJF");
  std::string lb = s.substr(0, plus), order = s.substr(plus + 1);
  for (auto* part : {&lb, &order}) std::transform(part->begin(), part->end(), part->begin(), ::toupper);
  SchedulerPolicy p;
  if (lb == "QA") p.lb = LoadBalance::queue_aware;
  else if (lb == "RR") p.lb = LoadBalance::round_robin;
  else throw ValidationError("policy", "load balancer must be QA or RR");
  if (order == "SJF") p.order = QueueOrder::sjf;
  else if (order == "FCFS") p.order = QueueOrder::fcfs;
  else throw ValidationError("policy", "order must be SJF or FCFS");
  return p;
}

inline const std::vector<SchedulerPolicy>& studied_policies() {
  static const std::vector<SchedulerPolicy> p{{LoadBalance::round_robin, QueueOrder::fcfs},
                                              {LoadBalance::round_robin, QueueOrder::sjf},
                                              {LoadBalance::queue_aware, QueueOrder::sjf}};
  return p;
}

struct WorkerState {
  int worker_id = 0;
  std::vector<Job> queue;  // not yet started
  std::optional<Job> running;
  double running_remaining = 0;
  double last_heartbeat = 0;

  bool busy() const { return running.has_value(); }
  double queue_seconds() const {
    double s = running ? running_remaining : 0.0;
    for (const auto& j : queue) s += j.t_proc;
    return s;
  }
};

// Ascending processing time, ties by submit time then id; FCFS keeps
// submission order. The running job is never part of `queue`.
inline void order_queue(std::vector<Job>& queue, QueueOrder order) {
  if (order == QueueOrder::sjf) {
    std::stable_sort(queue.begin(), queue.end(), [](const Job& a, const Job& b) {
      if (a.t_proc != b.t_proc) return a.t_proc < b.t_proc;
      if (a.submit_time != b.submit_time) return a.submit_time < b.submit_time;
      return a.job_id < b.job_id;
    });
  } else {
    std::stable_sort(queue.begin(), queue.end(), [](const Job& a, const Job& b) {
      if (a.submit_time != b.submit_time) return a.submit_time < b.submit_time;
      return a.job_id < b.job_id;
    });
  }
}

// Placement state. Round robin cycles over worker ids in ascending order,
// continuing after the last worker it picked.
class Placer {
 public:
  explicit Placer(LoadBalance lb) : lb_(lb) {}

  // Returns nullopt when no worker is available.
  std::optional<int> place(const std::vector<WorkerState>& workers) {
    if (workers.empty()) return std::nullopt;
    std::vector<const WorkerState*> sorted;
    for (const auto& w : workers) sorted.push_back(&w);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->worker_id < b->worker_id; });
    int chosen;
    if (lb_ == LoadBalance::queue_aware) {
      const WorkerState* best = sorted.front();
      for (auto* w : sorted) {
        if (w->queue_seconds() < best->queue_seconds()) best = w;
      }
      chosen = best->worker_id;
    } else {
      auto it = std::find_if(sorted.begin(), sorted.end(), [&](auto* w) { return w->worker_id > last_; });
      chosen = (it == sorted.end() ? sorted.front() : *it)->worker_id;
    }
    last_ = chosen;
    return chosen;
  }

 private:
  LoadBalance lb_;
  int last_ = std::numeric_limits<int>::min();
};

inline std::optional<int> place_job(const Job&, const std::vector<WorkerState>& workers, Placer& placer) {
  return placer.place(workers);
}

// ---------------------------------------------------------------------------
// Discrete-event scheduler simulation.
// ---------------------------------------------------------------------------
struct TraceEvent {
  double t = 0;
  std::string kind;  // submit | place | start | finish
  std::string job_id;
  int worker = 0;
};

struct SimulationResult {
  SchedulerPolicy policy;
  std::vector<Job> jobs;  // input order, with placement and times filled
  double total_jct = 0;
  double mean_jct = 0;
  std::vector<TraceEvent> trace;
};

// Non-preemptive, one job at a time per worker. Jobs are placed on arrival;
// a worker reorders its queue just before starting its next job. At equal
// timestamps completions are handled before arrivals, so a worker freed at t
// counts as idle for a job submitted at t.
inline SimulationResult schedule_simulate(const std::vector<Job>& input, int k, SchedulerPolicy policy) {
  if (k < 1) throw ValidationError("workers", "must be >= 1");
  SimulationResult res;
  res.policy = policy;
  res.jobs = input;
  std::vector<std::size_t> order(input.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (input[a].submit_time != input[b].submit_time) return input[a].submit_time < input[b].submit_time;
    return input[a].job_id < input[b].job_id;
  });
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < input.size(); ++i) index[input[i].job_id] = i;
  if (index.size() != input.size()) throw ValidationError("trace", "duplicate job id");

  std::vector<WorkerState> workers(static_cast<std::size_t>(k));
  std::vector<double> free_at(workers.size(), 0.0);
  for (int w = 0; w < k; ++w) workers[static_cast<std::size_t>(w)].worker_id = w + 1;
  Placer placer(policy.lb);
  std::size_t next = 0;
  double now = 0;

  auto start_idle = [&] {
    for (std::size_t w = 0; w < workers.size(); ++w) {
      auto& ws = workers[w];
      if (ws.running || ws.queue.empty()) continue;
      order_queue(ws.queue, policy.order);
      Job j = ws.queue.front();
      ws.queue.erase(ws.queue.begin());
      j.start_time = now;
      j.completion_time = now + j.t_proc;
      ws.running = j;
      free_at[w] = j.completion_time;
      res.trace.push_back({now, "start", j.job_id, ws.worker_id});
    }
  };

  while (true) {
    double next_finish = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < workers.size(); ++w) {
      if (workers[w].running) next_finish = std::min(next_finish, free_at[w]);
    }
    const double next_submit = next < order.size() ? input[order[next]].submit_time : std::numeric_limits<double>::infinity();
    if (std::isinf(next_finish) && std::isinf(next_submit)) break;
    now = std::min(next_finish, next_submit);
    for (std::size_t w = 0; w < workers.size(); ++w) {
      auto& ws = workers[w];
      if (ws.running && free_at[w] <= now) {
        res.trace.push_back({now, "finish", ws.running->job_id, ws.worker_id});
        res.jobs[index.at(ws.running->job_id)] = *ws.running;
        ws.running.reset();
      }
    }
    for (std::size_t w = 0; w < workers.size(); ++w) {
      if (workers[w].running) workers[w].running_remaining = free_at[w] - now;
    }
    while (next < order.size() && input[order[next]].submit_time <= now) {
      Job j = input[order[next++]];
      res.trace.push_back({now, "submit", j.job_id, 0});
      const int w = *placer.place(workers);
      j.worker = w;
      res.trace.push_back({now, "place", j.job_id, w});
      workers[static_cast<std::size_t>(w - 1)].queue.push_back(j);
    }
    start_idle();
  }
  for (const auto& j : res.jobs) res.total_jct += j.jct();
  res.mean_jct = res.jobs.empty() ? 0.0 : res.total_jct / static_cast<double>(res.jobs.size());
  return res;
}

// Exhaustive minimum of mean JCT on one worker with all jobs submitted at t=0.
inline double brute_force_min_mean_jct(std::vector<double> t_proc) {
  std::sort(t_proc.begin(), t_proc.end());
  double best = std::numeric_limits<double>::infinity();
  do {
    double t = 0, sum = 0;
    for (double p : t_proc) {
      t += p;
      sum += t;
    }
    best = std::min(best, sum / static_cast<double>(t_proc.size()));
  } while (std::next_permutation(t_proc.begin(), t_proc.end()));
  return best;
}

// ---------------------------------------------------------------------------
// Traces: one job per line, "job_id submit_time t_proc"; '#' starts a comment.
// ---------------------------------------------------------------------------
inline std::vector<Job> parse_trace(std::string_view text) {
  std::vector<Job> jobs;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    Job j;
    if (!(ls >> j.job_id)) continue;
    std::string extra;
    if (!(ls >> j.submit_time >> j.t_proc) || (ls >> extra)) {
      throw ParseError("expected 'job_id submit_time t_proc'", lineno, 1);
    }
    if (!(j.t_proc > 0) || j.submit_time < 0 || !std::isfinite(j.t_proc) || !std::isfinite(j.submit_time)) {
      throw ParseError("t_proc must be > 0 and submit_time >= 0", lineno, 1);
    }
    if (!seen.insert(j.job_id).second) throw ParseError("duplicate job id '" + j.job_id + "'", lineno, 1);
    jobs.push_back(j);
  }
  if (jobs.empty()) throw UserError("trace is empty");
  return jobs;
}

inline std::string format_trace(const std::vector<Job>& jobs) {
  std::string out = "# job_id submit_time t_proc\n";
  char buf[128];
  for (const auto& j : jobs) {
    std::snprintf(buf, sizeof buf, "%s %.17g %.17g\n", j.job_id.c_str(), j.submit_time, j.t_proc);
    out += buf;
  }
  return out;
}

// Processing-time distributions: "exp:MEAN", "pareto:ALPHA:XM", "const:V".
// Submit processes: "zero" (all at t=0) or "poisson:RATE".
struct TraceGenSpec {
  std::size_t n = 100;
  std::string proc = "exp:60";
  std::string arrivals = "zero";
  std::uint64_t seed = 1;
};

namespace detail {
inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double positive_number(const std::string& s, const std::string& field) {
  double v = 0;
  try {
    std::size_t used = 0;
    v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw ValidationError(field, "'" + s + "' is not a number");
  }
  if (!(v > 0) || !std::isfinite(v)) throw ValidationError(field, "must be > 0");
  return v;
}
}  // namespace detail

inline std::vector<Job> random_trace(const TraceGenSpec& g) {
  if (g.n == 0) throw ValidationError("n", "must be >= 1");
  const auto proc = detail::split(g.proc, ':');
  const auto arr = detail::split(g.arrivals, ':');
  auto eng_proc = make_engine(g.seed, 1);
  auto eng_arr = make_engine(g.seed, 2);
  std::function<double()> draw;
  if (proc[0] == "exp" && proc.size() == 2) {
    const double mean = detail::positive_number(proc[1], "dist");
    draw = [&eng_proc, mean] { return exponential(eng_proc, 1.0 / mean); };
  } else if (proc[0] == "pareto" && proc.size() == 3) {
    const double alpha = detail::positive_number(proc[1], "dist");
    const double xm = detail::positive_number(proc[2], "dist");
    draw = [&eng_proc, alpha, xm] { return xm / std::pow(1.0 - uniform01(eng_proc), 1.0 / alpha); };
  } else if (proc[0] == "const" && proc.size() == 2) {
    const double v = detail::positive_number(proc[1], "dist");
    draw = [v] { return v; };
  } else {
    throw ValidationError("dist", "expected exp:MEAN, pareto:ALPHA:XM or const:V");
  }
  double rate = 0;
  if (arr[0] == "poisson" && arr.size() == 2) {
    rate = detail::positive_number(arr[1], "arrivals");
  } else if (!(arr[0] == "zero" && arr.size() == 1)) {
    throw ValidationError("arrivals", "expected zero or poisson:RATE");
  }
  std::vector<Job> jobs;
  double t = 0;
  char id[32];
  for (std::size_t i = 0; i < g.n; ++i) {
    if (rate > 0 && i > 0) t += exponential(eng_arr, rate);
    std::snprintf(id, sizeof id, "j%04zu", i);
    jobs.push_back({id, draw(), t});
  }
  return jobs;
}

struct PolicyComparison {
  std::vector<SimulationResult> results;  // one per policy, in request order
  double baseline_mean = 0;               // RR+FCFS
  double speedup(const SimulationResult& r) const { return r.mean_jct > 0 ? baseline_mean / r.mean_jct : 1.0; }
};

inline PolicyComparison compare_policies(const std::vector<Job>& jobs, int k,
                                         const std::vector<SchedulerPolicy>& policies = studied_policies()) {
  PolicyComparison c;
  for (const auto& p : policies) c.results.push_back(schedule_simulate(jobs, k, p));
  c.baseline_mean = schedule_simulate(jobs, k, {LoadBalance::round_robin, QueueOrder::fcfs}).mean_jct;
  return c;
}

}  // namespace servebench
