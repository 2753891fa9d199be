#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "servebench/harness.hpp"
#include "servebench/http_backend.hpp"
#include "servebench/job_spec.hpp"
#include "servebench/job_status.hpp"
#include "servebench/perfdb.hpp"
#include "servebench/scheduler.hpp"

namespace servebench {

// ---------------------------------------------------------------------------
// Wire protocol. Every message is a JSON object POSTed to /<type in lower
// case> on the leader, carrying "type" and "schema_version":
//   REGISTER   follower -> leader  {name}
//              reply               {worker_id, heartbeat_interval, order}
//   HEARTBEAT  follower -> leader  {worker_id, queue_seconds, queued[], running}
//              reply               {known, dispatch: [DISPATCH...]}
//   DISPATCH   leader -> follower  {job_id, spec, estimated_duration, submit_time}
//              (delivered in heartbeat replies until the follower reports the job)
//   STATUS     follower -> leader  {worker_id, job_id, state, reason}
//   RESULT     follower -> leader  {worker_id, job_id, record}
// Client endpoints: POST /submit (job spec document), GET /jobs, GET /jobs/<id>,
// GET /workers, GET /results/<id>.
// ---------------------------------------------------------------------------
namespace proto {

inline json message(const char* type, json body = json::object()) {
  body["type"] = type;
  body["schema_version"] = kSchemaVersion;
  return body;
}

inline json expect(const std::string& body, const char* type) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed ") + type + " message", 1, e.byte);
  }
  if (!j.is_object() || j.value("type", "") != type) throw ValidationError("type", std::string("expected ") + type);
  if (j.value("schema_version", 0) != kSchemaVersion) {
    throw ValidationError("schema_version", "unsupported protocol version");
  }
  return j;
}

}  // namespace proto

struct ClusterTiming {
  double heartbeat_interval = 2.0;   // s
  double scheduling_interval = 1.0;  // s
  int dead_after = 3;                // missed heartbeats
};

inline std::string default_leader_address() {
  if (const char* env = std::getenv("SERVEBENCH_LEADER"); env && *env) return env;
  return "http://127.0.0.1:7070";
}

inline std::string normalize_address(const std::string& addr) {
  return addr.rfind("http://", 0) == 0 ? addr : "http://" + addr;
}

inline std::string worker_name(int id) { return "w" + std::to_string(id); }

// Throws Error on transport failure or non-2xx status with the server's
// error message.
inline json http_call(const std::string& address, const std::string& method, const std::string& path,
                      const std::string& body = {}, double timeout = 10.0) {
  const HttpEndpoint ep = split_endpoint(normalize_address(address));
  httplib::Client cli(ep.origin);
  set_timeouts(cli, timeout);
  auto res = method == "GET" ? cli.Get(ep.base_path + path)
                             : cli.Post(ep.base_path + path, body, "application/json");
  if (!res) throw Error("cannot reach " + address + ": " + httplib::to_string(res.error()));
  json j = json::object();
  if (!res->body.empty()) {
    try {
      j = json::parse(res->body);
    } catch (const json::parse_error&) {
      throw Error("malformed reply from " + address + path);
    }
  }
  if (res->status == 404) throw NotFoundError(j.value("error", path + " not found"));
  if (res->status == 400) throw UserError(j.value("error", "bad request"));
  if (res->status / 100 != 2) throw Error(j.value("error", "leader returned status " + std::to_string(res->status)));
  return j;
}

// ---------------------------------------------------------------------------
// Leader
// ---------------------------------------------------------------------------
struct LeaderOptions {
  std::string host = "127.0.0.1";
  int port = 7070;  // 0 picks a free port
  SchedulerPolicy policy;
  ClusterTiming timing;
  std::optional<std::filesystem::path> perfdb;
  HardwareCatalog catalog;
};

class Leader {
 public:
  explicit Leader(LeaderOptions opts) : opts_(std::move(opts)) {
    if (opts_.perfdb) db_ = std::make_unique<PerfDB>(*opts_.perfdb);
    placer_ = std::make_unique<Placer>(opts_.policy.lb);
  }

  ~Leader() { stop(); }

  // Binds and starts serving; returns the bound port.
  int start() {
    routes();
    port_ = opts_.port == 0 ? server_.bind_to_any_port(opts_.host) : (server_.bind_to_port(opts_.host, opts_.port) ? opts_.port : -1);
    if (port_ < 0) throw Error("cannot bind " + opts_.host + ":" + std::to_string(opts_.port));
    running_ = true;
    http_thread_ = std::thread([this] { server_.listen_after_bind(); });
    sched_thread_ = std::thread([this] { scheduler_loop(); });
    return port_;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    {
      std::lock_guard lock(mu_);
      cv_.notify_all();
    }
    server_.stop();
    if (http_thread_.joinable()) http_thread_.join();
    if (sched_thread_.joinable()) sched_thread_.join();
  }

  void wait() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !running_; });
  }

  int port() const { return port_; }

  std::string submit(const std::string& text) {
    JobSpec spec = parse_job_spec(text, opts_.catalog);
    // Followers need not share the leader's repository.
    if (std::holds_alternative<RepositoryRef>(spec.model)) spec.model = resolve_model(spec.model);
    std::lock_guard lock(mu_);
    char id[32];
    std::snprintf(id, sizeof id, "job-%06zu", jobs_.size() + 1);
    JobEntry e;
    e.status = JobStatus::create(id, unix_seconds());
    e.spec = to_json(spec);
    e.t_proc = spec.estimated_duration;
    jobs_.emplace(id, std::move(e));
    return id;
  }

  std::optional<JobStatus> status(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second.status;
  }

  std::vector<JobStatus> statuses() const {
    std::lock_guard lock(mu_);
    std::vector<JobStatus> out;
    for (const auto& [_, e] : jobs_) out.push_back(e.status);
    return out;
  }

  // One scheduling pass: liveness check, then placement of SUBMITTED jobs.
  void schedule_once() {
    std::lock_guard lock(mu_);
    const double now = unix_seconds();
    const double limit = opts_.timing.dead_after * opts_.timing.heartbeat_interval;
    for (auto& [wid, w] : workers_) {
      if (w.alive && now - w.last_heartbeat > limit) mark_dead_locked(w, now);
    }
    std::vector<JobEntry*> pending;
    for (auto& [_, e] : jobs_) {
      if (e.status.state == JobState::submitted) pending.push_back(&e);
    }
    if (pending.empty()) return;
    std::sort(pending.begin(), pending.end(), [](auto* a, auto* b) {
      if (a->status.submitted_at != b->status.submitted_at) return a->status.submitted_at < b->status.submitted_at;
      return a->status.job_id < b->status.job_id;
    });
    std::vector<WorkerState> live;
    for (const auto& [wid, w] : workers_) {
      if (!w.alive) continue;
      WorkerState s;
      s.worker_id = wid;
      s.running_remaining = w.queue_seconds + undelivered_seconds_locked(wid);
      s.running = Job{};
      live.push_back(std::move(s));
    }
    if (live.empty()) return;
    for (JobEntry* e : pending) {
      const int wid = *placer_->place(live);
      e->worker = wid;
      e->status.advance(JobState::queued, now);
      e->status.worker_id = worker_name(wid);
      for (auto& s : live) {
        if (s.worker_id == wid) s.queue.push_back(Job{e->status.job_id, e->t_proc, 0});
      }
    }
  }

 private:
  struct JobEntry {
    JobStatus status;
    json spec;
    double t_proc = 0;
    std::optional<int> worker;
    std::optional<json> record;
  };

  struct WorkerEntry {
    int id = 0;
    std::string name;
    double last_heartbeat = 0;
    double queue_seconds = 0;
    std::set<std::string> reported;  // queued or running on the follower
    bool alive = true;
  };

  double undelivered_seconds_locked(int wid) const {
    double s = 0;
    const auto& rep = workers_.at(wid).reported;
    for (const auto& [id, e] : jobs_) {
      if (e.worker == wid && e.status.state == JobState::queued && !rep.count(id)) s += e.t_proc;
    }
    return s;
  }

  void mark_dead_locked(WorkerEntry& w, double now) {
    w.alive = false;
    for (auto& [id, e] : jobs_) {
      if (e.worker != w.id || is_terminal(e.status.state)) continue;
      if (e.status.state == JobState::queued) {
        e.status.advance(JobState::submitted, now, "requeued: worker lost");
        e.worker.reset();
      } else {
        e.status.advance(JobState::failed, now, "worker lost");
      }
    }
  }

  void scheduler_loop() {
    while (running_) {
      schedule_once();
      std::unique_lock lock(mu_);
      cv_.wait_for(lock, std::chrono::duration<double>(opts_.timing.scheduling_interval), [&] { return !running_; });
    }
  }

  static void reply(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  template <class F>
  void handle(httplib::Response& res, F&& f) {
    try {
      reply(res, f());
    } catch (const NotFoundError& e) {
      reply(res, {{"error", e.what()}}, 404);
    } catch (const UserError& e) {
      reply(res, {{"error", e.what()}}, 400);
    } catch (const std::exception& e) {
      reply(res, {{"error", e.what()}}, 500);
    }
  }

  void routes() {
    server_.Post("/register", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const json m = proto::expect(req.body, "REGISTER");
        std::lock_guard lock(mu_);
        const int id = static_cast<int>(workers_.size()) + 1;
        WorkerEntry w;
        w.id = id;
        w.name = m.value("name", worker_name(id));
        w.last_heartbeat = unix_seconds();
        workers_.emplace(id, std::move(w));
        return proto::message("REGISTER", {{"worker_id", id},
                                           {"heartbeat_interval", opts_.timing.heartbeat_interval},
                                           {"order", opts_.policy.order == QueueOrder::sjf ? "sjf" : "fcfs"}});
      });
    });
    server_.Post("/heartbeat", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const json m = proto::expect(req.body, "HEARTBEAT");
        const int id = m.at("worker_id").get<int>();
        std::lock_guard lock(mu_);
        auto it = workers_.find(id);
        if (it == workers_.end() || !it->second.alive) return proto::message("HEARTBEAT", {{"known", false}});
        WorkerEntry& w = it->second;
        w.last_heartbeat = unix_seconds();
        w.queue_seconds = m.value("queue_seconds", 0.0);
        w.reported.clear();
        for (const auto& j : m.value("queued", json::array())) w.reported.insert(j.get<std::string>());
        if (m.contains("running") && m["running"].is_string()) w.reported.insert(m["running"].get<std::string>());
        json dispatch = json::array();
        for (const auto& [jid, e] : jobs_) {
          if (e.worker == id && e.status.state == JobState::queued && !w.reported.count(jid)) {
            dispatch.push_back(proto::message("DISPATCH", {{"job_id", jid},
                                                           {"spec", e.spec},
                                                           {"estimated_duration", e.t_proc},
                                                           {"submit_time", e.status.submitted_at}}));
          }
        }
        return proto::message("HEARTBEAT", {{"known", true}, {"dispatch", dispatch}});
      });
    });
    server_.Post("/status", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const json m = proto::expect(req.body, "STATUS");
        std::lock_guard lock(mu_);
        auto it = jobs_.find(m.at("job_id").get<std::string>());
        bool applied = false;
        if (it != jobs_.end() && it->second.worker == m.at("worker_id").get<int>()) {
          applied = it->second.status.advance(parse_job_state(m.at("state").get<std::string>()), unix_seconds(),
                                              m.value("reason", ""));
        }
        return json{{"applied", applied}};
      });
    });
    server_.Post("/result", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const json m = proto::expect(req.body, "RESULT");
        std::lock_guard lock(mu_);
        auto it = jobs_.find(m.at("job_id").get<std::string>());
        // Duplicates and results from a worker that lost the job are dropped.
        if (it == jobs_.end() || it->second.worker != m.at("worker_id").get<int>() ||
            is_terminal(it->second.status.state)) {
          return json{{"applied", false}};
        }
        JobEntry& e = it->second;
        PerfRecord rec = perf_record_from_json(m.at("record"));
        rec.job_id = e.status.job_id;
        if (db_ && !db_->contains(rec.job_id)) db_->append(rec);
        e.record = to_json(rec);
        const double now = unix_seconds();
        if (e.status.state == JobState::running) e.status.advance(JobState::collecting, now);
        e.status.advance(JobState::done, now);
        return json{{"applied", true}};
      });
    });
    server_.Post("/submit", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return json{{"job_id", submit(req.body)}}; });
    });
    server_.Get("/jobs", [this](const httplib::Request&, httplib::Response& res) {
      handle(res, [&] {
        json out = json::array();
        for (const auto& s : statuses()) out.push_back(to_json(s));
        return out;
      });
    });
    server_.Get(R"(/jobs/([A-Za-z0-9._-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const auto s = status(req.matches[1]);
        if (!s) throw NotFoundError("no job '" + std::string(req.matches[1]) + "'");
        return to_json(*s);
      });
    });
    server_.Get(R"(/results/([A-Za-z0-9._-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        std::lock_guard lock(mu_);
        auto it = jobs_.find(req.matches[1]);
        if (it == jobs_.end() || !it->second.record) throw NotFoundError("no result for '" + std::string(req.matches[1]) + "'");
        return *it->second.record;
      });
    });
    server_.Get("/workers", [this](const httplib::Request&, httplib::Response& res) {
      handle(res, [&] {
        std::lock_guard lock(mu_);
        json out = json::array();
        for (const auto& [id, w] : workers_) {
          out.push_back({{"worker_id", id}, {"name", w.name}, {"alive", w.alive}, {"queue_seconds", w.queue_seconds},
                         {"last_heartbeat", w.last_heartbeat}});
        }
        return out;
      });
    });
  }

  LeaderOptions opts_;
  std::unique_ptr<PerfDB> db_;
  std::unique_ptr<Placer> placer_;
  httplib::Server server_;
  std::thread http_thread_;
  std::thread sched_thread_;
  std::atomic<bool> running_{false};
  int port_ = -1;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, JobEntry> jobs_;
  std::map<int, WorkerEntry> workers_;
};

// ---------------------------------------------------------------------------
// Follower
// ---------------------------------------------------------------------------
struct FollowerOptions {
  std::string leader = default_leader_address();
  std::string name = "follower";
  // > 0: a job stays RUNNING for at least estimated_duration * time_scale
  // wall seconds, emulating benchmarks of the declared length.
  double time_scale = 0.0;
  HardwareCatalog catalog;
};

class Follower {
 public:
  explicit Follower(FollowerOptions opts) : opts_(std::move(opts)) {}
  ~Follower() { stop(); }

  // Registers and runs until stop().
  void run() {
    running_ = true;
    register_with_leader();
    std::thread exec([this] { executor_loop(); });
    while (running_) {
      heartbeat();
      std::unique_lock lock(mu_);
      cv_.wait_for(lock, std::chrono::duration<double>(hb_interval_), [&] { return !running_; });
    }
    cv_.notify_all();
    exec.join();
  }

  void stop() {
    running_ = false;
    std::lock_guard lock(mu_);
    cv_.notify_all();
  }

 private:
  struct Pending {
    Job job;
    json spec;
  };

  void register_with_leader() {
    while (running_) {
      try {
        const json r = http_call(opts_.leader, "POST", "/register", proto::message("REGISTER", {{"name", opts_.name}}).dump());
        std::lock_guard lock(mu_);
        worker_id_ = r.at("worker_id").get<int>();
        hb_interval_ = r.at("heartbeat_interval").get<double>();
        order_ = r.at("order").get<std::string>() == "sjf" ? QueueOrder::sjf : QueueOrder::fcfs;
        return;
      } catch (const std::exception&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
      }
    }
  }

  double queue_seconds_locked() const {
    double s = 0;
    for (const auto& p : queue_) s += p.job.t_proc;
    if (running_job_) {
      const double elapsed = unix_seconds() - running_since_;
      const double done = opts_.time_scale > 0 ? elapsed / opts_.time_scale : 0.0;
      s += std::max(0.0, running_job_->t_proc - done);
    }
    return s;
  }

  void heartbeat() {
    json msg;
    {
      std::lock_guard lock(mu_);
      json queued = json::array();
      for (const auto& p : queue_) queued.push_back(p.job.job_id);
      msg = proto::message("HEARTBEAT", {{"worker_id", worker_id_},
                                         {"queue_seconds", queue_seconds_locked()},
                                         {"queued", queued},
                                         {"running", running_job_ ? json(running_job_->job_id) : json(nullptr)}});
    }
    json r;
    try {
      r = http_call(opts_.leader, "POST", "/heartbeat", msg.dump());
    } catch (const std::exception&) {
      return;
    }
    if (!r.value("known", false)) {
      // Declared dead: the leader has already requeued our queue.
      {
        std::lock_guard lock(mu_);
        queue_.clear();
      }
      register_with_leader();
      return;
    }
    std::lock_guard lock(mu_);
    for (const auto& d : r.value("dispatch", json::array())) {
      const std::string id = d.at("job_id").get<std::string>();
      if (!accepted_.insert(id).second) continue;  // re-delivered DISPATCH
      queue_.push_back({Job{id, d.at("estimated_duration").get<double>(), d.at("submit_time").get<double>()}, d.at("spec")});
    }
    cv_.notify_all();
  }

  void send(const char* type, json body) {
    body["worker_id"] = worker_id_;
    const std::string path = std::string("/") + (std::string(type) == "STATUS" ? "status" : "result");
    for (int attempt = 0; attempt < 5 && running_; ++attempt) {
      try {
        http_call(opts_.leader, "POST", path, proto::message(type, body).dump());
        return;
      } catch (const std::exception&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
      }
    }
  }

  void executor_loop() {
    while (true) {
      Pending p;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !running_ || !queue_.empty(); });
        if (!running_) return;
        std::vector<Job> jobs;
        for (const auto& q : queue_) jobs.push_back(q.job);
        order_queue(jobs, order_);
        auto it = std::find_if(queue_.begin(), queue_.end(), [&](const auto& q) { return q.job.job_id == jobs.front().job_id; });
        p = std::move(*it);
        queue_.erase(it);
        running_job_ = p.job;
        running_since_ = unix_seconds();
      }
      execute(p);
      std::lock_guard lock(mu_);
      running_job_.reset();
    }
  }

  void execute(const Pending& p) {
    const std::string id = p.job.job_id;
    send("STATUS", {{"job_id", id}, {"state", "RUNNING"}});
    try {
      const JobSpec spec = parse_job_spec(p.spec.dump(), opts_.catalog);
      JobRun run = run_job(spec, opts_.catalog);
      if (opts_.time_scale > 0) {
        const double until = running_since_ + p.job.t_proc * opts_.time_scale;
        while (running_ && unix_seconds() < until) std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      if (!running_) return;
      send("STATUS", {{"job_id", id}, {"state", "COLLECTING"}});
      run.record.job_id = id;
      run.record.labels["worker"] = opts_.name;
      send("RESULT", {{"job_id", id}, {"record", to_json(run.record)}});
    } catch (const std::exception& e) {
      send("STATUS", {{"job_id", id}, {"state", "FAILED"}, {"reason", e.what()}});
    }
  }

  FollowerOptions opts_;
  std::atomic<bool> running_{false};
  std::mutex mu_;
  std::condition_variable cv_;
  int worker_id_ = 0;
  double hb_interval_ = 2.0;
  QueueOrder order_ = QueueOrder::sjf;
  std::vector<Pending> queue_;
  std::set<std::string> accepted_;
  std::optional<Job> running_job_;
  double running_since_ = 0;
};

// Client helpers for submit/status.
inline std::string submit_job(const std::string& leader, const std::string& spec_text) {
  return http_call(leader, "POST", "/submit", spec_text).at("job_id").get<std::string>();
}

inline JobStatus fetch_status(const std::string& leader, const std::string& job_id) {
  return job_status_from_json(http_call(leader, "GET", "/jobs/" + job_id));
}

inline std::vector<JobStatus> fetch_all_statuses(const std::string& leader) {
  std::vector<JobStatus> out;
  for (const auto& j : http_call(leader, "GET", "/jobs")) out.push_back(job_status_from_json(j));
  return out;
}

}  // namespace servebench
