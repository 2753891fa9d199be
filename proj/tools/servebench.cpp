// servebench command-line entry point.
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "servebench/analysis.hpp"
#include "servebench/cluster.hpp"
#include "servebench/harness.hpp"
#include "servebench/model_repository.hpp"
#include "servebench/perfdb.hpp"
#include "servebench/scheduler.hpp"

namespace sb = servebench;

namespace {

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

struct Globals {
  std::string format = "table";
  std::string perfdb = "perfdb";
  std::string catalog;
  bool json() const { return format == "json"; }
};

sb::HardwareCatalog load_catalog(const Globals& g) {
  return g.catalog.empty() ? sb::HardwareCatalog{} : sb::load_hardware_catalog(g.catalog);
}

void write_out(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw sb::UserError("cannot write '" + path + "'");
  out << content;
}

void print_json(const sb::json& j) { std::cout << j.dump(2) << "\n"; }

std::string fmt_seconds(double s) {
  char buf[32];
  if (s < 1e-3) std::snprintf(buf, sizeof buf, "%.1f us", s * 1e6);
  else if (s < 1) std::snprintf(buf, sizeof buf, "%.3f ms", s * 1e3);
  else std::snprintf(buf, sizeof buf, "%.3f s", s);
  return buf;
}

sb::json summary_json(const sb::PerfRecord& r) {
  sb::json j = {{"job_id", r.job_id},
                {"ok", r.ok_count},
                {"failed", r.failed_count},
                {"scheduled", r.scheduled_count},
                {"error_rate", r.error_rate},
                {"throughput", r.throughput},
                {"cold_start", r.cold_start},
                {"percentiles", r.percentiles},
                {"stage_fractions", r.stage_fractions},
                {"mean_utilization", r.mean_utilization},
                {"content_hash", sb::content_hash(r)}};
  if (r.costs) j["costs"] = sb::to_json(r)["costs"];
  return j;
}

void print_summary(const sb::PerfRecord& r) {
  std::printf("job %s: %llu ok, %llu failed of %llu (error rate %.4f)\n", r.job_id.c_str(),
              static_cast<unsigned long long>(r.ok_count), static_cast<unsigned long long>(r.failed_count),
              static_cast<unsigned long long>(r.scheduled_count), r.error_rate);
  if (!r.e2e.empty()) {
    std::printf("latency  p50 %s  p95 %s  p99 %s  mean %s\n", fmt_seconds(r.e2e.percentile(0.5)).c_str(),
                fmt_seconds(r.e2e.percentile(0.95)).c_str(), fmt_seconds(r.e2e.percentile(0.99)).c_str(),
                fmt_seconds(r.e2e.mean()).c_str());
  }
  std::printf("throughput %.3f req/s, cold start %s, utilization %.3f\n", r.throughput, fmt_seconds(r.cold_start).c_str(),
              r.mean_utilization);
  if (!r.stage_fractions.empty()) {
    std::printf("stages  ");
    for (const auto& [k, v] : r.stage_fractions) std::printf(" %s %.1f%%", k.c_str(), v * 100);
    std::printf("\n");
  }
  if (r.costs) {
    std::printf("costs  energy %.4g J/req, CO2 %.4g g/req", r.costs->energy_per_req, r.costs->co2_per_req);
    for (const auto& c : r.costs->cloud) {
      std::printf(", %s/%s %.4g USD/req", c.provider_label.c_str(), c.instance_label.c_str(), c.cost_per_req);
    }
    std::printf("\n");
  } else {
    std::printf("costs  n/a\n");
  }
}

void add_filters(CLI::App* cmd, sb::PerfQuery& q) {
  cmd->add_option("--model-family", q.family, "Filter by model family");
  cmd->add_option("--hardware", q.hardware, "Filter by hardware id");
  cmd->add_option("--backend", q.backend, "Filter by backend kind");
  cmd->add_option("--since", q.since, "Only records started at or after this UTC timestamp (prefix ok)");
}

std::string read_spec(const std::string& path) {
  if (!std::filesystem::exists(path)) throw sb::NotFoundError("spec file '" + path + "' not found");
  return sb::read_text_file(path);
}

// Returns the spec with a sweep axis applied.
void apply_axis(sb::JobSpec& s, const std::string& axis, const std::string& value, bool concurrency_follows_batch) {
  auto as_uint = [&] {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
      throw sb::ValidationError("axis " + axis, "'" + value + "' is not a non-negative integer");
    }
  };
  if (axis == "batch" || axis == "batch_size" || axis == "max_batch") {
    s.backend.batching.batch_size = as_uint();
    if (concurrency_follows_batch && s.workload.pattern == sb::ArrivalPattern::closed_loop) {
      s.workload.concurrency = s.backend.batching.batch_size;
    }
  } else if (axis == "concurrency") {
    s.workload.concurrency = as_uint();
  } else if (axis == "rate") {
    s.workload.rate = std::stod(value);
  } else if (axis == "hardware") {
    s.backend.hardware_id = value;
  } else if (axis == "network") {
    if (value == "lan") s.backend.network = sb::network_preset(sb::NetworkKind::lan);
    else if (value == "wifi") s.backend.network = sb::network_preset(sb::NetworkKind::wifi);
    else if (value == "lte") s.backend.network = sb::network_preset(sb::NetworkKind::lte);
    else throw sb::ValidationError("axis network", "expected lan, wifi or lte");
  } else if (axis == "precision") {
    s.backend.numeric_precision = sb::parse_precision(value, "axis precision");
  } else {
    auto* gp = std::get_if<sb::GeneratorParams>(&s.model);
    if (!gp) throw sb::ValidationError("axis " + axis, "model axes need a generator model source");
    sb::set_param(*gp, axis, as_uint());
  }
}

std::pair<std::string, std::vector<std::string>> parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw sb::ValidationError("--axis", "expected name=v1,v2,...");
  std::vector<std::string> vals;
  std::string cur;
  for (char c : text.substr(eq + 1)) {
    if (c == ',') {
      vals.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  vals.push_back(cur);
  for (const auto& v : vals) {
    if (v.empty()) throw sb::ValidationError("--axis " + text.substr(0, eq), "empty value");
  }
  return {text.substr(0, eq), vals};
}

sb::PerfRecord load_record(const Globals& g, const std::string& ref) {
  if (std::filesystem::is_regular_file(ref)) {
    return sb::perf_record_from_json(sb::parse_json_document(sb::read_text_file(ref)));
  }
  return sb::PerfDB(g.perfdb).get(ref);
}

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"servebench: benchmark harness for model-inference serving"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"table", "json"}));
  app.add_option("--perfdb", g.perfdb, "Performance database directory");
  app.add_option("--catalog", g.catalog, "Hardware catalog file (overlays the bundled G1-G4)");
  app.set_version_flag("--version", std::string(sb::kVersion));

  std::function<void()> action;

  // leader serve
  auto* leader = app.add_subcommand("leader", "Run the leader");
  leader->require_subcommand(1);
  auto* leader_serve = leader->add_subcommand("serve", "Accept followers and schedule submitted jobs");
  std::string bind = "127.0.0.1:7070";
  std::string policy_text = "QA+SJF";
  sb::ClusterTiming timing;
  leader_serve->add_option("--bind", bind, "host:port to listen on (port 0 picks a free port)");
  leader_serve->add_option("--policy", policy_text, "Load balancer + queue order: QA+SJF, RR+FCFS, RR+SJF, QA+FCFS");
  leader_serve->add_option("--heartbeat", timing.heartbeat_interval, "Heartbeat interval (s)")->check(CLI::PositiveNumber);
  leader_serve->add_option("--interval", timing.scheduling_interval, "Scheduling interval (s)")->check(CLI::PositiveNumber);
  leader_serve->add_option("--dead-after", timing.dead_after, "Missed heartbeats before a follower is dead")->check(CLI::PositiveNumber);
  leader_serve->callback([&] {
    action = [&] {
      sb::LeaderOptions o;
      const auto colon = bind.rfind(':');
      if (colon == std::string::npos) throw sb::ValidationError("--bind", "expected host:port");
      o.host = bind.substr(0, colon);
      o.port = std::stoi(bind.substr(colon + 1));
      o.policy = sb::parse_policy(policy_text);
      o.timing = timing;
      o.perfdb = g.perfdb;
      o.catalog = load_catalog(g);
      sb::Leader l(o);
      const int port = l.start();
      std::printf("leader listening on http://%s:%d policy %s\n", o.host.c_str(), port, sb::to_string(o.policy).c_str());
      std::fflush(stdout);
      wait_for_signal();
      l.stop();
    };
  });

  // follower serve
  auto* follower = app.add_subcommand("follower", "Run a follower worker");
  follower->require_subcommand(1);
  auto* follower_serve = follower->add_subcommand("serve", "Register with the leader and execute dispatched jobs");
  sb::FollowerOptions fo;
  follower_serve->add_option("--leader", fo.leader, "Leader address (default $SERVEBENCH_LEADER)");
  follower_serve->add_option("--name", fo.name, "Worker name");
  follower_serve->add_option("--time-scale", fo.time_scale,
                             "Keep each job RUNNING for estimated_duration * scale wall seconds (0 = no pacing)")
      ->check(CLI::NonNegativeNumber);
  follower_serve->callback([&] {
    action = [&] {
      fo.catalog = load_catalog(g);
      sb::Follower f(fo);
      std::thread t([&] { f.run(); });
      std::printf("follower %s -> %s\n", fo.name.c_str(), fo.leader.c_str());
      std::fflush(stdout);
      wait_for_signal();
      f.stop();
      t.join();
    };
  });

  // submit
  auto* submit = app.add_subcommand("submit", "Submit a job spec to the leader");
  std::string spec_path;
  std::string leader_addr = sb::default_leader_address();
  submit->add_option("spec", spec_path, "Job spec file")->required();
  submit->add_option("--leader", leader_addr, "Leader address (default $SERVEBENCH_LEADER)");
  submit->callback([&] {
    action = [&] {
      const std::string id = sb::submit_job(leader_addr, read_spec(spec_path));
      if (g.json()) print_json({{"job_id", id}});
      else std::printf("%s\n", id.c_str());
    };
  });

  // status
  auto* status = app.add_subcommand("status", "Show job status (all jobs when no id is given)");
  std::string status_id;
  status->add_option("job-id", status_id, "Job id");
  status->add_option("--leader", leader_addr, "Leader address (default $SERVEBENCH_LEADER)");
  status->callback([&] {
    action = [&] {
      std::vector<sb::JobStatus> all;
      if (status_id.empty()) all = sb::fetch_all_statuses(leader_addr);
      else all.push_back(sb::fetch_status(leader_addr, status_id));
      if (g.json()) {
        sb::json out = sb::json::array();
        for (const auto& s : all) out.push_back(sb::to_json(s));
        print_json(status_id.empty() ? out : out[0]);
        return;
      }
      std::printf("%-12s %-11s %-6s %s\n", "JOB", "STATE", "WORKER", "REASON");
      for (const auto& s : all) {
        std::printf("%-12s %-11s %-6s %s\n", s.job_id.c_str(), sb::to_string(s.state), s.worker_id.value_or("-").c_str(),
                    s.reason.c_str());
      }
    };
  });

  // run-local
  auto* run_local = app.add_subcommand("run-local", "Run one job in-process and store its record");
  std::optional<std::uint64_t> seed_override;
  std::string replay_schedule, records_out, schedule_out;
  bool no_store = false;
  run_local->add_option("spec", spec_path, "Job spec file")->required();
  run_local->add_option("--seed", seed_override, "Override the job and workload seed");
  run_local->add_option("--replay", replay_schedule, "Arrival schedule file (one offset per line) replacing the workload pattern");
  run_local->add_option("--records-out", records_out, "Write raw per-request records (JSON lines)");
  run_local->add_option("--schedule-out", schedule_out, "Write the arrival schedule");
  run_local->add_flag("--no-store", no_store, "Do not write the record to the perfdb");
  run_local->callback([&] {
    action = [&] {
      const auto catalog = load_catalog(g);
      sb::JobSpec spec = sb::parse_job_spec(read_spec(spec_path), catalog);
      sb::json overrides = sb::json::object();
      if (seed_override) {
        spec.seed = *seed_override;
        spec.workload.seed = *seed_override;
        overrides["seed"] = *seed_override;
      }
      if (!replay_schedule.empty()) {
        spec.workload.pattern = sb::ArrivalPattern::replay;
        spec.workload.replay_file = replay_schedule;
        spec.workload.num_requests.reset();
        spec.workload.duration.reset();
        overrides["replay"] = replay_schedule;
      }
      // Re-validate after overrides.
      spec = sb::parse_job_spec(sb::emit_job_spec(spec), catalog);
      if (!schedule_out.empty()) write_out(schedule_out, sb::format_schedule(sb::gen_arrivals(spec.workload)));
      sb::JobRun run = sb::run_job(spec, catalog);
      run.record.env_log["overrides"] = overrides;
      run.record.env_log["spec_file"] = spec_path;
      if (!no_store) run.record.job_id = sb::PerfDB(g.perfdb).append(run.record);
      if (!records_out.empty()) write_out(records_out, sb::records_jsonl(run.requests));
      if (g.json()) print_json(summary_json(run.record));
      else print_summary(run.record);
    };
  });

  // modelgen
  auto* modelgen = app.add_subcommand("modelgen", "Generate a canonical model descriptor");
  std::string block = "fc", precision = "fp32", repo_dir, model_id;
  std::uint64_t layers = 4, width = 1024, seq_len = 0;
  std::vector<std::uint64_t> input_dims;
  bool do_register = false;
  modelgen->add_option("--block", block, "fc, cnn, rnn or transformer");
  modelgen->add_option("--layers", layers, "Number of layers/blocks")->check(CLI::PositiveNumber);
  modelgen->add_option("--width", width, "Neurons, channels, hidden units or embedding dim")->check(CLI::PositiveNumber);
  modelgen->add_option("--seq-len", seq_len, "Sequence length (rnn, transformer)");
  modelgen->add_option("--input", input_dims, "Input dims (fc: width; cnn: H W; rnn: input size)");
  modelgen->add_option("--precision", precision, "fp32 or fp16");
  modelgen->add_option("--repo", repo_dir, "Model repository directory");
  modelgen->add_option("--id", model_id, "Model id (default derived from parameters)");
  modelgen->add_flag("--register", do_register, "Register the descriptor in --repo");
  modelgen->callback([&] {
    action = [&] {
      sb::json pj = {{"block", block}, {"num_layers", layers}, {"width", width}, {"precision", precision}};
      if (seq_len) pj["seq_len"] = seq_len;
      if (!input_dims.empty()) pj["input_dims"] = input_dims;
      const sb::GeneratorParams p = sb::generator_params_from_json(pj, "modelgen");
      sb::ModelDescriptor m = sb::generate_model(p);
      if (!model_id.empty()) m.model_id = model_id;
      if (do_register) {
        if (repo_dir.empty()) throw sb::ValidationError("--repo", "required with --register");
        m = sb::ModelRepository(repo_dir).register_model(m);
      }
      if (g.json()) {
        print_json(sb::to_json(m));
        return;
      }
      std::printf("%s (%s)\n  flops/sample %llu\n  weight bytes %llu\n  activation bytes/sample %llu\n  intensity b=1 %.4g, limit %.4g FLOP/B\n",
                  m.model_id.c_str(), m.family.c_str(), static_cast<unsigned long long>(m.flops_per_sample),
                  static_cast<unsigned long long>(m.weight_bytes),
                  static_cast<unsigned long long>(m.activation_bytes_per_sample), m.intensity(1), m.intensity_limit());
    };
  });

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run a spec over the Cartesian product of axis values");
  std::vector<std::string> axes_text;
  bool conc_follows_batch = false;
  sweep->add_option("spec", spec_path, "Base job spec file")->required();
  sweep->add_option("--axis", axes_text,
                    "name=v1,v2,... (batch, concurrency, rate, hardware, network, precision, num_layers, width, seq_len, precision_bytes)")
      ->required()
      ->allow_extra_args(false);
  sweep->add_flag("--concurrency-follows-batch", conc_follows_batch, "Closed-loop concurrency tracks the batch axis");
  sweep->callback([&] {
    action = [&] {
      const auto catalog = load_catalog(g);
      const sb::JobSpec base = sb::parse_job_spec(read_spec(spec_path), catalog);
      std::vector<std::pair<std::string, std::vector<std::string>>> axes;
      for (const auto& a : axes_text) axes.push_back(parse_axis(a));
      std::vector<std::size_t> idx(axes.size(), 0);
      sb::PerfDB db(g.perfdb);
      sb::json out = sb::json::array();
      while (true) {
        sb::JobSpec s = base;
        sb::json point = sb::json::object();
        std::string tag;
        for (std::size_t a = 0; a < axes.size(); ++a) {
          apply_axis(s, axes[a].first, axes[a].second[idx[a]], conc_follows_batch);
          point[axes[a].first] = axes[a].second[idx[a]];
          tag += (tag.empty() ? "" : ",") + axes[a].first + "=" + axes[a].second[idx[a]];
        }
        s.job_name = base.job_name + "[" + tag + "]";
        s = sb::parse_job_spec(sb::emit_job_spec(s), catalog);
        sb::JobRun run = sb::run_job(s, catalog);
        run.record.labels["sweep"] = base.job_name;
        const std::string id = db.append(run.record);
        out.push_back({{"job_id", id}, {"point", point}, {"p99", run.record.p99()}, {"throughput", run.record.throughput}});
        if (!g.json()) {
          std::printf("%s  %s  p99 %s  throughput %.3f req/s\n", id.c_str(), tag.c_str(),
                      fmt_seconds(run.record.p99()).c_str(), run.record.throughput);
        }
        // Row-major: last axis fastest.
        bool wrapped = true;
        for (std::size_t a = axes.size(); a-- > 0;) {
          if (++idx[a] < axes[a].second.size()) {
            wrapped = false;
            break;
          }
          idx[a] = 0;
        }
        if (wrapped) break;
      }
      if (g.json()) print_json(out);
    };
  });

  // sched-sim
  auto* sched = app.add_subcommand("sched-sim", "Simulate scheduler policies on a job trace");
  std::string trace_path, cdf_out, trace_out;
  std::vector<std::string> random_args;
  std::string arrivals = "zero";
  std::uint64_t sim_seed = 1;
  int workers = 4;
  std::vector<std::string> policies_text;
  sched->add_option("trace", trace_path, "Trace file: 'job_id submit_time t_proc' per line");
  sched->add_option("--random", random_args, "Generate a trace: N K DIST (DIST = exp:MEAN, pareto:ALPHA:XM, const:V)")->expected(3);
  sched->add_option("--arrivals", arrivals, "Submit process for --random: zero or poisson:RATE");
  sched->add_option("--seed", sim_seed, "Seed for --random");
  sched->add_option("--workers", workers, "Worker count for trace files")->check(CLI::PositiveNumber);
  sched->add_option("--policy", policies_text, "Policies to compare (default RR+FCFS RR+SJF QA+SJF)")
      ->allow_extra_args(false);
  sched->add_option("--cdf-out", cdf_out, "Write per-job JCT CDF data (CSV)");
  sched->add_option("--trace-out", trace_out, "Write the (generated) trace");
  sched->callback([&] {
    action = [&] {
      std::vector<sb::Job> jobs;
      int k = workers;
      if (!random_args.empty()) {
        sb::TraceGenSpec gs;
        try {
          gs.n = std::stoull(random_args[0]);
          k = std::stoi(random_args[1]);
        } catch (const std::exception&) {
          throw sb::ValidationError("--random", "N and K must be integers");
        }
        if (k < 1) throw sb::ValidationError("--random", "K must be >= 1");
        gs.proc = random_args[2];
        gs.arrivals = arrivals;
        gs.seed = sim_seed;
        jobs = sb::random_trace(gs);
      } else {
        if (trace_path.empty()) throw sb::UserError("give a trace file or --random N K DIST");
        if (!std::filesystem::exists(trace_path)) throw sb::NotFoundError("trace '" + trace_path + "' not found");
        jobs = sb::parse_trace(sb::read_text_file(trace_path));
      }
      if (!trace_out.empty()) write_out(trace_out, sb::format_trace(jobs));
      std::vector<sb::SchedulerPolicy> policies;
      for (const auto& p : policies_text) policies.push_back(sb::parse_policy(p));
      if (policies.empty()) policies = sb::studied_policies();
      const auto cmp = sb::compare_policies(jobs, k, policies);
      if (!cdf_out.empty()) {
        std::string csv = sb::csv_row({"policy", "job_id", "jct", "fraction"});
        for (const auto& r : cmp.results) {
          std::vector<std::pair<double, std::string>> rows;
          for (const auto& j : r.jobs) rows.push_back({j.jct(), j.job_id});
          std::sort(rows.begin(), rows.end());
          for (std::size_t i = 0; i < rows.size(); ++i) {
            csv += sb::csv_row({sb::to_string(r.policy), rows[i].second, sb::csv_number(rows[i].first),
                                sb::csv_number(static_cast<double>(i + 1) / static_cast<double>(rows.size()))});
          }
        }
        write_out(cdf_out, csv);
      }
      if (g.json()) {
        sb::json out = {{"jobs", jobs.size()}, {"workers", k}, {"baseline", "RR+FCFS"}, {"baseline_mean_jct", cmp.baseline_mean}};
        sb::json pol = sb::json::array();
        for (const auto& r : cmp.results) {
          pol.push_back({{"policy", sb::to_string(r.policy)}, {"mean_jct", r.mean_jct}, {"total_jct", r.total_jct},
                         {"speedup_vs_rr_fcfs", cmp.speedup(r)}});
        }
        out["policies"] = pol;
        print_json(out);
        return;
      }
      std::printf("%zu jobs on %d workers\n%-8s %14s %10s\n", jobs.size(), k, "POLICY", "MEAN JCT (s)", "SPEEDUP");
      for (const auto& r : cmp.results) {
        std::printf("%-8s %14.4f %10.4f\n", sb::to_string(r.policy).c_str(), r.mean_jct, cmp.speedup(r));
      }
    };
  });

  // query
  auto* query = app.add_subcommand("query", "List stored records");
  sb::PerfQuery q;
  add_filters(query, q);
  query->callback([&] {
    action = [&] {
      const auto entries = sb::PerfDB(g.perfdb).index(q);
      if (g.json()) {
        sb::json out = sb::json::array();
        for (const auto& e : entries) {
          out.push_back({{"job_id", e.job_id}, {"family", e.family}, {"hardware", e.hardware}, {"backend", e.backend},
                         {"started", e.started}, {"content_hash", e.content_hash}});
        }
        print_json(out);
        return;
      }
      std::printf("%-24s %-12s %-8s %-7s %s\n", "JOB", "FAMILY", "HW", "BACKEND", "STARTED");
      for (const auto& e : entries) {
        std::printf("%-24s %-12s %-8s %-7s %s\n", e.job_id.c_str(), e.family.c_str(), e.hardware.c_str(),
                    e.backend.c_str(), e.started.c_str());
      }
    };
  });

  // roofline
  auto* roofline = app.add_subcommand("roofline", "Roofline points for stored records (CSV)");
  std::string roof_kind = "effective", out_path;
  sb::PerfQuery rq;
  add_filters(roofline, rq);
  roofline->add_option("--roof", roof_kind, "Classify against the peak or the efficiency-scaled (effective) roof")
      ->check(CLI::IsMember({"peak", "effective"}));
  roofline->add_option("--out", out_path, "CSV output file (default stdout)");
  roofline->callback([&] {
    action = [&] {
      const auto rep = sb::roofline_points(sb::PerfDB(g.perfdb).query(rq),
                                           roof_kind == "peak" ? sb::RoofKind::peak : sb::RoofKind::effective);
      for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      write_out(out_path, sb::roofline_csv(rep));
    };
  });

  // heatmap
  auto* heatmap = app.add_subcommand("heatmap", "Metric grid over two axes (CSV)");
  std::string axis1, axis2, metric = "utilization";
  sb::PerfQuery hq;
  add_filters(heatmap, hq);
  heatmap->add_option("--axis1", axis1, "Row axis (e.g. batch)")->required();
  heatmap->add_option("--axis2", axis2, "Column axis (e.g. layers)")->required();
  heatmap->add_option("--metric", metric, "utilization, p99, throughput or cost_per_req");
  heatmap->add_option("--out", out_path, "CSV output file (default stdout)");
  heatmap->callback([&] {
    action = [&] {
      const auto grid = sb::build_heatgrid(sb::PerfDB(g.perfdb).query(hq), axis1, axis2, metric);
      write_out(out_path, sb::heatgrid_csv(grid));
    };
  });

  // recommend
  auto* rec = app.add_subcommand("recommend", "Top configurations meeting a p99 SLO");
  double slo_p99 = 0;
  std::optional<double> budget;
  std::string rank_by = "cost_per_req";
  std::size_t top = 3;
  sb::PerfQuery recq;
  add_filters(rec, recq);
  rec->add_option("--slo-p99", slo_p99, "p99 latency bound (s)")->required()->check(CLI::PositiveNumber);
  rec->add_option("--budget-per-1k", budget, "Max cloud cost per 1000 requests (USD)");
  rec->add_option("--rank-by", rank_by, "Ranking metric");
  rec->add_option("--top", top, "Number of configurations")->check(CLI::PositiveNumber);
  rec->callback([&] {
    action = [&] {
      const auto records = sb::PerfDB(g.perfdb).query(recq);
      if (records.empty()) throw sb::UserError("perfdb has no matching records");
      const auto r = sb::recommend(records, slo_p99, rank_by, budget, top);
      if (g.json()) {
        sb::json out = {{"top", sb::json::array()}};
        for (const auto* p : r.top) {
          out["top"].push_back({{"job_id", p->job_id}, {"p99", p->p99()}, {rank_by, sb::metric_value(*p, rank_by).value_or(0)},
                                {"env_log", p->env_log}});
        }
        if (r.nearest_miss_job) out["nearest_miss"] = {{"job_id", *r.nearest_miss_job}, {"p99", *r.nearest_miss_p99}};
        print_json(out);
        return;
      }
      if (r.top.empty()) {
        std::printf("no configuration meets p99 <= %s", fmt_seconds(slo_p99).c_str());
        if (r.nearest_miss_job) std::printf("; nearest miss %s with p99 %s", r.nearest_miss_job->c_str(), fmt_seconds(*r.nearest_miss_p99).c_str());
        std::printf("\n");
        return;
      }
      for (std::size_t i = 0; i < r.top.size(); ++i) {
        const auto* p = r.top[i];
        std::printf("%zu. %s  hw %s  batch %s  p99 %s  %s %.6g\n", i + 1, p->job_id.c_str(),
                    sb::record_attribute(*p, "hardware").value_or("-").c_str(),
                    sb::record_attribute(*p, "batch").value_or("-").c_str(), fmt_seconds(p->p99()).c_str(),
                    rank_by.c_str(), sb::metric_value(*p, rank_by).value_or(0));
      }
    };
  });

  // leaderboard
  auto* lb = app.add_subcommand("leaderboard", "Best record per group plus CDF, bar and speedup data files");
  std::string group_by = "hardware", sort_metric = "throughput", out_dir, baseline;
  sb::PerfQuery lq;
  add_filters(lb, lq);
  lb->add_option("--group-by", group_by, "hardware, backend, model, family, batch, network, ...");
  lb->add_option("--sort", sort_metric, "Metric to rank by");
  lb->add_option("--out-dir", out_dir, "Directory for leaderboard.csv, bars.csv, cdf_<job>.csv, speedup.csv");
  lb->add_option("--baseline", baseline, "Baseline job id for the speedup table");
  lb->callback([&] {
    action = [&] {
      const auto records = sb::PerfDB(g.perfdb).query(lq);
      if (records.empty()) throw sb::UserError("perfdb has no matching records");
      const auto rows = sb::leaderboard(records, group_by, sort_metric);
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const std::filesystem::path dir(out_dir);
        write_out((dir / "leaderboard.csv").string(), sb::leaderboard_csv(rows, group_by, sort_metric));
        write_out((dir / "bars.csv").string(), sb::bars_csv(records, group_by, sort_metric));
        for (const auto& r : records) {
          if (r.e2e.mode() == sb::LatencyDigest::Mode::exact && !r.e2e.empty()) {
            write_out((dir / ("cdf_" + r.job_id + ".csv")).string(), sb::cdf_csv(r.e2e));
            write_out((dir / ("density_" + r.job_id + ".csv")).string(), sb::density_csv(r.e2e));
          }
        }
        if (!baseline.empty()) {
          const auto base = sb::PerfDB(g.perfdb).get(baseline);
          write_out((dir / "speedup.csv").string(), sb::speedup_csv(sb::speedup_table(base, records), baseline));
        }
      }
      if (g.json()) {
        sb::json out = sb::json::array();
        for (const auto& r : rows) out.push_back({{group_by, r.group}, {"job_id", r.job_id}, {sort_metric, r.value}});
        print_json(out);
        return;
      }
      std::printf("%-4s %-16s %-24s %s\n", "RANK", group_by.c_str(), "JOB", sort_metric.c_str());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::printf("%-4zu %-16s %-24s %.6g\n", i + 1, rows[i].group.c_str(), rows[i].job_id.c_str(), rows[i].value);
      }
    };
  });

  // replay
  auto* replay = app.add_subcommand("replay", "Re-execute a sim-backend record from its env_log and compare digests");
  std::string record_ref;
  replay->add_option("record", record_ref, "Record file or job id in --perfdb")->required();
  replay->add_flag("--no-store", no_store, "Do not write the replayed record to the perfdb");
  int replay_exit = 0;
  replay->callback([&] {
    action = [&] {
      const sb::PerfRecord original = load_record(g, record_ref);
      sb::ReplayResult r = sb::replay(original);
      r.replayed.labels["replay_of"] = original.job_id;
      if (!no_store) r.replayed.job_id = sb::PerfDB(g.perfdb).append(r.replayed);
      if (g.json()) {
        print_json({{"original", original.job_id}, {"replayed", r.replayed.job_id}, {"identical", r.identical},
                    {"mismatches", r.mismatches}});
      } else if (r.identical) {
        std::printf("replay of %s: digests identical\n", original.job_id.c_str());
      } else {
        std::printf("replay of %s: MISMATCH in", original.job_id.c_str());
        for (const auto& m : r.mismatches) std::printf(" %s", m.c_str());
        std::printf("\n");
      }
      if (!r.identical) replay_exit = 2;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (action) action();
    return replay_exit;
  } catch (const sb::UserError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
