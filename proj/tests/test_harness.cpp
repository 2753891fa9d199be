#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "servebench/harness.hpp"
#include "test_util.hpp"

using namespace servebench;

namespace {
JobSpec constant_spec(double rate, std::uint64_t n, std::uint64_t batch = 1) {
  JobSpec s;
  s.job_name = "harness";
  s.seed = 11;
  s.model = GeneratorParams{BlockKind::fc, 4, 1024, 0, {1024}, 4};
  s.backend.batching.batch_size = batch;
  s.workload.pattern = ArrivalPattern::constant;
  s.workload.rate = rate;
  s.workload.num_requests = n;
  s.workload.seed = 11;
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void expect_partition(const std::vector<RequestRecord>& rs) {
  for (const auto& r : rs) {
    if (!r.ok) continue;
    ASSERT_TRUE(r.monotone()) << r.req_id;
    Nanos sum = 0;
    for (Stage s : kStages) sum += stage_duration(r, s);
    ASSERT_EQ(sum, r.e2e()) << r.req_id;
  }
}
}  // namespace

TEST(RunJob, ConstantRateConservation) {
  const auto run = run_job(constant_spec(10, 100));
  const auto& r = run.record;
  EXPECT_EQ(r.scheduled_count, 100u);
  EXPECT_EQ(r.ok_count, 100u);
  EXPECT_EQ(r.ok_count + r.failed_count, r.scheduled_count);
  EXPECT_EQ(r.e2e.count(), 100u);
  EXPECT_EQ(r.error_rate, 0.0);
  // 100 sends over 9.9 s plus one response latency.
  EXPECT_NEAR(r.throughput, 10.0, 0.15);
  EXPECT_DOUBLE_EQ(r.mean_batch_size, 1.0);
  EXPECT_TRUE(r.costs);
  expect_partition(run.requests);
}

TEST(RunJob, SameSeedIsBitIdentical) {
  JobSpec s = constant_spec(30, 500, 8);
  s.workload.pattern = ArrivalPattern::poisson;
  s.backend.batching = {BatchingMode::dynamic_batch, 8, 4e-3};
  const auto a = run_job(s);
  const auto b = run_job(s);
  EXPECT_TRUE(a.record.e2e == b.record.e2e);
  EXPECT_EQ(a.record.stages, b.record.stages);
  EXPECT_EQ(a.requests, b.requests);
  s.workload.seed = 12;
  EXPECT_FALSE(run_job(s).record.e2e == a.record.e2e);
}

TEST(RunJob, StaticBatchFlushesRemainder) {
  // Ten requests at t=0 with batch 4: 4, 4, then a flush of 2 once nothing else can arrive.
  JobSpec s = constant_spec(1e9, 10, 4);
  const auto run = run_job(s);
  std::map<std::int64_t, std::uint64_t> sizes;
  for (const auto& r : run.requests) sizes[r.batch_id] = r.batch_size;
  ASSERT_EQ(sizes.size(), 3u);
  EXPECT_EQ(sizes[0], 4u);
  EXPECT_EQ(sizes[1], 4u);
  EXPECT_EQ(sizes[2], 2u);
  EXPECT_EQ(run.record.ok_count, 10u);
}

TEST(RunJob, DynamicBatchRespectsQueueDelay) {
  JobSpec s = constant_spec(1000, 200);
  s.backend.batching = {BatchingMode::dynamic_batch, 16, 5e-3};
  const auto run = run_job(s);
  for (const auto& r : run.requests) {
    EXPECT_LE(r.batch_size, 16u);
    // The device is never the bottleneck here, so the wait is bounded by the delay.
    EXPECT_LE(r.t_batch_dispatch - r.t_enqueue, 5'000'000);
  }
  EXPECT_GT(run.record.mean_batch_size, 1.0);
  expect_partition(run.requests);
}

TEST(RunJob, ClosedLoopKeepsConcurrencyInFlight) {
  JobSpec s = constant_spec(0, 256, 8);
  s.workload.pattern = ArrivalPattern::closed_loop;
  s.workload.rate = 0;
  s.workload.concurrency = 8;
  const auto run = run_job(s);
  EXPECT_EQ(run.record.ok_count, 256u);
  for (const auto& r : run.requests) EXPECT_EQ(r.batch_size, 8u);
  EXPECT_DOUBLE_EQ(run.record.mean_batch_size, 8.0);
}

TEST(RunJob, ClosedLoopDurationBound) {
  JobSpec s = constant_spec(0, 1);
  s.workload.pattern = ArrivalPattern::closed_loop;
  s.workload.num_requests.reset();
  s.workload.duration = 0.05;
  s.workload.concurrency = 2;
  const auto run = run_job(s);
  EXPECT_GT(run.record.ok_count, 2u);
  for (const auto& r : run.requests) EXPECT_LT(r.t_send, to_nanos(0.05));
}

TEST(RunJob, WarmupExcludedFromDigests) {
  JobSpec s = constant_spec(10, 100);
  s.collect.warmup = 2.0;
  const auto run = run_job(s);
  EXPECT_EQ(run.record.e2e.count(), 80u);
  EXPECT_EQ(run.record.ok_count, 100u);
}

TEST(RunJob, MemoryOverflowThrowsBackendError) {
  JobSpec s = constant_spec(10, 5);
  ModelDescriptor big = generate_model({BlockKind::fc, 1, 8, 0, {}, 4});
  big.weight_bytes = 100'000'000'000;
  s.model = big;
  EXPECT_THROW(run_job(s), BackendError);
}

TEST(RunJob, EnvLogIsComplete) {
  const auto run = run_job(constant_spec(10, 5));
  const json& env = run.record.env_log;
  for (const char* key : {"hardware", "hardware_hash", "backend", "model", "model_hash", "spec", "seeds", "prng",
                          "software", "effective", "timestamps"}) {
    EXPECT_TRUE(env.contains(key)) << key;
  }
  EXPECT_EQ(env["backend"]["kind"], "sim");
  EXPECT_EQ(env["hardware"]["id"], "G1");
  EXPECT_EQ(env["seeds"]["workload"], 11);
  EXPECT_EQ(perf_record_from_json(to_json(run.record)), run.record);
}

TEST(RunJob, SimUtilizationAndResources) {
  const auto run = run_job(constant_spec(100, 300));
  const double busy = run.record.busy_time;
  EXPECT_GT(busy, 0.0);
  EXPECT_NEAR(run.record.mean_utilization, busy / run.record.wall_time, 1e-6);
  EXPECT_FALSE(run.record.resources.empty());
  for (const auto& s : run.record.resources) {
    EXPECT_GE(s.utilization, 0.0);
    EXPECT_LE(s.utilization, 1.0);
  }
}

TEST(RunJob, BundledResnetConfigsRun) {
  const auto catalog = load_hardware_catalog(std::string(SB_CONFIG_DIR) + "/hardware_catalog.json");
  const auto gpu = run_job(parse_job_spec(read_file(std::string(SB_CONFIG_DIR) + "/resnet50-sim.conf"), catalog), catalog);
  const auto cpu = run_job(parse_job_spec(read_file(std::string(SB_CONFIG_DIR) + "/resnet50-cpu.conf"), catalog), catalog);
  EXPECT_EQ(gpu.record.error_rate, 0.0);
  EXPECT_EQ(cpu.record.error_rate, 0.0);
  // The harness reports its own ratio; the only requirement is that the GPU profile is faster.
  EXPECT_GT(cpu.record.p99() / gpu.record.p99(), 1.0);
  ASSERT_TRUE(gpu.record.costs);
  EXPECT_FALSE(gpu.record.costs->cloud.empty());
}

// ---------------------------------------------------------------------------
// Stage breakdown
// ---------------------------------------------------------------------------
TEST(StageBreakdown, EqualStagesGiveFifths) {
  RequestRecord r;
  r.t_send = 0;
  r.t_preproc_done = 10;
  r.t_arrive_server = 15;  // transmission: 5 up + 5 down
  r.t_enqueue = 15;
  r.t_batch_dispatch = 25;
  r.t_infer_done = 35;
  r.t_postproc_done = 45;
  r.t_response = 50;
  const std::vector<RequestRecord> rs{r, r};
  const auto b = stage_breakdown(rs);
  for (const auto& [name, f] : b.fractions) EXPECT_DOUBLE_EQ(f, 0.2) << name;

  r.t_postproc_done = r.t_infer_done;
  r.t_response = r.t_postproc_done + 5;
  const auto z = stage_breakdown(std::vector<RequestRecord>{r});
  EXPECT_EQ(z.fractions.at("postprocess"), 0.0);
  double sum = 0;
  for (const auto& [name, f] : z.fractions) sum += f;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(StageBreakdown, InferenceShareGrowsWithBatch) {
  auto frac = [](std::uint64_t batch) {
    JobSpec s = constant_spec(0, 320, batch);
    s.workload.pattern = ArrivalPattern::closed_loop;
    s.workload.concurrency = batch;
    s.workload.payload.synthetic_bytes = 150528;
    return run_job(s).record.stage_fractions.at("inference");
  };
  EXPECT_GT(frac(32), frac(1));
}

TEST(StageBreakdown, FailedRequestsExcluded) {
  RequestRecord ok;
  ok.t_response = ok.t_postproc_done = ok.t_infer_done = 100;
  RequestRecord bad = ok;
  bad.ok = false;
  const auto b = stage_breakdown(std::vector<RequestRecord>{ok, bad});
  EXPECT_EQ(b.digests.at("inference").count(), 1u);
}

// ---------------------------------------------------------------------------
// Costs
// ---------------------------------------------------------------------------
TEST(Costs, EnergyAndCloudArithmetic) {
  HardwareProfile h = HardwareCatalog().at("G1");
  h.tdp_power = 250;
  h.cloud_offers = {{"P", "I", 3.60}};
  PerfRecord r;
  r.ok_count = 10000;
  r.wall_time = 100;
  r.mean_utilization = 1.0;
  r.throughput = 1000;
  const auto c = compute_costs(r, h, 400);
  EXPECT_DOUBLE_EQ(c.energy_per_req, 2.5);
  EXPECT_DOUBLE_EQ(c.co2_per_req, 2.5 / 3.6e6 * 400);
  ASSERT_EQ(c.cloud.size(), 1u);
  EXPECT_NEAR(c.cloud[0].cost_per_req, 1e-6, 1e-18);

  r.throughput = 2000;
  EXPECT_DOUBLE_EQ(compute_costs(r, h, 400).cloud[0].cost_per_req, c.cloud[0].cost_per_req / 2);

  h.cloud_offers.clear();
  EXPECT_TRUE(compute_costs(r, h, 400).cloud.empty());
  r.throughput = 0;
  EXPECT_THROW(compute_costs(r, h, 400), ValidationError);
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------
TEST(Replay, RoundTripsThroughJson) {
  JobSpec s = constant_spec(40, 300, 4);
  s.workload.pattern = ArrivalPattern::poisson;
  s.processors.pre = {"byte_resize", std::nullopt};
  s.backend.hardware_id = "G3";
  const auto orig = run_job(s).record;
  const auto back = perf_record_from_json(json::parse(to_json(orig).dump()));
  const auto rr = replay(back);
  EXPECT_TRUE(rr.identical) << (rr.mismatches.empty() ? "" : rr.mismatches.front());
  EXPECT_TRUE(rr.replayed.e2e == orig.e2e);
}

TEST(Replay, DetectsTamperedDigest) {
  auto rec = run_job(constant_spec(10, 20)).record;
  rec.e2e.record(123.0);
  const auto rr = replay(rec);
  EXPECT_FALSE(rr.identical);
  EXPECT_EQ(rr.mismatches.front(), "e2e");
}

TEST(Replay, UsesLoggedHardwareNotCatalog) {
  HardwareProfile custom{"LAB1", "lab box", 2e12, 4e12, 1e11, 8e9, 90, {}};
  const HardwareCatalog catalog(std::vector<HardwareProfile>{custom});
  JobSpec s = constant_spec(20, 50);
  s.backend.hardware_id = "LAB1";
  const auto orig = run_job(s, catalog).record;
  EXPECT_TRUE(replay(orig).identical);
}

TEST(Replay, RejectsHttpRecords) {
  PerfRecord r;
  r.env_log = {{"spec", json::object()}, {"model", json::object()}, {"hardware", nullptr}};
  EXPECT_THROW(replay(r), ValidationError);
}

TEST(RecordsJsonl, OneLinePerRequest) {
  const auto run = run_job(constant_spec(10, 7));
  const std::string text = records_jsonl(run.requests);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(request_record_from_json(json::parse(line)), run.requests.front());
}
