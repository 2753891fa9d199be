#include <gtest/gtest.h>

#include "servebench/analysis.hpp"
#include "servebench/perfdb.hpp"
#include "test_util.hpp"

using namespace servebench;
using testutil::run_cli;
using testutil::TempDir;

namespace {
const std::string kConfigs = SB_CONFIG_DIR;
}

TEST(Cli, RunLocalPrintsSummaryAndStores) {
  TempDir dir;
  const auto r = run_cli("--catalog " + kConfigs + "/hardware_catalog.json run-local " + kConfigs + "/resnet50-sim.conf", dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* s : {"p50", "p95", "p99", "throughput", "costs  energy", "USD/req"}) {
    EXPECT_NE(r.out.find(s), std::string::npos) << s << "\n" << r.out;
  }
  EXPECT_EQ(PerfDB(dir.path() / "perfdb").size(), 1u);
}

TEST(Cli, RunLocalSeedOverrideIsLoggedAndDeterministic) {
  TempDir dir;
  const auto a = run_cli("--format json run-local --seed 3 " + kConfigs + "/fc-sweep.conf", dir.path());
  const auto b = run_cli("--format json run-local --seed 3 " + kConfigs + "/fc-sweep.conf", dir.path());
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  const json ja = json::parse(a.out), jb = json::parse(b.out);
  EXPECT_EQ(ja["content_hash"], jb["content_hash"]);
  EXPECT_NE(ja["job_id"], jb["job_id"]);
  const auto rec = PerfDB(dir.path() / "perfdb").get(ja["job_id"]);
  EXPECT_EQ(rec.env_log["overrides"]["seed"], 3);
  EXPECT_EQ(rec.env_log["spec"]["seed"], 3);
}

TEST(Cli, RunLocalRecordsAndScheduleFiles) {
  TempDir dir;
  const auto r = run_cli("--catalog " + kConfigs + "/hardware_catalog.json run-local --no-store --records-out rec.jsonl --schedule-out sched.txt " + kConfigs +
                             "/resnet50-cpu.conf",
                         dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string recs = testutil::slurp(dir.path() / "rec.jsonl");
  EXPECT_EQ(std::count(recs.begin(), recs.end(), '\n'), 200);
  EXPECT_EQ(parse_schedule(testutil::slurp(dir.path() / "sched.txt")).offsets.size(), 200u);
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "perfdb" / "records" / "run-000001.json"));
  // Feeding the schedule back through --replay reproduces the arrivals.
  const auto again = run_cli("--format json --catalog " + kConfigs + "/hardware_catalog.json run-local --no-store --replay sched.txt " + kConfigs + "/resnet50-cpu.conf",
                             dir.path());
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(json::parse(again.out)["scheduled"], 200);
}

TEST(Cli, UserErrorsExitOne) {
  TempDir dir;
  testutil::write_file(dir.path() / "bad.conf", R"({"model": {"generate": {"block": "fc", "num_layers": 1, "width": 2}},
    "workload": {"pattern": "constant", "rate": 1, "num_requests": 1}, "colour": 1})");
  testutil::write_file(dir.path() / "empty.trace", "# nothing\n");
  for (const std::string& args : {std::string("run-local missing.conf"), std::string("run-local bad.conf"),
                                   std::string("sched-sim empty.trace"), std::string("--bogus-flag"),
                                   std::string("query --since"), std::string("replay no-such-job")}) {
    const auto r = run_cli(args, dir.path());
    EXPECT_EQ(r.code, 1) << args << "\n" << r.err;
  }
  const auto bad = run_cli("run-local bad.conf", dir.path());
  EXPECT_NE(bad.err.find("colour"), std::string::npos) << bad.err;
}

TEST(Cli, SchedSimThreeJobs) {
  TempDir dir;
  // Repeated --policy options each take one value, leaving the trace positional.
  const auto r = run_cli("--format json sched-sim --workers 1 --policy QA+FCFS --policy QA+SJF " + kConfigs +
                             "/traces/three-jobs.trace",
                         dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["policies"][0]["mean_jct"].get<double>(), 13.0 / 3.0);
  EXPECT_DOUBLE_EQ(j["policies"][1]["mean_jct"].get<double>(), 10.0 / 3.0);
  EXPECT_DOUBLE_EQ(j["policies"][1]["speedup_vs_rr_fcfs"].get<double>(), 1.3);
}

TEST(Cli, SchedSimRandomWritesTraceAndCdf) {
  TempDir dir;
  const auto r = run_cli("sched-sim --random 100 4 exp:60 --seed 7 --trace-out t.trace --cdf-out cdf.csv", dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("QA+SJF"), std::string::npos);
  EXPECT_EQ(parse_trace(testutil::slurp(dir.path() / "t.trace")).size(), 100u);
  const std::string cdf = testutil::slurp(dir.path() / "cdf.csv");
  EXPECT_EQ(std::count(cdf.begin(), cdf.end(), '\n'), 1 + 3 * 100);
  // Re-simulating the written trace gives the same report.
  const auto again = run_cli("sched-sim --workers 4 t.trace", dir.path());
  EXPECT_EQ(again.out, r.out);
}

TEST(Cli, ModelgenAndRegister) {
  TempDir dir;
  const auto r = run_cli("--format json modelgen --block fc --layers 4 --width 1024 --input 1024", dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = json::parse(r.out);
  EXPECT_EQ(m["flops_per_sample"], 8388608);
  EXPECT_EQ(m["weight_bytes"], 16777216);
  EXPECT_EQ(m["activation_bytes_per_sample"], 32768);
  const auto reg = run_cli("modelgen --block cnn --layers 2 --width 8 --input 8 8 --repo repo --id tiny --register",
                           dir.path());
  ASSERT_EQ(reg.code, 0) << reg.err;
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "repo"));
  EXPECT_EQ(run_cli("modelgen --block cnn --layers 2 --width 8 --input 8 8 --repo repo --id tiny --register", dir.path()).code,
            1);
}

TEST(Cli, SweepHeatmapLeaderboardRecommendReplay) {
  TempDir dir;
  const auto sw = run_cli("sweep --axis batch=1,4 --axis num_layers=1,2 --concurrency-follows-batch " + kConfigs +
                              "/cnn-heatmap.conf",
                          dir.path());
  ASSERT_EQ(sw.code, 0) << sw.err;
  EXPECT_NE(sw.out.find("batch=1,num_layers=1"), std::string::npos);
  const auto lines = std::count(sw.out.begin(), sw.out.end(), '\n');
  EXPECT_EQ(lines, 4);
  EXPECT_LT(sw.out.find("batch=1,num_layers=2"), sw.out.find("batch=4,num_layers=1"));

  const auto hm = run_cli("heatmap --axis1 batch --axis2 layers --metric utilization", dir.path());
  ASSERT_EQ(hm.code, 0) << hm.err;
  EXPECT_EQ(hm.out.substr(0, hm.out.find('\n')), "batch\\layers,1,2");

  const auto q = run_cli("--format json query --model-family cnn", dir.path());
  ASSERT_EQ(q.code, 0) << q.err;
  EXPECT_EQ(json::parse(q.out).size(), 4u);

  const auto lb = run_cli("leaderboard --group-by batch --sort p99 --out-dir plots --baseline run-000001", dir.path());
  ASSERT_EQ(lb.code, 0) << lb.err;
  for (const char* f : {"leaderboard.csv", "bars.csv", "speedup.csv", "cdf_run-000001.csv", "density_run-000004.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "plots" / f)) << f;
  }

  const auto rec = run_cli("recommend --slo-p99 10 --rank-by throughput --top 2", dir.path());
  ASSERT_EQ(rec.code, 0) << rec.err;
  EXPECT_NE(rec.out.find("1. run-"), std::string::npos) << rec.out;
  EXPECT_NE(rec.out.find("2. run-"), std::string::npos) << rec.out;
  const auto none = run_cli("recommend --slo-p99 0.000001", dir.path());
  EXPECT_NE(none.out.find("nearest miss"), std::string::npos) << none.out;

  const auto rp = run_cli("replay run-000003", dir.path());
  ASSERT_EQ(rp.code, 0) << rp.err;
  EXPECT_NE(rp.out.find("digests identical"), std::string::npos);

  // A tampered record file does not replay.
  json doc = json::parse(testutil::slurp(dir.path() / "perfdb" / "records" / "run-000002.json"));
  doc["e2e"]["samples"][0] = 42.0;
  testutil::write_file(dir.path() / "tampered.json", doc.dump());
  const auto bad = run_cli("replay --no-store tampered.json", dir.path());
  EXPECT_EQ(bad.code, 2) << bad.out << bad.err;
  EXPECT_NE(bad.out.find("MISMATCH"), std::string::npos);

  // Dropping one cell makes the heat map incomplete.
  std::filesystem::remove(dir.path() / "perfdb" / "records" / "run-000004.json");
  const auto hole = run_cli("heatmap --axis1 batch --axis2 layers --model-family cnn", dir.path());
  EXPECT_EQ(hole.code, 1);
  EXPECT_NE(hole.err.find("(batch=4, layers=2)"), std::string::npos) << hole.err;
}
