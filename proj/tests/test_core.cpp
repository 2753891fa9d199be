#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "servebench/digest.hpp"
#include "servebench/job_spec.hpp"
#include "servebench/job_status.hpp"
#include "servebench/model.hpp"
#include "servebench/model_repository.hpp"
#include "servebench/workload.hpp"
#include "test_util.hpp"

using namespace servebench;
using testutil::TempDir;

// ---------------------------------------------------------------------------
// Job specs
// ---------------------------------------------------------------------------
namespace {
const char* kMinimal = R"({
  "job_name": "mini",
  "model": {"generate": {"block": "fc", "num_layers": 1, "width": 8}},
  "workload": {"pattern": "constant", "rate": 10, "num_requests": 5}
})";

std::string expect_validation(const std::string& text) {
  try {
    parse_job_spec(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no validation error for " << text;
  return {};
}
}  // namespace

TEST(JobSpec, MinimalSpecIsDefaulted) {
  const JobSpec s = parse_job_spec(kMinimal);
  EXPECT_EQ(s.backend.kind, BackendKind::sim);
  EXPECT_EQ(s.backend.hardware_id, "G1");
  EXPECT_EQ(s.backend.batching.mode, BatchingMode::static_batch);
  EXPECT_EQ(s.backend.batching.batch_size, 1u);
  EXPECT_EQ(s.collect.percentiles, (std::vector<double>{0.5, 0.95, 0.99}));
  EXPECT_EQ(s.seed, fnv1a64("mini"));
  EXPECT_EQ(s.workload.seed, s.seed);
  EXPECT_EQ(s.backend.network, network_preset(NetworkKind::lan));
  EXPECT_DOUBLE_EQ(s.carbon_intensity, 475.0);
}

TEST(JobSpec, DynamicBatchingNeedsQueueDelay) {
  const std::string msg = expect_validation(R"({
    "model": {"generate": {"block": "fc", "num_layers": 1, "width": 8}},
    "backend": {"batching": {"mode": "dynamic", "batch_size": 8}},
    "workload": {"pattern": "constant", "rate": 10, "num_requests": 5}})");
  EXPECT_NE(msg.find("max_queue_delay required"), std::string::npos) << msg;
}

TEST(JobSpec, PoissonRateCarriedThrough) {
  const JobSpec s = parse_job_spec(R"({
    "model": {"generate": {"block": "fc", "num_layers": 1, "width": 8}},
    "workload": {"pattern": "poisson", "rate": 30, "duration": 60}})");
  EXPECT_EQ(s.workload.pattern, ArrivalPattern::poisson);
  EXPECT_DOUBLE_EQ(s.workload.rate, 30.0);
}

TEST(JobSpec, UnknownKeysRejectedWithPath) {
  const std::string msg = expect_validation(R"({
    "model": {"generate": {"block": "fc", "num_layers": 1, "width": 8}},
    "backend": {"batching": {"size": 4}},
    "workload": {"pattern": "constant", "rate": 10, "num_requests": 5}})");
  EXPECT_NE(msg.find("backend.batching.size"), std::string::npos) << msg;
}

TEST(JobSpec, SyntaxErrorReportsPosition) {
  try {
    parse_job_spec("{\n  \"job_name\": \"x\",\n  \"model\": oops\n}");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_GT(e.column(), 1u);
  }
}

TEST(JobSpec, ValidationCovers) {
  const std::string model = R"("model": {"generate": {"block": "fc", "num_layers": 1, "width": 8}})";
  EXPECT_NE(expect_validation("{" + model + R"(, "workload": {"pattern": "poisson", "rate": 0, "num_requests": 5}})")
                .find("rate"),
            std::string::npos);
  EXPECT_NE(expect_validation("{" + model + R"(, "workload": {"pattern": "constant", "rate": 1, "num_requests": 5, "duration": 3}})")
                .find("exactly one"),
            std::string::npos);
  EXPECT_NE(expect_validation("{" + model + R"(, "collect": {"percentiles": [0.5, 1.0]}, "workload": {"pattern": "constant", "rate": 1, "num_requests": 5}})")
                .find("percentiles"),
            std::string::npos);
  EXPECT_NE(expect_validation("{" + model + R"(, "backend": {"hardware_id": "G9"}, "workload": {"pattern": "constant", "rate": 1, "num_requests": 5}})")
                .find("G9"),
            std::string::npos);
  EXPECT_NE(expect_validation("{" + model + R"(, "estimated_duration": 0, "workload": {"pattern": "constant", "rate": 1, "num_requests": 5}})")
                .find("estimated_duration"),
            std::string::npos);
  EXPECT_NE(expect_validation(R"({"model": {"generate": {"block": "rnn", "num_layers": 1, "width": 8}}, "workload": {"pattern": "constant", "rate": 1, "num_requests": 5}})")
                .find("seq_len"),
            std::string::npos);
  EXPECT_NE(expect_validation("{" + model + R"(, "workload": {"pattern": "burst", "burst": {"base_rate": 1, "peak_rate": 5, "period": 1, "duty": 1.5}, "duration": 5}})")
                .find("duty"),
            std::string::npos);
}

namespace {
JobSpec random_spec(std::mt19937_64& rng, const std::string& repo) {
  auto pick = [&](auto... xs) {
    const std::vector<std::common_type_t<decltype(xs)...>> v{xs...};
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  JobSpec s;
  s.job_name = "job-" + std::to_string(rng() % 1000);
  s.user = pick(std::string("alice"), std::string("bob"));
  s.seed = rng();
  switch (rng() % 3) {
    case 0: {
      GeneratorParams p;
      p.block = pick(BlockKind::fc, BlockKind::cnn, BlockKind::rnn, BlockKind::transformer);
      p.num_layers = 1 + rng() % 8;
      p.width = 1 + rng() % 512;
      p.precision_bytes = pick(4u, 2u);
      if (needs_seq_len(p.block)) p.seq_len = 1 + rng() % 64;
      if (p.block == BlockKind::cnn) p.input_dims = {1 + rng() % 32, 1 + rng() % 32};
      s.model = p;
      break;
    }
    case 1: s.model = generate_model({BlockKind::fc, 2, 64}); break;
    default: s.model = RepositoryRef{repo, "m1"}; break;
  }
  s.backend.hardware_id = pick(std::string("G1"), std::string("G2"), std::string("G3"), std::string("G4"));
  s.backend.batching.batch_size = 1 + rng() % 64;
  if (rng() % 2) {
    s.backend.batching.mode = BatchingMode::dynamic_batch;
    s.backend.batching.max_queue_delay = static_cast<double>(rng() % 100) / 1000.0;
  }
  s.backend.network = pick(network_preset(NetworkKind::lan), network_preset(NetworkKind::lte),
                           NetworkSpec{NetworkKind::custom, 0.01, 1e7});
  s.backend.numeric_precision = pick(Precision::fp32, Precision::fp16);
  s.backend.sim.compute_efficiency = 0.1 + static_cast<double>(rng() % 90) / 100.0;
  s.backend.sim.profile = pick(SimProfile::tfs_like, SimProfile::tris_like);
  s.workload.pattern = pick(ArrivalPattern::poisson, ArrivalPattern::constant, ArrivalPattern::closed_loop, ArrivalPattern::burst);
  s.workload.seed = rng();
  if (s.workload.pattern == ArrivalPattern::closed_loop) s.workload.concurrency = 1 + rng() % 16;
  if (s.workload.pattern == ArrivalPattern::burst) s.workload.burst = {1.0, 20.0, 2.0, 0.25};
  if (s.workload.pattern == ArrivalPattern::poisson || s.workload.pattern == ArrivalPattern::constant) {
    s.workload.rate = 1 + static_cast<double>(rng() % 1000) / 7.0;
  }
  if (rng() % 2) s.workload.num_requests = 1 + rng() % 1000;
  else s.workload.duration = 0.5 + static_cast<double>(rng() % 100) / 3.0;
  s.workload.payload.synthetic_bytes = rng() % 200000;
  if (rng() % 2) s.slo = SloSpec{0.05, std::nullopt};
  s.collect.percentiles = {0.9, 0.999};
  s.collect.digest = pick(DigestKind::exact, DigestKind::histogram);
  s.collect.warmup = static_cast<double>(rng() % 5);
  s.processors.pre = {pick(std::string("byte_resize"), std::string("passthrough")), std::nullopt};
  if (rng() % 2) s.processors.post = {"label_lookup", 0.003};
  s.estimated_duration = 1 + static_cast<double>(rng() % 600);
  s.carbon_intensity = static_cast<double>(rng() % 900);
  return s;
}
}  // namespace

TEST(JobSpec, EmitParseRoundTripProperty) {
  TempDir dir;
  ModelRepository repo(dir.path());
  ModelDescriptor m = generate_model({BlockKind::fc, 2, 16});
  m.model_id = "m1";
  repo.register_model(m);
  std::mt19937_64 rng(42);
  for (int i = 0; i < 300; ++i) {
    const JobSpec s = random_spec(rng, dir.str());
    const std::string text = emit_job_spec(s);
    const JobSpec back = parse_job_spec(text);
    ASSERT_EQ(emit_job_spec(back), text);
    ASSERT_EQ(back, s) << text;
  }
}

// ---------------------------------------------------------------------------
// Hardware catalog
// ---------------------------------------------------------------------------
TEST(HardwareCatalog, BundledValuesMatchTable) {
  const HardwareCatalog c;
  struct Row {
    const char* id;
    double fp32, fp16, bw, mem;
  };
  // TFLOPS -> FLOP/s, GB/s -> bytes/s, GB -> bytes.
  for (const Row& r : {Row{"G1", 15.7, 31.4, 900, 32}, Row{"G2", 14.25, 28.5, 616, 11}, Row{"G3", 8.1, 16.2, 300, 16},
                       Row{"G4", 5.5, 11.0, 192, 8}}) {
    const auto& h = c.at(r.id);
    EXPECT_DOUBLE_EQ(h.peak_flops_fp32, r.fp32 * 1e12) << r.id;
    EXPECT_DOUBLE_EQ(h.peak_flops_fp16, r.fp16 * 1e12) << r.id;
    EXPECT_DOUBLE_EQ(h.mem_bandwidth, r.bw * 1e9) << r.id;
    EXPECT_DOUBLE_EQ(h.mem_capacity, r.mem * 1e9) << r.id;
    EXPECT_TRUE(h.cloud_offers.empty());
  }
  EXPECT_DOUBLE_EQ(c.at("G1").peak_flops_fp32, 15.7e12);
  EXPECT_DOUBLE_EQ(c.at("G1").mem_bandwidth, 900e9);
  EXPECT_DOUBLE_EQ(c.at("G4").peak_flops_fp32, 5.5e12);
  EXPECT_DOUBLE_EQ(c.at("G4").mem_bandwidth, 192e9);
  EXPECT_THROW(c.at("G7"), NotFoundError);
}

TEST(HardwareCatalog, FileOverlaysAndExtends) {
  const auto c = parse_hardware_catalog(R"({"schema_version": 1, "hardware": [
    {"id": "G1", "tdp_power": 250, "cloud_offers": [{"provider_label": "C1", "instance_label": "I1", "hourly_rate": 3.0}]},
    {"id": "X1", "name": "x", "peak_flops_fp32": 1e12, "peak_flops_fp16": 2e12, "mem_bandwidth": 1e11, "mem_capacity": 1e9, "tdp_power": 10}]})");
  EXPECT_DOUBLE_EQ(c.at("G1").tdp_power, 250);
  EXPECT_DOUBLE_EQ(c.at("G1").peak_flops_fp32, 15.7e12);
  EXPECT_EQ(c.at("G1").cloud_offers.size(), 1u);
  EXPECT_DOUBLE_EQ(c.at("X1").mem_bandwidth, 1e11);
  EXPECT_TRUE(c.find("G4"));
}

TEST(HardwareCatalog, RejectsDuplicatesAndNonPositive) {
  EXPECT_THROW(parse_hardware_catalog(R"({"hardware": [{"id": "G1"}, {"id": "G1"}]})"), ValidationError);
  EXPECT_THROW(parse_hardware_catalog(R"({"hardware": [{"id": "G1", "mem_bandwidth": 0}]})"), ValidationError);
  EXPECT_THROW(parse_hardware_catalog(R"({"hardware": [{"id": "G1", "cloud_offers": [{"hourly_rate": -1}]}]})"), ValidationError);
  EXPECT_THROW(parse_hardware_catalog(R"({"hardware": [{"id": "Z", "peak_flops_fp32": 1}]})"), ValidationError);
  EXPECT_THROW(load_hardware_catalog("/nonexistent/catalog.json"), NotFoundError);
}

TEST(HardwareCatalog, BundledConfigLoads) {
  const auto c = load_hardware_catalog(std::string(SB_CONFIG_DIR) + "/hardware_catalog.json");
  EXPECT_TRUE(c.find("C1-slow"));
  EXPECT_DOUBLE_EQ(c.at("G1").peak_flops_fp32, 15.7e12);
  EXPECT_FALSE(c.at("G1").cloud_offers.empty());
}

// ---------------------------------------------------------------------------
// Model generator
// ---------------------------------------------------------------------------
TEST(ModelGen, Fc4x1024MatchesPerLayerHandCount) {
  const auto m = generate_model({BlockKind::fc, 4, 1024, 0, {1024}, 4});
  std::uint64_t flops = 0, weights = 0, acts = 0;
  std::uint64_t n_in = 1024;
  for (int l = 0; l < 4; ++l) {
    const std::uint64_t n_out = 1024;
    flops += 2 * n_in * n_out;
    weights += n_in * n_out * 4;
    acts += (n_in + n_out) * 4;
    n_in = n_out;
  }
  EXPECT_EQ(m.flops_per_sample, flops);
  EXPECT_EQ(m.flops_per_sample, 8'388'608u);
  EXPECT_EQ(m.weight_bytes, 16'777'216u);
  EXPECT_EQ(m.weight_bytes, weights);
  EXPECT_EQ(m.activation_bytes_per_sample, acts);
  EXPECT_EQ(m.activation_bytes_per_sample, 32'768u);
  EXPECT_EQ(m.family, "fc");
}

TEST(ModelGen, MinimalFc) {
  const auto m = generate_model({BlockKind::fc, 1, 1, 0, {1}, 4});
  EXPECT_EQ(m.flops_per_sample, 2u);
  EXPECT_EQ(m.weight_bytes, 4u);
  EXPECT_EQ(m.activation_bytes_per_sample, 8u);
}

TEST(ModelGen, TransformerSmallInstanceSublayerCount) {
  const std::uint64_t d = 2, s = 2;
  // Per token: Q, K, V and output projections (d x d each), scores q.k over
  // s keys, weighted sum of s values, FFN d -> 4d -> d. 2 FLOP per MAC.
  const std::uint64_t qkvo = 4 * (2 * d * d);
  const std::uint64_t scores = 2 * s * d;
  const std::uint64_t weighted = 2 * s * d;
  const std::uint64_t ffn = 2 * (d * 4 * d) + 2 * (4 * d * d);
  const std::uint64_t per_sample = s * (qkvo + scores + weighted + ffn);
  const auto m = generate_model({BlockKind::transformer, 1, d, s, {}, 4});
  EXPECT_EQ(per_sample, 224u);
  EXPECT_EQ(m.flops_per_sample, per_sample);
  // Weight accounting convention: 12d^2 attention plus 8d^2 feed-forward per block.
  EXPECT_EQ(m.weight_bytes, (12 * d * d + 8 * d * d) * 4);
  for (std::uint64_t L : {1u, 3u, 6u}) {
    for (std::uint64_t w : {16u, 64u}) {
      for (std::uint64_t sl : {8u, 128u}) {
        EXPECT_EQ(generate_model({BlockKind::transformer, L, w, sl, {}, 4}).flops_per_sample, L * sl * (24 * w * w + 4 * sl * w));
      }
    }
  }
}

TEST(ModelGen, CnnAndRnnFormulas) {
  const auto c = generate_model({BlockKind::cnn, 2, 16, 0, {8, 8}, 4});
  EXPECT_EQ(c.flops_per_sample, 2u * 2 * (2 * 9 * 16 * 16 * 8 * 8));
  EXPECT_EQ(c.weight_bytes, 2u * 2 * 9 * 16 * 16 * 4);
  const auto r = generate_model({BlockKind::rnn, 1, 32, 10, {16}, 2});
  EXPECT_EQ(r.flops_per_sample, 8u * 32 * (32 + 16) * 10);
  EXPECT_EQ(r.weight_bytes, 4u * 32 * (32 + 16) * 2);
}

TEST(ModelGen, FlopsLinearInLayers) {
  for (BlockKind b : {BlockKind::fc, BlockKind::cnn, BlockKind::rnn, BlockKind::transformer}) {
    GeneratorParams p{b, 1, 64, needs_seq_len(b) ? 16u : 0u, {}, 4};
    if (b == BlockKind::cnn) p.input_dims = {14, 14};
    const auto one = generate_model(p);
    // fc's first layer is input_dims[0] wide; default input is width, so every layer is equal.
    for (std::uint64_t L = 2; L <= 8; ++L) {
      p.num_layers = L;
      EXPECT_EQ(generate_model(p).flops_per_sample, L * one.flops_per_sample) << to_string(b);
    }
  }
}

TEST(ModelGen, IntensityIncreasingAndBounded) {
  for (BlockKind b : {BlockKind::fc, BlockKind::cnn, BlockKind::rnn, BlockKind::transformer}) {
    for (std::uint64_t w : {8u, 256u, 1024u}) {
      GeneratorParams p{b, 3, w, needs_seq_len(b) ? 32u : 0u, {}, 4};
      if (b == BlockKind::cnn) p.input_dims = {7, 7};
      const auto m = generate_model(p);
      double prev = 0;
      for (int batch = 1; batch <= 1024; ++batch) {
        const double i = m.intensity(batch);
        ASSERT_GT(i, prev) << to_string(b) << " w=" << w << " b=" << batch;
        ASSERT_LT(i, m.intensity_limit());
        prev = i;
      }
    }
  }
}

TEST(ModelGen, OverflowRejected) {
  EXPECT_THROW(generate_model({BlockKind::fc, 1000, 1ull << 31, 0, {}, 4}), ValidationError);
  EXPECT_THROW(generate_model({BlockKind::transformer, 1ull << 40, 1ull << 20, 1ull << 20, {}, 4}), ValidationError);
  EXPECT_THROW(validate(GeneratorParams{BlockKind::fc, 0, 8}), ValidationError);
}

TEST(ModelGen, SweepGridOrderAndCount) {
  const GeneratorParams base{BlockKind::fc, 1, 1, 0, {}, 4};
  const auto g = sweep_grid(base, {{"layers", {2, 4}}, {"width", {256, 512}}});
  ASSERT_EQ(g.size(), 4u);
  const std::vector<std::pair<std::uint64_t, std::uint64_t>> want{{2, 256}, {2, 512}, {4, 256}, {4, 512}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(g[i].params->num_layers, want[i].first);
    EXPECT_EQ(g[i].params->width, want[i].second);
  }
  EXPECT_EQ(sweep_grid(base, {{"layers", {1, 2, 3, 4, 5, 6, 7, 8}}, {"width", {128, 256, 512, 1024}}}).size(), 32u);
  EXPECT_THROW(sweep_grid(base, {{"layers", {}}}), ValidationError);
  EXPECT_THROW(sweep_grid(base, {{"depth", {1}}}), ValidationError);
}

// ---------------------------------------------------------------------------
// Model repository
// ---------------------------------------------------------------------------
TEST(ModelRepository, RegisterSearchUpdateDelete) {
  TempDir dir;
  ModelRepository repo(dir.path());
  auto m = generate_model({BlockKind::cnn, 2, 32, 0, {8, 8}, 4});
  repo.register_model(m);
  const auto hits = repo.search({std::string("cnn"), {}});
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].model_id, m.model_id);
  EXPECT_EQ(repo.search({std::string("cnn"), {{"layers", 2}}}).size(), 1u);
  EXPECT_TRUE(repo.search({std::string("cnn"), {{"layers", 3}}}).empty());
  EXPECT_TRUE(repo.search({std::string("fc"), {}}).empty());

  EXPECT_THROW(repo.register_model(m), ConflictError);
  repo.update(m);
  EXPECT_EQ(repo.update(m).version, 3);
  EXPECT_EQ(ModelRepository(dir.path()).get(m.model_id)->version, 3);  // persisted, rescanned

  EXPECT_THROW(repo.remove("nope"), NotFoundError);
  auto missing = m;
  missing.model_id = "nope";
  EXPECT_THROW(repo.update(missing), NotFoundError);
}

TEST(ModelRepository, RegisterThenDeleteIsIdentity) {
  TempDir dir;
  ModelRepository repo(dir.path());
  repo.register_model(generate_model({BlockKind::fc, 1, 4, 0, {}, 4}));
  const auto before = repo.search({});
  auto extra = generate_model({BlockKind::rnn, 1, 4, 3, {}, 4});
  repo.register_model(extra);
  repo.remove(extra.model_id);
  EXPECT_EQ(repo.search({}), before);
  EXPECT_EQ(ModelRepository(dir.path()).search({}), before);
}

// ---------------------------------------------------------------------------
// Workload
// ---------------------------------------------------------------------------
namespace {
WorkloadSpec workload(ArrivalPattern p, double rate, std::optional<std::uint64_t> n, std::optional<double> dur = {}) {
  WorkloadSpec w;
  w.pattern = p;
  w.rate = rate;
  w.num_requests = n;
  w.duration = dur;
  w.seed = 7;
  return w;
}
}  // namespace

TEST(Workload, ConstantSpacing) {
  const auto s = gen_arrivals(workload(ArrivalPattern::constant, 10, 3));
  ASSERT_EQ(s.offsets.size(), 3u);
  EXPECT_DOUBLE_EQ(s.offsets[0], 0.0);
  EXPECT_DOUBLE_EQ(s.offsets[1], 0.1);
  EXPECT_DOUBLE_EQ(s.offsets[2], 0.2);
}

TEST(Workload, PoissonStatisticsAndDeterminism) {
  const auto w = workload(ArrivalPattern::poisson, 30, 10000);
  const auto s = gen_arrivals(w);
  ASSERT_EQ(s.offsets.size(), 10000u);
  std::vector<double> gaps;
  double prev = 0;
  for (double t : s.offsets) {
    ASSERT_GE(t, prev);
    gaps.push_back(t - prev);
    prev = t;
  }
  double mean = 0;
  for (double g : gaps) mean += g;
  mean /= static_cast<double>(gaps.size());
  double var = 0;
  for (double g : gaps) var += (g - mean) * (g - mean);
  var /= static_cast<double>(gaps.size() - 1);
  EXPECT_NEAR(1.0 / mean, 30.0, 1.5);
  EXPECT_NEAR(std::sqrt(var) / mean, 1.0, 0.05);
  EXPECT_EQ(gen_arrivals(w).offsets, s.offsets);
  auto w2 = w;
  w2.seed = 8;
  EXPECT_NE(gen_arrivals(w2).offsets, s.offsets);
}

TEST(Workload, DurationBoundedRunsStopAtDuration) {
  const auto s = gen_arrivals(workload(ArrivalPattern::poisson, 100, std::nullopt, 10.0));
  ASSERT_FALSE(s.offsets.empty());
  EXPECT_LT(s.offsets.back(), 10.0);
  EXPECT_NEAR(static_cast<double>(s.offsets.size()), 1000.0, 120.0);
}

TEST(Workload, BurstAlternatesRates) {
  WorkloadSpec w = workload(ArrivalPattern::burst, 0, std::nullopt, 200.0);
  w.burst = {5.0, 50.0, 10.0, 0.2};
  const auto s = gen_arrivals(w);
  std::size_t peak = 0, base = 0;
  for (double t : s.offsets) (std::fmod(t, 10.0) < 2.0 ? peak : base)++;
  // 40 s at peak, 160 s at base.
  EXPECT_NEAR(static_cast<double>(peak) / 40.0, 50.0, 5.0);
  EXPECT_NEAR(static_cast<double>(base) / 160.0, 5.0, 1.0);
}

TEST(Workload, ScheduleFileRoundTripAndReplay) {
  TempDir dir;
  const auto s = gen_arrivals(workload(ArrivalPattern::poisson, 30, 50));
  const auto path = dir.path() / "sched.txt";
  testutil::write_file(path, format_schedule(s));
  EXPECT_EQ(parse_schedule(format_schedule(s)).offsets, s.offsets);
  WorkloadSpec r;
  r.pattern = ArrivalPattern::replay;
  r.replay_file = path.string();
  EXPECT_EQ(gen_arrivals(r).offsets, s.offsets);
  try {
    parse_schedule("0.1\n0.2\nabc\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_schedule("0.2\n0.1\n"), ParseError);
}

TEST(Workload, SyntheticPayloadSizeAndDeterminism) {
  WorkloadSpec w = workload(ArrivalPattern::constant, 1, 1);
  w.payload.synthetic_bytes = 224 * 224 * 3;
  const auto p = gen_payload(w, 5);
  EXPECT_EQ(p.bytes.size(), 150528u);
  EXPECT_EQ(gen_payload(w, 5).bytes, p.bytes);
  EXPECT_NE(gen_payload(w, 6).bytes, p.bytes);
  EXPECT_EQ(payload_size(w, {}, 5), 150528u);
}

TEST(Workload, DatasetRoundRobinSortedByName) {
  TempDir dir;
  testutil::write_file(dir.path() / "b.jpg", "bbbb");
  testutil::write_file(dir.path() / "a.jpg", "aa");
  WorkloadSpec w = workload(ArrivalPattern::constant, 1, 1);
  w.payload.dataset_dir = dir.str();
  EXPECT_EQ(gen_payload(w, 0).payload_id, "a.jpg");
  EXPECT_EQ(gen_payload(w, 1).payload_id, "b.jpg");
  EXPECT_EQ(gen_payload(w, 2).payload_id, "a.jpg");
  EXPECT_EQ(gen_payload(w, 2).bytes, "aa");
  TempDir empty;
  w.payload.dataset_dir = empty.str();
  EXPECT_THROW(gen_payload(w, 0), ValidationError);
}

// ---------------------------------------------------------------------------
// Digest
// ---------------------------------------------------------------------------
TEST(Digest, NearestRankOnSmallSet) {
  LatencyDigest d;
  for (int i = 100; i >= 1; --i) d.record(i);
  EXPECT_DOUBLE_EQ(d.percentile(0.99), 99);
  EXPECT_DOUBLE_EQ(d.percentile(0.5), 50);
  EXPECT_DOUBLE_EQ(d.percentile(0.01), 1);
  EXPECT_DOUBLE_EQ(d.percentile(0.07), 7);
  EXPECT_DOUBLE_EQ(d.min(), 1);
  EXPECT_DOUBLE_EQ(d.max(), 100);
  EXPECT_DOUBLE_EQ(d.mean(), 50.5);
  EXPECT_THROW(LatencyDigest().percentile(0.5), UserError);
  EXPECT_THROW(d.percentile(1.0), ValidationError);
}

TEST(Digest, ExactMatchesSortOracleHistogramWithinOnePercent) {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> expo(100.0);
  LatencyDigest exact, hist(LatencyDigest::Mode::histogram);
  std::vector<double> xs;
  for (int i = 0; i < 10000; ++i) {
    const double v = expo(rng);
    xs.push_back(v);
    exact.record(v);
    hist.record(v);
  }
  std::sort(xs.begin(), xs.end());
  for (double q : {0.001, 0.1, 0.25, 0.5, 0.9, 0.95, 0.99, 0.999}) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * 10000.0)) - 1;
    EXPECT_EQ(exact.percentile(q), xs[idx]) << q;
    EXPECT_LE(testutil::rel_err(hist.percentile(q), xs[idx]), 0.01) << q;
  }
}

TEST(Digest, JsonRoundTrip) {
  LatencyDigest e, h(LatencyDigest::Mode::histogram);
  for (double v : {0.001, 0.5, 0.25, 0.0}) {
    e.record(v);
    h.record(v);
  }
  EXPECT_EQ(LatencyDigest::from_json(e.to_json()), e);
  EXPECT_EQ(LatencyDigest::from_json(h.to_json()), h);
  EXPECT_EQ(LatencyDigest::from_json(json::parse(h.to_json().dump())).percentile(0.5), h.percentile(0.5));
}

// ---------------------------------------------------------------------------
// Job status
// ---------------------------------------------------------------------------
TEST(JobStatus, LifecycleAndFailure) {
  auto s = JobStatus::create("j1", 1.0);
  EXPECT_FALSE(s.advance(JobState::running, 2.0));
  EXPECT_TRUE(s.advance(JobState::queued, 2.0));
  EXPECT_TRUE(s.advance(JobState::running, 3.0));
  EXPECT_EQ(*s.started_at, 3.0);
  EXPECT_FALSE(s.finished_at);
  EXPECT_TRUE(s.advance(JobState::collecting, 4.0));
  EXPECT_TRUE(s.advance(JobState::done, 5.0));
  EXPECT_EQ(*s.finished_at, 5.0);
  EXPECT_FALSE(s.advance(JobState::failed, 6.0));
  EXPECT_EQ(job_status_from_json(to_json(s)).history.size(), 5u);

  auto f = JobStatus::create("j2", 0);
  f.advance(JobState::queued, 1);
  EXPECT_TRUE(f.advance(JobState::submitted, 2, "requeued"));
  EXPECT_FALSE(f.finished_at);
  EXPECT_TRUE(f.advance(JobState::failed, 3, "worker lost"));
  EXPECT_EQ(f.reason, "worker lost");
  EXPECT_TRUE(f.finished_at);
}
