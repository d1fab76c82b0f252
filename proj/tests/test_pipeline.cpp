#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "doctest.h"
#include "rtvis/pipeline.hpp"
#include "rtvis/tensor_io.hpp"

using namespace rtvis;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(const fs::path& out) {
  PipelineConfig c;
  c.height = 96;
  c.width = 160;
  c.dim = 8;
  c.queries = 6;
  c.classes = 20;
  c.frames = 7;
  c.out = out;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rtvis_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("config validation") {
  PipelineConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = [&](auto mutate) {
    PipelineConfig b;
    mutate(b);
    CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  };
  bad([](PipelineConfig& b) { b.height = 0; });
  bad([](PipelineConfig& b) { b.dim = 0; });
  bad([](PipelineConfig& b) { b.period = 0; });
  bad([](PipelineConfig& b) { b.dec_layers = 0; });
  bad([](PipelineConfig& b) { b.enc_layers = 0; });
  bad([](PipelineConfig& b) { b.rho = 1.5; });
  bad([](PipelineConfig& b) { b.frames = 0; });
}

TEST_CASE("category names") {
  const auto names = synthetic_category_names(3);
  CHECK(names == std::vector<std::string>{"category_0000", "category_0001", "category_0002"});

  const fs::path dir = scratch_dir("names");
  std::ofstream(dir / "names.txt") << "cat\n\n  dog \nbird\n";
  CHECK(read_category_names(dir / "names.txt") == std::vector<std::string>{"cat", "dog", "bird"});
  fs::remove_all(dir);
}

TEST_CASE("synthetic stream") {
  PipelineConfig c = small_config(".");
  c.rho = 1.0;
  SyntheticPyramidStream still(c);
  const FeaturePyramid f0 = still.take(0);
  CHECK(still.take(3) == f0);
  CHECK(still.take(1) == f0);
  CHECK_THROWS(still.take(1));

  c.rho = 0.5;
  SyntheticPyramidStream a(c), b(c);
  const FeaturePyramid a0 = a.take(0);
  CHECK(a0 == b.take(0));
  CHECK(a.take(1) != a0);
}

TEST_CASE("run writes masks and frame records") {
  const fs::path out = scratch_dir("run");
  const PipelineConfig c = small_config(out);
  const RunSummary s = run_pipeline(c);
  CHECK(s.decoder_invocations == 3);
  REQUIRE(s.records.size() == 7);
  for (std::size_t t = 0; t < 7; ++t) {
    CHECK(s.records[t].frame_index == t);
    CHECK(s.records[t].is_key == (t % 3 == 0));
    CHECK(s.mask_files[t] == out / mask_file_name(t));
    const Tensor m = load_tensor(s.mask_files[t]);
    CHECK(m.dims() == std::vector<std::size_t>{6, 24, 40});
    CHECK((m.storage().array() == 0.0f || m.storage().array() == 1.0f).all());
  }
  const std::string csv = slurp(out / "frames.csv");
  CHECK(csv.rfind("frame_index,is_key,decode_ms,interp_ms,mask_ms,total_ms,mode\n", 0) == 0);
  CHECK(csv.find("\n3,true,") != std::string::npos);
  CHECK(csv.find("\n4,false,") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("run is deterministic for a fixed seed") {
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  PipelineConfig ca = small_config(a), cb = small_config(b);
  run_pipeline(ca);
  run_pipeline(cb);
  for (std::size_t t = 0; t < 7; ++t) CHECK(slurp(a / mask_file_name(t)) == slurp(b / mask_file_name(t)));

  const fs::path c = scratch_dir("det_c");
  PipelineConfig cc = small_config(c);
  cc.seed = 1;
  run_pipeline(cc);
  bool differs = false;
  for (std::size_t t = 0; t < 7; ++t) differs |= slurp(a / mask_file_name(t)) != slurp(c / mask_file_name(t));
  CHECK(differs);
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("stationary synthetic stream gives the same masks for every period") {
  const fs::path full = scratch_dir("stat_full");
  PipelineConfig base = small_config(full);
  base.rho = 1.0;
  base.period = 1;
  run_pipeline(base);
  for (auto mode : {InterpMode::linear, InterpMode::nn, InterpMode::causal_nn}) {
    const fs::path dir = scratch_dir("stat_mode");
    PipelineConfig c = base;
    c.period = 3;
    c.mode = mode;
    c.out = dir;
    run_pipeline(c);
    for (std::size_t t = 0; t < 7; ++t) CHECK(slurp(dir / mask_file_name(t)) == slurp(full / mask_file_name(t)));
    fs::remove_all(dir);
  }
  fs::remove_all(full);
}

TEST_CASE("frames from a tensor directory") {
  const fs::path in = scratch_dir("input"), out = scratch_dir("input_out");
  const PipelineConfig c = small_config(out);
  const std::size_t total = FeaturePyramid::zeros(c.height, c.width, c.dim).total_tokens();

  std::mt19937_64 rng(3);
  std::normal_distribution<float> noise;
  for (std::size_t t = 0; t < 4; ++t) {
    Tensor tokens({total, c.dim});
    for (auto& v : std::span(tokens.data(), tokens.size())) v = noise(rng);
    save_tensor(in / TensorDirectoryFrames::file_name(t), tokens);
  }
  const TensorDirectoryFrames frames(in, c);
  CHECK(frames.size() == 4);
  CHECK(frames.load(2).flatten() == load_tensor(in / "frame_000002.tvt").matrix());

  const RunSummary s = run_pipeline(c, in);
  CHECK(s.records.size() == 4);
  CHECK(s.decoder_invocations == 2);

  save_tensor(in / TensorDirectoryFrames::file_name(1), Tensor({total, c.dim + 1}));
  try {
    TensorDirectoryFrames(in, c).load(1);
    FAIL("shape mismatch accepted");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).rfind("frame 1", 0) == 0);
  }
  CHECK_THROWS(TensorDirectoryFrames(out / "missing", c));
  fs::remove_all(in);
  fs::remove_all(out);
}

TEST_CASE("bench rows") {
  PipelineConfig c = small_config(".");
  c.reps = 1;
  c.warmups = 0;
  const BenchResult r = run_bench(c);
  for (const char* name : {bench_component::kVisionStub, bench_component::kHybridEnhancer,
                           bench_component::kDecoupledEnhancer, bench_component::kDecoder,
                           bench_component::kBaselineDecoder, bench_component::kMaskHead,
                           bench_component::kMemoryLookup, bench_component::kStubEncode}) {
    const BenchRow& row = r.row(name);
    CHECK(row.samples_ms.size() == 1);
    CHECK(row.unstable());
  }
  CHECK(3 * *r.row(bench_component::kDecoder).analytic_flops == *r.row(bench_component::kBaselineDecoder).analytic_flops);
  CHECK(r.to_csv().find("hybrid_enhancer,") != std::string::npos);
  CHECK(r.report.components.size() == 4);
  CHECK_THROWS_AS(r.row("gpu"), NotFoundError);

  BenchRow even{"x", {4.0, 1.0, 3.0, 2.0}, {}, {}};
  CHECK(even.median_ms() == 2.5);
  CHECK(even.min_ms() == 1.0);
  CHECK(even.max_ms() == 4.0);
  CHECK_FALSE(even.unstable());
}
