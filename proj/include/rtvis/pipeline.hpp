#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rtvis/attention.hpp"
#include "rtvis/cost_model.hpp"
#include "rtvis/embedding_memory.hpp"
#include "rtvis/kernel_interp.hpp"
#include "rtvis/pyramid.hpp"

namespace rtvis {

struct PipelineConfig {
  std::size_t height = 480;
  std::size_t width = 854;
  std::size_t dim = 256;
  std::size_t queries = 300;
  std::size_t classes = 1196;
  std::size_t period = 3;
  InterpMode mode = InterpMode::linear;
  std::uint64_t seed = 0;
  std::size_t enc_layers = 3;
  std::size_t dec_layers = 3;
  std::size_t baseline_dec_layers = 9;
  std::size_t frames = 9;
  double rho = 0.9;  // temporal correlation of synthetic frames
  PyramidLayout layout = PyramidLayout::padded;
  std::size_t reps = 10;
  std::size_t warmups = 3;
  std::filesystem::path out = ".";

  void validate() const;
};

/// "category_0000", "category_0001", ...
std::vector<std::string> synthetic_category_names(std::size_t count);

/// Reads one category per line, skipping blank lines and trimming whitespace.
std::vector<std::string> read_category_names(const std::filesystem::path& path);

/// Stand-in for the vision backbone: a seeded AR(1) sequence of pyramids,
///   frame(0) = noise, frame(t) = rho·frame(t-1) + sqrt(1-rho²)·noise.
/// Frames are generated in order; frames skipped over are cached until taken.
class SyntheticPyramidStream {
 public:
  explicit SyntheticPyramidStream(const PipelineConfig& config);
  /// Hands out frame t. Each frame can be taken once.
  FeaturePyramid take(std::size_t t);

 private:
  FeaturePyramid shape_;
  double rho_;
  std::mt19937_64 rng_;
  std::size_t next_ = 0;
  std::map<std::size_t, FeaturePyramid> cache_;
};

/// 1/4-resolution pixel embeddings: bilinear upsampling of the enhanced
/// stride-8 level followed by a d×d projection.
PixelEmbeddingMap pixel_embedding(const FeaturePyramid& enhanced, std::size_t height, std::size_t width,
                                  const Matrix& projection, std::size_t frame_index);

/// Everything a frame needs besides its raw pyramid.
struct PipelineModel {
  TextTokenBatch text;
  AttentionParams enhancer;
  Matrix pixel_projection;
  QuerySet queries;
  DecoderParams decoder;

  static PipelineModel create(const PipelineConfig& config, const EmbeddingMemory& memory,
                              const std::vector<std::string>& names);
};

/// Produces enhanced frames lazily from a raw pyramid provider.
class PipelineFrameSource final : public FrameSource {
 public:
  using RawProvider = std::function<FeaturePyramid(std::size_t)>;

  PipelineFrameSource(std::size_t frames, RawProvider raw, const PipelineModel& model, const PipelineConfig& config);
  std::size_t size() const override { return frames_; }
  const StreamFrame& frame(std::size_t t) override;
  double enhancer_ms(std::size_t t) const;

 private:
  std::size_t frames_;
  RawProvider raw_;
  const PipelineModel& model_;
  const PipelineConfig& config_;
  std::map<std::size_t, StreamFrame> cache_;
  std::map<std::size_t, double> enhancer_ms_;
};

/// Reads frame_NNNNNN.tvt files, each a (total_tokens × d) tensor of pyramid
/// tokens stacked fine to coarse for the configured resolution.
class TensorDirectoryFrames {
 public:
  TensorDirectoryFrames(std::filesystem::path dir, const PipelineConfig& config);
  std::size_t size() const noexcept { return files_.size(); }
  FeaturePyramid load(std::size_t t) const;
  static std::filesystem::path file_name(std::size_t t);

 private:
  std::vector<std::filesystem::path> files_;
  FeaturePyramid shape_;
};

struct FrameRecord {
  std::size_t frame_index = 0;
  bool is_key = false;
  double decode_ms = 0.0;
  double interp_ms = 0.0;
  double mask_ms = 0.0;
  double total_ms = 0.0;
  InterpMode mode = InterpMode::linear;
};

std::string frame_records_csv(const std::vector<FrameRecord>& records);

struct RunSummary {
  std::vector<FrameRecord> records;
  std::vector<std::filesystem::path> mask_files;
  std::size_t decoder_invocations = 0;
};

std::filesystem::path mask_file_name(std::size_t t);

/// memory build → decoupled enhancer → key-frame decode / interpolation →
/// mask head, writing binary masks (TVT1) and frames.csv into config.out.
/// `input_dir` switches the frame source from the synthetic stream to TVT1 files.
RunSummary run_pipeline(const PipelineConfig& config, const std::optional<std::filesystem::path>& input_dir = {},
                        const std::vector<std::string>& names = {});

struct BenchRow {
  std::string component;
  std::vector<double> samples_ms;
  std::optional<std::uint64_t> analytic_flops;
  std::optional<std::uint64_t> analytic_space_elems;

  double median_ms() const;
  double min_ms() const;
  double max_ms() const;
  bool unstable() const { return samples_ms.size() < 2; }
};

struct BenchResult {
  std::vector<BenchRow> rows;
  CostReport report;  // Table-1 shaped: decoupled pipeline components
  CostReport baseline_report;  // hybrid enhancer, baseline decoder, per-frame encoding

  const BenchRow& row(const std::string& component) const;
  std::string to_csv() const;
};

namespace bench_component {
inline constexpr const char* kVisionStub = "vision_stub";
inline constexpr const char* kHybridEnhancer = "hybrid_enhancer";
inline constexpr const char* kDecoupledEnhancer = "decoupled_enhancer";
inline constexpr const char* kDecoder = "instance_decoder";
inline constexpr const char* kBaselineDecoder = "instance_decoder_baseline";
inline constexpr const char* kMaskHead = "mask_head";
inline constexpr const char* kMemoryLookup = "memory_lookup";
inline constexpr const char* kStubEncode = "stub_encode";
}  // namespace bench_component

BenchResult run_bench(const PipelineConfig& config);

/// Times `fn` `reps` times after `warmups` discarded calls.
template <typename Fn>
BenchRow time_component(std::string name, std::size_t reps, std::size_t warmups, Fn&& fn) {
  using Clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmups; ++i) fn();
  BenchRow row;
  row.component = std::move(name);
  row.samples_ms.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto start = Clock::now();
    fn();
    row.samples_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
  }
  return row;
}

}  // namespace rtvis
