#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rtvis/attention.hpp"
#include "rtvis/pyramid.hpp"
#include "rtvis/tensor.hpp"

namespace rtvis {

enum class InterpMode { linear, nn, causal_nn };

std::string_view to_string(InterpMode mode);
/// Accepts "linear", "nn", "causal" and "causal_nn".
InterpMode parse_interp_mode(std::string_view text);

enum class KernelSource { exact, linear, nn, causal_nn };

/// N instance kernels of width d for one frame.
struct InstanceKernelSet {
  Matrix kernels;  // N × d
  std::size_t frame_index = 0;
  KernelSource source = KernelSource::exact;

  std::size_t count() const noexcept { return static_cast<std::size_t>(kernels.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(kernels.cols()); }
};

/// d × ceil(H/4) × ceil(W/4) pixel embeddings of one frame.
struct PixelEmbeddingMap {
  Tensor map;
  std::size_t frame_index = 0;

  std::size_t dim() const { return map.extent(0); }
  std::size_t height() const { return map.extent(1); }
  std::size_t width() const { return map.extent(2); }
};

/// Extents of the 1/4-resolution pixel map for an H×W input.
std::pair<std::size_t, std::size_t> pixel_map_extent(std::size_t height, std::size_t width);

struct KeyFrameSchedule {
  std::size_t period = 3;
  std::size_t total_frames = 0;
  InterpMode mode = InterpMode::linear;

  void validate() const;
  bool is_key_frame(std::size_t t) const;
  /// Latest key frame ≤ t.
  std::size_t previous_key(std::size_t t) const;
  /// Earliest key frame ≥ t inside the stream, if any.
  std::optional<std::size_t> next_key(std::size_t t) const;
};

bool is_key_frame(const KeyFrameSchedule& schedule, std::size_t t);

/// N learned object queries.
struct QuerySet {
  Matrix queries;  // N × d
  static QuerySet uniform(std::size_t count, std::size_t dim, std::uint64_t seed);
};

struct DecoderLayer {
  ProjectionWeights cross;  // queries → pyramid tokens
  ProjectionWeights self;   // queries → queries
};

struct DecoderParams {
  std::size_t dim = 0;
  std::size_t heads = 1;
  std::vector<DecoderLayer> layers;

  static constexpr std::size_t kDefaultLayers = 3;
  static DecoderParams zeros(std::size_t dim, std::size_t layers = kDefaultLayers);
  static DecoderParams uniform(std::size_t dim, std::uint64_t seed, std::size_t layers = kDefaultLayers);
};

/// K = Dec(Q): per layer, cross-attention from the queries to all pyramid
/// tokens then self-attention among the queries, each with a residual.
InstanceKernelSet decode_kernels(const QuerySet& q, const FeaturePyramid& pyr, const DecoderParams& params,
                                 std::size_t frame_index = 0, FlopReport* report = nullptr);

/// Proxy kernels for non-key frame t from the surrounding key frames.
/// `next_key` may be absent at the tail of a stream, in which case linear and
/// nn clamp to `prev_key`.
InstanceKernelSet interpolate_kernels(const InstanceKernelSet& prev_key, const InstanceKernelSet* next_key,
                                      std::size_t t, const KeyFrameSchedule& schedule);

struct MaskPrediction {
  Tensor logits;  // N × h × w
  Tensor probs;
  Tensor binary;  // 0/1 values
};

inline constexpr float kDefaultMaskThreshold = 0.5f;

/// m = K ⋆ M as a 1×1 convolution; binary = probs ≥ threshold.
MaskPrediction predict_masks(const InstanceKernelSet& k, const PixelEmbeddingMap& m,
                             float threshold = kDefaultMaskThreshold);

struct StreamFrame {
  FeaturePyramid pyramid;
  PixelEmbeddingMap pixels;
};

/// Random-access frame provider for run_stream. Implementations may produce
/// frames lazily; run_stream only requests what the interpolation mode needs.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t size() const = 0;
  virtual const StreamFrame& frame(std::size_t t) = 0;
};

/// In-memory frame list.
class VectorFrameSource final : public FrameSource {
 public:
  explicit VectorFrameSource(std::vector<StreamFrame> frames) : frames_(std::move(frames)) {}
  std::size_t size() const override { return frames_.size(); }
  const StreamFrame& frame(std::size_t t) override { return frames_.at(t); }

 private:
  std::vector<StreamFrame> frames_;
};

struct FrameCost {
  std::size_t frame_index = 0;
  bool is_key = false;
  KernelSource source = KernelSource::exact;
  double decode_ms = 0.0;
  double interp_ms = 0.0;
  double mask_ms = 0.0;
  FlopReport decoder_flops;
  double total_ms() const { return decode_ms + interp_ms + mask_ms; }
};

struct StreamResult {
  std::vector<MaskPrediction> masks;
  std::vector<FrameCost> costs;
  std::size_t decoder_invocations = 0;
};

/// Called once per frame, in order, as soon as that frame's masks exist.
using FrameObserver = std::function<void(std::size_t t, const MaskPrediction&, const FrameCost&)>;

struct StreamOptions {
  float threshold = kDefaultMaskThreshold;
  bool retain_masks = true;  // false: masks only reach the observer
  FrameObserver observer;
};

/// Decodes key frames and interpolates the rest. In causal_nn mode frame t is
/// emitted before any frame after t is requested from `frames`; linear and nn
/// read one key frame ahead. `schedule.total_frames` must equal frames.size().
StreamResult run_stream(FrameSource& frames, const QuerySet& q, const KeyFrameSchedule& schedule,
                        const DecoderParams& params, const StreamOptions& options = {});

}  // namespace rtvis
