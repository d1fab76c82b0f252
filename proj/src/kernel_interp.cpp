#include "rtvis/kernel_interp.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <random>

namespace rtvis {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

KernelSource source_for(InterpMode mode) {
  switch (mode) {
    case InterpMode::linear: return KernelSource::linear;
    case InterpMode::nn: return KernelSource::nn;
    case InterpMode::causal_nn: return KernelSource::causal_nn;
  }
  return KernelSource::exact;
}

}  // namespace

std::string_view to_string(InterpMode mode) {
  switch (mode) {
    case InterpMode::linear: return "linear";
    case InterpMode::nn: return "nn";
    case InterpMode::causal_nn: return "causal";
  }
  return "?";
}

InterpMode parse_interp_mode(std::string_view text) {
  if (text == "linear") return InterpMode::linear;
  if (text == "nn") return InterpMode::nn;
  if (text == "causal" || text == "causal_nn") return InterpMode::causal_nn;
  throw std::invalid_argument("unknown interpolation mode '" + std::string(text) + "'");
}

std::pair<std::size_t, std::size_t> pixel_map_extent(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ShapeError("pixel_map_extent: input extents must be positive");
  return {(height + 3) / 4, (width + 3) / 4};
}

void KeyFrameSchedule::validate() const {
  if (period == 0) throw std::invalid_argument("KeyFrameSchedule: period must be positive");
  if (total_frames == 0) throw std::invalid_argument("KeyFrameSchedule: stream has no frames");
}

bool KeyFrameSchedule::is_key_frame(std::size_t t) const {
  validate();
  if (t >= total_frames) {
    throw std::out_of_range("KeyFrameSchedule: frame " + std::to_string(t) + " outside stream of " +
                            std::to_string(total_frames));
  }
  return t % period == 0;
}

std::size_t KeyFrameSchedule::previous_key(std::size_t t) const {
  validate();
  return t - t % period;
}

std::optional<std::size_t> KeyFrameSchedule::next_key(std::size_t t) const {
  validate();
  const std::size_t k = t % period == 0 ? t : t + (period - t % period);
  if (k >= total_frames) return std::nullopt;
  return k;
}

bool is_key_frame(const KeyFrameSchedule& schedule, std::size_t t) { return schedule.is_key_frame(t); }

QuerySet QuerySet::uniform(std::size_t count, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  QuerySet q{Matrix(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim))};
  for (Eigen::Index i = 0; i < q.queries.size(); ++i) q.queries.data()[i] = dist(rng);
  return q;
}

DecoderParams DecoderParams::zeros(std::size_t dim, std::size_t layers) {
  DecoderParams p;
  p.dim = dim;
  p.layers.assign(layers, DecoderLayer{ProjectionWeights::zeros(dim), ProjectionWeights::zeros(dim)});
  return p;
}

DecoderParams DecoderParams::uniform(std::size_t dim, std::uint64_t seed, std::size_t layers) {
  DecoderParams p;
  p.dim = dim;
  for (std::size_t i = 0; i < layers; ++i) {
    p.layers.push_back(
        {ProjectionWeights::uniform(dim, seed + 2 * i), ProjectionWeights::uniform(dim, seed + 2 * i + 1)});
  }
  return p;
}

InstanceKernelSet decode_kernels(const QuerySet& q, const FeaturePyramid& pyr, const DecoderParams& params,
                                 std::size_t frame_index, FlopReport* report) {
  if (q.queries.rows() < 1) throw ShapeError("decode_kernels: at least one query is required");
  if (static_cast<std::size_t>(q.queries.cols()) != params.dim || pyr.dim() != params.dim) {
    throw ShapeError("decode_kernels: query d=" + std::to_string(q.queries.cols()) + ", pyramid d=" +
                     std::to_string(pyr.dim()) + ", decoder d=" + std::to_string(params.dim));
  }
  const Matrix tokens = pyr.flatten();
  Matrix state = q.queries;
  for (const auto& layer : params.layers) {
    state += cross_attention(state, tokens, layer.cross, params.heads, report);
    const Matrix before = state;
    state += cross_attention(before, before, layer.self, params.heads, report);
  }
  return {std::move(state), frame_index, KernelSource::exact};
}

InstanceKernelSet interpolate_kernels(const InstanceKernelSet& prev_key, const InstanceKernelSet* next_key,
                                      std::size_t t, const KeyFrameSchedule& schedule) {
  schedule.validate();
  if (t % schedule.period == 0) {
    throw std::invalid_argument("interpolate_kernels: frame " + std::to_string(t) + " is a key frame");
  }
  if (prev_key.frame_index > t) throw std::invalid_argument("interpolate_kernels: previous key frame is after t");
  if (next_key) {
    if (next_key->frame_index < t) throw std::invalid_argument("interpolate_kernels: next key frame is before t");
    if (next_key->kernels.rows() != prev_key.kernels.rows() || next_key->kernels.cols() != prev_key.kernels.cols()) {
      throw ShapeError("interpolate_kernels: key kernel sets differ in shape");
    }
  }

  InstanceKernelSet out{prev_key.kernels, t, source_for(schedule.mode)};
  if (!next_key || schedule.mode == InterpMode::causal_nn) return out;

  const std::size_t before = t - prev_key.frame_index;
  const std::size_t after = next_key->frame_index - t;
  if (schedule.mode == InterpMode::nn) {
    if (after < before) out.kernels = next_key->kernels;  // ties stay with the earlier key frame
    return out;
  }
  // std::lerp is exact at both ends and returns a when a == b.
  const float alpha = static_cast<float>(before) / static_cast<float>(before + after);
  out.kernels = prev_key.kernels.binaryExpr(next_key->kernels, [alpha](float a, float b) { return std::lerp(a, b, alpha); });
  return out;
}

MaskPrediction predict_masks(const InstanceKernelSet& k, const PixelEmbeddingMap& m, float threshold) {
  if (m.map.rank() != 3) throw ShapeError("predict_masks: pixel map must be d×h×w");
  if (k.dim() != m.dim()) {
    throw ShapeError("predict_masks: kernel d=" + std::to_string(k.dim()) + " but pixel map d=" +
                     std::to_string(m.dim()));
  }
  const std::vector<std::size_t> dims = {k.count(), m.height(), m.width()};
  MaskPrediction out{Tensor(dims), Tensor(dims), Tensor(dims)};
  out.logits.matrix().noalias() = k.kernels * m.map.matrix();
  out.probs.storage() = sigmoid(out.logits.storage().array()).matrix();
  out.binary.storage() = (out.probs.storage().array() >= threshold).cast<float>().matrix();
  return out;
}

StreamResult run_stream(FrameSource& frames, const QuerySet& q, const KeyFrameSchedule& schedule,
                        const DecoderParams& params, const StreamOptions& options) {
  schedule.validate();
  const std::size_t total = frames.size();
  if (total == 0) throw std::invalid_argument("run_stream: empty frame sequence");
  if (schedule.total_frames != total) {
    throw std::invalid_argument("run_stream: schedule covers " + std::to_string(schedule.total_frames) +
                                " frames but the source has " + std::to_string(total));
  }

  StreamResult result;
  result.costs.resize(total);
  std::map<std::size_t, InstanceKernelSet> keys;

  auto decode = [&](std::size_t k) -> const InstanceKernelSet& {
    if (auto it = keys.find(k); it != keys.end()) return it->second;
    FrameCost& cost = result.costs[k];
    const auto start = Clock::now();
    auto kernels = decode_kernels(q, frames.frame(k).pyramid, params, k, &cost.decoder_flops);
    cost.decode_ms = elapsed_ms(start);
    ++result.decoder_invocations;
    return keys.emplace(k, std::move(kernels)).first->second;
  };

  for (std::size_t t = 0; t < total; ++t) {
    FrameCost& cost = result.costs[t];
    cost.frame_index = t;
    cost.is_key = schedule.is_key_frame(t);

    InstanceKernelSet kernels;
    if (cost.is_key) {
      kernels = decode(t);
      cost.source = KernelSource::exact;
    } else {
      const InstanceKernelSet& prev = decode(schedule.previous_key(t));
      const InstanceKernelSet* next = nullptr;
      if (schedule.mode != InterpMode::causal_nn) {
        if (auto nk = schedule.next_key(t)) next = &decode(*nk);
      }
      const auto start = Clock::now();
      kernels = interpolate_kernels(prev, next, t, schedule);
      cost.interp_ms = elapsed_ms(start);
      cost.source = kernels.source;
    }
    keys.erase(keys.begin(), keys.lower_bound(schedule.previous_key(t)));

    const auto start = Clock::now();
    MaskPrediction masks = predict_masks(kernels, frames.frame(t).pixels, options.threshold);
    cost.mask_ms = elapsed_ms(start);

    if (options.observer) options.observer(t, masks, cost);
    if (options.retain_masks) result.masks.push_back(std::move(masks));
  }
  return result;
}

}  // namespace rtvis
