#include "rtvis/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rtvis/tensor_io.hpp"

namespace rtvis {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string numbered(const char* prefix, std::size_t t, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%06zu%s", prefix, t, suffix);
  return buf;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

std::uint64_t enhancer_flops(const FlopReport& r) {
  return r.analytic_time() + r.scale_projection + r.scale_heads + r.scale_sampling;
}

}  // namespace

void PipelineConfig::validate() const {
  if (height == 0 || width == 0) throw std::invalid_argument("config: height and width must be positive");
  if (dim == 0 || queries == 0 || classes == 0) throw std::invalid_argument("config: dim, queries and classes must be positive");
  if (period == 0) throw std::invalid_argument("config: period must be positive");
  if (enc_layers == 0 || dec_layers == 0 || baseline_dec_layers == 0) {
    throw std::invalid_argument("config: layer counts must be at least 1");
  }
  if (frames == 0) throw std::invalid_argument("config: frames must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("config: rho must lie in [0, 1]");
}

std::vector<std::string> synthetic_category_names(std::size_t count) {
  std::vector<std::string> names;
  names.reserve(count);
  char buf[32];
  for (std::size_t i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof(buf), "category_%04zu", i);
    names.emplace_back(buf);
  }
  return names;
}

std::vector<std::string> read_category_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    names.push_back(line.substr(first, last - first + 1));
  }
  return names;
}

SyntheticPyramidStream::SyntheticPyramidStream(const PipelineConfig& config)
    : shape_(FeaturePyramid::zeros(config.height, config.width, config.dim, config.layout)),
      rho_(config.rho),
      rng_(config.seed) {}

FeaturePyramid SyntheticPyramidStream::take(std::size_t t) {
  std::normal_distribution<float> noise(0.0f, 1.0f);
  const float keep = static_cast<float>(rho_);
  const float fresh = static_cast<float>(std::sqrt(1.0 - rho_ * rho_));
  while (next_ <= t) {
    FeaturePyramid frame = shape_;
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
      Matrix& tokens = frame.tokens(l);
      for (Eigen::Index i = 0; i < tokens.size(); ++i) tokens.data()[i] = noise(rng_);
    }
    if (next_ > 0) {
      for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        frame.tokens(l) = keep * shape_.tokens(l) + fresh * frame.tokens(l);
      }
    }
    shape_ = frame;  // previous frame for the recurrence
    cache_.emplace(next_, std::move(frame));
    ++next_;
  }
  auto it = cache_.find(t);
  if (it == cache_.end()) throw std::logic_error("SyntheticPyramidStream: frame " + std::to_string(t) + " already taken");
  FeaturePyramid out = std::move(it->second);
  cache_.erase(it);
  return out;
}

PixelEmbeddingMap pixel_embedding(const FeaturePyramid& enhanced, std::size_t height, std::size_t width,
                                  const Matrix& projection, std::size_t frame_index) {
  const std::size_t d = enhanced.dim();
  if (static_cast<std::size_t>(projection.rows()) != d || static_cast<std::size_t>(projection.cols()) != d) {
    throw ShapeError("pixel_embedding: projection must be d×d");
  }
  const auto [h4, w4] = pixel_map_extent(height, width);
  const Tensor fine = enhanced.level_tensor(0);
  Matrix samples(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h4 * w4));
  for (std::size_t y = 0; y < h4; ++y) {
    for (std::size_t x = 0; x < w4; ++x) {
      // centre of a stride-4 cell in stride-8 grid coordinates
      const double y8 = (static_cast<double>(y) + 0.5) * 0.5 - 0.5;
      const double x8 = (static_cast<double>(x) + 0.5) * 0.5 - 0.5;
      samples.col(static_cast<Eigen::Index>(y * w4 + x)) = bilinear_sample(fine, y8, x8);
    }
  }
  PixelEmbeddingMap out{Tensor({d, h4, w4}), frame_index};
  out.map.matrix().noalias() = projection.transpose() * samples;
  return out;
}

PipelineModel PipelineModel::create(const PipelineConfig& config, const EmbeddingMemory& memory,
                                    const std::vector<std::string>& names) {
  std::mt19937_64 rng(config.seed + 200);
  std::uniform_real_distribution<float> dist(-0.1f, 0.1f);
  Matrix projection(static_cast<Eigen::Index>(config.dim), static_cast<Eigen::Index>(config.dim));
  for (Eigen::Index i = 0; i < projection.size(); ++i) projection.data()[i] = dist(rng);
  return {TextTokenBatch(memory.gather(names)), AttentionParams::uniform(config.dim, config.seed + 100, config.enc_layers),
          std::move(projection), QuerySet::uniform(config.queries, config.dim, config.seed + 300),
          DecoderParams::uniform(config.dim, config.seed + 400, config.dec_layers)};
}

PipelineFrameSource::PipelineFrameSource(std::size_t frames, RawProvider raw, const PipelineModel& model,
                                         const PipelineConfig& config)
    : frames_(frames), raw_(std::move(raw)), model_(model), config_(config) {}

const StreamFrame& PipelineFrameSource::frame(std::size_t t) {
  if (t >= frames_) throw std::out_of_range("frame " + std::to_string(t) + " outside stream");
  if (auto it = cache_.find(t); it != cache_.end()) return it->second;

  FeaturePyramid raw = raw_(t);
  const auto start = Clock::now();
  auto [enhanced, text] = decoupled_feature_enhancer(raw, model_.text, model_.enhancer);
  enhancer_ms_[t] = elapsed_ms(start);
  PixelEmbeddingMap pixels = pixel_embedding(enhanced, config_.height, config_.width, model_.pixel_projection, t);

  cache_.erase(cache_.begin(), cache_.lower_bound(t));
  return cache_.emplace(t, StreamFrame{std::move(enhanced), std::move(pixels)}).first->second;
}

double PipelineFrameSource::enhancer_ms(std::size_t t) const {
  auto it = enhancer_ms_.find(t);
  return it == enhancer_ms_.end() ? 0.0 : it->second;
}

TensorDirectoryFrames::TensorDirectoryFrames(std::filesystem::path dir, const PipelineConfig& config)
    : shape_(FeaturePyramid::zeros(config.height, config.width, config.dim, config.layout)) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("frame directory " + dir.string() + " not found");
  for (std::size_t t = 0;; ++t) {
    auto path = dir / file_name(t);
    if (!std::filesystem::exists(path)) break;
    files_.push_back(std::move(path));
  }
  if (files_.empty()) throw std::runtime_error("no frame_000000.tvt in " + dir.string());
}

std::filesystem::path TensorDirectoryFrames::file_name(std::size_t t) { return numbered("frame_", t, ".tvt"); }

FeaturePyramid TensorDirectoryFrames::load(std::size_t t) const {
  Tensor tokens = [&] {
    try {
      return load_tensor(files_.at(t));
    } catch (const std::exception& e) {
      throw std::runtime_error("frame " + std::to_string(t) + ": " + e.what());
    }
  }();
  if (tokens.rank() != 2 || tokens.extent(0) != shape_.total_tokens() || tokens.extent(1) != shape_.dim()) {
    throw ShapeError("frame " + std::to_string(t) + ": expected " + std::to_string(shape_.total_tokens()) + "x" +
                     std::to_string(shape_.dim()) + " tokens, got " + shape_string(tokens.dims()));
  }
  FeaturePyramid out = shape_;
  out.assign_flat(Matrix(tokens.matrix()));
  return out;
}

std::string frame_records_csv(const std::vector<FrameRecord>& records) {
  std::string out = "frame_index,is_key,decode_ms,interp_ms,mask_ms,total_ms,mode\n";
  for (const auto& r : records) {
    out += std::to_string(r.frame_index) + "," + (r.is_key ? "true" : "false") + "," + format_double(r.decode_ms) +
           "," + format_double(r.interp_ms) + "," + format_double(r.mask_ms) + "," + format_double(r.total_ms) + "," +
           std::string(to_string(r.mode)) + "\n";
  }
  return out;
}

std::filesystem::path mask_file_name(std::size_t t) { return numbered("mask_", t, ".tvt"); }

RunSummary run_pipeline(const PipelineConfig& config, const std::optional<std::filesystem::path>& input_dir,
                        const std::vector<std::string>& names) {
  config.validate();
  std::filesystem::create_directories(config.out);

  const std::vector<std::string> categories = names.empty() ? synthetic_category_names(config.classes) : names;
  const EmbeddingMemory memory = EmbeddingMemory::build(categories, HashTextEncoder(config.dim, config.seed));
  const PipelineModel model = PipelineModel::create(config, memory, categories);

  std::optional<TensorDirectoryFrames> directory;
  std::optional<SyntheticPyramidStream> synthetic;
  PipelineFrameSource::RawProvider raw;
  std::size_t frame_count = config.frames;
  if (input_dir) {
    directory.emplace(*input_dir, config);
    frame_count = directory->size();
    raw = [&](std::size_t t) { return directory->load(t); };
  } else {
    synthetic.emplace(config);
    raw = [&](std::size_t t) { return synthetic->take(t); };
  }
  PipelineFrameSource source(frame_count, raw, model, config);

  RunSummary summary;
  StreamOptions options;
  options.retain_masks = false;
  options.observer = [&](std::size_t t, const MaskPrediction& masks, const FrameCost& cost) {
    auto path = config.out / mask_file_name(t);
    save_tensor(path, masks.binary);
    summary.mask_files.push_back(std::move(path));
    summary.records.push_back(
        {t, cost.is_key, cost.decode_ms, cost.interp_ms, cost.mask_ms, cost.total_ms(), config.mode});
  };
  const KeyFrameSchedule schedule{config.period, frame_count, config.mode};
  const StreamResult result = run_stream(source, model.queries, schedule, model.decoder, options);
  summary.decoder_invocations = result.decoder_invocations;

  std::ofstream csv(config.out / "frames.csv");
  csv << frame_records_csv(summary.records);
  if (!csv) throw std::runtime_error("failed to write frames.csv");
  return summary;
}

double BenchRow::median_ms() const {
  if (samples_ms.empty()) return 0.0;
  std::vector<double> s = samples_ms;
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

double BenchRow::min_ms() const {
  return samples_ms.empty() ? 0.0 : *std::min_element(samples_ms.begin(), samples_ms.end());
}

double BenchRow::max_ms() const {
  return samples_ms.empty() ? 0.0 : *std::max_element(samples_ms.begin(), samples_ms.end());
}

const BenchRow& BenchResult::row(const std::string& component) const {
  for (const auto& r : rows) {
    if (r.component == component) return r;
  }
  throw NotFoundError("bench: no row '" + component + "'");
}

std::string BenchResult::to_csv() const {
  std::string out = "component,median_ms,min_ms,max_ms,reps,unstable,analytic_flops,analytic_space_elems\n";
  for (const auto& r : rows) {
    out += r.component + "," + format_double(r.median_ms()) + "," + format_double(r.min_ms()) + "," +
           format_double(r.max_ms()) + "," + std::to_string(r.samples_ms.size()) + "," +
           (r.unstable() ? "true" : "false") + "," + (r.analytic_flops ? std::to_string(*r.analytic_flops) : "") +
           "," + (r.analytic_space_elems ? std::to_string(*r.analytic_space_elems) : "") + "\n";
  }
  return out;
}

BenchResult run_bench(const PipelineConfig& config) {
  config.validate();
  namespace bc = bench_component;
  BenchResult result;
  const std::size_t reps = config.reps, warm = config.warmups;

  const std::vector<std::string> names = synthetic_category_names(config.classes);
  const HashTextEncoder encoder(config.dim, config.seed);
  const EmbeddingMemory memory = EmbeddingMemory::build(names, encoder);
  const PipelineModel model = PipelineModel::create(config, memory, names);
  AttentionParams hybrid_params = model.enhancer;
  const DecoderParams baseline_decoder = DecoderParams::uniform(config.dim, config.seed + 400, config.baseline_dec_layers);

  FeaturePyramid raw = SyntheticPyramidStream(config).take(0);
  result.rows.push_back(time_component(bc::kVisionStub, reps, warm, [&] {
    SyntheticPyramidStream stream(config);
    raw = stream.take(0);
  }));

  FlopReport hybrid_flops, decoupled_flops, decoder_flops, baseline_flops;
  hybrid_modality_scale_attention(raw, model.text, hybrid_params, &hybrid_flops);
  const FeaturePyramid enhanced = decoupled_feature_enhancer(raw, model.text, model.enhancer, &decoupled_flops).first;
  decode_kernels(model.queries, enhanced, model.decoder, 0, &decoder_flops);
  decode_kernels(model.queries, enhanced, baseline_decoder, 0, &baseline_flops);

  auto with_flops = [](BenchRow row, std::uint64_t flops, std::uint64_t space) {
    row.analytic_flops = flops;
    row.analytic_space_elems = space;
    return row;
  };

  result.rows.push_back(with_flops(time_component(bc::kHybridEnhancer, reps, warm,
                                                  [&] { hybrid_modality_scale_attention(raw, model.text, hybrid_params); }),
                                   hybrid_flops.analytic_time(), hybrid_flops.analytic_space()));
  result.rows.push_back(with_flops(time_component(bc::kDecoupledEnhancer, reps, warm,
                                                  [&] { decoupled_feature_enhancer(raw, model.text, model.enhancer); }),
                                   enhancer_flops(decoupled_flops), decoupled_flops.analytic_space()));

  InstanceKernelSet kernels = decode_kernels(model.queries, enhanced, model.decoder);
  result.rows.push_back(with_flops(time_component(bc::kDecoder, reps, warm,
                                                  [&] { kernels = decode_kernels(model.queries, enhanced, model.decoder); }),
                                   decoder_flops.analytic_time(), decoder_flops.analytic_space()));
  result.rows.push_back(with_flops(time_component(bc::kBaselineDecoder, reps, warm,
                                                  [&] { decode_kernels(model.queries, enhanced, baseline_decoder); }),
                                   baseline_flops.analytic_time(), baseline_flops.analytic_space()));

  const PixelEmbeddingMap pixels = pixel_embedding(enhanced, config.height, config.width, model.pixel_projection, 0);
  result.rows.push_back(time_component(bc::kMaskHead, reps, warm, [&] { predict_masks(kernels, pixels); }));
  result.rows.back().analytic_flops = kernels.count() * kernels.dim() * pixels.height() * pixels.width();

  volatile float sink = 0.0f;
  result.rows.push_back(time_component(bc::kMemoryLookup, reps, warm, [&] {
    float acc = 0.0f;
    for (const auto& n : names) acc += (*memory.find(n))[0];
    sink = sink + acc;
  }));
  result.rows.push_back(time_component(bc::kStubEncode, reps, warm, [&] {
    float acc = 0.0f;
    for (const auto& n : names) acc += encoder.encode(n)[0];
    sink = sink + acc;
  }));

  const std::uint64_t memory_bytes = std::uint64_t(names.size()) * config.dim * sizeof(float);
  const auto& lookup = result.row(bc::kMemoryLookup);
  const auto& encode = result.row(bc::kStubEncode);
  const auto& vision = result.row(bc::kVisionStub);
  result.report = build_report({
      {std::string(component::kTextEncoder), std::nullopt, std::nullopt, lookup.median_ms(), memory_bytes},
      {std::string(component::kFeatureEnhancer), enhancer_flops(decoupled_flops), decoupled_flops.analytic_space(),
       result.row(bc::kDecoupledEnhancer).median_ms(), decoupled_flops.analytic_space() * sizeof(float)},
      {std::string(component::kInstanceDecoder), decoder_flops.analytic_time(), decoder_flops.analytic_space(),
       result.row(bc::kDecoder).median_ms(), decoder_flops.analytic_space() * sizeof(float)},
      {std::string(component::kVisionEncoder), std::nullopt, std::nullopt, vision.median_ms(), std::nullopt},
  });
  result.baseline_report = build_report({
      {std::string(component::kTextEncoder), std::nullopt, std::nullopt, encode.median_ms(), std::nullopt},
      {std::string(component::kFeatureEnhancer), hybrid_flops.analytic_time(), hybrid_flops.analytic_space(),
       result.row(bc::kHybridEnhancer).median_ms(), hybrid_flops.analytic_space() * sizeof(float)},
      {std::string(component::kInstanceDecoder), baseline_flops.analytic_time(), baseline_flops.analytic_space(),
       result.row(bc::kBaselineDecoder).median_ms(), baseline_flops.analytic_space() * sizeof(float)},
      {std::string(component::kVisionEncoder), std::nullopt, std::nullopt, vision.median_ms(), std::nullopt},
  });
  return result;
}

}  // namespace rtvis
