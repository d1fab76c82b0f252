// rtvis: cost reports, benchmarks, streaming runs and embedding-memory management.

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "rtvis/cost_model.hpp"
#include "rtvis/embedding_memory.hpp"
#include "rtvis/pipeline.hpp"

namespace {

using nlohmann::json;
using namespace rtvis;

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

struct SharedFlags {
  PipelineConfig config;
  std::string interp = "linear";
};

void add_shared_flags(CLI::App* cmd, SharedFlags& f) {
  auto& c = f.config;
  cmd->add_option("--height", c.height, "Input frame height")->check(CLI::PositiveNumber);
  cmd->add_option("--width", c.width, "Input frame width")->check(CLI::PositiveNumber);
  cmd->add_option("--classes", c.classes, "Number of category names / text tokens")->check(CLI::PositiveNumber);
  cmd->add_option("--queries", c.queries, "Object queries N")->check(CLI::PositiveNumber);
  cmd->add_option("--period", c.period, "Key-frame period F")->check(CLI::PositiveNumber);
  cmd->add_option("--interp", f.interp, "Interpolation mode")->check(CLI::IsMember({"linear", "nn", "causal"}));
  cmd->add_option("--enc-layers", c.enc_layers, "Scale-attention layers")->check(CLI::PositiveNumber);
  cmd->add_option("--dec-layers", c.dec_layers, "Decoder layers")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "Seed for every generator");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--reps", c.reps, "Timed repetitions")->check(CLI::PositiveNumber);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

json complexity_json(const Complexity& c) { return {{"com_t", c.time}, {"com_s", c.space}}; }

// Decoder cost per layer: queries → all pyramid tokens, then queries → queries.
Complexity decoder_cost(std::uint64_t queries, std::uint64_t tokens, std::uint64_t d, std::uint64_t layers) {
  const Complexity cross = attention_cost({queries, tokens, d});
  const Complexity self = attention_cost({queries, queries, d});
  return {(cross.time + self.time) * layers, (cross.space + self.space) * layers};
}

int cmd_cost(const SharedFlags& f, std::optional<std::uint64_t> lv, std::optional<std::uint64_t> lt) {
  const auto& c = f.config;
  const auto padded = pyramid_extents(c.height, c.width, PyramidLayout::padded);
  const auto ceiled = pyramid_extents(c.height, c.width, PyramidLayout::ceil);
  const std::uint64_t l_v = lv.value_or(padded.back().tokens());
  const std::uint64_t l_t = lt.value_or(c.classes);
  std::uint64_t ceil_total = 0;
  for (const auto& e : ceiled) ceil_total += e.tokens();

  const EnhancerComparison cmp = enhancer_comparison(l_t, l_v, c.dim);
  const std::uint64_t tokens = pyramid_token_total(l_v);
  const Complexity decoder = decoder_cost(c.queries, tokens, c.dim, c.dec_layers);
  const Complexity baseline_decoder = decoder_cost(c.queries, tokens, c.dim, 9);

  const CostReport report = build_report({
      {std::string(component::kFeatureEnhancer), cmp.modality.time, cmp.modality.space, std::nullopt,
       cmp.modality.space * sizeof(float)},
      {std::string(component::kInstanceDecoder), decoder.time, decoder.space, std::nullopt,
       decoder.space * sizeof(float)},
  });
  const CostReport baseline = build_report({
      {std::string(component::kFeatureEnhancer), cmp.hybrid.time, cmp.hybrid.space, std::nullopt,
       cmp.hybrid.space * sizeof(float)},
      {std::string(component::kInstanceDecoder), baseline_decoder.time, baseline_decoder.space, std::nullopt,
       baseline_decoder.space * sizeof(float)},
  });

  std::filesystem::create_directories(c.out);
  write_text(c.out / "cost_report.csv", report.to_csv());
  write_text(c.out / "cost_report_baseline.csv", baseline.to_csv());

  json j;
  j["decoupled"] = json::parse(report.to_json());
  j["baseline"] = json::parse(baseline.to_json());
  j["comparison"] = {{"l_t", l_t},
                     {"l_v", l_v},
                     {"d", c.dim},
                     {"hybrid", complexity_json(cmp.hybrid)},
                     {"modality", complexity_json(cmp.modality)},
                     {"quadratic_term_ratio_t", cmp.quadratic_term_ratio_t},
                     {"quadratic_term_ratio_s", cmp.quadratic_term_ratio_s},
                     {"full_ratio_t", cmp.full_ratio_t()},
                     {"full_ratio_s", cmp.full_ratio_s()}};
  j["tokens"] = {{"height", c.height},
                 {"width", c.width},
                 {"coarsest_tokens", l_v},
                 {"padded_total", tokens},
                 {"ceil_total", ceil_total}};
  write_text(c.out / "cost_report.json", j.dump(2) + "\n");

  std::cout << j["comparison"].dump() << "\n" << report.to_csv();
  return 0;
}

int cmd_bench(SharedFlags& f) {
  const BenchResult result = run_bench(f.config);
  std::filesystem::create_directories(f.config.out);
  write_text(f.config.out / "bench.csv", result.to_csv());
  write_text(f.config.out / "bench_report.csv", result.report.to_csv());
  write_text(f.config.out / "bench_report_baseline.csv", result.baseline_report.to_csv());
  json j;
  j["decoupled"] = json::parse(result.report.to_json());
  j["baseline"] = json::parse(result.baseline_report.to_json());
  write_text(f.config.out / "bench_report.json", j.dump(2) + "\n");
  std::cout << result.to_csv();
  return 0;
}

int cmd_run(SharedFlags& f, const std::string& input, const std::string& names_file) {
  std::optional<std::filesystem::path> input_dir;
  if (!input.empty()) input_dir = input;
  std::vector<std::string> names;
  if (!names_file.empty()) names = read_category_names(names_file);
  const RunSummary summary = run_pipeline(f.config, input_dir, names);
  std::cout << json{{"frames", summary.records.size()},
                    {"decoder_invocations", summary.decoder_invocations},
                    {"out", f.config.out.string()}}
                   .dump()
            << "\n";
  return 0;
}

json embedding_json(const Embedding& e) { return std::vector<double>(e.data(), e.data() + e.size()); }

int cmd_memory_build(const std::string& names_file, const std::string& memory_file, std::size_t dim,
                     std::uint64_t seed, std::size_t knn) {
  const auto names = read_category_names(names_file);
  const EmbeddingMemory memory = EmbeddingMemory::build(names, HashTextEncoder(dim, seed), knn);
  memory.save(std::filesystem::path(memory_file));
  std::cout << json{{"entries", memory.size()}, {"dim", memory.dim()}, {"knn_k", memory.knn_k()}}.dump() << "\n";
  return 0;
}

int cmd_memory_query(const std::string& memory_file, const std::string& name) {
  const EmbeddingMemory memory = EmbeddingMemory::load(std::filesystem::path(memory_file));
  json j{{"key", name}};
  if (const auto e = memory.find(name)) {
    j["found"] = true;
    j["values"] = embedding_json(*e);
  } else {
    j["found"] = false;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_memory_synth(const std::string& memory_file, const std::string& name, std::optional<std::size_t> knn) {
  EmbeddingMemory loaded = EmbeddingMemory::load(std::filesystem::path(memory_file));
  EmbeddingMemory memory(loaded.dim(), knn.value_or(loaded.knn_k()));
  if (knn) {
    for (const auto& key : loaded.keys()) memory.insert(key, loaded.get(key));
  } else {
    memory = std::move(loaded);
  }
  const SynthesisResult r = memory.get_or_synthesize(name);
  memory.save(std::filesystem::path(memory_file));
  std::cout << json{{"key", name},
                    {"synthesized", r.synthesized},
                    {"neighbors", r.neighbors},
                    {"values", embedding_json(r.embedding)}}
                   .dump()
            << "\n";
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rtvis: text-conditioned video segmentation kernels, cost model and streaming pipeline"};
  app.require_subcommand(1);

  SharedFlags shared;
  std::optional<std::uint64_t> lv, lt;
  auto* cost = app.add_subcommand("cost", "Analytic cost report for the configured shapes");
  add_shared_flags(cost, shared);
  cost->add_option("--dim", shared.config.dim, "Feature dimension d")->required()->check(CLI::PositiveNumber);
  cost->add_option("--lv", lv, "Coarsest-level token count (overrides --height/--width)")->check(CLI::PositiveNumber);
  cost->add_option("--lt", lt, "Text token count (overrides --classes)")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "Median wall-clock per component");
  add_shared_flags(bench, shared);
  bench->add_option("--dim", shared.config.dim, "Feature dimension d")->check(CLI::PositiveNumber);
  bench->add_option("--warmups", shared.config.warmups, "Discarded warm-up runs");

  std::string input, names_file;
  auto* run = app.add_subcommand("run", "Stream synthetic or stored frames through the pipeline");
  add_shared_flags(run, shared);
  run->add_option("--dim", shared.config.dim, "Feature dimension d")->check(CLI::PositiveNumber);
  run->add_option("--frames", shared.config.frames, "Synthetic frame count")->check(CLI::PositiveNumber);
  run->add_option("--rho", shared.config.rho, "Temporal correlation of synthetic frames")->check(CLI::Range(0.0, 1.0));
  run->add_option("--input", input, "Directory of frame_NNNNNN.tvt token tensors");
  run->add_option("--names", names_file, "Newline-delimited category names");

  auto* memory = app.add_subcommand("memory", "Build, query or extend an embedding memory file");
  memory->require_subcommand(1);
  std::string memory_file, name;
  std::size_t mem_dim = 256, mem_knn = EmbeddingMemory::kDefaultKnn;
  std::uint64_t mem_seed = 0;
  std::optional<std::size_t> synth_knn;
  auto* mbuild = memory->add_subcommand("build", "Encode a category list into a memory file");
  mbuild->add_option("--names", names_file, "Newline-delimited category names")->required();
  mbuild->add_option("--memory", memory_file, "Memory file to write")->required();
  mbuild->add_option("--dim", mem_dim, "Embedding dimension")->check(CLI::PositiveNumber);
  mbuild->add_option("--seed", mem_seed, "Stub encoder seed");
  mbuild->add_option("--knn", mem_knn, "Neighbours averaged for unseen names")->check(CLI::PositiveNumber);
  auto* mquery = memory->add_subcommand("query", "Print a stored embedding");
  mquery->add_option("--memory", memory_file, "Memory file")->required();
  mquery->add_option("--name", name, "Category name")->required();
  auto* msynth = memory->add_subcommand("synth", "Look up or synthesize an embedding and store it");
  msynth->add_option("--memory", memory_file, "Memory file (updated in place)")->required();
  msynth->add_option("--name", name, "Category name")->required();
  msynth->add_option("--knn", synth_knn, "Override the file's neighbour count")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    std::cerr << app.help();
    return kUsageError;
  }

  try {
    shared.config.mode = parse_interp_mode(shared.interp);
    if (*cost) return cmd_cost(shared, lv, lt);
    shared.config.validate();
    if (*bench) return cmd_bench(shared);
    if (*run) return cmd_run(shared, input, names_file);
    if (*mbuild) return cmd_memory_build(names_file, memory_file, mem_dim, mem_seed, mem_knn);
    if (*mquery) return cmd_memory_query(memory_file, name);
    if (*msynth) return cmd_memory_synth(memory_file, name, synth_knn);
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return kRuntimeError;
  }
  return kUsageError;
}
