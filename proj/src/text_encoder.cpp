#include <cctype>
#include <cmath>

#include "rtvis/embedding_memory.hpp"

namespace rtvis {
namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t splitmix64(std::uint64_t z) {
  z += kGolden;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// i-th value of the stream keyed by `key`, uniform in [-1, 1)
double stream_value(std::uint64_t key, std::size_t i) {
  const std::uint64_t bits = splitmix64(key + (i + 1) * kGolden);
  return 2.0 * (static_cast<double>(bits >> 11) * 0x1.0p-53) - 1.0;
}

}  // namespace

std::uint64_t hash_name(std::string_view name, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h ^ splitmix64(seed));
}

std::vector<std::string> name_tokens(std::string_view name) {
  std::string lowered(name);
  for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lowered.size() < 3) return {lowered};
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 3 <= lowered.size(); ++i) out.push_back(lowered.substr(i, 3));
  return out;
}

HashTextEncoder::HashTextEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim == 0) throw ShapeError("HashTextEncoder: dim must be positive");
  const auto d = static_cast<Eigen::Index>(dim);
  // uniform(-a, a) with a = sqrt(3/d) keeps the per-entry variance of x·W close to that of x
  const double bound = std::sqrt(3.0 / static_cast<double>(dim));
  const std::uint64_t key = splitmix64(seed ^ 0x6d6978696e67ULL);
  mixing_.resize(d, d);
  for (Eigen::Index i = 0; i < mixing_.size(); ++i) {
    mixing_.data()[i] = static_cast<float>(bound * stream_value(key, static_cast<std::size_t>(i)));
  }
}

Embedding HashTextEncoder::encode(std::string_view name) const {
  const std::vector<std::string> tokens = name_tokens(name);
  const auto d = static_cast<Eigen::Index>(dim_);
  Matrix x(static_cast<Eigen::Index>(tokens.size()), d);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::uint64_t key = hash_name(tokens[t], seed_);
    for (Eigen::Index i = 0; i < d; ++i) {
      x(static_cast<Eigen::Index>(t), i) = static_cast<float>(stream_value(key, static_cast<std::size_t>(i)));
    }
  }
  const Matrix mixed = x + (x * mixing_).array().tanh().matrix();

  Eigen::VectorXd pooled = mixed.cast<double>().colwise().mean().transpose();
  const double norm = pooled.norm();
  if (norm > 0.0) pooled /= norm;
  return pooled.cast<float>();
}

}  // namespace rtvis
