#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rtvis {

/// Two cross-attended sequences of lengths l1 and l2 with width d.
struct CostParams {
  std::uint64_t l1 = 0;
  std::uint64_t l2 = 0;
  std::uint64_t d = 0;
};

struct Complexity {
  std::uint64_t time = 0;   // multiply-adds
  std::uint64_t space = 0;  // elements
  friend bool operator==(const Complexity&, const Complexity&) = default;
};

/// time  = 2·L1·L2·d + (L1+L2)·d²
/// space = L1·L2 + (L1+L2)·d
/// Exact integer arithmetic; throws OverflowError rather than wrapping.
Complexity attention_cost(const CostParams& p);

/// Tokens in a four-level pyramid whose levels double per scale: 85·l_v.
std::uint64_t pyramid_token_total(std::uint64_t l_v);

struct EnhancerComparison {
  Complexity hybrid;    // all 85·L_v visual tokens against L_t text tokens
  Complexity modality;  // L_v coarsest tokens against L_t text tokens
  std::uint64_t quadratic_term_ratio_t = 0;
  std::uint64_t quadratic_term_ratio_s = 0;

  double full_ratio_t() const { return double(hybrid.time) / double(modality.time); }
  double full_ratio_s() const { return double(hybrid.space) / double(modality.space); }
};

EnhancerComparison enhancer_comparison(std::uint64_t l_t, std::uint64_t l_v, std::uint64_t d);

namespace component {
inline constexpr std::string_view kTextEncoder = "Text Encoder";
inline constexpr std::string_view kFeatureEnhancer = "Feature Enhancer";
inline constexpr std::string_view kInstanceDecoder = "Instance Decoder";
inline constexpr std::string_view kVisionEncoder = "Vision Encoder (stub)";
inline constexpr std::string_view kTotal = "Total";
}  // namespace component

struct ComponentCost {
  std::string name;
  std::optional<std::uint64_t> analytic_flops;
  std::optional<std::uint64_t> analytic_space_elems;
  std::optional<double> measured_ms;
  std::optional<std::uint64_t> measured_bytes;
};

/// Per-component efficiency table with a Total row summing each populated column.
struct CostReport {
  std::vector<ComponentCost> components;  // canonical component order
  ComponentCost total;

  std::string to_csv() const;
  std::string to_json() const;
};

/// Rows may come in any order and must name distinct known components.
CostReport build_report(std::vector<ComponentCost> rows);

}  // namespace rtvis
