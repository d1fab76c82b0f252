#include "rtvis/cost_model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <stdexcept>

#include "json.hpp"
#include "rtvis/errors.hpp"

namespace rtvis {
namespace {

std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) throw OverflowError("cost model: 64-bit overflow in multiplication");
  return r;
}

std::uint64_t add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) throw OverflowError("cost model: 64-bit overflow in addition");
  return r;
}

void require_positive(std::uint64_t v, const char* name) {
  if (v == 0) throw std::invalid_argument(std::string("cost model: ") + name + " must be positive");
}

constexpr std::array<std::string_view, 4> kOrder = {component::kTextEncoder, component::kFeatureEnhancer,
                                                    component::kInstanceDecoder, component::kVisionEncoder};

std::string format_ms(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

template <typename T>
std::string csv_cell(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) {
    return format_ms(*v);
  } else {
    return std::to_string(*v);
  }
}

template <typename T>
nlohmann::json json_cell(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json row_json(const ComponentCost& c) {
  return {{"component", c.name},
          {"analytic_flops", json_cell(c.analytic_flops)},
          {"analytic_space_elems", json_cell(c.analytic_space_elems)},
          {"measured_ms", json_cell(c.measured_ms)},
          {"measured_bytes", json_cell(c.measured_bytes)}};
}

template <typename T, typename Add>
std::optional<T> column_sum(const std::vector<ComponentCost>& rows, std::optional<T> ComponentCost::*field, Add add_fn) {
  std::optional<T> total;
  for (const auto& r : rows) {
    if (const auto& v = r.*field) total = total ? add_fn(*total, *v) : *v;
  }
  return total;
}

}  // namespace

Complexity attention_cost(const CostParams& p) {
  require_positive(p.l1, "L1");
  require_positive(p.l2, "L2");
  require_positive(p.d, "d");
  const std::uint64_t pair = mul(p.l1, p.l2);
  const std::uint64_t lengths = add(p.l1, p.l2);
  return {add(mul(2, mul(pair, p.d)), mul(lengths, mul(p.d, p.d))), add(pair, mul(lengths, p.d))};
}

std::uint64_t pyramid_token_total(std::uint64_t l_v) {
  require_positive(l_v, "L_v");
  return mul(1 + 4 + 16 + 64, l_v);
}

EnhancerComparison enhancer_comparison(std::uint64_t l_t, std::uint64_t l_v, std::uint64_t d) {
  EnhancerComparison c;
  c.hybrid = attention_cost({pyramid_token_total(l_v), l_t, d});
  c.modality = attention_cost({l_v, l_t, d});
  const std::uint64_t hybrid_quad_t = mul(2, mul(mul(pyramid_token_total(l_v), l_t), d));
  const std::uint64_t modality_quad_t = mul(2, mul(mul(l_v, l_t), d));
  const std::uint64_t hybrid_quad_s = mul(pyramid_token_total(l_v), l_t);
  const std::uint64_t modality_quad_s = mul(l_v, l_t);
  if (hybrid_quad_t % modality_quad_t != 0 || hybrid_quad_s % modality_quad_s != 0) {
    throw std::logic_error("enhancer_comparison: quadratic terms are not an integer multiple");
  }
  c.quadratic_term_ratio_t = hybrid_quad_t / modality_quad_t;
  c.quadratic_term_ratio_s = hybrid_quad_s / modality_quad_s;
  return c;
}

CostReport build_report(std::vector<ComponentCost> rows) {
  for (const auto& r : rows) {
    if (std::find(kOrder.begin(), kOrder.end(), r.name) == kOrder.end()) {
      throw std::invalid_argument("build_report: unknown component '" + r.name + "'");
    }
    if (std::count_if(rows.begin(), rows.end(), [&](const ComponentCost& o) { return o.name == r.name; }) > 1) {
      throw std::invalid_argument("build_report: duplicate component '" + r.name + "'");
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ComponentCost& a, const ComponentCost& b) {
    return std::find(kOrder.begin(), kOrder.end(), a.name) < std::find(kOrder.begin(), kOrder.end(), b.name);
  });

  CostReport report;
  report.total.name = std::string(component::kTotal);
  report.total.analytic_flops = column_sum(rows, &ComponentCost::analytic_flops, add);
  report.total.analytic_space_elems = column_sum(rows, &ComponentCost::analytic_space_elems, add);
  report.total.measured_ms = column_sum(rows, &ComponentCost::measured_ms, [](double a, double b) { return a + b; });
  report.total.measured_bytes = column_sum(rows, &ComponentCost::measured_bytes, add);
  report.components = std::move(rows);
  return report;
}

std::string CostReport::to_csv() const {
  std::string out = "component,analytic_flops,analytic_space_elems,measured_ms,measured_bytes\n";
  auto emit = [&](const ComponentCost& c) {
    out += c.name + "," + csv_cell(c.analytic_flops) + "," + csv_cell(c.analytic_space_elems) + "," +
           csv_cell(c.measured_ms) + "," + csv_cell(c.measured_bytes) + "\n";
  };
  for (const auto& c : components) emit(c);
  emit(total);
  return out;
}

std::string CostReport::to_json() const {
  nlohmann::json j;
  j["components"] = nlohmann::json::array();
  for (const auto& c : components) j["components"].push_back(row_json(c));
  j["total"] = row_json(total);
  return j.dump(2);
}

}  // namespace rtvis
