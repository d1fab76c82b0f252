#include <limits>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "rtvis/cost_model.hpp"
#include "rtvis/errors.hpp"

using namespace rtvis;

TEST_CASE("attention cost hand values") {
  CHECK(attention_cost({2, 3, 4}) == Complexity{128, 26});
  CHECK(attention_cost({1, 1, 1}) == Complexity{4, 3});
  // evaluated separately with arbitrary-precision integers
  CHECK(attention_cost({1196, 112, 256}) == Complexity{154304512, 468800});
  CHECK_THROWS_AS(attention_cost({0, 1, 1}), std::invalid_argument);
}

TEST_CASE("attention cost is symmetric") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::uint64_t> dist(1, 100000);
  for (int i = 0; i < 500; ++i) {
    const std::uint64_t a = dist(rng), b = dist(rng), d = dist(rng) % 4096 + 1;
    CHECK(attention_cost({a, b, d}) == attention_cost({b, a, d}));
  }
}

TEST_CASE("attention cost refuses to wrap") {
  const std::uint64_t big = std::uint64_t(1) << 32;
  CHECK_THROWS_AS(attention_cost({big, big, big}), OverflowError);
  CHECK_THROWS_AS(pyramid_token_total(std::numeric_limits<std::uint64_t>::max() / 10), OverflowError);
}

TEST_CASE("pyramid token total") {
  CHECK(pyramid_token_total(1) == 85);
  CHECK(pyramid_token_total(112) == 9520);
  CHECK_THROWS_AS(pyramid_token_total(0), std::invalid_argument);
}

TEST_CASE("enhancer comparison") {
  const EnhancerComparison unit = enhancer_comparison(1, 1, 1);
  CHECK(unit.hybrid.time == 256);
  CHECK(unit.modality.time == 4);

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::uint64_t> dist(1, 5000);
  for (int i = 0; i < 300; ++i) {
    const std::uint64_t lt = dist(rng), lv = dist(rng) % 500 + 1, d = dist(rng) % 1024 + 1;
    const EnhancerComparison c = enhancer_comparison(lt, lv, d);
    CHECK(c.quadratic_term_ratio_t == 85);
    CHECK(c.quadratic_term_ratio_s == 85);
    CHECK(c.hybrid == attention_cost({85 * lv, lt, d}));
    CHECK(c.modality == attention_cost({lv, lt, d}));
    CHECK(c.full_ratio_t() < 85.0);
    CHECK(c.full_ratio_s() < 85.0);
  }
}

TEST_CASE("report totals") {
  const CostReport r = build_report({
      {std::string(component::kInstanceDecoder), 7, std::nullopt, 20.0, std::nullopt},
      {std::string(component::kTextEncoder), 3, std::nullopt, 10.0, std::nullopt},
  });
  REQUIRE(r.components.size() == 2);
  CHECK(r.components[0].name == component::kTextEncoder);
  CHECK(r.total.measured_ms == doctest::Approx(30.0));
  CHECK(r.total.analytic_flops == std::optional<std::uint64_t>(10));
  CHECK_FALSE(r.total.analytic_space_elems.has_value());
  CHECK_FALSE(r.total.measured_bytes.has_value());

  CHECK_THROWS_AS(build_report({{"GPU", 1, 1, 1.0, 1}}), std::invalid_argument);
  CHECK_THROWS_AS(build_report({{std::string(component::kTextEncoder), 1, 1, 1.0, 1},
                                {std::string(component::kTextEncoder), 1, 1, 1.0, 1}}),
                  std::invalid_argument);
}

TEST_CASE("report formats leave missing values empty") {
  const CostReport r = build_report({
      {std::string(component::kVisionEncoder), std::nullopt, std::nullopt, std::nullopt, std::nullopt},
      {std::string(component::kFeatureEnhancer), 5, 6, std::nullopt, 24},
  });
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("component,analytic_flops,analytic_space_elems,measured_ms,measured_bytes\n", 0) == 0);
  CHECK(csv.find("Feature Enhancer,5,6,,24\n") != std::string::npos);
  CHECK(csv.find("Vision Encoder (stub),,,,\n") != std::string::npos);
  CHECK(csv.substr(csv.rfind("Total")) == "Total,5,6,,24\n");

  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["components"].size() == 2);
  CHECK(j["components"][1]["component"] == "Vision Encoder (stub)");
  CHECK(j["components"][1]["measured_ms"].is_null());
  CHECK(j["total"]["analytic_flops"] == 5);
  CHECK(j["total"]["measured_ms"].is_null());
}
