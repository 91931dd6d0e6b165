#include "doctest.h"
#include "dpa/click_model.hpp"
#include "dpa/conversion.hpp"

using namespace dpa;
using namespace dpa::conversion;

TEST_CASE("correction inverts positives over clicks plus positives") {
  CHECK(correct_prediction(0.0) == 0.0);
  CHECK(correct_prediction(0.2) == doctest::Approx(0.25));
  CHECK(correct_prediction(0.6) == 1.0);
  CHECK_THROWS_AS(correct_prediction(1.0), Error);
}

TEST_CASE("bid is capped by the group bid") {
  CHECK(bid_final(0.1, 500, 100) == 50.0);
  CHECK(bid_final(0.5, 500, 100) == 100.0);
  CHECK(bid_final(0.0, 500, 100) == 0.0);
  CHECK_THROWS_AS(bid_final(-0.1, 500, 100), Error);
}

TEST_CASE("target CPA from retargeting, else best prospecting type") {
  AdvertiserPerf p;
  p.advertiser_id = "a0";
  p.spend_by_type[DpaType::retargeting] = 10000;
  p.conversions_by_type[DpaType::retargeting] = 100;
  CHECK(compute_tcpa(p) == 150);

  AdvertiserPerf q;
  q.spend_by_type[DpaType::conversion_prospecting] = 9000;
  q.conversions_by_type[DpaType::conversion_prospecting] = 30;
  q.spend_by_type[DpaType::trending_prospecting] = 4000;
  q.conversions_by_type[DpaType::trending_prospecting] = 20;
  CHECK(compute_tcpa(q) == 300);

  CHECK_FALSE(compute_tcpa(AdvertiserPerf{}).has_value());
}

TEST_CASE("conversions attach to the latest click inside the window") {
  ConvModelConfig cfg;
  ProductKey k{"a", "s", "g", "p"};
  std::map<std::string, std::vector<offset::WeightedValue>> f{{conversion::feature::kCtrCampaignTop, {{"g", 1.0}}},
                                                               {conversion::feature::kDpaType, {{"retargeting", 1.0}}},
                                                               {conversion::feature::kPageSection, {{"news", 1.0}}}};
  std::vector<ClickRecord> clicks{{100, "u1", f, k}, {200, "u1", f, k}};
  std::vector<ConversionRecord> conv{{300, "u1", k}, {50, "u1", k}, {200 + 31 * 86400, "u1", k}};
  const auto feed = build_conv_training_feed(clicks, conv, cfg);
  CHECK(feed.dropped_conversions == 2);
  std::size_t pos = 0;
  for (const auto& e : feed.events) pos += e.label;
  CHECK(pos == 1);
  CHECK(feed.events.size() == 3);
}

TEST_CASE("publication keeps products with enough conversions") {
  ConvModelConfig cfg;
  offset::ModelState m(cfg.schema(), cfg.hyper);
  std::map<ProductKey, ProductStats> stats;
  stats[{"a", "s", "g", "p5"}].conversions = 5;
  stats[{"a", "s", "g", "p10"}].conversions = 10;
  stats[{"a", "s", "g", "p50"}].conversions = 50;
  const auto pub = publish_conv_model(m, stats, {{"a", 100}}, {{"g", 50}}, cfg);
  REQUIRE(pub.selected.size() == 2);
  CHECK(pub.selected[0].product == "p50");
  CHECK(pub.selected[1].product == "p10");
}

TEST_CASE("click model product id needs strictly more impressions") {
  click::ClickModelConfig cfg;
  ProductKey k{"a", "s", "g", "p"};
  ProductStats st;
  st.impressions = 1000;
  CHECK(click::product_ad_values(k, st, cfg).at(dpa::feature::kProductId) == click::default_product_value("g"));
  st.impressions = 1500;
  CHECK(click::product_ad_values(k, st, cfg).at(dpa::feature::kProductId) == "p");
}
