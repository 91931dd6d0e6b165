#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dpa/trending.hpp"

using namespace dpa;
using namespace dpa::trending;

TEST_CASE("threshold uses strict exceedance") {
  ThresholdCurve c{"a", {}};
  for (int i = 1; i <= 100; ++i) c.maxima.push_back(i / 100.0);
  const double t = threshold_for_percentile(c, 5.0);
  const auto above = std::count_if(c.maxima.begin(), c.maxima.end(), [&](double v) { return v > t; });
  CHECK(above == 5);
  CHECK(t == doctest::Approx(0.95));
}

TEST_CASE("threshold with ties never exceeds the share") {
  ThresholdCurve c{"a", std::vector<double>(50, 0.2)};
  c.maxima.insert(c.maxima.end(), 50, 0.4);
  const double t = threshold_for_percentile(c, 5.0);
  const auto above = std::count_if(c.maxima.begin(), c.maxima.end(), [&](double v) { return v > t; });
  CHECK(above <= 5);
}

TEST_CASE("empty curve and bad percent") {
  ThresholdCurve c{"a", {}};
  CHECK_THROWS_AS(threshold_for_percentile(c, 5.0), Error);
  c.maxima = {0.1};
  CHECK_THROWS_AS(threshold_for_percentile(c, 0.0), Error);
}

TEST_CASE("slots follow spend and sum to the cap") {
  std::map<std::string, Cents> spend{{"g1", 700}, {"g2", 200}, {"g3", 100}};
  std::map<std::string, std::size_t> products{{"g1", 1000}, {"g2", 1000}, {"g3", 1000}};
  const auto a = allocate_slots(spend, products, 100);
  CHECK(a.at("g1") == 70);
  CHECK(a.at("g2") == 20);
  CHECK(a.at("g3") == 10);
}

TEST_CASE("slots never exceed a group's products") {
  std::map<std::string, Cents> spend{{"g1", 900}, {"g2", 100}};
  std::map<std::string, std::size_t> products{{"g1", 5}, {"g2", 50}};
  const auto a = allocate_slots(spend, products, 30);
  CHECK(a.at("g1") == 5);
  CHECK(a.at("g2") == 25);
  const auto all = allocate_slots(spend, products, 1000);
  CHECK(all.at("g1") + all.at("g2") == 55);
}

TEST_CASE("unknown demographics are not scorable") {
  LookalikeConfig cfg;
  offset::ModelState m(cfg.schema(), cfg.hyper);
  CHECK_THROWS_AS(eligibility_score(Demographics{}, ProductKey{"a", "s", "g", "p"}, m), Error);
}

TEST_CASE("top products by positive events") {
  std::vector<PixelEvent> feed;
  auto add = [&](const std::string& p, PixelKind k, int n) {
    for (int i = 0; i < n; ++i) feed.push_back({i, "u", {30, Gender::male}, {"a", "s", "g", p}, k});
  };
  add("p1", PixelKind::purchase, 3);
  add("p2", PixelKind::add_to_cart, 5);
  add("p3", PixelKind::view, 50);
  add("p0", PixelKind::purchase, 3);
  const auto top = select_top_products(feed, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].product == "p2");
  CHECK(top[1].product == "p0");
}

TEST_CASE("negative sampling drops unknown users and draws without replacement") {
  std::vector<ImpressionUser> imps;
  for (int i = 0; i < 100; ++i) {
    Demographics d{i % 10 == 0 ? std::optional<int>{} : std::optional<int>{20 + i % 30}, Gender::female};
    imps.push_back({i, "u" + std::to_string(i), d});
  }
  std::vector<ProductKey> products{{"a", "s", "g", "p1"}, {"a", "s", "g", "p2"}};
  const auto s = sample_negatives(imps, products, 95, 1);
  CHECK(s.short_products == 2);
  CHECK(s.events.size() == 180);
  const auto t = sample_negatives(imps, products, 10, 1);
  CHECK(t.events.size() == 20);
  CHECK(sample_negatives(imps, products, 10, 1).events == t.events);
}
