#include <random>
#include <set>

#include "../support/oracles.hpp"
#include "doctest.h"
#include "dpa/serving.hpp"

using namespace dpa;
using namespace dpa::serving;

namespace {

Candidate cand(const std::string& adv, const std::string& group, const std::string& product, DpaType src,
               double score) {
  Candidate c;
  c.product = {adv, "s", group, product};
  c.source = src;
  c.pctr = 0.01;
  c.bid = score / 0.01;
  c.score = score;
  return c;
}

}  // namespace

TEST_CASE("preliminary auction keeps the top l") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Candidate> v;
    std::set<std::pair<std::string, DpaType>> seen;
    const int n = static_cast<int>(rng() % 120);
    for (int i = 0; i < n; ++i) {
      const auto id = rng() % 60;
      auto c = cand("a" + std::to_string(id % 5), "g", "p" + std::to_string(id),
                    rng() % 2 ? DpaType::conversion_prospecting : DpaType::trending_prospecting, 0);
      c.pctr = static_cast<double>(rng() % 10) / 100.0;
      c.bid = static_cast<double>(rng() % 4 + 1);
      c.score = c.pctr * c.bid;
      if (seen.insert({c.product.product, c.source}).second) v.push_back(c);
    }
    CHECK(oracle::same_candidates(preliminary_auction(v, 40), oracle::brute_top(v, 40)));
  }
}

TEST_CASE("dedupe keeps one group per advertiser and is idempotent") {
  std::vector<Candidate> v{cand("a", "g1", "p1", DpaType::retargeting, 5), cand("a", "g2", "p2", DpaType::retargeting, 4),
                           cand("a", "g1", "p3", DpaType::retargeting, 3),
                           cand("a", "g1", "p1", DpaType::conversion_prospecting, 2),
                           cand("b", "g9", "p9", DpaType::trending_prospecting, 1)};
  const auto once = dedupe(v);
  REQUIRE(once.size() == 3);
  CHECK(once[0].product.product == "p1");
  CHECK(once[0].source == DpaType::retargeting);
  CHECK(once[1].product.product == "p3");
  CHECK(once[2].product.product == "p9");
  CHECK(oracle::same_candidates(dedupe(once), once));
}

TEST_CASE("filter drops by targeting, expiry, policy, budget and floor") {
  ServeRequest req;
  req.day = 10;
  req.floor_price = 20;
  req.language = "en";
  req.user.demographics = {30, trending::Gender::male};
  Campaign base{"c", "g", 1000, {}, 100, 50, ""};
  auto with = [&](Campaign c, double bid) {
    auto x = cand("a", "g", "p", DpaType::retargeting, 1);
    x.campaign = c;
    x.bid = bid;
    return x;
  };
  Campaign female = base;
  female.target_genders = {trending::Gender::female};
  Campaign expired = base;
  expired.expiration_day = 9;
  Campaign french = base;
  french.language = "fr";
  Campaign broke = base;
  broke.budget_remaining = 10;
  StageCounters counters;
  const auto out = filter({with(base, 50), with(female, 50), with(expired, 50), with(french, 50), with(broke, 50),
                           with(base, 19.5)},
                          req, counters);
  CHECK(out.size() == 1);
  CHECK(counters.filter_targeting == 1);
  CHECK(counters.filter_expired == 1);
  CHECK(counters.filter_policy == 1);
  CHECK(counters.filter_budget == 1);
  CHECK(counters.filter_floor == 1);
}

TEST_CASE("item to item stays within the advertiser") {
  RecommendationModel recs;
  ProductKey p1{"a", "s", "g", "p1"}, p2{"a", "s", "g", "p2"}, q{"b", "s", "h", "q"};
  for (auto u : {"u1", "u2", "u3"}) {
    recs.add_engagement(p1, u);
    recs.add_engagement(p2, u);
    recs.add_engagement(q, u);
  }
  const auto rel = recs.item_to_item(p1);
  REQUIRE(rel.size() == 1);
  CHECK(rel[0].first == "p2");
  CHECK(rel[0].second == doctest::Approx(1.0));
}
