#include <filesystem>

#include "doctest.h"
#include "dpa/world.hpp"

using namespace dpa;
using namespace dpa::world;

namespace {

SyntheticWorldConfig tiny() {
  SyntheticWorldConfig c;
  c.n_users = 300;
  c.n_advertisers = 2;
  c.sets_per_advertiser = 2;
  c.groups_per_set = 2;
  c.products_per_group = 5;
  c.days = 2;
  c.impressions_per_day = 3000;
  c.pixel_events_per_day = 500;
  c.requests_per_day = 100;
  return c;
}

}  // namespace

TEST_CASE("catalog counts") { CHECK(gen_world(tiny()).catalog.size() == 40); }

TEST_CASE("generation is a pure function of config") {
  const auto a = gen_world(tiny());
  const auto b = gen_world(tiny());
  CHECK(a.users == b.users);
  const auto fa = gen_feeds(a);
  const auto fb = gen_feeds(b);
  REQUIRE(fa.size() == fb.size());
  for (std::size_t d = 0; d < fa.size(); ++d) {
    CHECK(fa[d].impressions == fb[d].impressions);
    CHECK(fa[d].pixels == fb[d].pixels);
  }
  CHECK(gen_requests(a) == gen_requests(b));
}

TEST_CASE("zero ctr means zero clicks") {
  auto c = tiny();
  c.base_ctr = 0.0;
  const auto feeds = gen_feeds(gen_world(c));
  for (const auto& d : feeds) {
    for (const auto& r : d.impressions) CHECK(r.clicked == 0);
    CHECK(d.conversions.empty());
  }
}

TEST_CASE("conversion delay stays within thirty days") {
  const auto w = gen_world(tiny());
  const auto feeds = gen_feeds(w);
  std::map<std::pair<std::string, std::string>, std::int64_t> first_click;
  for (const auto& d : feeds) {
    for (const auto& r : d.impressions) {
      if (r.clicked) first_click.try_emplace({r.user_id, r.product.product}, r.timestamp);
    }
  }
  for (const auto& d : feeds) {
    for (const auto& c : d.conversions) {
      auto it = first_click.find({c.user_id, c.product.product});
      REQUIRE(it != first_click.end());
      CHECK(c.timestamp >= it->second);
    }
  }
}

TEST_CASE("realized ctr within three sigma of planted") {
  auto c = tiny();
  c.impressions_per_day = 20000;
  c.days = 1;
  const auto w = gen_world(c);
  const auto feeds = gen_feeds(w);
  double expected = 0, var = 0, clicks = 0;
  for (const auto& r : feeds[0].impressions) {
    const double p = w.ctr(w.user(r.user_id), r.product);
    expected += p;
    var += p * (1 - p);
    clicks += r.clicked;
  }
  CHECK(std::abs(clicks - expected) <= 3 * std::sqrt(var));
}

TEST_CASE("invalid rates are config errors") {
  auto c = tiny();
  c.base_ctr = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny();
  c.n_users = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("save and load round trip") {
  const auto dir = (std::filesystem::temp_directory_path() / "dpa-unit-world").string();
  std::filesystem::remove_all(dir);
  const auto w = gen_world(tiny());
  save_world(w, dir);
  const auto back = load_world(dir);
  CHECK(back.users == w.users);
  CHECK(back.catalog.size() == w.catalog.size());
  CHECK(back.campaigns.size() == w.campaigns.size());
  std::filesystem::remove_all(dir);
}
