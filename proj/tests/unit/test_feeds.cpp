#include <sstream>

#include "doctest.h"
#include "dpa/feeds.hpp"

using namespace dpa;
using namespace dpa::feeds;

namespace {

template <class T, class W, class R>
void round_trip(const T& rows, W write, R read) {
  std::stringstream ss;
  write(ss, rows);
  const auto back = read(ss);
  CHECK(back == rows);
}

}  // namespace

TEST_CASE("feature codec round trip") {
  FeatureValues f{{"age", {{"25", 1.0}}}, {"cats", {{"shoes", 0.25}, {"hats", 1.0 / 3.0}}}};
  CHECK(decode_features(encode_features(f)) == f);
  CHECK(decode_features(encode_features({})).empty());
  std::map<std::string, std::string> a{{"frequency", "3-5"}, {"recency", "<1h"}};
  CHECK(decode_assignment(encode_assignment(a)) == a);
}

TEST_CASE("malformed feature text is a parse error") {
  CHECK_THROWS_AS(decode_features("age"), Error);
  CHECK_THROWS_AS(decode_features("age=25:x"), Error);
}

TEST_CASE("record codecs round trip") {
  std::vector<UserRecord> users{{"u1", {25, trending::Gender::female}, {{"age", {{"25", 1.0}}}}},
                                {"u2", {std::nullopt, trending::Gender::unknown}, {}}};
  round_trip(users, write_users, read_users);

  std::vector<ImpressionRecord> imps{{5, "u1", {"a", "s", "g", "p"}, DpaType::trending_prospecting, "news",
                                      serving::Device::mobile, 2, 1, 37}};
  round_trip(imps, write_impressions, read_impressions);

  std::vector<conversion::ConversionRecord> conv{{9, "u1", {"a", "s", "g", "p"}}};
  round_trip(conv, write_conversions, read_conversions);

  std::vector<trending::PixelEvent> px{
      {1, "u1", {40, trending::Gender::male}, {"a", "s", "g", "p"}, trending::PixelKind::add_to_cart}};
  round_trip(px, write_pixels, read_pixels);

  offset::Event e;
  e.user_values = {{"age", {{"25", 1.0}}}};
  e.ad_values = {{"product-id", "p"}};
  e.sim_bins = {{"recency", "<1d"}};
  e.label = 1;
  e.kind = offset::EventKind::click;
  e.timestamp = 77;
  round_trip(std::vector<offset::Event>{e}, write_events, read_events);

  std::vector<RequestRecord> reqs{{"r1", 3, 0, "u1", "home", 10, false, serving::Device::desktop, "en", {}}};
  round_trip(reqs, write_requests, read_requests);

  std::vector<StatsRow> stats{{{"a", "s", "g", "p"}, {10, 2, 1, 300, 4}}};
  round_trip(stats, write_stats, read_stats);

  std::vector<PerfRow> perf{{"a", DpaType::retargeting, 1000, 7}};
  round_trip(perf, write_perf, read_perf);

  std::vector<BucketRow> bucket{{0, "*", "*", 100, 3, 90, 1}, {0, "a", "retargeting", 50, 1, 30, 0}};
  round_trip(bucket, write_bucket, read_bucket);

  std::map<std::string, std::vector<std::string>> hist{{"u1", {"p1", "p2"}}};
  round_trip(hist, write_history, read_history);
}

TEST_CASE("wrong header is rejected") {
  std::stringstream ss("#users v2\n");
  CHECK_THROWS_AS(read_users(ss), Error);
}

TEST_CASE("missing file names the path") {
  try {
    open_in("/nonexistent/x.tsv");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io);
    CHECK(std::string(e.what()).find("/nonexistent/x.tsv") != std::string::npos);
  }
}
