#include <random>
#include <sstream>

#include "../support/fixtures.hpp"
#include "doctest.h"
#include "dpa/offset.hpp"

using namespace dpa;
using namespace dpa::offset;

namespace {

FeatureSchema small_schema() {
  FeatureSchema s;
  s.user_features = {"age", "gender", "section"};
  s.pair_width = 4;
  s.solo_width = 2;
  s.ad_features = {"product-id"};
  s.similarity_features = {"recency"};
  return s;
}

Event small_event(int label = 1) {
  Event e;
  e.user_values["age"] = {{"25", 1.0}};
  e.user_values["gender"] = {{"f", 1.0}};
  e.user_values["section"] = {{"news", 1.0}, {"sports", 0.5}};
  e.ad_values["product-id"] = "p1";
  e.sim_bins["recency"] = "<1h";
  e.label = label;
  return e;
}

}  // namespace

TEST_CASE("dims of the three-feature example") {
  CHECK(derive_dims(3, 4, 2) == Dims{10, 18});
  CHECK(derive_dims(1, 5, 3) == Dims{3, 3});
}

TEST_CASE("dims rejects zero features") { CHECK_THROWS_AS(derive_dims(0, 1, 1), Error); }

TEST_CASE("user and ad vectors have width D") {
  ModelState m(small_schema(), {});
  const auto e = small_event();
  CHECK(build_user_vector(e, m).size() == 18);
  CHECK(build_ad_vector(e, m).size() == 18);
  CHECK(m.user_table.dim() == 10);
}

TEST_CASE("lazy init is deterministic and keyed by value") {
  ModelState a(small_schema(), {});
  ModelState b(small_schema(), {});
  CHECK(a.user_table.lookup("age", "25") == b.user_table.lookup("age", "25"));
  CHECK(a.user_table.lookup("age", "25") != a.user_table.lookup("age", "26"));
  CHECK(a.user_table.size() == 0);
}

TEST_CASE("score equals bias plus dot plus sim weight") {
  ModelState m(small_schema(), {});
  m.bias.value = 0.3;
  m.sim_weights[table_key("recency", "<1h")].value = -0.2;
  const auto e = small_event();
  const auto u = build_user_vector(e, m);
  const auto a = build_ad_vector(e, m);
  double dot = 0;
  for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * a[i];
  CHECK(score(e, m) == doctest::Approx(0.3 + dot - 0.2).epsilon(1e-12));
  CHECK(predict(e, m) == doctest::Approx(1.0 / (1.0 + std::exp(-(0.3 + dot - 0.2)))));
}

TEST_CASE("missing user feature is incomplete") {
  ModelState m(small_schema(), {});
  auto e = small_event();
  e.user_values.erase("gender");
  try {
    score(e, m);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::incomplete_event);
  }
}

TEST_CASE("bad label is rejected") {
  ModelState m(small_schema(), {});
  auto e = small_event(2);
  CHECK_THROWS_AS(train_step(e, m), Error);
}

TEST_CASE("gradients match central differences") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 40; ++i) {
    auto c = fixture::random_case(rng);
    const auto r = fixture::check_gradient(c);
    CHECK(r.worst < 1e-5);
  }
}

TEST_CASE("train step lowers the loss on a repeated event") {
  ModelState m(small_schema(), {});
  const auto e = small_event(1);
  const double before = event_loss(e, m);
  for (int i = 0; i < 20; ++i) train_step(e, m);
  CHECK(event_loss(e, m) < before);
}

TEST_CASE("snapshot round trip is exact") {
  ModelState m(small_schema(), {});
  for (int i = 0; i < 5; ++i) {
    train_step(small_event(i % 2), m);
  }
  std::stringstream ss;
  save_model(m, ss);
  const auto back = load_model(ss);
  CHECK(back.schema() == m.schema());
  CHECK(back.bias.value == m.bias.value);
  CHECK(back.user_table.size() == m.user_table.size());
  CHECK(predict(small_event(), back) == predict(small_event(), m));
  std::stringstream again;
  save_model(back, again);
  std::stringstream first;
  save_model(m, first);
  CHECK(again.str() == first.str());
}

TEST_CASE("truncated snapshot is a parse error") {
  ModelState m(small_schema(), {});
  train_step(small_event(), m);
  std::stringstream ss;
  save_model(m, ss);
  auto text = ss.str();
  std::stringstream cut(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(load_model(cut), Error);
}
