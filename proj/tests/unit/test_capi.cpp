#include <cstring>
#include <string>

#include "doctest.h"
#include "dpa/dpa.h"

TEST_CASE("c api dims and metrics") {
  size_t d = 0, full = 0;
  REQUIRE(dpa_derive_dims(3, 4, 2, &d, &full) == DPA_OK);
  CHECK(d == 10);
  CHECK(full == 18);

  const double s[] = {0.1, 0.4, 0.4, 0.9};
  const int y[] = {0, 1, 0, 1};
  double v = 0;
  REQUIRE(dpa_auc(s, y, 4, &v) == DPA_OK);
  CHECK(v == doctest::Approx(0.875));
  REQUIRE(dpa_bid_final(0.1, 500, 30, &v) == DPA_OK);
  CHECK(v == 30.0);
}

TEST_CASE("c api reports errors with codes and messages") {
  const double s[] = {0.1, 0.2};
  const int y[] = {1, 1};
  double v = 0;
  CHECK(dpa_auc(s, y, 2, &v) == DPA_ERR_UNDEFINED_METRIC);
  CHECK(std::strlen(dpa_last_error()) > 0);
  CHECK(dpa_auc(nullptr, y, 2, &v) == DPA_ERR_NULL_ARGUMENT);
  CHECK(std::string(dpa_status_name(DPA_ERR_IO)) == "io");
  dpa_model* m = nullptr;
  CHECK(dpa_model_load("/nonexistent/model", &m) == DPA_ERR_IO);
  CHECK(m == nullptr);
}

TEST_CASE("c api config overrides") {
  dpa_config* c = nullptr;
  REQUIRE(dpa_config_create(nullptr, 9, &c) == DPA_OK);
  CHECK(dpa_config_set(c, "world.n_users=500") == DPA_OK);
  CHECK(dpa_config_set(c, "world.base_ctr=2") == DPA_ERR_CONFIG);
  char* json = nullptr;
  REQUIRE(dpa_config_json(c, &json) == DPA_OK);
  const std::string text(json);
  dpa_string_free(json);
  CHECK(text.find("\"n_users\": 500") != std::string::npos);
  dpa_config_destroy(c);
}
