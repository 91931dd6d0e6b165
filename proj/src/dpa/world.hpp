#pragma once

// Synthetic world with planted structure: a 4-level catalog, a user
// population with demographics and feature values, campaigns, and per-day
// impression / click / conversion / pixel feeds drawn from known rates.

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpa/feeds.hpp"
#include "dpa/serving.hpp"
#include "dpa/trending.hpp"
#include "json.hpp"

namespace dpa::world {

// Pixel-feed popularity multiplier for users in a demographic cell.
struct AffinityRule {
  int age_min = 0;
  int age_max = 200;
  trending::Gender gender = trending::Gender::unknown;  // unknown = any
  std::string advertiser;                               // empty = any
  std::string product_group;                            // empty = any
  double multiplier = 1.0;
};

struct SyntheticWorldConfig {
  std::uint64_t seed = 1;
  std::size_t n_users = 20000;
  std::size_t n_advertisers = 8;
  std::size_t sets_per_advertiser = 2;
  std::size_t groups_per_set = 4;
  std::size_t products_per_group = 25;
  double unknown_demographics_rate = 0.05;
  double missing_assets_rate = 0.01;

  double base_ctr = 0.02;
  double ctr_affinity_lift = 1.0;  // when the advertiser is in the user's ctr-advertiser-top
  std::vector<double> conv_rates{0.05, 0.1, 0.3};  // conversion-given-click, per advertiser (round robin)
  double conv_affinity_lift = 0.5;  // when the group is in the user's ctr-campaign-top
  double popularity_skew = 0.8;     // Zipf exponent of pixel popularity
  std::vector<AffinityRule> affinities{
      {18, 30, trending::Gender::female, "a0", "", 4.0},
      {45, 65, trending::Gender::male, "a1", "", 3.0},
  };

  std::size_t days = 7;
  std::size_t impressions_per_day = 100000;
  std::size_t pixel_events_per_day = 30000;
  double retargeting_share = 0.5;
  int max_conversion_delay_days = 30;
  double mean_conversion_delay_days = 1.0;  // exponential, truncated at the maximum

  Cents bid_min = 20;
  Cents bid_max = 200;
  Cents budget = 100000000;
  Cents floor_price = 10;
  std::size_t page_section_vocabulary = 200;
  double mobile_share = 0.6;
  double carousel_share = 0.8;

  std::size_t serve_days = 2;
  std::size_t requests_per_day = 5000;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticWorldConfig from_json(const nlohmann::json& j);
};

struct World {
  SyntheticWorldConfig config;
  serving::Catalog catalog;
  std::vector<feeds::UserRecord> users;
  serving::CampaignDb campaigns;

  const feeds::UserRecord& user(const std::string& id) const;
  void index();

  // Planted rates.
  double ctr(const feeds::UserRecord& user, const ProductKey& product) const;
  double cvr(const feeds::UserRecord& user, const ProductKey& product) const;
  double pixel_weight(const trending::Demographics& d, const ProductKey& product) const;

 private:
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<std::string, std::size_t> advertiser_index_;
};

World gen_world(const SyntheticWorldConfig& config);

struct DayFeeds {
  std::int64_t day = 0;
  std::vector<feeds::ImpressionRecord> impressions;
  std::vector<conversion::ConversionRecord> conversions;  // timestamped within this day
  std::vector<trending::PixelEvent> pixels;
};

// All simulated days; conversions land on the day of their own timestamp and
// are dropped past the horizon.
std::vector<DayFeeds> gen_feeds(const World& world);

// Serving requests for days [config.days, config.days + serve_days).
std::vector<feeds::RequestRecord> gen_requests(const World& world);

// Directory layout.
std::string day_file(const std::string& dir, std::string_view kind, std::int64_t day);
void save_world(const World& world, const std::string& dir);
World load_world(const std::string& dir);
void save_day(const DayFeeds& feeds, const std::string& dir);
DayFeeds load_day(const std::string& dir, std::int64_t day);

inline constexpr std::int64_t kSecondsPerDay = 86400;

}  // namespace dpa::world
