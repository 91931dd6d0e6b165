#pragma once

// Conversion-Prospecting: a conversion-given-click model trained on clicks as
// negatives and post-click conversions as additional positives, its
// under-prediction correction, advertiser target CPA, the capped final bid,
// and the bounded top-K publication.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpa/offset.hpp"
#include "dpa/product.hpp"

namespace dpa::conversion {

namespace feature {
inline constexpr const char* kCtrCampaignTop = "ctr-campaign-top";
inline constexpr const char* kDpaType = "dpa-type-experiment-id";
inline constexpr const char* kPageSection = "page-section";
}  // namespace feature

struct ConvModelConfig {
  std::vector<std::string> user_features{feature::kCtrCampaignTop, feature::kDpaType, feature::kPageSection};
  std::size_t pair_width = 4;
  std::size_t solo_width = 2;
  std::int64_t publish_k = 1000;
  std::int64_t min_conversions = 10;
  std::int64_t publish_period_hours = 6;
  std::int64_t attribution_window_days = 30;
  offset::Hyperparams hyper{.eta0 = 0.02};

  void validate() const;
  offset::FeatureSchema schema() const;
};

std::map<std::string, std::string> conv_ad_values(const ProductKey& key);

struct ClickRecord {
  std::int64_t timestamp = 0;
  std::string user_id;
  std::map<std::string, std::vector<offset::WeightedValue>> user_values;
  ProductKey product;
  bool operator==(const ClickRecord&) const = default;
};

struct ConversionRecord {
  std::int64_t timestamp = 0;
  std::string user_id;
  ProductKey product;
  bool operator==(const ConversionRecord&) const = default;
};

struct ConvFeed {
  std::vector<offset::Event> events;  // time-ordered
  std::size_t dropped_conversions = 0;
};

// Every click becomes a label-0 event and every attributed conversion an
// additional label-1 event carrying the click's user features. Conversions
// are attributed to the latest click on the same (user, product) no more than
// the attribution window earlier; unattributed ones are dropped and counted.
ConvFeed build_conv_training_feed(std::span<const ClickRecord> clicks, std::span<const ConversionRecord> conversions,
                                  const ConvModelConfig& config);

// pCONV ~= raw / (1 - raw), clamped to 1.
double correct_prediction(double raw);

struct AdvertiserPerf {
  std::string advertiser_id;
  std::map<DpaType, Cents> spend_by_type;
  std::map<DpaType, std::int64_t> conversions_by_type;
};

// multiplier * retargeting CPA, or multiplier * the lowest prospecting-type
// CPA when the advertiser has no retargeting conversions. Rounded to cents.
std::optional<Cents> compute_tcpa(const AdvertiserPerf& perf, double multiplier = 1.5);

// min(pconv * tcpa, bid_pg) in (fractional) cents.
double bid_final(double pconv, double tcpa, double bid_pg);

struct PublishedConvModel {
  offset::ModelState model;
  std::vector<ProductKey> selected;
  std::map<std::string, std::int64_t> conversions;  // product id -> training conversions
  std::map<std::string, Cents> tcpa;                // advertiser id
  std::map<std::string, Cents> bids;                // product group id -> bid_product-group

  // Corrected conversion-given-click probability.
  double pconv(const offset::Event& user, const ProductKey& product) const;
};

PublishedConvModel publish_conv_model(const offset::ModelState& model,
                                      const std::map<ProductKey, ProductStats>& stats,
                                      const std::map<std::string, Cents>& tcpas,
                                      const std::map<std::string, Cents>& group_bids, const ConvModelConfig& config);

// Restricts the ad table to the given products and their set/advertiser values.
offset::ModelState restrict_to_products(const offset::ModelState& model, std::span<const ProductKey> products,
                                        bool keep_groups);

void save_published(const PublishedConvModel& published, std::ostream& out);
PublishedConvModel load_published(std::istream& in);

}  // namespace dpa::conversion
