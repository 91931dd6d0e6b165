#pragma once

// Trending-Prospecting: a lookalike model trained on advertiser pixel-feed
// positives (purchase, add-to-cart) against per-product random samples of the
// impression feed, so that its prediction approximates
//   S(u,p) ~= pos(u,p) / (pos(u,p) + neg(u))
// for users u sharing age and gender. Per-advertiser threshold-percentile
// curves translate a requested eligible-population share into a threshold.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpa/offset.hpp"
#include "dpa/product.hpp"

namespace dpa::trending {

enum class Gender { female, male, unknown };
std::string_view to_string(Gender g);
Gender parse_gender(std::string_view s);

struct Demographics {
  std::optional<int> age;  // years
  Gender gender = Gender::unknown;
  bool known() const { return age.has_value() && gender != Gender::unknown; }
  auto operator<=>(const Demographics&) const = default;
};

enum class PixelKind { purchase, add_to_cart, view };
std::string_view to_string(PixelKind k);
PixelKind parse_pixel_kind(std::string_view s);
inline bool is_positive(PixelKind k) { return k != PixelKind::view; }

struct PixelEvent {
  std::int64_t timestamp = 0;
  std::string user_id;
  Demographics user;
  ProductKey product;
  PixelKind kind = PixelKind::view;
  bool operator==(const PixelEvent&) const = default;
};

// An impression-feed record as seen by negative sampling.
struct ImpressionUser {
  std::int64_t timestamp = 0;
  std::string user_id;
  Demographics user;
};

namespace feature {
inline constexpr const char* kAge = "age";
inline constexpr const char* kGender = "gender";
}  // namespace feature

struct LookalikeConfig {
  std::size_t top_n_products = 10000;
  std::size_t negatives_per_product = 2000;
  std::int64_t stale_days = 10;
  std::size_t publish_t = 3500;
  std::size_t sample_r = 20000;
  std::size_t passes = 3;
  std::size_t pair_width = 4;
  std::size_t solo_width = 2;
  offset::Hyperparams hyper;

  void validate() const;
  offset::FeatureSchema schema() const;
};

offset::Event lookalike_event(const Demographics& user, const ProductKey& product, int label, std::int64_t ts);

// The n products with the most purchase + add-to-cart events; ties by product id.
std::vector<ProductKey> select_top_products(std::span<const PixelEvent> pixel_feed, std::size_t n);

struct NegativeSample {
  std::vector<offset::Event> events;
  std::size_t short_products = 0;  // products that got fewer than m impressions
};

// For each product, m impressions drawn uniformly without replacement (after
// dropping impressions with unknown age or gender) become label-0 events.
NegativeSample sample_negatives(std::span<const ImpressionUser> impressions, std::span<const ProductKey> products,
                                std::size_t m, std::uint64_t seed);

std::vector<offset::Event> positive_events(std::span<const PixelEvent> pixel_feed,
                                           std::span<const ProductKey> products);

class LookalikeModel {
 public:
  explicit LookalikeModel(LookalikeConfig config);
  LookalikeModel(LookalikeConfig config, offset::ModelState model);

  const LookalikeConfig& config() const { return config_; }
  const offset::ModelState& model() const { return model_; }
  offset::ModelState& model() { return model_; }

  // One daily update over the merged, time-ordered feed. Products missing from
  // the day's inputs for stale_days consecutive updates are evicted; returns
  // the evicted products.
  std::vector<ProductKey> train_lookalike(std::span<const offset::Event> positives,
                                          std::span<const offset::Event> negatives,
                                          std::span<const ProductKey> day_products);

  struct DayResult {
    std::vector<ProductKey> products;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t short_products = 0;
    std::vector<ProductKey> evicted;
  };
  DayResult daily_update(std::span<const PixelEvent> pixel_feed, std::span<const ImpressionUser> impressions,
                         std::uint64_t seed);

  struct Tracked {
    ProductKey key;
    std::int64_t absent_updates = 0;
    std::int64_t positives = 0;  // positives in the latest update that included the product
  };
  const std::map<std::string, Tracked>& tracked() const { return tracked_; }
  void set_tracked(std::map<std::string, Tracked> t) { tracked_ = std::move(t); }

 private:
  LookalikeConfig config_;
  offset::ModelState model_;
  std::map<std::string, Tracked> tracked_;
};

// Throws not_scorable for unknown demographics.
double eligibility_score(const Demographics& user, const ProductKey& product, const offset::ModelState& model);

struct ThresholdCurve {
  std::string advertiser;
  std::vector<double> maxima;  // ascending
};

ThresholdCurve build_threshold_curve(const offset::ModelState& model, const std::string& advertiser,
                                     std::span<const ProductKey> advertiser_products,
                                     std::span<const Demographics> users);

// Smallest t such that at most pct% of the curve values strictly exceed t.
double threshold_for_percentile(const ThresholdCurve& curve, double pct);

struct Threshold {
  double t = 0.0;
  double percentile = 0.0;
  bool operator==(const Threshold&) const = default;
};

// Splits t_cap slots across product groups proportionally to previous-day
// spend (largest remainder, ties by group id), never beyond a group's product
// count; the total is min(t_cap, total products).
std::map<std::string, std::size_t> allocate_slots(const std::map<std::string, Cents>& spend_by_group,
                                                  const std::map<std::string, std::size_t>& products_by_group,
                                                  std::size_t t_cap);

// Products to publish: per group, the allocated number of products with the
// most positive events (ties by product id).
std::vector<ProductKey> select_published_products(const std::map<std::string, LookalikeModel::Tracked>& tracked,
                                                  const std::map<std::string, Cents>& spend_by_group,
                                                  std::size_t t_cap);

struct PublishedTrendyModel {
  offset::ModelState model;
  std::vector<ProductKey> products;
  std::map<std::string, Threshold> thresholds;  // advertiser id

  std::vector<ProductKey> advertiser_products(const std::string& advertiser) const;
  // max over the advertiser's published products; nullopt if none.
  std::optional<double> max_score(const Demographics& user, const std::string& advertiser) const;
  bool is_eligible(const Demographics& user, const std::string& advertiser) const;
};

PublishedTrendyModel publish_trendy_model(const offset::ModelState& model,
                                          const std::map<std::string, LookalikeModel::Tracked>& tracked,
                                          const std::map<std::string, Threshold>& thresholds,
                                          const std::map<std::string, Cents>& spend_by_group, std::size_t t_cap);

void save_published(const PublishedTrendyModel& published, std::ostream& out);
PublishedTrendyModel load_published(std::istream& in);

void save_lookalike(const LookalikeModel& model, std::ostream& out);
LookalikeModel load_lookalike(std::istream& in, LookalikeConfig config);

}  // namespace dpa::trending
