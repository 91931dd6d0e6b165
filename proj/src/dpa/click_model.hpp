#pragma once

// DPA click (pCTR) model: the product hierarchy as ad features, with products
// below an impression threshold sharing their group's default-product-group
// vector, plus frequency / recency / slot-device similarity weights.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dpa/offset.hpp"
#include "dpa/product.hpp"

namespace dpa::click {

std::string default_product_value(std::string_view product_group);

namespace feature {
inline constexpr const char* kTechnoSegments = "techno-segments";
inline constexpr const char* kPageSection = "page-section";
inline constexpr const char* kDpaType = "dpa-type-experiment-id";
inline constexpr const char* kImpressionHistory = "impression-history";
inline constexpr const char* kAge = "age";
inline constexpr const char* kUserClickedCategory = "user-clicked-category";
inline constexpr const char* kMobileActivity = "mobile-activity";
inline constexpr const char* kCtrAdvertiserTop = "ctr-advertiser-top";
inline constexpr const char* kUserClickedProductCategory = "user-clicked-product-category";

inline constexpr const char* kFrequency = "frequency";
inline constexpr const char* kRecency = "recency";
inline constexpr const char* kSlotDevice = "slot-device";
}  // namespace feature

struct ClickModelConfig {
  std::int64_t promote_threshold = 1000;
  std::vector<std::string> user_features{
      feature::kTechnoSegments,   feature::kPageSection,           feature::kDpaType,
      feature::kImpressionHistory, feature::kAge,                  feature::kUserClickedCategory,
      feature::kMobileActivity,   feature::kCtrAdvertiserTop,      feature::kUserClickedProductCategory};
  std::vector<std::string> similarity_features{feature::kFrequency, feature::kRecency, feature::kSlotDevice};
  std::size_t pair_width = 2;
  std::size_t solo_width = 2;
  offset::Hyperparams hyper;

  void validate() const;
  offset::FeatureSchema schema() const;
};

// Frequency over the past 7 days: {0, 1, 2, 3-5, 6+}.
std::string frequency_bin(std::int64_t views_past_week);
// Time since the product was last seen on the advertiser site:
// {<1h, <1d, <3d, <7d, 7d+}; nullopt (never seen) falls in 7d+.
std::string recency_bin(std::optional<std::int64_t> seconds_since);
std::string slot_device_bin(int slot, bool mobile);

// Ad feature assignment. product-id is emitted only once the product has
// strictly more than `promote_threshold` impressions; before that the
// group's default-product-group pseudo-value stands in for it.
std::map<std::string, std::string> product_ad_values(const ProductKey& key, const ProductStats& stats,
                                                     const ClickModelConfig& config);

enum class PromoteResult { promoted, already_promoted };

// Seeds the product-id vector with a copy of the group's default vector.
PromoteResult promote_product(const ProductKey& key, offset::ModelState& model);

// `user` carries the user features and similarity bins; its ad features are
// replaced by the product's assignment.
offset::Event assemble_event(const offset::Event& user, const ProductKey& key, const ProductStats& stats,
                             const ClickModelConfig& config);

double pctr(const offset::Event& user, const ProductKey& key, const offset::ModelState& model,
            const ProductStats& stats, const ClickModelConfig& config);

struct ClickExample {
  offset::Event user;  // label 1 = click, 0 = skip
  ProductKey product;
};

// Incremental trainer. Product statistics and promotion are updated at batch
// boundaries only.
class ClickModel {
 public:
  explicit ClickModel(ClickModelConfig config);
  ClickModel(ClickModelConfig config, offset::ModelState model);

  const ClickModelConfig& config() const { return config_; }
  const offset::ModelState& model() const { return model_; }
  offset::ModelState& model() { return model_; }

  const ProductStats& stats(const ProductKey& key) const;
  const std::map<ProductKey, ProductStats>& all_stats() const { return stats_; }
  void set_stats(const ProductKey& key, ProductStats stats) { stats_[key] = stats; }

  // Returns the products promoted at the end of this batch.
  std::vector<ProductKey> train_batch(std::span<const ClickExample> batch);

  double pctr(const offset::Event& user, const ProductKey& key) const;

 private:
  ClickModelConfig config_;
  offset::ModelState model_;
  std::map<ProductKey, ProductStats> stats_;
};

}  // namespace dpa::click
