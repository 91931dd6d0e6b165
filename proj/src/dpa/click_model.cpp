#include "dpa/click_model.hpp"

namespace dpa::click {

std::string default_product_value(std::string_view product_group) {
  return "__default__@" + std::string(product_group);
}

void ClickModelConfig::validate() const {
  if (promote_threshold < 1) throw Error(ErrorCode::config, "promote_threshold must be >= 1");
  schema().validate();
}

offset::FeatureSchema ClickModelConfig::schema() const {
  offset::FeatureSchema s;
  s.user_features = user_features;
  s.pair_width = pair_width;
  s.solo_width = solo_width;
  s.ad_features = {dpa::feature::kAdvertiserId, dpa::feature::kProductSetId, dpa::feature::kProductGroupId,
                   dpa::feature::kProductId};
  s.similarity_features = similarity_features;
  return s;
}

std::string frequency_bin(std::int64_t views_past_week) {
  if (views_past_week <= 0) return "0";
  if (views_past_week == 1) return "1";
  if (views_past_week == 2) return "2";
  if (views_past_week <= 5) return "3-5";
  return "6+";
}

std::string recency_bin(std::optional<std::int64_t> seconds_since) {
  if (!seconds_since) return "7d+";
  const auto s = *seconds_since;
  if (s < 3600) return "<1h";
  if (s < 86400) return "<1d";
  if (s < 3 * 86400) return "<3d";
  if (s < 7 * 86400) return "<7d";
  return "7d+";
}

std::string slot_device_bin(int slot, bool mobile) {
  return "slot" + std::to_string(slot) + (mobile ? "_mobile" : "_nonMobile");
}

std::map<std::string, std::string> product_ad_values(const ProductKey& key, const ProductStats& stats,
                                                     const ClickModelConfig& config) {
  std::map<std::string, std::string> out;
  out[dpa::feature::kAdvertiserId] = key.advertiser;
  out[dpa::feature::kProductSetId] = key.product_set;
  out[dpa::feature::kProductGroupId] = key.product_group;
  out[dpa::feature::kProductId] =
      stats.impressions > config.promote_threshold ? key.product : default_product_value(key.product_group);
  return out;
}

PromoteResult promote_product(const ProductKey& key, offset::ModelState& model) {
  if (model.ad_table.contains(dpa::feature::kProductId, key.product)) return PromoteResult::already_promoted;
  auto def = model.ad_table.lookup(dpa::feature::kProductId, default_product_value(key.product_group));
  model.ad_table.set(dpa::feature::kProductId, key.product, def);
  return PromoteResult::promoted;
}

offset::Event assemble_event(const offset::Event& user, const ProductKey& key, const ProductStats& stats,
                             const ClickModelConfig& config) {
  offset::Event e = user;
  e.ad_values = product_ad_values(key, stats, config);
  return e;
}

double pctr(const offset::Event& user, const ProductKey& key, const offset::ModelState& model,
            const ProductStats& stats, const ClickModelConfig& config) {
  return offset::predict(assemble_event(user, key, stats, config), model);
}

ClickModel::ClickModel(ClickModelConfig config)
    : config_(std::move(config)), model_(config_.schema(), config_.hyper) {
  config_.validate();
}

ClickModel::ClickModel(ClickModelConfig config, offset::ModelState model)
    : config_(std::move(config)), model_(std::move(model)) {
  config_.validate();
}

const ProductStats& ClickModel::stats(const ProductKey& key) const {
  static const ProductStats kEmpty{};
  auto it = stats_.find(key);
  return it == stats_.end() ? kEmpty : it->second;
}

std::vector<ProductKey> ClickModel::train_batch(std::span<const ClickExample> batch) {
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    try {
      offset::train_step(assemble_event(ex.user, ex.product, stats(ex.product), config_), model_);
    } catch (const Error& e) {
      throw Error(e.code(), "event " + std::to_string(i) + ": " + e.what());
    }
  }
  std::set<ProductKey> touched;
  for (const auto& ex : batch) {
    auto& st = stats_[ex.product];
    st.impressions += 1;
    st.clicks += ex.user.label;
    touched.insert(ex.product);
  }
  std::vector<ProductKey> promoted;
  for (const auto& key : touched) {
    if (stats_[key].impressions > config_.promote_threshold &&
        promote_product(key, model_) == PromoteResult::promoted) {
      promoted.push_back(key);
    }
  }
  return promoted;
}

double ClickModel::pctr(const offset::Event& user, const ProductKey& key) const {
  return click::pctr(user, key, model_, stats(key), config_);
}

}  // namespace dpa::click
