#include "dpa/conversion.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

namespace dpa::conversion {

void ConvModelConfig::validate() const {
  if (publish_k < 1) throw Error(ErrorCode::config, "publish_k must be >= 1");
  if (min_conversions < 1) throw Error(ErrorCode::config, "min_conversions must be >= 1");
  if (attribution_window_days < 1) throw Error(ErrorCode::config, "attribution window must be >= 1 day");
  schema().validate();
}

offset::FeatureSchema ConvModelConfig::schema() const {
  offset::FeatureSchema s;
  s.user_features = user_features;
  s.pair_width = pair_width;
  s.solo_width = solo_width;
  s.ad_features = {dpa::feature::kProductId, dpa::feature::kProductSetId, dpa::feature::kAdvertiserId};
  return s;
}

std::map<std::string, std::string> conv_ad_values(const ProductKey& key) {
  return {{dpa::feature::kProductId, key.product},
          {dpa::feature::kProductSetId, key.product_set},
          {dpa::feature::kAdvertiserId, key.advertiser}};
}

ConvFeed build_conv_training_feed(std::span<const ClickRecord> clicks, std::span<const ConversionRecord> conversions,
                                  const ConvModelConfig& config) {
  const std::int64_t window = config.attribution_window_days * 86400;
  // (user, product id) -> click indices sorted by time
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> by_key;
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    by_key[{clicks[i].user_id, clicks[i].product.product}].push_back(i);
  }
  for (auto& [_, idx] : by_key) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return clicks[a].timestamp < clicks[b].timestamp; });
  }

  auto make_event = [](const ClickRecord& c, std::int64_t ts, int label) {
    offset::Event e;
    e.user_values = c.user_values;
    e.ad_values = conv_ad_values(c.product);
    e.label = label;
    e.kind = label ? offset::EventKind::conversion : offset::EventKind::click;
    e.timestamp = ts;
    return e;
  };

  ConvFeed feed;
  feed.events.reserve(clicks.size() + conversions.size());
  for (const auto& c : clicks) feed.events.push_back(make_event(c, c.timestamp, 0));
  for (const auto& conv : conversions) {
    auto it = by_key.find({conv.user_id, conv.product.product});
    const ClickRecord* match = nullptr;
    if (it != by_key.end()) {
      for (auto i : it->second) {
        const auto& c = clicks[i];
        if (c.timestamp > conv.timestamp) break;
        if (conv.timestamp - c.timestamp <= window) match = &c;
      }
    }
    if (!match) {
      ++feed.dropped_conversions;
      continue;
    }
    feed.events.push_back(make_event(*match, conv.timestamp, 1));
  }
  std::stable_sort(feed.events.begin(), feed.events.end(),
                   [](const offset::Event& a, const offset::Event& b) { return a.timestamp < b.timestamp; });
  return feed;
}

double correct_prediction(double raw) {
  if (!(raw >= 0.0) || raw >= 1.0) {
    throw Error(ErrorCode::invalid_input, "raw conversion prediction must lie in [0, 1)");
  }
  return std::min(raw / (1.0 - raw), 1.0);
}

std::optional<Cents> compute_tcpa(const AdvertiserPerf& perf, double multiplier) {
  auto cpa_of = [&](DpaType t) -> std::optional<double> {
    auto c = perf.conversions_by_type.find(t);
    if (c == perf.conversions_by_type.end() || c->second <= 0) return std::nullopt;
    auto s = perf.spend_by_type.find(t);
    const double spend = s == perf.spend_by_type.end() ? 0.0 : static_cast<double>(s->second);
    return spend / static_cast<double>(c->second);
  };
  std::optional<double> cpa = cpa_of(DpaType::retargeting);
  if (!cpa) {
    for (auto t : kAllDpaTypes) {
      if (!is_prospecting(t)) continue;
      if (auto c = cpa_of(t); c && (!cpa || *c < *cpa)) cpa = c;
    }
  }
  if (!cpa) return std::nullopt;
  return static_cast<Cents>(std::llround(multiplier * *cpa));
}

double bid_final(double pconv, double tcpa, double bid_pg) {
  if (pconv < 0.0 || tcpa < 0.0 || bid_pg < 0.0) {
    throw Error(ErrorCode::invalid_input, "bid inputs must be nonnegative");
  }
  return std::min(pconv * tcpa, bid_pg);
}

double PublishedConvModel::pconv(const offset::Event& user, const ProductKey& product) const {
  offset::Event e = user;
  e.ad_values = conv_ad_values(product);
  // sigmoid saturates to exactly 1.0 in double precision for large scores
  const double raw = std::min(offset::predict(e, model), 1.0 - offset::kProbFloor);
  return correct_prediction(raw);
}

offset::ModelState restrict_to_products(const offset::ModelState& model, std::span<const ProductKey> products,
                                        bool keep_groups) {
  std::set<std::string> keep;
  for (const auto& p : products) {
    keep.insert(offset::table_key(dpa::feature::kProductId, p.product));
    keep.insert(offset::table_key(dpa::feature::kProductSetId, p.product_set));
    keep.insert(offset::table_key(dpa::feature::kAdvertiserId, p.advertiser));
    if (keep_groups) {
      keep.insert(offset::table_key(dpa::feature::kProductGroupId, p.product_group));
    }
  }
  offset::ModelState out = model;
  auto& entries = out.ad_table.entries();
  for (auto it = entries.begin(); it != entries.end();) {
    it = keep.count(it->first) ? std::next(it) : entries.erase(it);
  }
  return out;
}

PublishedConvModel publish_conv_model(const offset::ModelState& model,
                                      const std::map<ProductKey, ProductStats>& stats,
                                      const std::map<std::string, Cents>& tcpas,
                                      const std::map<std::string, Cents>& group_bids, const ConvModelConfig& config) {
  config.validate();
  std::vector<std::pair<ProductKey, std::int64_t>> eligible;
  for (const auto& [key, st] : stats) {
    if (st.conversions < config.min_conversions) continue;
    if (!tcpas.count(key.advertiser)) continue;
    eligible.emplace_back(key, st.conversions);
  }
  std::sort(eligible.begin(), eligible.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    if (a.first.product != b.first.product) return a.first.product < b.first.product;
    return a.first < b.first;
  });
  if (eligible.size() > static_cast<std::size_t>(config.publish_k)) eligible.resize(config.publish_k);

  std::vector<ProductKey> selected;
  for (const auto& [key, _] : eligible) selected.push_back(key);

  PublishedConvModel out{restrict_to_products(model, selected, false), selected, {}, {}, {}};
  for (const auto& [key, conv] : eligible) {
    out.conversions[key.product] = conv;
    out.tcpa[key.advertiser] = tcpas.at(key.advertiser);
    if (auto b = group_bids.find(key.product_group); b != group_bids.end()) {
      out.bids[key.product_group] = b->second;
    }
  }
  return out;
}

namespace {
constexpr std::string_view kManifestHeader = "#conv-manifest v1";
constexpr std::string_view kManifestFooter = "#end-manifest";
}  // namespace

void save_published(const PublishedConvModel& published, std::ostream& out) {
  offset::save_model(published.model, out);
  out << kManifestHeader << '\n';
  for (const auto& key : published.selected) {
    out << "product\t" << format_product_path(key) << '\t' << published.conversions.at(key.product) << '\n';
  }
  for (const auto& [adv, cents] : published.tcpa) out << "tcpa\t" << adv << '\t' << cents << '\n';
  for (const auto& [group, cents] : published.bids) out << "bid\t" << group << '\t' << cents << '\n';
  out << kManifestFooter << '\n';
}

PublishedConvModel load_published(std::istream& in) {
  auto model = offset::load_model(in);
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw Error(ErrorCode::parse, "published conversion model lacks its manifest");
  }
  PublishedConvModel out{std::move(model), {}, {}, {}, {}};
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == kManifestFooter) {
      ended = true;
      break;
    }
    auto cols = split(line, '\t');
    if (cols.size() != 3) throw Error(ErrorCode::parse, "malformed manifest row '" + line + "'");
    if (cols[0] == "product") {
      auto key = parse_product_path(cols[1]);
      out.conversions[key.product] = parse_int(cols[2], "conversions");
      out.selected.push_back(std::move(key));
    } else if (cols[0] == "tcpa") {
      out.tcpa[cols[1]] = parse_int(cols[2], "tcpa");
    } else if (cols[0] == "bid") {
      out.bids[cols[1]] = parse_int(cols[2], "bid");
    } else {
      throw Error(ErrorCode::parse, "unknown manifest row '" + cols[0] + "'");
    }
  }
  if (!ended) throw Error(ErrorCode::parse, "truncated conversion manifest");
  return out;
}

}  // namespace dpa::conversion
