#include "dpa/serving.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace dpa::serving {

std::string_view to_string(Device d) { return d == Device::mobile ? "mobile" : "desktop"; }

Device parse_device(std::string_view s) {
  if (s == "mobile") return Device::mobile;
  if (s == "desktop") return Device::desktop;
  throw Error(ErrorCode::parse, "unknown device '" + std::string(s) + "'");
}

void Catalog::add(CatalogEntry entry) {
  auto id = entry.key.product;
  auto [it, inserted] = entries_.emplace(id, std::move(entry));
  if (!inserted && !(it->second.key == entries_.at(id).key)) {
    throw Error(ErrorCode::invalid_input, "product '" + id + "' maps to two catalog paths");
  }
}

const CatalogEntry* Catalog::find(const std::string& product_id) const {
  auto it = entries_.find(product_id);
  return it == entries_.end() ? nullptr : &it->second;
}

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.product.product != b.product.product) return a.product.product < b.product.product;
  return static_cast<int>(a.source) < static_cast<int>(b.source);
}

namespace {

std::vector<Candidate> from_ids(const std::vector<std::string>& ids, DpaType type, const Catalog* catalog) {
  std::vector<Candidate> out;
  for (const auto& id : ids) {
    Candidate c;
    c.source = type;
    if (const auto* e = catalog ? catalog->find(id) : nullptr) {
      c.product = e->key;
    } else {
      c.product.product = id;  // unknown products are dropped by match
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

RetargetingSource::RetargetingSource(std::map<std::string, std::vector<std::string>> history)
    : history_(std::move(history)) {}

std::vector<Candidate> RetargetingSource::gather(const ServeRequest& request, const RequestContext& ctx) const {
  auto it = history_.find(request.user.user_id);
  if (it == history_.end()) return {};
  return from_ids(it->second, type(), ctx.bundle.catalog.get());
}

FixtureSource::FixtureSource(DpaType type, std::map<std::string, std::vector<std::string>> per_user,
                             std::vector<std::string> everyone)
    : type_(type), per_user_(std::move(per_user)), everyone_(std::move(everyone)) {}

std::vector<Candidate> FixtureSource::gather(const ServeRequest& request, const RequestContext& ctx) const {
  auto out = from_ids(everyone_, type_, ctx.bundle.catalog.get());
  if (auto it = per_user_.find(request.user.user_id); it != per_user_.end()) {
    auto more = from_ids(it->second, type_, ctx.bundle.catalog.get());
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

ConversionProspectingSource::ConversionProspectingSource(std::shared_ptr<const conversion::PublishedConvModel> model)
    : model_(std::move(model)) {
  if (!model_) return;
  for (const auto& key : model_->selected) {
    ad_vectors_.push_back(offset::ad_vector_of(model_->model, conversion::conv_ad_values(key)));
  }
}

std::vector<Candidate> ConversionProspectingSource::gather(const ServeRequest& request, const RequestContext&) const {
  if (!model_ || model_->selected.empty()) return {};
  const auto& m = model_->model;
  offset::Event user;
  for (const auto& name : m.schema().user_features) {
    if (name == conversion::feature::kDpaType) {
      user.user_values[name] = {{std::string(to_string(DpaType::conversion_prospecting)), 1.0}};
    } else if (name == conversion::feature::kPageSection) {
      user.user_values[name] = {{request.page_section, 1.0}};
    } else if (auto it = request.user.features.find(name); it != request.user.features.end()) {
      user.user_values[name] = it->second;
    }
  }
  user.ad_values = conversion::conv_ad_values(model_->selected.front());
  std::vector<double> uvec;
  try {
    uvec = offset::build_user_vector(user, m);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::incomplete_event) return {};  // user lacks conversion features
    throw;
  }
  const std::map<std::string, std::string> no_bins;
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < model_->selected.size(); ++i) {
    const auto& key = model_->selected[i];
    auto bid = model_->bids.find(key.product_group);
    auto tcpa = model_->tcpa.find(key.advertiser);
    if (bid == model_->bids.end() || tcpa == model_->tcpa.end()) continue;
    const double raw = std::min(offset::sigmoid(offset::score_from_vectors(m, uvec, ad_vectors_[i], no_bins)),
                                1.0 - offset::kProbFloor);
    const double final_bid = conversion::bid_final(conversion::correct_prediction(raw),
                                                   static_cast<double>(tcpa->second),
                                                   static_cast<double>(bid->second));
    if (final_bid < static_cast<double>(request.floor_price)) continue;
    Candidate c;
    c.product = key;
    c.source = type();
    c.bid = final_bid;
    out.push_back(std::move(c));
  }
  return out;
}

TrendingProspectingSource::TrendingProspectingSource(std::shared_ptr<const trending::PublishedTrendyModel> model)
    : model_(std::move(model)) {
  if (!model_) return;
  const trending::Demographics probe{30, trending::Gender::female};
  for (const auto& key : model_->products) {
    ad_vectors_.push_back(offset::ad_vector_of(model_->model, trending::lookalike_event(probe, key, 0, 0).ad_values));
  }
}

std::vector<Candidate> TrendingProspectingSource::gather(const ServeRequest& request, const RequestContext&) const {
  if (!model_ || !request.user.demographics.known()) return {};
  const auto& m = model_->model;
  const auto probe = trending::lookalike_event(request.user.demographics, model_->products.empty()
                                                                               ? ProductKey{"a", "s", "g", "p"}
                                                                               : model_->products.front(),
                                               0, 0);
  const auto uvec = offset::build_user_vector(probe, m);
  const std::map<std::string, std::string> no_bins;
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < model_->products.size(); ++i) {
    const auto& key = model_->products[i];
    auto th = model_->thresholds.find(key.advertiser);
    if (th == model_->thresholds.end()) continue;
    const double s = offset::sigmoid(offset::score_from_vectors(m, uvec, ad_vectors_[i], no_bins));
    if (s > th->second.t) {
      Candidate c;
      c.product = key;
      c.source = type();
      out.push_back(std::move(c));
    }
  }
  return out;
}

// ---- recommendation model -------------------------------------------------

void RecommendationModel::add_engagement(const ProductKey& product, const std::string& user_id, double count) {
  keys_[product.product] = product;
  by_product_[product.product][user_id] += count;
  by_user_[user_id][product.product] += count;
  neighbors_.clear();
  popular_.clear();
  indexed_ = false;
}

void RecommendationModel::ingest(std::span<const trending::PixelEvent> pixel_feed) {
  for (const auto& ev : pixel_feed) add_engagement(ev.product, ev.user_id, 1.0);
}

void RecommendationModel::build_index() {
  std::map<std::string, std::vector<std::pair<std::string, double>>> neighbors;
  std::set<std::string> advertisers;
  for (const auto& [product, key] : keys_) {
    neighbors[product] = compute_item_to_item(key);
    advertisers.insert(key.advertiser);
  }
  std::map<std::string, std::vector<std::string>> popular;
  for (const auto& a : advertisers) popular[a] = compute_popular(a);
  neighbors_ = std::move(neighbors);
  popular_ = std::move(popular);
  indexed_ = true;
}

std::vector<std::pair<std::string, double>> RecommendationModel::item_to_item(const ProductKey& pivot) const {
  if (!indexed_) return compute_item_to_item(pivot);
  auto it = neighbors_.find(pivot.product);
  return it == neighbors_.end() ? std::vector<std::pair<std::string, double>>{} : it->second;
}

std::vector<std::string> RecommendationModel::popular(const std::string& advertiser) const {
  if (!indexed_) return compute_popular(advertiser);
  auto it = popular_.find(advertiser);
  return it == popular_.end() ? std::vector<std::string>{} : it->second;
}

std::vector<std::pair<std::string, double>> RecommendationModel::compute_item_to_item(const ProductKey& pivot) const {
  auto pit = by_product_.find(pivot.product);
  if (pit == by_product_.end()) return {};
  auto norm = [&](const std::string& product) {
    double s = 0.0;
    for (const auto& [_, c] : by_product_.at(product)) s += c * c;
    return std::sqrt(s);
  };
  std::map<std::string, double> dots;
  for (const auto& [user, c] : pit->second) {
    for (const auto& [other, c2] : by_user_.at(user)) {
      if (other == pivot.product) continue;
      if (keys_.at(other).advertiser != pivot.advertiser) continue;
      dots[other] += c * c2;
    }
  }
  const double pivot_norm = norm(pivot.product);
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [other, dot] : dots) {
    const double sim = dot / (pivot_norm * norm(other));
    if (sim > 0.0) out.emplace_back(other, sim);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

std::vector<std::string> RecommendationModel::compute_popular(const std::string& advertiser) const {
  std::vector<std::pair<std::string, double>> totals;
  for (const auto& [product, users] : by_product_) {
    if (keys_.at(product).advertiser != advertiser) continue;
    double t = 0.0;
    for (const auto& [_, c] : users) t += c;
    totals.emplace_back(product, t);
  }
  std::sort(totals.begin(), totals.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (auto& [p, _] : totals) out.push_back(p);
  return out;
}

void RecommendationModel::save(std::ostream& out) const {
  out << "#co-engagement v1\n";
  for (const auto& [product, users] : by_product_) {
    for (const auto& [user, c] : users) {
      out << format_product_path(keys_.at(product)) << '\t' << user << '\t' << encode_double(c) << '\n';
    }
  }
}

RecommendationModel RecommendationModel::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "#co-engagement v1") {
    throw Error(ErrorCode::parse, "not a co-engagement file");
  }
  RecommendationModel m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 3) throw Error(ErrorCode::parse, "malformed co-engagement row");
    m.add_engagement(parse_product_path(cols[0]), cols[1], decode_double(cols[2]));
  }
  m.build_index();
  return m;
}

// ---- counters -------------------------------------------------------------

StageCounters& StageCounters::operator+=(const StageCounters& o) {
  requests += o.requests;
  gathered += o.gathered;
  match_dropped += o.match_dropped;
  filter_expired += o.filter_expired;
  filter_targeting += o.filter_targeting;
  filter_policy += o.filter_policy;
  filter_budget += o.filter_budget;
  filter_floor += o.filter_floor;
  prelim_dropped += o.prelim_dropped;
  dedupe_dropped += o.dedupe_dropped;
  backfill_item_to_item += o.backfill_item_to_item;
  backfill_popularity += o.backfill_popularity;
  backfill_degraded += o.backfill_degraded;
  render_dropped += o.render_dropped;
  ads_out += o.ads_out;
  carousels_out += o.carousels_out;
  return *this;
}

namespace {

nlohmann::ordered_json counters_json(const StageCounters& c) {
  nlohmann::ordered_json j;
  j["requests"] = c.requests;
  j["gathered"] = c.gathered;
  j["match_dropped"] = c.match_dropped;
  j["filter_expired"] = c.filter_expired;
  j["filter_targeting"] = c.filter_targeting;
  j["filter_policy"] = c.filter_policy;
  j["filter_budget"] = c.filter_budget;
  j["filter_floor"] = c.filter_floor;
  j["prelim_dropped"] = c.prelim_dropped;
  j["dedupe_dropped"] = c.dedupe_dropped;
  j["backfill_item_to_item"] = c.backfill_item_to_item;
  j["backfill_popularity"] = c.backfill_popularity;
  j["backfill_degraded"] = c.backfill_degraded;
  j["render_dropped"] = c.render_dropped;
  j["ads_out"] = c.ads_out;
  j["carousels_out"] = c.carousels_out;
  return j;
}

}  // namespace

std::string StageCounters::to_json() const { return counters_json(*this).dump(); }

std::string ServeResult::to_json() const {
  nlohmann::ordered_json j;
  j["request_id"] = request_id;
  auto ads_json = nlohmann::ordered_json::array();
  for (const auto& ad : ads) {
    nlohmann::ordered_json a;
    a["advertiser"] = ad.advertiser;
    a["carousel"] = ad.carousel;
    auto slots = nlohmann::ordered_json::array();
    for (const auto& s : ad.slots) {
      nlohmann::ordered_json sj;
      sj["product"] = format_product_path(s.candidate.product);
      sj["source"] = std::string(dpa::to_string(s.candidate.source));
      sj["bid"] = s.candidate.bid;
      sj["pctr"] = s.candidate.pctr;
      sj["score"] = s.candidate.score;
      sj["title"] = s.assets.title;
      sj["image"] = s.assets.image;
      sj["description"] = s.assets.description;
      slots.push_back(std::move(sj));
    }
    a["slots"] = std::move(slots);
    ads_json.push_back(std::move(a));
  }
  j["ads"] = std::move(ads_json);
  j["counters"] = counters_json(counters);
  return j.dump();
}

// ---- stages ---------------------------------------------------------------

std::vector<Candidate> gather(const ServeRequest& request, const SnapshotBundle& bundle) {
  RequestContext ctx{bundle};
  std::vector<Candidate> out;
  for (const auto& source : bundle.sources) {
    auto part = source->gather(request, ctx);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

std::vector<Candidate> match(std::vector<Candidate> candidates, const Catalog& catalog, const CampaignDb& campaigns,
                             StageCounters& counters) {
  std::vector<Candidate> out;
  out.reserve(candidates.size());
  for (auto& c : candidates) {
    const auto* entry = catalog.find(c.product.product);
    if (!entry) {
      ++counters.match_dropped;
      continue;
    }
    c.product = entry->key;
    auto camp = campaigns.find(c.product.product_group);
    if (camp == campaigns.end()) {
      ++counters.match_dropped;
      continue;
    }
    c.campaign = camp->second;
    // conversion-prospecting candidates already carry bid_final
    if (c.source != DpaType::conversion_prospecting) c.bid = static_cast<double>(camp->second.bid);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Candidate> filter(std::vector<Candidate> candidates, const ServeRequest& request,
                              StageCounters& counters) {
  std::vector<Candidate> out;
  out.reserve(candidates.size());
  for (auto& c : candidates) {
    const auto& camp = *c.campaign;
    if (!camp.target_genders.empty() && !camp.target_genders.count(request.user.demographics.gender)) {
      ++counters.filter_targeting;
    } else if (request.day > camp.expiration_day) {
      ++counters.filter_expired;
    } else if (!camp.language.empty() && camp.language != request.language) {
      ++counters.filter_policy;
    } else if (static_cast<double>(camp.budget_remaining) < c.bid) {
      ++counters.filter_budget;
    } else if (c.bid < static_cast<double>(request.floor_price)) {
      ++counters.filter_floor;
    } else {
      out.push_back(std::move(c));
    }
  }
  return out;
}

offset::Event click_user_event(const ServeRequest& request, DpaType source, int slot) {
  offset::Event e;
  e.user_values = request.user.features;
  e.user_values[click::feature::kPageSection] = {{request.page_section, 1.0}};
  e.user_values[click::feature::kDpaType] = {{std::string(dpa::to_string(source)), 1.0}};
  e.sim_bins = request.user.sim_bins;
  e.sim_bins[click::feature::kSlotDevice] = click::slot_device_bin(slot, request.device == Device::mobile);
  return e;
}

std::vector<Candidate> rank(std::vector<Candidate> candidates, const ServeRequest& request,
                            const click::ClickModel& click_model) {
  const auto& model = click_model.model();
  const auto& schema = model.schema();
  std::map<DpaType, std::pair<offset::Event, std::vector<double>>> users;
  for (auto& c : candidates) {
    auto it = users.find(c.source);
    if (it == users.end()) {
      auto ev = click_user_event(request, c.source, 1);
      // only the schema's features take part
      for (auto f = ev.user_values.begin(); f != ev.user_values.end();) {
        f = std::find(schema.user_features.begin(), schema.user_features.end(), f->first) ==
                    schema.user_features.end()
                ? ev.user_values.erase(f)
                : std::next(f);
      }
      ev.ad_values = click::product_ad_values(c.product, click_model.stats(c.product), click_model.config());
      auto uvec = offset::build_user_vector(ev, model);
      it = users.emplace(c.source, std::make_pair(std::move(ev), std::move(uvec))).first;
    }
    const auto& [ev, uvec] = it->second;
    auto avec = offset::ad_vector_of(model, click::product_ad_values(c.product, click_model.stats(c.product),
                                                                     click_model.config()));
    c.pctr = offset::sigmoid(offset::score_from_vectors(model, uvec, avec, ev.sim_bins));
    c.score = c.pctr * c.bid;
  }
  std::sort(candidates.begin(), candidates.end(), ranks_before);
  return candidates;
}

std::vector<Candidate> preliminary_auction(std::vector<Candidate> prospecting, std::size_t l) {
  for (auto& c : prospecting) c.score = c.pctr * c.bid;
  if (prospecting.size() > l) {
    std::partial_sort(prospecting.begin(), prospecting.begin() + static_cast<std::ptrdiff_t>(l), prospecting.end(),
                      ranks_before);
    prospecting.resize(l);
  } else {
    std::sort(prospecting.begin(), prospecting.end(), ranks_before);
  }
  return prospecting;
}

std::vector<Candidate> prospecting_auction(std::vector<Candidate> ranked, std::size_t l, StageCounters& counters) {
  std::vector<Candidate> prospecting;
  std::vector<Candidate> rest;
  for (auto& c : ranked) (is_prospecting(c.source) ? prospecting : rest).push_back(std::move(c));
  const auto before = prospecting.size();
  auto winners = preliminary_auction(std::move(prospecting), l);
  counters.prelim_dropped += static_cast<std::int64_t>(before - winners.size());
  rest.insert(rest.end(), std::make_move_iterator(winners.begin()), std::make_move_iterator(winners.end()));
  std::sort(rest.begin(), rest.end(), ranks_before);
  return rest;
}

std::vector<Candidate> dedupe(std::vector<Candidate> ranked) {
  std::sort(ranked.begin(), ranked.end(), ranks_before);
  // one instance per product: the highest-scoring type
  std::set<std::string> seen_products;
  std::vector<Candidate> unique;
  for (auto& c : ranked) {
    if (seen_products.insert(c.product.product).second) unique.push_back(std::move(c));
  }
  // one ad line per advertiser: the product group of its best candidate
  std::map<std::string, std::string> line;
  std::vector<Candidate> out;
  for (auto& c : unique) {
    auto [it, first] = line.emplace(c.product.advertiser, c.product.product_group);
    if (first || it->second == c.product.product_group) out.push_back(std::move(c));
  }
  return out;
}

std::vector<Ad> group(const std::vector<Candidate>& deduped, const ServeRequest& request) {
  std::vector<Ad> ads;
  std::map<std::string, std::size_t> index;
  for (const auto& c : deduped) {
    auto it = index.find(c.product.advertiser);
    if (it == index.end()) {
      index.emplace(c.product.advertiser, ads.size());
      ads.push_back(Ad{c.product.advertiser, request.supports_carousel, {c}, 0});
      continue;
    }
    auto& ad = ads[it->second];
    if (request.supports_carousel && c.product.product_group == ad.slots.front().product.product_group) {
      ad.slots.push_back(c);
    }
  }
  for (auto& ad : ads) std::stable_sort(ad.slots.begin(), ad.slots.end(), ranks_before);
  return ads;
}

Ad backfill(Ad partial, const RecommendationModel& recs, const Catalog& catalog, std::size_t slots,
            StageCounters& counters) {
  if (!partial.carousel || partial.slots.size() >= slots) return partial;
  const Candidate pivot = partial.slots.front();
  std::set<std::string> present;
  for (const auto& s : partial.slots) present.insert(s.product.product);

  std::vector<std::string> pool;
  const auto related = recs.item_to_item(pivot.product);
  const bool use_popularity = related.size() < 2;
  if (use_popularity) {
    pool = recs.popular(pivot.product.advertiser);
  } else {
    for (const auto& [id, _] : related) pool.push_back(id);
  }
  std::size_t added = 0;
  for (const auto& id : pool) {
    if (partial.slots.size() >= slots) break;
    if (present.count(id)) continue;
    const auto* entry = catalog.find(id);
    if (!entry || entry->key.advertiser != pivot.product.advertiser) continue;
    Candidate c;
    c.product = entry->key;
    c.source = pivot.source;
    c.bid = pivot.bid;
    c.campaign = pivot.campaign;
    partial.slots.push_back(std::move(c));
    present.insert(id);
    ++added;
  }
  if (partial.slots.size() < slots) {
    ++counters.backfill_degraded;
    return Ad{partial.advertiser, false, {pivot}, 0};
  }
  partial.backfilled = added;
  (use_popularity ? counters.backfill_popularity : counters.backfill_item_to_item) +=
      static_cast<std::int64_t>(added);
  return partial;
}

std::vector<RenderedAd> render(const std::vector<Ad>& ads, const Catalog& catalog, StageCounters& counters) {
  std::vector<RenderedAd> out;
  for (const auto& ad : ads) {
    RenderedAd r{ad.advertiser, ad.carousel, {}};
    bool ok = true;
    for (const auto& s : ad.slots) {
      const auto* entry = catalog.find(s.product.product);
      if (!entry || !entry->assets.complete()) {
        ok = false;
        break;
      }
      r.slots.push_back({s, entry->assets});
    }
    if (!ok) {
      ++counters.render_dropped;
      continue;
    }
    out.push_back(std::move(r));
  }
  return out;
}

ServeResult serve(const ServeRequest& request, const SnapshotBundle& bundle, const PipelineConfig& config) {
  ServeResult result;
  result.request_id = request.request_id;
  auto& counters = result.counters;
  counters.requests = 1;

  auto candidates = gather(request, bundle);
  counters.gathered = static_cast<std::int64_t>(candidates.size());
  static const Catalog kEmptyCatalog;
  static const CampaignDb kEmptyCampaigns;
  const Catalog& catalog = bundle.catalog ? *bundle.catalog : kEmptyCatalog;
  candidates = match(std::move(candidates), catalog, bundle.campaigns ? *bundle.campaigns : kEmptyCampaigns,
                     counters);
  candidates = filter(std::move(candidates), request, counters);
  if (candidates.empty()) return result;
  if (!bundle.click) throw Error(ErrorCode::invalid_input, "snapshot bundle lacks a click model");
  candidates = rank(std::move(candidates), request, *bundle.click);
  candidates = prospecting_auction(std::move(candidates), config.prelim_l, counters);
  const auto before = candidates.size();
  candidates = dedupe(std::move(candidates));
  counters.dedupe_dropped = static_cast<std::int64_t>(before - candidates.size());

  auto ads = group(candidates, request);
  static const RecommendationModel kNoRecs;
  for (auto& ad : ads) {
    if (ad.carousel && ad.slots.size() < config.carousel_slots) {
      ad = backfill(std::move(ad), bundle.recs ? *bundle.recs : kNoRecs, catalog, config.carousel_slots, counters);
    }
  }
  result.ads = render(ads, catalog, counters);
  counters.ads_out = static_cast<std::int64_t>(result.ads.size());
  for (const auto& a : result.ads) counters.carousels_out += a.carousel ? 1 : 0;
  return result;
}

}  // namespace dpa::serving
