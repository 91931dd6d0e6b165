#pragma once

// Per-impression DPA serving flow:
//   gather -> match -> filter -> rank -> preliminary auction -> dedupe
//   -> group -> backfill -> render
// Every stage is a pure function of the request and an immutable snapshot
// bundle, so requests can be served concurrently.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dpa/click_model.hpp"
#include "dpa/conversion.hpp"
#include "dpa/offset.hpp"
#include "dpa/product.hpp"
#include "dpa/trending.hpp"

namespace dpa::serving {

enum class Device { mobile, desktop };
std::string_view to_string(Device d);
Device parse_device(std::string_view s);

struct UserProfile {
  std::string user_id;
  trending::Demographics demographics;
  // Multi-value and categorical user features shared by the click and
  // conversion models (page-section and dpa type come from the request).
  std::map<std::string, std::vector<offset::WeightedValue>> features;
  std::map<std::string, std::string> sim_bins;  // frequency, recency
};

struct ServeRequest {
  std::string request_id;
  std::int64_t timestamp = 0;
  std::int64_t day = 0;
  UserProfile user;
  std::string page_section;
  Cents floor_price = 0;
  bool supports_carousel = true;
  Device device = Device::desktop;
  std::string language = "en";
};

struct Assets {
  std::string title;
  std::string image;
  std::string description;
  bool complete() const { return !title.empty() && !image.empty() && !description.empty(); }
};

struct CatalogEntry {
  ProductKey key;
  ProductStats stats;
  Assets assets;
};

class Catalog {
 public:
  void add(CatalogEntry entry);
  const CatalogEntry* find(const std::string& product_id) const;
  const std::map<std::string, CatalogEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, CatalogEntry> entries_;
};

struct Campaign {
  std::string campaign_id;
  std::string product_group;
  Cents budget_remaining = 0;
  std::set<trending::Gender> target_genders;  // empty = everyone
  std::int64_t expiration_day = 0;
  Cents bid = 0;  // bid_product-group (per click)
  std::string language;  // empty = any
};

using CampaignDb = std::map<std::string, Campaign>;  // product group id -> campaign

struct Candidate {
  ProductKey product;
  DpaType source = DpaType::retargeting;
  double bid = 0.0;  // cents
  double pctr = 0.0;
  double score = 0.0;  // pctr * bid
  std::optional<Campaign> campaign;
};

// Deterministic candidate order: score descending, then product id, then type.
bool ranks_before(const Candidate& a, const Candidate& b);

struct RequestContext;

// A DPA type's eligibility logic.
class CandidateSource {
 public:
  virtual ~CandidateSource() = default;
  virtual DpaType type() const = 0;
  virtual std::vector<Candidate> gather(const ServeRequest& request, const RequestContext& ctx) const = 0;
};

// Products from the user's browsing history on advertiser sites.
class RetargetingSource : public CandidateSource {
 public:
  explicit RetargetingSource(std::map<std::string, std::vector<std::string>> history);
  DpaType type() const override { return DpaType::retargeting; }
  std::vector<Candidate> gather(const ServeRequest& request, const RequestContext& ctx) const override;

 private:
  std::map<std::string, std::vector<std::string>> history_;  // user id -> product ids
};

// Plugin point for types whose eligibility logic is out of scope (cross-sell,
// out-of-stock, search, location): returns configured fixture lists.
class FixtureSource : public CandidateSource {
 public:
  FixtureSource(DpaType type, std::map<std::string, std::vector<std::string>> per_user,
                std::vector<std::string> everyone = {});
  DpaType type() const override { return type_; }
  std::vector<Candidate> gather(const ServeRequest& request, const RequestContext& ctx) const override;

 private:
  DpaType type_;
  std::map<std::string, std::vector<std::string>> per_user_;
  std::vector<std::string> everyone_;
};

class ConversionProspectingSource : public CandidateSource {
 public:
  explicit ConversionProspectingSource(std::shared_ptr<const conversion::PublishedConvModel> model);
  DpaType type() const override { return DpaType::conversion_prospecting; }
  std::vector<Candidate> gather(const ServeRequest& request, const RequestContext& ctx) const override;

 private:
  std::shared_ptr<const conversion::PublishedConvModel> model_;
  std::vector<std::vector<double>> ad_vectors_;  // per selected product
};

class TrendingProspectingSource : public CandidateSource {
 public:
  explicit TrendingProspectingSource(std::shared_ptr<const trending::PublishedTrendyModel> model);
  DpaType type() const override { return DpaType::trending_prospecting; }
  std::vector<Candidate> gather(const ServeRequest& request, const RequestContext& ctx) const override;

 private:
  std::shared_ptr<const trending::PublishedTrendyModel> model_;
  std::vector<std::vector<double>> ad_vectors_;  // per published product
};

// Item-to-item co-engagement recommender with a popularity fallback.
class RecommendationModel {
 public:
  void add_engagement(const ProductKey& product, const std::string& user_id, double count = 1.0);
  void ingest(std::span<const trending::PixelEvent> pixel_feed);
  // Precomputes neighbor and popularity lists; later engagement drops them.
  void build_index();

  // Cosine similarity of co-engagement vectors; same advertiser only, pivot
  // and zero-similarity products excluded; descending, ties by product id.
  std::vector<std::pair<std::string, double>> item_to_item(const ProductKey& pivot) const;
  // Advertiser's products by total engagement, descending.
  std::vector<std::string> popular(const std::string& advertiser) const;

  void save(std::ostream& out) const;
  static RecommendationModel load(std::istream& in);

 private:
  std::map<std::string, ProductKey> keys_;
  std::map<std::string, std::map<std::string, double>> by_product_;  // product -> user -> count
  std::map<std::string, std::map<std::string, double>> by_user_;     // user -> product -> count
  std::map<std::string, std::vector<std::pair<std::string, double>>> neighbors_;
  std::map<std::string, std::vector<std::string>> popular_;
  bool indexed_ = false;

  std::vector<std::pair<std::string, double>> compute_item_to_item(const ProductKey& pivot) const;
  std::vector<std::string> compute_popular(const std::string& advertiser) const;
};

struct SnapshotBundle {
  std::shared_ptr<const click::ClickModel> click;
  std::shared_ptr<const conversion::PublishedConvModel> conv;
  std::shared_ptr<const trending::PublishedTrendyModel> trendy;
  std::shared_ptr<const Catalog> catalog;
  std::shared_ptr<const CampaignDb> campaigns;
  std::shared_ptr<const RecommendationModel> recs;
  std::vector<std::shared_ptr<const CandidateSource>> sources;
};

struct RequestContext {
  const SnapshotBundle& bundle;
};

struct PipelineConfig {
  std::size_t prelim_l = 40;
  std::size_t carousel_slots = 3;
};

struct StageCounters {
  std::int64_t requests = 0;
  std::int64_t gathered = 0;
  std::int64_t match_dropped = 0;
  std::int64_t filter_expired = 0;
  std::int64_t filter_targeting = 0;
  std::int64_t filter_policy = 0;
  std::int64_t filter_budget = 0;
  std::int64_t filter_floor = 0;
  std::int64_t prelim_dropped = 0;
  std::int64_t dedupe_dropped = 0;
  std::int64_t backfill_item_to_item = 0;
  std::int64_t backfill_popularity = 0;
  std::int64_t backfill_degraded = 0;
  std::int64_t render_dropped = 0;
  std::int64_t ads_out = 0;
  std::int64_t carousels_out = 0;

  StageCounters& operator+=(const StageCounters& o);
  std::string to_json() const;
};

struct Ad {
  std::string advertiser;
  bool carousel = false;
  std::vector<Candidate> slots;  // slot 0 is the pivot
  std::size_t backfilled = 0;
};

struct RenderedSlot {
  Candidate candidate;
  Assets assets;
};

struct RenderedAd {
  std::string advertiser;
  bool carousel = false;
  std::vector<RenderedSlot> slots;
};

// ---- stages ---------------------------------------------------------------

std::vector<Candidate> gather(const ServeRequest& request, const SnapshotBundle& bundle);
std::vector<Candidate> match(std::vector<Candidate> candidates, const Catalog& catalog, const CampaignDb& campaigns,
                             StageCounters& counters);
std::vector<Candidate> filter(std::vector<Candidate> candidates, const ServeRequest& request,
                              StageCounters& counters);

// Click-model event for a (request, candidate) pair at carousel slot `slot`.
offset::Event click_user_event(const ServeRequest& request, DpaType source, int slot);

std::vector<Candidate> rank(std::vector<Candidate> candidates, const ServeRequest& request,
                            const click::ClickModel& click_model);
// Top l prospecting candidates by pctr * bid; ties by product id.
std::vector<Candidate> preliminary_auction(std::vector<Candidate> prospecting, std::size_t l);
// Applies the preliminary auction to the prospecting subset of a ranked list.
std::vector<Candidate> prospecting_auction(std::vector<Candidate> ranked, std::size_t l, StageCounters& counters);
std::vector<Candidate> dedupe(std::vector<Candidate> ranked);
std::vector<Ad> group(const std::vector<Candidate>& deduped, const ServeRequest& request);
Ad backfill(Ad partial, const RecommendationModel& recs, const Catalog& catalog, std::size_t slots,
            StageCounters& counters);
std::vector<RenderedAd> render(const std::vector<Ad>& ads, const Catalog& catalog, StageCounters& counters);

struct ServeResult {
  std::string request_id;
  std::vector<RenderedAd> ads;
  StageCounters counters;
  std::string to_json() const;
};

ServeResult serve(const ServeRequest& request, const SnapshotBundle& bundle, const PipelineConfig& config);

}  // namespace dpa::serving
