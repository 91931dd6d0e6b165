#include "dpa/world.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "dpa/click_model.hpp"

namespace dpa::world {

namespace fs = std::filesystem;

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::config, what);
}

bool is_rate(double r) { return r >= 0.0 && r <= 1.0; }

// Weighted index sampler over a fixed cumulative table.
std::size_t pick(const std::vector<double>& cumulative, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, cumulative.back());
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u(rng));
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

bool bernoulli(double p, std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

template <class T>
const T& any_of(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

std::string page_section(const SyntheticWorldConfig& c, std::mt19937_64& rng) {
  return "section-" + std::to_string(std::uniform_int_distribution<std::size_t>(0, c.page_section_vocabulary - 1)(rng));
}

std::vector<offset::WeightedValue> distinct_values(std::string_view prefix, std::size_t universe, std::size_t k,
                                                   std::mt19937_64& rng) {
  std::set<std::size_t> chosen;
  std::uniform_int_distribution<std::size_t> d(0, universe - 1);
  while (chosen.size() < std::min(k, universe)) chosen.insert(d(rng));
  std::vector<offset::WeightedValue> out;
  for (auto c : chosen) out.push_back({std::string(prefix) + std::to_string(c), 1.0});
  return out;
}

std::string gender_name(trending::Gender g) { return std::string(trending::to_string(g)); }

}  // namespace

void SyntheticWorldConfig::validate() const {
  require(n_users >= 1 && n_advertisers >= 1 && sets_per_advertiser >= 1 && groups_per_set >= 1 &&
              products_per_group >= 1,
          "catalog and population counts must be at least 1");
  require(days >= 1, "days must be at least 1");
  require(is_rate(unknown_demographics_rate) && is_rate(missing_assets_rate) && is_rate(base_ctr) &&
              is_rate(retargeting_share) && is_rate(mobile_share) && is_rate(carousel_share),
          "rates must lie in [0, 1]");
  require(!conv_rates.empty(), "conv_rates must not be empty");
  for (double r : conv_rates) require(is_rate(r), "conversion rates must lie in [0, 1]");
  require(ctr_affinity_lift >= 0.0 && conv_affinity_lift >= 0.0, "lifts must be nonnegative");
  require(base_ctr * (1.0 + ctr_affinity_lift) <= 1.0, "planted CTR exceeds 1");
  for (const auto& a : affinities) {
    require(a.multiplier > 0.0, "affinity multipliers must be positive");
    require(a.age_min <= a.age_max, "affinity age range is empty");
  }
  require(max_conversion_delay_days >= 0 && max_conversion_delay_days <= 30,
          "conversion delay must lie in [0, 30] days");
  require(mean_conversion_delay_days > 0.0, "mean conversion delay must be positive");
  require(bid_min >= 1 && bid_max >= bid_min, "bid range is invalid");
  require(budget >= 0 && floor_price >= 0, "budget and floor must be nonnegative");
  require(page_section_vocabulary >= 1, "page_section_vocabulary must be positive");
}

nlohmann::json SyntheticWorldConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["n_users"] = n_users;
  j["n_advertisers"] = n_advertisers;
  j["sets_per_advertiser"] = sets_per_advertiser;
  j["groups_per_set"] = groups_per_set;
  j["products_per_group"] = products_per_group;
  j["unknown_demographics_rate"] = unknown_demographics_rate;
  j["missing_assets_rate"] = missing_assets_rate;
  j["base_ctr"] = base_ctr;
  j["ctr_affinity_lift"] = ctr_affinity_lift;
  j["conv_rates"] = conv_rates;
  j["conv_affinity_lift"] = conv_affinity_lift;
  j["popularity_skew"] = popularity_skew;
  auto rules = nlohmann::json::array();
  for (const auto& a : affinities) {
    rules.push_back({{"age_min", a.age_min},
                     {"age_max", a.age_max},
                     {"gender", a.gender == trending::Gender::unknown ? "any" : gender_name(a.gender)},
                     {"advertiser", a.advertiser},
                     {"product_group", a.product_group},
                     {"multiplier", a.multiplier}});
  }
  j["affinities"] = rules;
  j["days"] = days;
  j["impressions_per_day"] = impressions_per_day;
  j["pixel_events_per_day"] = pixel_events_per_day;
  j["retargeting_share"] = retargeting_share;
  j["max_conversion_delay_days"] = max_conversion_delay_days;
  j["mean_conversion_delay_days"] = mean_conversion_delay_days;
  j["bid_min"] = bid_min;
  j["bid_max"] = bid_max;
  j["budget"] = budget;
  j["floor_price"] = floor_price;
  j["page_section_vocabulary"] = page_section_vocabulary;
  j["mobile_share"] = mobile_share;
  j["carousel_share"] = carousel_share;
  j["serve_days"] = serve_days;
  j["requests_per_day"] = requests_per_day;
  return j;
}

SyntheticWorldConfig SyntheticWorldConfig::from_json(const nlohmann::json& j) {
  SyntheticWorldConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.n_users = j.value("n_users", c.n_users);
    c.n_advertisers = j.value("n_advertisers", c.n_advertisers);
    c.sets_per_advertiser = j.value("sets_per_advertiser", c.sets_per_advertiser);
    c.groups_per_set = j.value("groups_per_set", c.groups_per_set);
    c.products_per_group = j.value("products_per_group", c.products_per_group);
    c.unknown_demographics_rate = j.value("unknown_demographics_rate", c.unknown_demographics_rate);
    c.missing_assets_rate = j.value("missing_assets_rate", c.missing_assets_rate);
    c.base_ctr = j.value("base_ctr", c.base_ctr);
    c.ctr_affinity_lift = j.value("ctr_affinity_lift", c.ctr_affinity_lift);
    c.conv_rates = j.value("conv_rates", c.conv_rates);
    c.conv_affinity_lift = j.value("conv_affinity_lift", c.conv_affinity_lift);
    c.popularity_skew = j.value("popularity_skew", c.popularity_skew);
    if (j.contains("affinities")) {
      c.affinities.clear();
      for (const auto& r : j.at("affinities")) {
        AffinityRule a;
        a.age_min = r.value("age_min", a.age_min);
        a.age_max = r.value("age_max", a.age_max);
        const auto g = r.value("gender", std::string("any"));
        a.gender = g == "any" ? trending::Gender::unknown : trending::parse_gender(g);
        a.advertiser = r.value("advertiser", a.advertiser);
        a.product_group = r.value("product_group", a.product_group);
        a.multiplier = r.value("multiplier", a.multiplier);
        c.affinities.push_back(a);
      }
    }
    c.days = j.value("days", c.days);
    c.impressions_per_day = j.value("impressions_per_day", c.impressions_per_day);
    c.pixel_events_per_day = j.value("pixel_events_per_day", c.pixel_events_per_day);
    c.retargeting_share = j.value("retargeting_share", c.retargeting_share);
    c.max_conversion_delay_days = j.value("max_conversion_delay_days", c.max_conversion_delay_days);
    c.mean_conversion_delay_days = j.value("mean_conversion_delay_days", c.mean_conversion_delay_days);
    c.bid_min = j.value("bid_min", c.bid_min);
    c.bid_max = j.value("bid_max", c.bid_max);
    c.budget = j.value("budget", c.budget);
    c.floor_price = j.value("floor_price", c.floor_price);
    c.page_section_vocabulary = j.value("page_section_vocabulary", c.page_section_vocabulary);
    c.mobile_share = j.value("mobile_share", c.mobile_share);
    c.carousel_share = j.value("carousel_share", c.carousel_share);
    c.serve_days = j.value("serve_days", c.serve_days);
    c.requests_per_day = j.value("requests_per_day", c.requests_per_day);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("world config: ") + e.what());
  }
  c.validate();
  return c;
}

const feeds::UserRecord& World::user(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw Error(ErrorCode::invalid_input, "unknown user '" + id + "'");
  return users[it->second];
}

void World::index() {
  by_id_.clear();
  for (std::size_t i = 0; i < users.size(); ++i) by_id_[users[i].user_id] = i;
  advertiser_index_.clear();
  for (std::size_t a = 0; a < config.n_advertisers; ++a) advertiser_index_["a" + std::to_string(a)] = a;
}

namespace {

bool has_value(const feeds::UserRecord& u, const char* feature, const std::string& value) {
  auto it = u.features.find(feature);
  if (it == u.features.end()) return false;
  return std::any_of(it->second.begin(), it->second.end(), [&](const auto& v) { return v.value == value; });
}

}  // namespace

double World::ctr(const feeds::UserRecord& u, const ProductKey& product) const {
  const bool top = has_value(u, click::feature::kCtrAdvertiserTop, product.advertiser);
  return config.base_ctr * (1.0 + (top ? config.ctr_affinity_lift : 0.0));
}

double World::cvr(const feeds::UserRecord& u, const ProductKey& product) const {
  auto it = advertiser_index_.find(product.advertiser);
  const std::size_t a = it == advertiser_index_.end() ? 0 : it->second;
  const double base = config.conv_rates[a % config.conv_rates.size()];
  const bool top = has_value(u, conversion::feature::kCtrCampaignTop, product.product_group);
  return std::min(1.0, base * (1.0 + (top ? config.conv_affinity_lift : 0.0)));
}

double World::pixel_weight(const trending::Demographics& d, const ProductKey& product) const {
  // Popularity is Zipf over the product index within its advertiser.
  const auto dash = product.product.rfind("-p");
  const double rank = dash == std::string::npos ? 1.0 : 1.0 + parse_double(product.product.substr(dash + 2), "rank");
  double w = 1.0 / std::pow(rank, config.popularity_skew);
  for (const auto& a : config.affinities) {
    if (!d.age || *d.age < a.age_min || *d.age > a.age_max) continue;
    if (a.gender != trending::Gender::unknown && d.gender != a.gender) continue;
    if (!a.advertiser.empty() && a.advertiser != product.advertiser) continue;
    if (!a.product_group.empty() && a.product_group != product.product_group) continue;
    w *= a.multiplier;
  }
  return w;
}

World gen_world(const SyntheticWorldConfig& config) {
  config.validate();
  World w;
  w.config = config;
  std::mt19937_64 rng(stream_seed(config.seed, "world"));

  std::vector<std::string> groups;
  for (std::size_t a = 0; a < config.n_advertisers; ++a) {
    const std::string adv = "a" + std::to_string(a);
    for (std::size_t s = 0; s < config.sets_per_advertiser; ++s) {
      const std::string set = adv + "-s" + std::to_string(s);
      for (std::size_t g = 0; g < config.groups_per_set; ++g) {
        const std::string group = set + "-g" + std::to_string(g);
        groups.push_back(group);
        for (std::size_t p = 0; p < config.products_per_group; ++p) {
          serving::CatalogEntry e;
          e.key = {adv, set, group, group + "-p" + std::to_string(p)};
          e.assets = {"Product " + e.key.product, "https://img.example.com/" + e.key.product + ".jpg",
                      "Catalog item " + e.key.product};
          if (bernoulli(config.missing_assets_rate, rng)) e.assets.image.clear();
          w.catalog.add(std::move(e));
        }
      }
    }
  }

  for (std::size_t i = 0; i < groups.size(); ++i) {
    serving::Campaign c;
    c.campaign_id = "c-" + groups[i];
    c.product_group = groups[i];
    c.budget_remaining = config.budget;
    c.expiration_day = static_cast<std::int64_t>(config.days + config.serve_days + 365);
    c.bid = std::uniform_int_distribution<Cents>(config.bid_min, config.bid_max)(rng);
    c.language = "en";
    if (i % 7 == 6) c.target_genders = {trending::Gender::female};
    w.campaigns[groups[i]] = c;
  }

  std::vector<std::string> advertisers;
  for (std::size_t a = 0; a < config.n_advertisers; ++a) advertisers.push_back("a" + std::to_string(a));
  for (std::size_t i = 0; i < config.n_users; ++i) {
    feeds::UserRecord u;
    u.user_id = "u" + std::to_string(i);
    u.demographics.age = std::uniform_int_distribution<int>(18, 65)(rng);
    u.demographics.gender = bernoulli(0.5, rng) ? trending::Gender::female : trending::Gender::male;
    if (bernoulli(config.unknown_demographics_rate, rng)) {
      if (bernoulli(0.5, rng)) {
        u.demographics.age.reset();
      } else {
        u.demographics.gender = trending::Gender::unknown;
      }
    }
    auto& f = u.features;
    f[click::feature::kTechnoSegments] = distinct_values("ts", 20, 2, rng);
    std::vector<offset::WeightedValue> history;
    for (auto& v : distinct_values("", advertisers.size(), 1 + (bernoulli(0.5, rng) ? 1 : 0), rng)) {
      history.push_back({"a" + v.value, 1.0});
    }
    f[click::feature::kImpressionHistory] = history;
    f[click::feature::kAge] = {{u.demographics.age ? std::to_string(*u.demographics.age) : "unknown", 1.0}};
    f[click::feature::kUserClickedCategory] = distinct_values("cat", 10, 1 + (bernoulli(0.5, rng) ? 1 : 0), rng);
    f[click::feature::kMobileActivity] = {{any_of(std::vector<std::string>{"high", "low", "none"}, rng), 1.0}};
    std::vector<offset::WeightedValue> top;
    for (auto& v : distinct_values("", advertisers.size(), 2, rng)) top.push_back({"a" + v.value, 1.0});
    f[click::feature::kCtrAdvertiserTop] = top;
    f[click::feature::kUserClickedProductCategory] =
        distinct_values("pcat", 10, 1 + (bernoulli(0.5, rng) ? 1 : 0), rng);
    std::vector<offset::WeightedValue> campaigns;
    std::set<std::size_t> picked;
    while (picked.size() < std::min<std::size_t>(2, groups.size())) {
      picked.insert(std::uniform_int_distribution<std::size_t>(0, groups.size() - 1)(rng));
    }
    for (auto p : picked) campaigns.push_back({groups[p], 1.0});
    f[conversion::feature::kCtrCampaignTop] = campaigns;
    w.users.push_back(std::move(u));
  }
  w.index();
  return w;
}

namespace {

struct ProductPools {
  std::vector<ProductKey> all;
  std::map<std::string, std::vector<std::size_t>> by_advertiser;
  std::vector<double> popularity_cumulative;
};

ProductPools pools(const World& w) {
  ProductPools p;
  double acc = 0.0;
  for (const auto& [_, e] : w.catalog.entries()) {
    p.by_advertiser[e.key.advertiser].push_back(p.all.size());
    p.all.push_back(e.key);
    acc += w.pixel_weight({}, e.key);
    p.popularity_cumulative.push_back(acc);
  }
  return p;
}

const DpaType kNonRetargeting[] = {DpaType::cross_sell, DpaType::search_stub, DpaType::location_stub,
                                   DpaType::conversion_prospecting, DpaType::trending_prospecting};

}  // namespace

std::vector<DayFeeds> gen_feeds(const World& w) {
  const auto& c = w.config;
  const auto p = pools(w);
  const std::int64_t horizon = static_cast<std::int64_t>(c.days) * kSecondsPerDay;
  std::vector<DayFeeds> days(c.days);
  std::map<trending::Demographics, std::vector<double>> cell_cumulative;

  for (std::size_t d = 0; d < c.days; ++d) {
    auto& day = days[d];
    day.day = static_cast<std::int64_t>(d);
    const std::int64_t start = day.day * kSecondsPerDay;
    std::mt19937_64 rng(stream_seed(c.seed, "impressions/" + std::to_string(d)));
    std::mt19937_64 conv_rng(stream_seed(c.seed, "conversions/" + std::to_string(d)));
    std::uniform_int_distribution<std::size_t> any_user(0, w.users.size() - 1);
    std::uniform_int_distribution<std::int64_t> any_second(0, kSecondsPerDay - 1);

    day.impressions.reserve(c.impressions_per_day);
    for (std::size_t i = 0; i < c.impressions_per_day; ++i) {
      const auto& u = w.users[any_user(rng)];
      feeds::ImpressionRecord r;
      r.timestamp = start + any_second(rng);
      r.user_id = u.user_id;
      if (bernoulli(c.retargeting_share, rng)) {
        const auto& history = u.features.at(click::feature::kImpressionHistory);
        const auto& adv = any_of(history, rng).value;
        r.product = p.all[any_of(p.by_advertiser.at(adv), rng)];
        r.type = DpaType::retargeting;
      } else {
        r.product = p.all[pick(p.popularity_cumulative, rng)];
        r.type = kNonRetargeting[std::uniform_int_distribution<int>(0, 4)(rng)];
      }
      r.page_section = page_section(c, rng);
      r.device = bernoulli(c.mobile_share, rng) ? serving::Device::mobile : serving::Device::desktop;
      r.slot = std::uniform_int_distribution<int>(1, 3)(rng);
      r.clicked = bernoulli(w.ctr(u, r.product), rng) ? 1 : 0;
      if (r.clicked) r.cost = w.campaigns.at(r.product.product_group).bid;
      day.impressions.push_back(std::move(r));
    }
    std::stable_sort(day.impressions.begin(), day.impressions.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

    const std::int64_t max_delay = static_cast<std::int64_t>(c.max_conversion_delay_days) * kSecondsPerDay;
    std::exponential_distribution<double> delay(1.0 / (c.mean_conversion_delay_days * kSecondsPerDay));
    for (const auto& imp : day.impressions) {
      if (!imp.clicked) continue;
      if (!bernoulli(w.cvr(w.user(imp.user_id), imp.product), conv_rng)) continue;
      const auto wait = std::min(static_cast<std::int64_t>(delay(conv_rng)), max_delay);
      const std::int64_t ts = imp.timestamp + wait;
      if (ts >= horizon) continue;
      days[static_cast<std::size_t>(ts / kSecondsPerDay)].conversions.push_back({ts, imp.user_id, imp.product});
    }

    std::mt19937_64 pixel_rng(stream_seed(c.seed, "pixel/" + std::to_string(d)));
    std::discrete_distribution<int> kinds({0.25, 0.35, 0.40});
    for (std::size_t i = 0; i < c.pixel_events_per_day; ++i) {
      const auto& u = w.users[any_user(pixel_rng)];
      auto it = cell_cumulative.find(u.demographics);
      if (it == cell_cumulative.end()) {
        std::vector<double> cum;
        double acc = 0.0;
        for (const auto& key : p.all) cum.push_back(acc += w.pixel_weight(u.demographics, key));
        it = cell_cumulative.emplace(u.demographics, std::move(cum)).first;
      }
      trending::PixelEvent e;
      e.timestamp = start + any_second(pixel_rng);
      e.user_id = u.user_id;
      e.user = u.demographics;
      e.product = p.all[pick(it->second, pixel_rng)];
      const int k = kinds(pixel_rng);
      e.kind = k == 0 ? trending::PixelKind::purchase
                      : (k == 1 ? trending::PixelKind::add_to_cart : trending::PixelKind::view);
      day.pixels.push_back(std::move(e));
    }
    std::stable_sort(day.pixels.begin(), day.pixels.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  }
  for (auto& day : days) {
    std::stable_sort(day.conversions.begin(), day.conversions.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  }
  return days;
}

std::vector<feeds::RequestRecord> gen_requests(const World& w) {
  const auto& c = w.config;
  std::vector<feeds::RequestRecord> out;
  for (std::size_t k = 0; k < c.serve_days; ++k) {
    const auto day = static_cast<std::int64_t>(c.days + k);
    std::mt19937_64 rng(stream_seed(c.seed, "requests/" + std::to_string(day)));
    std::uniform_int_distribution<std::size_t> any_user(0, w.users.size() - 1);
    std::vector<feeds::RequestRecord> batch;
    for (std::size_t i = 0; i < c.requests_per_day; ++i) {
      feeds::RequestRecord r;
      r.request_id = "r" + std::to_string(day) + "-" + std::to_string(i);
      r.day = day;
      r.timestamp = day * kSecondsPerDay + std::uniform_int_distribution<std::int64_t>(0, kSecondsPerDay - 1)(rng);
      r.user_id = w.users[any_user(rng)].user_id;
      r.page_section = page_section(c, rng);
      r.floor_price = std::uniform_int_distribution<Cents>(0, c.floor_price)(rng);
      r.supports_carousel = bernoulli(c.carousel_share, rng);
      r.device = bernoulli(c.mobile_share, rng) ? serving::Device::mobile : serving::Device::desktop;
      r.language = bernoulli(0.01, rng) ? "fr" : "en";
      r.sim_bins[click::feature::kFrequency] =
          click::frequency_bin(std::uniform_int_distribution<std::int64_t>(0, 8)(rng));
      r.sim_bins[click::feature::kRecency] =
          click::recency_bin(std::uniform_int_distribution<std::int64_t>(0, 10 * kSecondsPerDay)(rng));
      batch.push_back(std::move(r));
    }
    std::stable_sort(batch.begin(), batch.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    out.insert(out.end(), batch.begin(), batch.end());
  }
  return out;
}

std::string day_file(const std::string& dir, std::string_view kind, std::int64_t day) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03lld", static_cast<long long>(day));
  return (fs::path(dir) / (std::string(kind) + "-d" + buf + ".tsv")).string();
}

void save_world(const World& w, const std::string& dir) {
  fs::create_directories(dir);
  {
    auto out = feeds::open_out((fs::path(dir) / "world.json").string());
    out << w.config.to_json().dump(2) << '\n';
  }
  {
    auto out = feeds::open_out((fs::path(dir) / "catalog.tsv").string());
    feeds::write_catalog(out, w.catalog);
  }
  {
    auto out = feeds::open_out((fs::path(dir) / "users.tsv").string());
    feeds::write_users(out, w.users);
  }
  {
    auto out = feeds::open_out((fs::path(dir) / "campaigns.tsv").string());
    feeds::write_campaigns(out, w.campaigns);
  }
}

World load_world(const std::string& dir) {
  World w;
  auto in = feeds::open_in((fs::path(dir) / "world.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, dir + "/world.json: " + e.what());
  }
  w.config = SyntheticWorldConfig::from_json(j);
  w.catalog = feeds::read_file((fs::path(dir) / "catalog.tsv").string(), feeds::read_catalog);
  w.users = feeds::read_file((fs::path(dir) / "users.tsv").string(), feeds::read_users);
  w.campaigns = feeds::read_file((fs::path(dir) / "campaigns.tsv").string(), feeds::read_campaigns);
  w.index();
  return w;
}

void save_day(const DayFeeds& f, const std::string& dir) {
  fs::create_directories(dir);
  {
    auto out = feeds::open_out(day_file(dir, "impressions", f.day));
    feeds::write_impressions(out, f.impressions);
  }
  {
    auto out = feeds::open_out(day_file(dir, "conversions", f.day));
    feeds::write_conversions(out, f.conversions);
  }
  {
    auto out = feeds::open_out(day_file(dir, "pixel", f.day));
    feeds::write_pixels(out, f.pixels);
  }
}

DayFeeds load_day(const std::string& dir, std::int64_t day) {
  DayFeeds f;
  f.day = day;
  f.impressions = feeds::read_file(day_file(dir, "impressions", day), feeds::read_impressions);
  f.conversions = feeds::read_file(day_file(dir, "conversions", day), feeds::read_conversions);
  f.pixels = feeds::read_file(day_file(dir, "pixel", day), feeds::read_pixels);
  return f;
}

}  // namespace dpa::world
