#include "dpa/trending.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <unordered_set>

#include "dpa/conversion.hpp"

namespace dpa::trending {

std::string_view to_string(Gender g) {
  switch (g) {
    case Gender::female: return "female";
    case Gender::male: return "male";
    case Gender::unknown: return "unknown";
  }
  return "unknown";
}

Gender parse_gender(std::string_view s) {
  if (s == "female") return Gender::female;
  if (s == "male") return Gender::male;
  if (s == "unknown" || s.empty()) return Gender::unknown;
  throw Error(ErrorCode::parse, "unknown gender '" + std::string(s) + "'");
}

std::string_view to_string(PixelKind k) {
  switch (k) {
    case PixelKind::purchase: return "purchase";
    case PixelKind::add_to_cart: return "add_to_cart";
    case PixelKind::view: return "view";
  }
  return "view";
}

PixelKind parse_pixel_kind(std::string_view s) {
  if (s == "purchase") return PixelKind::purchase;
  if (s == "add_to_cart") return PixelKind::add_to_cart;
  if (s == "view") return PixelKind::view;
  throw Error(ErrorCode::parse, "unknown pixel event kind '" + std::string(s) + "'");
}

void LookalikeConfig::validate() const {
  if (top_n_products < 1 || negatives_per_product < 1 || stale_days < 1 || publish_t < 1 || sample_r < 1 ||
      passes < 1) {
    throw Error(ErrorCode::config, "lookalike counts must all be >= 1");
  }
  schema().validate();
}

offset::FeatureSchema LookalikeConfig::schema() const {
  offset::FeatureSchema s;
  s.user_features = {feature::kAge, feature::kGender};
  s.pair_width = pair_width;
  s.solo_width = solo_width;
  s.ad_features = {dpa::feature::kAdvertiserId, dpa::feature::kProductSetId, dpa::feature::kProductId};
  return s;
}

namespace {

std::map<std::string, std::vector<offset::WeightedValue>> demographic_values(const Demographics& user) {
  return {{feature::kAge, {{std::to_string(*user.age), 1.0}}},
          {feature::kGender, {{std::string(to_string(user.gender)), 1.0}}}};
}

std::map<std::string, std::string> lookalike_ad_values(const ProductKey& key) {
  return {{dpa::feature::kAdvertiserId, key.advertiser},
          {dpa::feature::kProductSetId, key.product_set},
          {dpa::feature::kProductId, key.product}};
}

}  // namespace

offset::Event lookalike_event(const Demographics& user, const ProductKey& product, int label, std::int64_t ts) {
  if (!user.known()) throw Error(ErrorCode::not_scorable, "user has unknown age or gender");
  offset::Event e;
  e.user_values = demographic_values(user);
  e.ad_values = lookalike_ad_values(product);
  e.label = label;
  e.kind = label ? offset::EventKind::purchase : offset::EventKind::impression;
  e.timestamp = ts;
  return e;
}

std::vector<ProductKey> select_top_products(std::span<const PixelEvent> pixel_feed, std::size_t n) {
  std::map<ProductKey, std::int64_t> counts;
  for (const auto& ev : pixel_feed) {
    if (is_positive(ev.kind)) ++counts[ev.product];
  }
  std::vector<std::pair<ProductKey, std::int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    if (a.first.product != b.first.product) return a.first.product < b.first.product;
    return a.first < b.first;
  });
  if (ranked.size() > n) ranked.resize(n);
  std::vector<ProductKey> out;
  out.reserve(ranked.size());
  for (auto& [key, _] : ranked) out.push_back(key);
  return out;
}

NegativeSample sample_negatives(std::span<const ImpressionUser> impressions, std::span<const ProductKey> products,
                                std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    if (impressions[i].user.known()) eligible.push_back(i);
  }
  NegativeSample out;
  const std::size_t n = eligible.size();
  for (const auto& product : products) {
    std::vector<std::size_t> picks;
    if (n <= m) {
      if (n < m) ++out.short_products;
      picks.resize(n);
      for (std::size_t i = 0; i < n; ++i) picks[i] = i;
    } else {
      // Floyd's algorithm: m distinct indices out of n
      std::mt19937_64 rng(stable_hash(product.product, stream_seed(seed, "negatives")));
      std::unordered_set<std::size_t> chosen;
      chosen.reserve(m * 2);
      for (std::size_t j = n - m; j < n; ++j) {
        std::uniform_int_distribution<std::size_t> dist(0, j);
        const std::size_t t = dist(rng);
        chosen.insert(chosen.count(t) ? j : t);
      }
      picks.assign(chosen.begin(), chosen.end());
      std::sort(picks.begin(), picks.end());
    }
    for (auto p : picks) {
      const auto& imp = impressions[eligible[p]];
      out.events.push_back(lookalike_event(imp.user, product, 0, imp.timestamp));
    }
  }
  return out;
}

std::vector<offset::Event> positive_events(std::span<const PixelEvent> pixel_feed,
                                           std::span<const ProductKey> products) {
  std::set<ProductKey> wanted(products.begin(), products.end());
  std::vector<offset::Event> out;
  for (const auto& ev : pixel_feed) {
    if (!is_positive(ev.kind) || !ev.user.known() || !wanted.count(ev.product)) continue;
    auto e = lookalike_event(ev.user, ev.product, 1, ev.timestamp);
    e.kind = ev.kind == PixelKind::purchase ? offset::EventKind::purchase : offset::EventKind::add_to_cart;
    out.push_back(std::move(e));
  }
  return out;
}

LookalikeModel::LookalikeModel(LookalikeConfig config)
    : config_(std::move(config)), model_(config_.schema(), config_.hyper) {
  config_.validate();
}

LookalikeModel::LookalikeModel(LookalikeConfig config, offset::ModelState model)
    : config_(std::move(config)), model_(std::move(model)) {
  config_.validate();
}

std::vector<ProductKey> LookalikeModel::train_lookalike(std::span<const offset::Event> positives,
                                                        std::span<const offset::Event> negatives,
                                                        std::span<const ProductKey> day_products) {
  std::vector<const offset::Event*> merged;
  merged.reserve(positives.size() + negatives.size());
  for (const auto& e : positives) merged.push_back(&e);
  for (const auto& e : negatives) merged.push_back(&e);
  std::stable_sort(merged.begin(), merged.end(),
                   [](const offset::Event* a, const offset::Event* b) { return a->timestamp < b->timestamp; });
  for (std::size_t pass = 0; pass < config_.passes; ++pass) {
    for (std::size_t i = 0; i < merged.size(); ++i) {
      try {
        offset::train_step(*merged[i], model_);
      } catch (const Error& e) {
        throw Error(e.code(), "event " + std::to_string(i) + ": " + e.what());
      }
    }
  }

  std::map<std::string, std::int64_t> pos_count;
  for (const auto& e : positives) ++pos_count[e.ad_values.at(dpa::feature::kProductId)];
  std::set<std::string> present;
  for (const auto& key : day_products) {
    present.insert(key.product);
    auto& t = tracked_[key.product];
    t.key = key;
    t.absent_updates = 0;
    t.positives = pos_count[key.product];
  }
  std::vector<ProductKey> evicted;
  for (auto it = tracked_.begin(); it != tracked_.end();) {
    if (present.count(it->first)) {
      ++it;
      continue;
    }
    if (++it->second.absent_updates >= config_.stale_days) {
      model_.ad_table.erase(dpa::feature::kProductId, it->first);
      evicted.push_back(it->second.key);
      it = tracked_.erase(it);
    } else {
      ++it;
    }
  }
  return evicted;
}

LookalikeModel::DayResult LookalikeModel::daily_update(std::span<const PixelEvent> pixel_feed,
                                                       std::span<const ImpressionUser> impressions,
                                                       std::uint64_t seed) {
  DayResult r;
  r.products = select_top_products(pixel_feed, config_.top_n_products);
  auto positives = positive_events(pixel_feed, r.products);
  auto negatives = sample_negatives(impressions, r.products, config_.negatives_per_product, seed);
  r.positives = positives.size();
  r.negatives = negatives.events.size();
  r.short_products = negatives.short_products;
  r.evicted = train_lookalike(positives, negatives.events, r.products);
  return r;
}

double eligibility_score(const Demographics& user, const ProductKey& product, const offset::ModelState& model) {
  return offset::predict(lookalike_event(user, product, 0, 0), model);
}

ThresholdCurve build_threshold_curve(const offset::ModelState& model, const std::string& advertiser,
                                     std::span<const ProductKey> advertiser_products,
                                     std::span<const Demographics> users) {
  if (advertiser_products.empty()) {
    throw Error(ErrorCode::empty_curve, "advertiser '" + advertiser + "' has no published products");
  }
  // Lookalike users are fully described by (age, gender): score each distinct
  // demographic cell once.
  std::map<Demographics, double> cell_max;
  ThresholdCurve curve{advertiser, {}};
  curve.maxima.reserve(users.size());
  for (const auto& u : users) {
    if (!u.known()) continue;
    auto it = cell_max.find(u);
    if (it == cell_max.end()) {
      double best = 0.0;
      for (const auto& p : advertiser_products) best = std::max(best, eligibility_score(u, p, model));
      it = cell_max.emplace(u, best).first;
    }
    curve.maxima.push_back(it->second);
  }
  std::sort(curve.maxima.begin(), curve.maxima.end());
  return curve;
}

double threshold_for_percentile(const ThresholdCurve& curve, double pct) {
  if (curve.maxima.empty()) throw Error(ErrorCode::empty_curve, "threshold curve is empty");
  if (!(pct > 0.0 && pct < 100.0)) throw Error(ErrorCode::invalid_input, "percentile must lie in (0, 100)");
  const std::size_t n = curve.maxima.size();
  const auto allowed = static_cast<std::size_t>(std::floor(pct * static_cast<double>(n) / 100.0 + 1e-9));
  return curve.maxima[n - 1 - std::min(allowed, n - 1)];
}

std::map<std::string, std::size_t> allocate_slots(const std::map<std::string, Cents>& spend_by_group,
                                                  const std::map<std::string, std::size_t>& products_by_group,
                                                  std::size_t t_cap) {
  std::map<std::string, std::size_t> alloc;
  std::size_t total = 0;
  for (const auto& [g, n] : products_by_group) {
    alloc[g] = 0;
    total += n;
  }
  const std::size_t target = std::min(t_cap, total);
  std::size_t given = 0;
  while (given < target) {
    std::vector<std::string> active;
    for (const auto& [g, n] : products_by_group) {
      if (alloc[g] < n) active.push_back(g);
    }
    auto spend = [&](const std::string& g) {
      auto it = spend_by_group.find(g);
      return it == spend_by_group.end() ? 0.0 : static_cast<double>(std::max<Cents>(it->second, 0));
    };
    double weight_sum = 0.0;
    for (const auto& g : active) weight_sum += spend(g);
    const bool uniform = weight_sum <= 0.0;
    if (uniform) weight_sum = static_cast<double>(active.size());

    const std::size_t remaining = target - given;
    struct Share {
      std::string group;
      double fraction;
    };
    std::vector<Share> fractions;
    std::size_t round_given = 0;
    for (const auto& g : active) {
      const double quota = static_cast<double>(remaining) * (uniform ? 1.0 : spend(g)) / weight_sum;
      const auto cap = products_by_group.at(g) - alloc[g];
      const auto whole = std::min<std::size_t>(static_cast<std::size_t>(std::floor(quota)), cap);
      alloc[g] += whole;
      round_given += whole;
      if (whole < cap) fractions.push_back({g, quota - std::floor(quota)});
    }
    std::stable_sort(fractions.begin(), fractions.end(),
                     [](const Share& a, const Share& b) { return a.fraction > b.fraction; });
    for (const auto& s : fractions) {
      if (given + round_given >= target) break;
      if (s.fraction <= 0.0 && !uniform) continue;
      alloc[s.group] += 1;
      ++round_given;
    }
    if (round_given == 0) {
      // every remaining quota rounds to zero: hand slots out by descending weight
      std::vector<std::string> order = active;
      std::stable_sort(order.begin(), order.end(),
                       [&](const std::string& a, const std::string& b) { return spend(a) > spend(b); });
      for (const auto& g : order) {
        if (given + round_given >= target) break;
        if (alloc[g] < products_by_group.at(g)) {
          alloc[g] += 1;
          ++round_given;
        }
      }
    }
    given += round_given;
  }
  return alloc;
}

std::vector<ProductKey> select_published_products(const std::map<std::string, LookalikeModel::Tracked>& tracked,
                                                  const std::map<std::string, Cents>& spend_by_group,
                                                  std::size_t t_cap) {
  std::map<std::string, std::vector<const LookalikeModel::Tracked*>> by_group;
  for (const auto& [_, t] : tracked) by_group[t.key.product_group].push_back(&t);
  std::map<std::string, std::size_t> counts;
  for (auto& [g, list] : by_group) {
    counts[g] = list.size();
    std::sort(list.begin(), list.end(), [](const auto* a, const auto* b) {
      if (a->positives != b->positives) return a->positives > b->positives;
      return a->key.product < b->key.product;
    });
  }
  auto alloc = allocate_slots(spend_by_group, counts, t_cap);
  std::vector<ProductKey> out;
  for (const auto& [g, list] : by_group) {
    for (std::size_t i = 0; i < alloc[g]; ++i) out.push_back(list[i]->key);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ProductKey> PublishedTrendyModel::advertiser_products(const std::string& advertiser) const {
  std::vector<ProductKey> out;
  for (const auto& p : products) {
    if (p.advertiser == advertiser) out.push_back(p);
  }
  return out;
}

std::optional<double> PublishedTrendyModel::max_score(const Demographics& user, const std::string& advertiser) const {
  std::optional<double> best;
  for (const auto& p : products) {
    if (p.advertiser != advertiser) continue;
    const double s = eligibility_score(user, p, model);
    if (!best || s > *best) best = s;
  }
  return best;
}

bool PublishedTrendyModel::is_eligible(const Demographics& user, const std::string& advertiser) const {
  auto th = thresholds.find(advertiser);
  if (th == thresholds.end() || !user.known()) return false;
  auto m = max_score(user, advertiser);
  return m && *m > th->second.t;
}

PublishedTrendyModel publish_trendy_model(const offset::ModelState& model,
                                          const std::map<std::string, LookalikeModel::Tracked>& tracked,
                                          const std::map<std::string, Threshold>& thresholds,
                                          const std::map<std::string, Cents>& spend_by_group, std::size_t t_cap) {
  auto products = select_published_products(tracked, spend_by_group, t_cap);
  PublishedTrendyModel out{conversion::restrict_to_products(model, products, false), products, {}};
  std::set<std::string> advertisers;
  for (const auto& p : products) advertisers.insert(p.advertiser);
  for (const auto& [adv, th] : thresholds) {
    if (advertisers.count(adv)) out.thresholds[adv] = th;
  }
  return out;
}

namespace {
constexpr std::string_view kTrendyHeader = "#trendy-manifest v1";
constexpr std::string_view kTrackingHeader = "#lookalike-tracking v1";
constexpr std::string_view kFooter = "#end-manifest";

std::vector<std::vector<std::string>> read_section(std::istream& in, std::string_view header) {
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw Error(ErrorCode::parse, "expected section '" + std::string(header) + "'");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line == kFooter) return rows;
    rows.push_back(split(line, '\t'));
  }
  throw Error(ErrorCode::parse, "truncated section '" + std::string(header) + "'");
}
}  // namespace

void save_published(const PublishedTrendyModel& published, std::ostream& out) {
  offset::save_model(published.model, out);
  out << kTrendyHeader << '\n';
  for (const auto& p : published.products) out << "product\t" << format_product_path(p) << '\n';
  for (const auto& [adv, th] : published.thresholds) {
    out << "threshold\t" << adv << '\t' << encode_double(th.t) << '\t' << encode_double(th.percentile) << '\n';
  }
  out << kFooter << '\n';
}

PublishedTrendyModel load_published(std::istream& in) {
  PublishedTrendyModel out{offset::load_model(in), {}, {}};
  for (const auto& cols : read_section(in, kTrendyHeader)) {
    if (cols[0] == "product" && cols.size() == 2) {
      out.products.push_back(parse_product_path(cols[1]));
    } else if (cols[0] == "threshold" && cols.size() == 4) {
      out.thresholds[cols[1]] = {decode_double(cols[2]), decode_double(cols[3])};
    } else {
      throw Error(ErrorCode::parse, "malformed trendy manifest row");
    }
  }
  return out;
}

void save_lookalike(const LookalikeModel& model, std::ostream& out) {
  offset::save_model(model.model(), out);
  out << kTrackingHeader << '\n';
  for (const auto& [_, t] : model.tracked()) {
    out << format_product_path(t.key) << '\t' << t.absent_updates << '\t' << t.positives << '\n';
  }
  out << kFooter << '\n';
}

LookalikeModel load_lookalike(std::istream& in, LookalikeConfig config) {
  LookalikeModel model(std::move(config), offset::load_model(in));
  std::map<std::string, LookalikeModel::Tracked> tracked;
  for (const auto& cols : read_section(in, kTrackingHeader)) {
    if (cols.size() != 3) throw Error(ErrorCode::parse, "malformed tracking row");
    auto key = parse_product_path(cols[0]);
    auto id = key.product;
    tracked[id] = {std::move(key), parse_int(cols[1], "absent"), parse_int(cols[2], "positives")};
  }
  model.set_tracked(std::move(tracked));
  return model;
}

}  // namespace dpa::trending
