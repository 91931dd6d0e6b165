#include "dpa/workbench.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "dpa/feeds.hpp"

namespace dpa::workbench {

namespace fs = std::filesystem;

namespace {

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

nlohmann::json hyper_json(const offset::Hyperparams& h) {
  return {{"lambda", h.lambda}, {"eta0", h.eta0}, {"init_variance", h.init_variance}, {"epsilon", h.epsilon}};
}

offset::Hyperparams hyper_from(const nlohmann::json& j, offset::Hyperparams h) {
  if (!j.is_object()) return h;
  h.lambda = j.value("lambda", h.lambda);
  h.eta0 = j.value("eta0", h.eta0);
  h.init_variance = j.value("init_variance", h.init_variance);
  h.epsilon = j.value("epsilon", h.epsilon);
  return h;
}

nlohmann::json section(const nlohmann::json& j, const char* name) {
  return j.contains(name) ? j.at(name) : nlohmann::json::object();
}

void write_text(const std::string& path, const std::string& text) {
  auto out = feeds::open_out(path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2)); }

template <class Writer, class Rows>
void write_rows(const std::string& path, Writer writer, const Rows& rows) {
  auto out = feeds::open_out(path);
  writer(out, rows);
}

void log(const std::string& msg) { std::cerr << "[dpa] " << msg << '\n'; }

// Days present in a feed directory for a given file kind.
std::vector<std::int64_t> feed_days(const std::string& dir, const std::string& kind) {
  std::vector<std::int64_t> days;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::io, "'" + dir + "' is not a directory");
  const std::string prefix = kind + "-d";
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind(prefix, 0) != 0 || e.path().extension() != ".tsv") continue;
    days.push_back(parse_int(name.substr(prefix.size(), name.size() - prefix.size() - 4), "day"));
  }
  std::sort(days.begin(), days.end());
  return days;
}

// (day, path) pairs from either a feed directory or a single file.
std::vector<std::pair<std::int64_t, std::string>> day_inputs(const std::string& path, const std::string& kind) {
  std::vector<std::pair<std::int64_t, std::string>> out;
  if (fs::is_directory(path)) {
    for (auto d : feed_days(path, kind)) out.emplace_back(d, world::day_file(path, kind, d));
  } else {
    if (!fs::exists(path)) throw Error(ErrorCode::io, "missing input '" + path + "'");
    out.emplace_back(0, path);
  }
  return out;
}

std::vector<feeds::ImpressionRecord> load_impressions(const std::string& dir, std::int64_t day) {
  return feeds::read_file(world::day_file(dir, "impressions", day), feeds::read_impressions);
}

std::vector<trending::PixelEvent> load_pixels(const std::string& dir, std::int64_t day) {
  return feeds::read_file(world::day_file(dir, "pixel", day), feeds::read_pixels);
}

std::vector<conversion::ConversionRecord> load_conversions(const std::string& dir, std::int64_t day) {
  return feeds::read_file(world::day_file(dir, "conversions", day), feeds::read_conversions);
}

// Per-user sliding impression history for the frequency and recency bins.
class UserActivity {
 public:
  std::map<std::string, std::string> bins(const std::string& user, std::int64_t ts) {
    auto& q = seen_[user];
    while (!q.empty() && q.front() <= ts - 7 * world::kSecondsPerDay) q.pop_front();
    std::optional<std::int64_t> since;
    if (!q.empty()) since = ts - q.back();
    auto out = std::map<std::string, std::string>{
        {click::feature::kFrequency, click::frequency_bin(static_cast<std::int64_t>(q.size()))},
        {click::feature::kRecency, click::recency_bin(since)}};
    q.push_back(ts);
    return out;
  }

 private:
  std::unordered_map<std::string, std::deque<std::int64_t>> seen_;
};

offset::Event click_event(const world::World& w, const click::ClickModelConfig& config,
                          const feeds::ImpressionRecord& r, UserActivity& activity) {
  const auto& u = w.user(r.user_id);
  offset::Event e;
  for (const auto& f : config.user_features) {
    if (auto it = u.features.find(f); it != u.features.end()) e.user_values[f] = it->second;
  }
  e.user_values[click::feature::kPageSection] = {{r.page_section, 1.0}};
  e.user_values[click::feature::kDpaType] = {{std::string(to_string(r.type)), 1.0}};
  e.sim_bins = activity.bins(r.user_id, r.timestamp);
  e.sim_bins[click::feature::kSlotDevice] = click::slot_device_bin(r.slot, r.device == serving::Device::mobile);
  e.label = r.clicked;
  e.kind = r.clicked ? offset::EventKind::click : offset::EventKind::skip;
  e.timestamp = r.timestamp;
  return e;
}

conversion::ClickRecord click_record(const world::World& w, const feeds::ImpressionRecord& r, bool all_features) {
  const auto& u = w.user(r.user_id);
  conversion::ClickRecord c;
  c.timestamp = r.timestamp;
  c.user_id = r.user_id;
  c.product = r.product;
  if (all_features) c.user_values = u.features;
  c.user_values[conversion::feature::kCtrCampaignTop] = u.features.at(conversion::feature::kCtrCampaignTop);
  c.user_values[conversion::feature::kDpaType] = {{std::string(to_string(r.type)), 1.0}};
  c.user_values[conversion::feature::kPageSection] = {{r.page_section, 1.0}};
  c.user_values["device"] = {{std::string(serving::to_string(r.device)), 1.0}};
  return c;
}

std::vector<trending::ImpressionUser> impression_users(const world::World& w,
                                                       const std::vector<feeds::ImpressionRecord>& rows) {
  std::vector<trending::ImpressionUser> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back({r.timestamp, r.user_id, w.user(r.user_id).demographics});
  return out;
}

std::map<std::string, Cents> spend_by_group(const std::vector<feeds::ImpressionRecord>& rows) {
  std::map<std::string, Cents> out;
  for (const auto& r : rows) out[r.product.product_group] += r.cost;
  return out;
}

// r demographic records drawn without replacement from the known-demographic
// impressions (all of them when fewer).
std::vector<trending::Demographics> sample_users(const std::vector<trending::ImpressionUser>& imps, std::size_t r,
                                                 std::uint64_t seed) {
  std::vector<const trending::ImpressionUser*> known;
  for (const auto& i : imps) {
    if (i.user.known()) known.push_back(&i);
  }
  std::vector<trending::Demographics> out;
  if (known.size() <= r) {
    for (auto* k : known) out.push_back(k->user);
    return out;
  }
  std::mt19937_64 rng(seed);
  std::unordered_set<std::size_t> chosen;
  const std::size_t n = known.size();
  for (std::size_t j = n - r; j < n; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    chosen.insert(chosen.count(t) ? j : t);
  }
  std::vector<std::size_t> idx(chosen.begin(), chosen.end());
  std::sort(idx.begin(), idx.end());
  for (auto i : idx) out.push_back(known[i]->user);
  return out;
}

click::ClickModel load_click(const click::ClickModelConfig& config, const std::string& dir) {
  click::ClickModel m(config, offset::load_model_file(path_in(dir, "click.model")));
  for (const auto& row : feeds::read_file(path_in(dir, "click-stats.tsv"), feeds::read_stats)) {
    m.set_stats(row.product, row.stats);
  }
  return m;
}

}  // namespace

// ---- configuration ----------------------------------------------------------

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["world"] = world.to_json();
  j["click"] = {{"promote_threshold", click.promote_threshold},
                {"pair_width", click.pair_width},
                {"solo_width", click.solo_width},
                {"hyper", hyper_json(click.hyper)}};
  j["conv"] = {{"pair_width", conv.pair_width},
               {"solo_width", conv.solo_width},
               {"publish_k", conv.publish_k},
               {"min_conversions", conv.min_conversions},
               {"publish_period_hours", conv.publish_period_hours},
               {"attribution_window_days", conv.attribution_window_days},
               {"hyper", hyper_json(conv.hyper)}};
  j["lookalike"] = {{"top_n", lookalike.top_n_products},
                    {"m", lookalike.negatives_per_product},
                    {"stale_days", lookalike.stale_days},
                    {"publish_t", lookalike.publish_t},
                    {"sample_r", lookalike.sample_r},
                    {"passes", lookalike.passes},
                    {"pair_width", lookalike.pair_width},
                    {"solo_width", lookalike.solo_width},
                    {"percentile", trendy_percentile},
                    {"hyper", hyper_json(lookalike.hyper)}};
  j["serve"] = {{"prelim_l", serve.prelim_l}, {"carousel_slots", serve.carousel_slots}};
  j["eval"] = {{"candidates", select_candidates},
               {"happiness_error_conv", happiness_error_conv},
               {"happiness_error_trendy", happiness_error_trendy},
               {"min_conversions", happiness_min_conversions}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    auto wj = section(j, "world");
    if (!wj.contains("seed")) wj["seed"] = c.seed;
    c.world = world::SyntheticWorldConfig::from_json(wj);

    const auto cj = section(j, "click");
    c.click.promote_threshold = cj.value("promote_threshold", c.click.promote_threshold);
    c.click.pair_width = cj.value("pair_width", c.click.pair_width);
    c.click.solo_width = cj.value("solo_width", c.click.solo_width);
    c.click.hyper = hyper_from(section(cj, "hyper"), c.click.hyper);
    c.click.hyper.seed = stream_seed(c.seed, "init/click");

    const auto vj = section(j, "conv");
    c.conv.pair_width = vj.value("pair_width", c.conv.pair_width);
    c.conv.solo_width = vj.value("solo_width", c.conv.solo_width);
    c.conv.publish_k = vj.value("publish_k", c.conv.publish_k);
    c.conv.min_conversions = vj.value("min_conversions", c.conv.min_conversions);
    c.conv.publish_period_hours = vj.value("publish_period_hours", c.conv.publish_period_hours);
    c.conv.attribution_window_days = vj.value("attribution_window_days", c.conv.attribution_window_days);
    c.conv.hyper = hyper_from(section(vj, "hyper"), c.conv.hyper);
    c.conv.hyper.seed = stream_seed(c.seed, "init/conv");

    // desk-scale default for the negatives per product
    c.lookalike.negatives_per_product = 200;
    const auto lj = section(j, "lookalike");
    c.lookalike.top_n_products = lj.value("top_n", c.lookalike.top_n_products);
    c.lookalike.negatives_per_product = lj.value("m", c.lookalike.negatives_per_product);
    c.lookalike.stale_days = lj.value("stale_days", c.lookalike.stale_days);
    c.lookalike.publish_t = lj.value("publish_t", c.lookalike.publish_t);
    c.lookalike.sample_r = lj.value("sample_r", c.lookalike.sample_r);
    c.lookalike.passes = lj.value("passes", c.lookalike.passes);
    c.lookalike.pair_width = lj.value("pair_width", c.lookalike.pair_width);
    c.lookalike.solo_width = lj.value("solo_width", c.lookalike.solo_width);
    c.trendy_percentile = lj.value("percentile", c.trendy_percentile);
    c.lookalike.hyper = hyper_from(section(lj, "hyper"), c.lookalike.hyper);
    c.lookalike.hyper.seed = stream_seed(c.seed, "init/lookalike");

    const auto sj = section(j, "serve");
    c.serve.prelim_l = sj.value("prelim_l", c.serve.prelim_l);
    c.serve.carousel_slots = sj.value("carousel_slots", c.serve.carousel_slots);

    const auto ej = section(j, "eval");
    c.select_candidates = ej.value("candidates", c.select_candidates);
    c.happiness_error_conv = ej.value("happiness_error_conv", c.happiness_error_conv);
    c.happiness_error_trendy = ej.value("happiness_error_trendy", c.happiness_error_trendy);
    c.happiness_min_conversions = ej.value("min_conversions", c.happiness_min_conversions);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("config: ") + e.what());
  }
  c.click.validate();
  c.conv.validate();
  c.lookalike.validate();
  if (c.threads == 0) c.threads = 1;
  if (!(c.trendy_percentile > 0.0 && c.trendy_percentile < 100.0)) {
    throw Error(ErrorCode::config, "lookalike.percentile must lie in (0, 100)");
  }
  return c;
}

void RunConfig::apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::config, "override '" + assignment + "' is not of the form key=value");
  }
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &j;
  for (const auto& part : split(key, '.')) {
    if (node->is_null()) *node = nlohmann::json::object();
    if (!node->is_object()) throw Error(ErrorCode::config, "override path '" + key + "' crosses a non-object");
    node = &(*node)[part];
  }
  *node = std::move(value);
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides, std::uint64_t seed) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    auto in = feeds::open_in(path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  j["seed"] = seed;
  if (j.contains("world")) j["world"]["seed"] = seed;
  return from_json(j);
}

std::string RunConfig::hash() const {
  std::ostringstream os;
  os << std::hex << stable_hash(to_json().dump());
  return os.str();
}

std::string file_digest(const std::string& path) {
  auto in = std::ifstream(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// ---- generation -------------------------------------------------------------

nlohmann::json gen_world(const RunConfig& cfg, const std::string& out_dir) {
  const auto w = world::gen_world(cfg.world);
  world::save_world(w, out_dir);
  return {{"products", w.catalog.size()}, {"users", w.users.size()}, {"campaigns", w.campaigns.size()}};
}

nlohmann::json gen_feeds(const RunConfig& cfg, const std::string& world_dir, const std::string& out_dir) {
  auto w = world::load_world(world_dir);
  w.config.seed = cfg.world.seed;
  const auto days = world::gen_feeds(w);
  std::size_t impressions = 0, clicks = 0, conversions = 0, pixels = 0;
  for (const auto& d : days) {
    world::save_day(d, out_dir);
    impressions += d.impressions.size();
    for (const auto& r : d.impressions) clicks += static_cast<std::size_t>(r.clicked);
    conversions += d.conversions.size();
    pixels += d.pixels.size();
  }
  const auto requests = world::gen_requests(w);
  write_rows(path_in(out_dir, "requests.tsv"), feeds::write_requests, requests);
  return {{"days", days.size()},
          {"impressions", impressions},
          {"clicks", clicks},
          {"conversions", conversions},
          {"pixel_events", pixels},
          {"requests", requests.size()}};
}

// ---- training -------------------------------------------------------------

nlohmann::json train_click(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                           const std::string& out_dir) {
  const auto w = world::load_world(world_dir);
  const auto days = feed_days(feeds_dir, "impressions");
  if (days.empty()) throw Error(ErrorCode::io, "no impression feeds in '" + feeds_dir + "'");
  fs::create_directories(out_dir);
  click::ClickModel model(cfg.click);
  UserActivity activity;
  const std::size_t n_train = days.size() > 1 ? days.size() - 1 : 1;
  std::size_t events = 0, promoted = 0;
  std::vector<offset::Event> test;
  for (std::size_t i = 0; i < days.size(); ++i) {
    const auto rows = load_impressions(feeds_dir, days[i]);
    if (i < n_train) {
      std::vector<click::ClickExample> batch;
      batch.reserve(rows.size());
      for (const auto& r : rows) batch.push_back({click_event(w, cfg.click, r, activity), r.product});
      promoted += model.train_batch(batch).size();
      events += batch.size();
    }
    if (i + 1 == days.size()) {
      for (const auto& r : rows) {
        test.push_back(click::assemble_event(click_event(w, cfg.click, r, activity), r.product,
                                             model.stats(r.product), cfg.click));
      }
    }
  }
  offset::save_model_file(model.model(), path_in(out_dir, "click.model"));
  std::vector<feeds::StatsRow> stats;
  for (const auto& [k, s] : model.all_stats()) stats.push_back({k, s});
  write_rows(path_in(out_dir, "click-stats.tsv"), feeds::write_stats, stats);
  write_rows(path_in(out_dir, "click-test-events.tsv"), feeds::write_events, test);
  return {{"train_events", events}, {"test_events", test.size()}, {"promoted", promoted},
          {"user_vectors", model.model().user_table.size()}, {"ad_vectors", model.model().ad_table.size()}};
}

nlohmann::json train_conv(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                          const std::string& out_dir) {
  const auto w = world::load_world(world_dir);
  const auto days = feed_days(feeds_dir, "impressions");
  fs::create_directories(out_dir);
  std::vector<conversion::ClickRecord> clicks;
  std::vector<conversion::ConversionRecord> conversions;
  std::map<ProductKey, ProductStats> stats;
  std::map<std::pair<std::string, DpaType>, feeds::PerfRow> perf;
  for (auto d : days) {
    for (const auto& r : load_impressions(feeds_dir, d)) {
      auto& st = stats[r.product];
      st.impressions += 1;
      st.clicks += r.clicked;
      st.spend += r.cost;
      st.last_seen_day = d;
      auto& p = perf[{r.product.advertiser, r.type}];
      p.advertiser = r.product.advertiser;
      p.type = r.type;
      p.spend += r.cost;
      if (r.clicked) clicks.push_back(click_record(w, r, false));
    }
    auto c = load_conversions(feeds_dir, d);
    conversions.insert(conversions.end(), c.begin(), c.end());
  }
  // the device column rides along for forward selection only
  for (auto& c : clicks) c.user_values.erase("device");
  const auto feed = conversion::build_conv_training_feed(clicks, conversions, cfg.conv);
  offset::ModelState model(cfg.conv.schema(), cfg.conv.hyper);
  offset::train_batch(feed.events, model);

  std::map<std::string, ProductKey> keys;
  for (const auto& [id, e] : w.catalog.entries()) keys[id] = e.key;
  std::size_t positives = 0;
  for (const auto& e : feed.events) {
    if (!e.label) continue;
    ++positives;
    const auto& key = keys.at(e.ad_values.at(dpa::feature::kProductId));
    stats[key].conversions += 1;
    const auto type = parse_dpa_type(e.user_values.at(conversion::feature::kDpaType).front().value);
    auto& p = perf[{key.advertiser, type}];
    p.advertiser = key.advertiser;
    p.type = type;
    p.conversions += 1;
  }
  offset::save_model_file(model, path_in(out_dir, "conv.model"));
  std::vector<feeds::StatsRow> stat_rows;
  for (const auto& [k, s] : stats) stat_rows.push_back({k, s});
  write_rows(path_in(out_dir, "conv-stats.tsv"), feeds::write_stats, stat_rows);
  std::vector<feeds::PerfRow> perf_rows;
  for (const auto& [_, p] : perf) perf_rows.push_back(p);
  write_rows(path_in(out_dir, "conv-perf.tsv"), feeds::write_perf, perf_rows);
  return {{"clicks", clicks.size()},
          {"conversions", conversions.size()},
          {"attributed", positives},
          {"dropped_conversions", feed.dropped_conversions}};
}

nlohmann::json publish_conv(const RunConfig& cfg, const std::string& model_path, const std::string& stats_path,
                            const std::string& perf_path, const std::string& campaigns_path, std::int64_t k,
                            std::int64_t min_conv, const std::string& out_path) {
  auto config = cfg.conv;
  config.publish_k = k;
  config.min_conversions = min_conv;
  const auto model = offset::load_model_file(model_path);
  std::map<ProductKey, ProductStats> stats;
  for (const auto& row : feeds::read_file(stats_path, feeds::read_stats)) stats[row.product] = row.stats;
  std::map<std::string, conversion::AdvertiserPerf> perf;
  for (const auto& row : feeds::read_file(perf_path, feeds::read_perf)) {
    auto& p = perf[row.advertiser];
    p.advertiser_id = row.advertiser;
    p.spend_by_type[row.type] += row.spend;
    p.conversions_by_type[row.type] += row.conversions;
  }
  std::map<std::string, Cents> tcpas;
  for (const auto& [adv, p] : perf) {
    if (auto t = conversion::compute_tcpa(p)) tcpas[adv] = *t;
  }
  std::map<std::string, Cents> bids;
  for (const auto& [group, c] : feeds::read_file(campaigns_path, feeds::read_campaigns)) bids[group] = c.bid;
  const auto published = conversion::publish_conv_model(model, stats, tcpas, bids, config);
  {
    auto out = feeds::open_out(out_path);
    conversion::save_published(published, out);
  }
  return {{"selected", published.selected.size()},
          {"advertisers_with_tcpa", tcpas.size()},
          {"k", k},
          {"min_conversions", min_conv}};
}

nlohmann::json train_lookalike(const RunConfig& cfg, const std::string& world_dir, const std::string& pixel,
                               const std::string& impressions, std::size_t n, std::size_t m,
                               const std::string& out_path) {
  const auto w = world::load_world(world_dir);
  auto config = cfg.lookalike;
  config.top_n_products = n;
  config.negatives_per_product = m;
  trending::LookalikeModel model(config);
  const auto pix = day_inputs(pixel, "pixel");
  const auto imp = day_inputs(impressions, "impressions");
  if (pix.size() != imp.size()) {
    throw Error(ErrorCode::invalid_input, "pixel and impression feeds cover different numbers of days");
  }
  auto days = nlohmann::json::array();
  for (std::size_t i = 0; i < pix.size(); ++i) {
    const auto pixels = feeds::read_file(pix[i].second, feeds::read_pixels);
    const auto users = impression_users(w, feeds::read_file(imp[i].second, feeds::read_impressions));
    const auto r = model.daily_update(pixels, users, stream_seed(cfg.seed, "negatives/" + std::to_string(i)));
    days.push_back({{"day", pix[i].first},
                    {"products", r.products.size()},
                    {"positives", r.positives},
                    {"negatives", r.negatives},
                    {"short_products", r.short_products},
                    {"evicted", r.evicted.size()}});
  }
  {
    auto out = feeds::open_out(out_path);
    trending::save_lookalike(model, out);
  }
  return {{"days", days}, {"tracked", model.tracked().size()}};
}

namespace {

std::map<std::string, std::vector<ProductKey>> by_advertiser(const std::vector<ProductKey>& products) {
  std::map<std::string, std::vector<ProductKey>> out;
  for (const auto& p : products) out[p.advertiser].push_back(p);
  return out;
}

}  // namespace

nlohmann::json publish_trendy(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                              const std::string& lookalike_path, std::size_t t, double pct, std::size_t r,
                              const std::string& out_path) {
  const auto w = world::load_world(world_dir);
  auto in = feeds::open_in(lookalike_path);
  const auto lookalike = trending::load_lookalike(in, cfg.lookalike);
  const auto days = feed_days(feeds_dir, "impressions");
  if (days.empty()) throw Error(ErrorCode::io, "no impression feeds in '" + feeds_dir + "'");
  const auto last = load_impressions(feeds_dir, days.back());
  const auto spend = spend_by_group(last);
  const auto products = trending::select_published_products(lookalike.tracked(), spend, t);
  const auto users = sample_users(impression_users(w, last), r, stream_seed(cfg.seed, "threshold-sample"));

  std::map<std::string, trending::Threshold> thresholds;
  for (const auto& [adv, list] : by_advertiser(products)) {
    const auto curve = trending::build_threshold_curve(lookalike.model(), adv, list, users);
    if (curve.maxima.empty()) continue;
    thresholds[adv] = {trending::threshold_for_percentile(curve, pct), pct};
  }
  const auto published = trending::publish_trendy_model(lookalike.model(), lookalike.tracked(), thresholds, spend, t);
  {
    auto out = feeds::open_out(out_path);
    trending::save_published(published, out);
  }
  nlohmann::json th = nlohmann::json::object();
  for (const auto& [adv, x] : published.thresholds) th[adv] = x.t;
  return {{"products", published.products.size()}, {"sample_users", users.size()}, {"thresholds", th}};
}

nlohmann::json threshold_curve(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                               const std::string& published_path, const std::string& advertiser, double pct,
                               std::size_t r, const std::string& out_path) {
  const auto w = world::load_world(world_dir);
  auto in = feeds::open_in(published_path);
  const auto published = trending::load_published(in);
  const auto days = feed_days(feeds_dir, "impressions");
  if (days.empty()) throw Error(ErrorCode::io, "no impression feeds in '" + feeds_dir + "'");
  const auto imps = impression_users(w, load_impressions(feeds_dir, days.back()));
  const auto products = published.advertiser_products(advertiser);
  const auto users = sample_users(imps, r, stream_seed(cfg.seed, "curve/" + advertiser));
  const auto curve = trending::build_threshold_curve(published.model, advertiser, products, users);
  const double threshold = trending::threshold_for_percentile(curve, pct);

  // realized share on an independent sample
  const auto fresh = sample_users(imps, r, stream_seed(cfg.seed, "curve-check/" + advertiser));
  const auto check = trending::build_threshold_curve(published.model, advertiser, products, fresh);
  const auto above = std::count_if(check.maxima.begin(), check.maxima.end(), [&](double v) { return v > threshold; });
  const double realized = check.maxima.empty() ? 0.0 : 100.0 * static_cast<double>(above) / check.maxima.size();

  std::ostringstream csv;
  csv << "percentile,threshold\n";
  for (int p = 1; p < 100; ++p) csv << p << ',' << trending::threshold_for_percentile(curve, p) << '\n';
  write_text(out_path + ".csv", csv.str());
  nlohmann::json j = {{"advertiser", advertiser}, {"percentile", pct},       {"r", curve.maxima.size()},
                      {"threshold", threshold},   {"realized_percent", realized}};
  write_json(out_path + ".json", j);
  return j;
}

// ---- serving --------------------------------------------------------------

nlohmann::json build_snapshots(const RunConfig&, const std::string& world_dir, const std::string& feeds_dir,
                               const std::string& snapshot_dir) {
  fs::create_directories(snapshot_dir);
  for (const char* name : {"catalog.tsv", "campaigns.tsv", "users.tsv"}) {
    fs::copy_file(path_in(world_dir, name), path_in(snapshot_dir, name), fs::copy_options::overwrite_existing);
  }
  serving::RecommendationModel recs;
  std::map<std::string, std::vector<std::string>> history;
  for (auto d : feed_days(feeds_dir, "pixel")) {
    const auto pixels = load_pixels(feeds_dir, d);
    recs.ingest(pixels);
    for (const auto& e : pixels) {
      auto& h = history[e.user_id];
      h.erase(std::remove(h.begin(), h.end(), e.product.product), h.end());
      h.insert(h.begin(), e.product.product);
      if (h.size() > 10) h.resize(10);
    }
  }
  {
    auto out = feeds::open_out(path_in(snapshot_dir, "recs.tsv"));
    recs.save(out);
  }
  write_rows(path_in(snapshot_dir, "history.tsv"), feeds::write_history, history);
  return {{"history_users", history.size()}};
}

serving::SnapshotBundle load_bundle(const std::string& dir, bool control, const click::ClickModelConfig& click_config) {
  serving::SnapshotBundle b;
  b.click = std::make_shared<const click::ClickModel>(load_click(click_config, dir));
  b.catalog = std::make_shared<const serving::Catalog>(feeds::read_file(path_in(dir, "catalog.tsv"), feeds::read_catalog));
  b.campaigns =
      std::make_shared<const serving::CampaignDb>(feeds::read_file(path_in(dir, "campaigns.tsv"), feeds::read_campaigns));
  if (fs::exists(path_in(dir, "recs.tsv"))) {
    b.recs = std::make_shared<const serving::RecommendationModel>(
        feeds::read_file(path_in(dir, "recs.tsv"), serving::RecommendationModel::load));
  }
  std::map<std::string, std::vector<std::string>> history;
  if (fs::exists(path_in(dir, "history.tsv"))) history = feeds::read_file(path_in(dir, "history.tsv"), feeds::read_history);
  b.sources.push_back(std::make_shared<serving::RetargetingSource>(std::move(history)));
  if (!control && fs::exists(path_in(dir, "conv-published.txt"))) {
    b.conv = std::make_shared<const conversion::PublishedConvModel>(
        feeds::read_file(path_in(dir, "conv-published.txt"), conversion::load_published));
    b.sources.push_back(std::make_shared<serving::ConversionProspectingSource>(b.conv));
  }
  if (!control && fs::exists(path_in(dir, "trendy-published.txt"))) {
    b.trendy = std::make_shared<const trending::PublishedTrendyModel>(
        feeds::read_file(path_in(dir, "trendy-published.txt"), trending::load_published));
    b.sources.push_back(std::make_shared<serving::TrendingProspectingSource>(b.trendy));
  }
  return b;
}

std::vector<serving::ServeRequest> load_requests(const std::string& requests_path, const std::string& snapshot_dir) {
  const auto users = feeds::read_file(path_in(snapshot_dir, "users.tsv"), feeds::read_users);
  std::unordered_map<std::string, const feeds::UserRecord*> by_id;
  for (const auto& u : users) by_id[u.user_id] = &u;
  const auto records = feeds::read_file(requests_path, feeds::read_requests);
  std::vector<serving::ServeRequest> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = by_id.find(r.user_id);
    if (it == by_id.end()) throw Error(ErrorCode::invalid_input, "unknown user '" + r.user_id + "'");
    serving::ServeRequest req;
    req.request_id = r.request_id;
    req.timestamp = r.timestamp;
    req.day = r.day;
    req.user.user_id = r.user_id;
    req.user.demographics = it->second->demographics;
    req.user.features = it->second->features;
    req.user.sim_bins = r.sim_bins;
    req.page_section = r.page_section;
    req.floor_price = r.floor_price;
    req.supports_carousel = r.supports_carousel;
    req.device = r.device;
    req.language = r.language;
    out.push_back(std::move(req));
  }
  return out;
}

nlohmann::json simulate_serve(const RunConfig& cfg, const std::string& requests_path, const std::string& snapshot_dir,
                              const std::string& out_path, const ServeOptions& options) {
  const auto bundle = load_bundle(snapshot_dir, options.control, cfg.click);
  const auto records = feeds::read_file(requests_path, feeds::read_requests);
  const auto requests = load_requests(requests_path, snapshot_dir);

  std::vector<serving::ServeResult> results(records.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      try {
        results[i] = serving::serve(requests[i], bundle, cfg.serve);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = records.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::max<std::size_t>(cfg.threads, 1); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  serving::StageCounters total;
  {
    auto out = feeds::open_out(out_path);
    for (const auto& r : results) {
      out << r.to_json() << '\n';
      total += r.counters;
    }
  }
  const auto counters = nlohmann::json::parse(total.to_json());
  write_json(out_path + ".counters.json", counters);

  if (!options.bucket_dir.empty()) {
    const auto w = world::load_world(options.world_dir);
    std::map<std::tuple<std::int64_t, std::string, std::string>, feeds::BucketRow> rows;
    auto add = [&](std::int64_t day, const std::string& adv, const std::string& type, int imps, int clicks,
                   Cents spend, int convs) {
      auto& row = rows[{day, adv, type}];
      row.day = day;
      row.advertiser = adv;
      row.type = type;
      row.impressions += imps;
      row.clicks += clicks;
      row.spend += spend;
      row.conversions += convs;
    };
    const auto outcome_seed = stream_seed(cfg.seed, "outcomes");
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& rec = records[i];
      const auto& user = w.user(rec.user_id);
      add(rec.day, "*", "*", 0, 0, 0, 0);
      for (const auto& ad : results[i].ads) {
        const auto& pivot = ad.slots.front().candidate;
        // common random numbers: the same draw in both buckets for the same
        // (request, advertiser)
        std::mt19937_64 rng(stable_hash(rec.request_id + "/" + ad.advertiser, outcome_seed));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const int clicked = u(rng) < w.ctr(user, pivot.product) ? 1 : 0;
        const double conv_draw = u(rng);
        const int converted = clicked && conv_draw < w.cvr(user, pivot.product) ? 1 : 0;
        const Cents cost = clicked ? static_cast<Cents>(std::llround(pivot.bid)) : 0;
        const std::string type(to_string(pivot.source));
        add(rec.day, "*", "*", 1, clicked, cost, converted);
        add(rec.day, ad.advertiser, type, 1, clicked, cost, converted);
      }
    }
    fs::create_directories(options.bucket_dir);
    std::vector<feeds::BucketRow> out_rows;
    for (auto& [_, r] : rows) out_rows.push_back(r);
    write_rows(path_in(options.bucket_dir, "bucket.tsv"), feeds::write_bucket, out_rows);
  }
  return {{"requests", records.size()}, {"counters", counters}};
}

// ---- evaluation -----------------------------------------------------------

nlohmann::json eval_model(const std::string& model_path, const std::string& test_path, const std::string& out_prefix) {
  const auto model = offset::load_model_file(model_path);
  const auto test = feeds::read_file(test_path, feeds::read_events);
  const auto m = eval::evaluate(model, test);
  nlohmann::json j = {{"logloss", m.logloss},
                      {"mean_logloss", m.n_events ? m.logloss / static_cast<double>(m.n_events) : 0.0},
                      {"auc", m.auc},
                      {"n_events", m.n_events},
                      {"n_positives", m.n_positives}};
  if (!out_prefix.empty()) {
    write_json(out_prefix + ".json", j);
    std::ostringstream csv;
    csv.precision(10);
    csv << "logloss,auc,n_events,n_positives\n" << m.logloss << ',' << m.auc << ',' << m.n_events << ','
        << m.n_positives << '\n';
    write_text(out_prefix + ".csv", csv.str());
  }
  return j;
}

nlohmann::json forward_select(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                              const std::vector<std::string>& candidates, const std::string& out_prefix) {
  const auto w = world::load_world(world_dir);
  const auto days = feed_days(feeds_dir, "impressions");
  if (days.size() < 2) throw Error(ErrorCode::invalid_input, "forward selection needs at least two days of feeds");
  std::vector<conversion::ClickRecord> train_clicks, test_clicks;
  std::vector<conversion::ConversionRecord> conversions;
  for (std::size_t i = 0; i < days.size(); ++i) {
    for (const auto& r : load_impressions(feeds_dir, days[i])) {
      if (!r.clicked) continue;
      (i + 1 < days.size() ? train_clicks : test_clicks).push_back(click_record(w, r, true));
    }
    auto c = load_conversions(feeds_dir, days[i]);
    conversions.insert(conversions.end(), c.begin(), c.end());
  }
  const auto train = conversion::build_conv_training_feed(train_clicks, conversions, cfg.conv);
  const auto test = conversion::build_conv_training_feed(test_clicks, conversions, cfg.conv);
  eval::SelectionConfig sc;
  sc.ad_features = cfg.conv.schema().ad_features;
  sc.pair_width = cfg.conv.pair_width;
  sc.solo_width = cfg.conv.solo_width;
  sc.hyper = cfg.conv.hyper;
  sc.hyper.seed = stream_seed(cfg.seed, "select");
  const auto result = eval::forward_selection(sc, candidates, train.events, test.events);
  if (!out_prefix.empty()) {
    write_text(out_prefix + ".csv", eval::selection_table_csv(result));
    write_text(out_prefix + ".json", eval::selection_json(result));
  }
  auto j = nlohmann::json::parse(eval::selection_json(result));
  j["table"] = eval::selection_table_text(result);
  return j;
}

namespace {

std::vector<feeds::BucketRow> load_bucket(const std::string& dir) {
  return feeds::read_file(path_in(dir, "bucket.tsv"), feeds::read_bucket);
}

std::vector<eval::BucketDay> bucket_days(const std::vector<feeds::BucketRow>& rows) {
  std::map<std::int64_t, eval::BucketDay> days;
  for (const auto& r : rows) {
    auto& d = days[r.day];
    d.day = r.day;
    if (r.advertiser == "*") {
      d.spend += r.spend;
      d.impressions += r.impressions;
    } else {
      d.advertisers[r.advertiser].spend += r.spend;
      d.advertisers[r.advertiser].conversions += r.conversions;
    }
  }
  std::vector<eval::BucketDay> out;
  for (auto& [_, d] : days) out.push_back(std::move(d));
  return out;
}

struct Totals {
  Cents spend = 0;
  std::int64_t conversions = 0;
};

std::map<std::string, Totals> advertiser_totals(const std::vector<feeds::BucketRow>& rows,
                                                const std::optional<std::string>& type) {
  std::map<std::string, Totals> out;
  for (const auto& r : rows) {
    if (r.advertiser == "*") continue;
    if (type && r.type != *type) continue;
    out[r.advertiser].spend += r.spend;
    out[r.advertiser].conversions += r.conversions;
  }
  return out;
}

}  // namespace

nlohmann::json happiness(const RunConfig& cfg, eval::HappinessMode mode, double error, const std::string& test_bucket,
                         const std::string& control_bucket, const std::string& out_prefix) {
  const auto test = load_bucket(test_bucket);
  std::vector<eval::AdvertiserOutcome> outcomes;
  if (mode == eval::HappinessMode::conv) {
    const auto cp = advertiser_totals(test, std::string(to_string(DpaType::conversion_prospecting)));
    const auto rt = advertiser_totals(test, std::string(to_string(DpaType::retargeting)));
    for (const auto& [adv, t] : cp) {
      eval::AdvertiserOutcome o{adv, t.spend, t.conversions, std::nullopt};
      if (auto r = rt.find(adv); r != rt.end() && r->second.conversions > 0) {
        o.reference_cpa = eval::cpa(r->second.spend, r->second.conversions);
      }
      outcomes.push_back(o);
    }
  } else {
    if (control_bucket.empty()) throw Error(ErrorCode::invalid_input, "trendy happiness needs a control bucket");
    const auto tt = advertiser_totals(test, std::nullopt);
    const auto ct = advertiser_totals(load_bucket(control_bucket), std::nullopt);
    for (const auto& [adv, t] : tt) {
      eval::AdvertiserOutcome o{adv, t.spend, t.conversions, std::nullopt};
      if (auto c = ct.find(adv); c != ct.end() && c->second.conversions > 0) {
        o.reference_cpa = eval::cpa(c->second.spend, c->second.conversions);
      }
      outcomes.push_back(o);
    }
  }
  const auto r = eval::happiness(outcomes, mode, error, cfg.happiness_min_conversions);
  if (!out_prefix.empty()) {
    write_text(out_prefix + ".csv", eval::happiness_csv(r));
    write_text(out_prefix + ".json", eval::happiness_json(r));
  }
  return nlohmann::json::parse(eval::happiness_json(r));
}

nlohmann::json report(const std::string& test_bucket, const std::string& control_bucket,
                      const std::string& out_prefix) {
  const auto t = bucket_days(load_bucket(test_bucket));
  const auto c = bucket_days(load_bucket(control_bucket));
  const auto r = eval::bucket_lift_report(t, c);
  for (auto d : r.skipped_days) log("report: day " + std::to_string(d) + " missing in a bucket, skipped");
  if (!out_prefix.empty()) {
    write_text(out_prefix + ".csv", eval::lift_report_csv(r));
    write_text(out_prefix + ".json", eval::lift_report_json(r));
  }
  return nlohmann::json::parse(eval::lift_report_json(r));
}

// ---- pipeline ---------------------------------------------------------------

nlohmann::json run_pipeline(const RunConfig& cfg, const std::string& out_dir) {
  const auto world_dir = path_in(out_dir, "world");
  const auto feeds_dir = path_in(out_dir, "feeds");
  const auto work_dir = path_in(out_dir, "work");
  const auto snap_dir = path_in(out_dir, "snapshots");
  const auto serve_dir = path_in(out_dir, "serve");
  const auto reports_dir = path_in(out_dir, "reports");
  for (const auto& d : {world_dir, feeds_dir, work_dir, snap_dir, serve_dir, reports_dir}) fs::create_directories(d);

  nlohmann::json stages = nlohmann::json::object();
  nlohmann::json timings = nlohmann::json::object();
  auto stage = [&](const std::string& name, auto&& fn) {
    log("stage " + name);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      stages[name] = fn();
    } catch (const Error& e) {
      throw Error(ErrorCode::stage_failed, "stage '" + name + "': " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::stage_failed, "stage '" + name + "': " + e.what());
    }
    timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  stage("gen-world", [&] { return gen_world(cfg, world_dir); });
  stage("gen-feeds", [&] { return gen_feeds(cfg, world_dir, feeds_dir); });
  stage("train-click", [&] { return train_click(cfg, world_dir, feeds_dir, snap_dir); });
  stage("train-conv", [&] { return train_conv(cfg, world_dir, feeds_dir, work_dir); });
  stage("publish-conv", [&] {
    return publish_conv(cfg, path_in(work_dir, "conv.model"), path_in(work_dir, "conv-stats.tsv"),
                        path_in(work_dir, "conv-perf.tsv"), path_in(world_dir, "campaigns.tsv"), cfg.conv.publish_k,
                        cfg.conv.min_conversions, path_in(snap_dir, "conv-published.txt"));
  });
  stage("train-lookalike", [&] {
    return train_lookalike(cfg, world_dir, feeds_dir, feeds_dir, cfg.lookalike.top_n_products,
                           cfg.lookalike.negatives_per_product, path_in(work_dir, "lookalike.model"));
  });
  stage("publish-trendy", [&] {
    return publish_trendy(cfg, world_dir, feeds_dir, path_in(work_dir, "lookalike.model"), cfg.lookalike.publish_t,
                          cfg.trendy_percentile, cfg.lookalike.sample_r, path_in(snap_dir, "trendy-published.txt"));
  });
  stage("snapshots", [&] { return build_snapshots(cfg, world_dir, feeds_dir, snap_dir); });
  stage("simulate-serve-test", [&] {
    return simulate_serve(cfg, path_in(feeds_dir, "requests.tsv"), snap_dir, path_in(serve_dir, "test.jsonl"),
                          {false, path_in(out_dir, "buckets/test"), world_dir});
  });
  stage("simulate-serve-control", [&] {
    return simulate_serve(cfg, path_in(feeds_dir, "requests.tsv"), snap_dir, path_in(serve_dir, "control.jsonl"),
                          {true, path_in(out_dir, "buckets/control"), world_dir});
  });
  stage("eval", [&] {
    return eval_model(path_in(snap_dir, "click.model"), path_in(snap_dir, "click-test-events.tsv"),
                      path_in(reports_dir, "click-eval"));
  });
  stage("report", [&] {
    return report(path_in(out_dir, "buckets/test"), path_in(out_dir, "buckets/control"),
                  path_in(reports_dir, "lifts"));
  });
  stage("happiness-conv", [&] {
    return happiness(cfg, eval::HappinessMode::conv, cfg.happiness_error_conv, path_in(out_dir, "buckets/test"), "",
                     path_in(reports_dir, "happiness-conv"));
  });
  stage("happiness-trendy", [&] {
    return happiness(cfg, eval::HappinessMode::trendy, cfg.happiness_error_trendy, path_in(out_dir, "buckets/test"),
                     path_in(out_dir, "buckets/control"), path_in(reports_dir, "happiness-trendy"));
  });

  write_json(path_in(out_dir, "config.json"), cfg.to_json());
  nlohmann::json outputs = nlohmann::json::object();
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), out_dir).string();
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) outputs[f] = file_digest(path_in(out_dir, f));

  nlohmann::json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["config_hash"] = cfg.hash();
  manifest["inputs"] = {{"config.json", outputs["config.json"]}};
  manifest["outputs"] = outputs;
  manifest["stages"] = stages;
  manifest["timings_seconds"] = timings;
  write_json(path_in(out_dir, "manifest.json"), manifest);
  return manifest;
}

}  // namespace dpa::workbench
