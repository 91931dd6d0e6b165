#include "dpa/feeds.hpp"

#include <filesystem>
#include <istream>
#include <ostream>

namespace dpa::feeds {

namespace {

const std::string kEmpty = "-";

std::string col(const std::string& s) { return s.empty() ? kEmpty : s; }
std::string uncol(const std::string& s) { return s == kEmpty ? std::string() : s; }

void check_token(const std::string& s, std::string_view what) {
  if (s.find_first_of("\t\n;=|:") != std::string::npos) {
    throw Error(ErrorCode::invalid_input, std::string(what) + " '" + s + "' contains a reserved character");
  }
}

void header(std::ostream& out, std::string_view kind) { out << '#' << kind << " v1\n"; }

// Iterates the data rows of a feed, checking the header and column count.
template <class F>
void for_rows(std::istream& in, std::string_view kind, std::size_t columns, F&& f) {
  std::string line;
  const std::string expected = "#" + std::string(kind) + " v1";
  if (!std::getline(in, line) || line != expected) {
    throw Error(ErrorCode::parse, "expected header '" + expected + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != columns) {
      throw Error(ErrorCode::parse, "line " + std::to_string(lineno) + ": expected " + std::to_string(columns) +
                                        " columns, got " + std::to_string(cols.size()));
    }
    try {
      f(cols);
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::string encode_age(const trending::Demographics& d) { return d.age ? std::to_string(*d.age) : kEmpty; }

std::optional<int> decode_age(const std::string& s) {
  if (s == kEmpty) return std::nullopt;
  return static_cast<int>(parse_int(s, "age"));
}

int parse_flag(const std::string& s, std::string_view what) {
  auto v = parse_int(s, what);
  if (v != 0 && v != 1) throw Error(ErrorCode::parse, std::string(what) + " must be 0 or 1");
  return static_cast<int>(v);
}

}  // namespace

std::string encode_features(const FeatureValues& f) {
  std::vector<std::string> parts;
  for (const auto& [name, values] : f) {
    check_token(name, "feature name");
    std::vector<std::string> vs;
    for (const auto& v : values) {
      check_token(v.value, "feature value");
      vs.push_back(v.value + ":" + format_double(v.weight));
    }
    parts.push_back(name + "=" + join(vs, '|'));
  }
  return parts.empty() ? kEmpty : join(parts, ';');
}

FeatureValues decode_features(std::string_view s) {
  FeatureValues out;
  if (s == kEmpty) return out;
  for (const auto& part : split(s, ';')) {
    auto eq = part.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::parse, "feature field '" + part + "' lacks '='");
    auto& values = out[part.substr(0, eq)];
    const auto rest = part.substr(eq + 1);
    if (rest.empty()) continue;
    for (const auto& v : split(rest, '|')) {
      auto colon = v.rfind(':');
      if (colon == std::string::npos) throw Error(ErrorCode::parse, "feature value '" + v + "' lacks a weight");
      values.push_back({v.substr(0, colon), parse_double(v.substr(colon + 1), "feature weight")});
    }
  }
  return out;
}

std::string encode_assignment(const std::map<std::string, std::string>& a) {
  std::vector<std::string> parts;
  for (const auto& [k, v] : a) {
    check_token(k, "name");
    check_token(v, "value");
    parts.push_back(k + "=" + v);
  }
  return parts.empty() ? kEmpty : join(parts, ';');
}

std::map<std::string, std::string> decode_assignment(std::string_view s) {
  std::map<std::string, std::string> out;
  if (s == kEmpty) return out;
  for (const auto& part : split(s, ';')) {
    auto eq = part.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::parse, "field '" + part + "' lacks '='");
    out[part.substr(0, eq)] = part.substr(eq + 1);
  }
  return out;
}

void write_catalog(std::ostream& out, const serving::Catalog& catalog) {
  header(out, "catalog");
  for (const auto& [_, e] : catalog.entries()) {
    out << format_product_path(e.key) << '\t' << col(e.assets.title) << '\t' << col(e.assets.image) << '\t'
        << col(e.assets.description) << '\n';
  }
}

serving::Catalog read_catalog(std::istream& in) {
  serving::Catalog c;
  for_rows(in, "catalog", 4, [&](const std::vector<std::string>& r) {
    serving::CatalogEntry e;
    e.key = parse_product_path(r[0]);
    e.assets = {uncol(r[1]), uncol(r[2]), uncol(r[3])};
    c.add(std::move(e));
  });
  return c;
}

void write_users(std::ostream& out, const std::vector<UserRecord>& users) {
  header(out, "users");
  for (const auto& u : users) {
    out << u.user_id << '\t' << encode_age(u.demographics) << '\t' << trending::to_string(u.demographics.gender)
        << '\t' << encode_features(u.features) << '\n';
  }
}

std::vector<UserRecord> read_users(std::istream& in) {
  std::vector<UserRecord> out;
  for_rows(in, "users", 4, [&](const std::vector<std::string>& r) {
    out.push_back({r[0], {decode_age(r[1]), trending::parse_gender(r[2])}, decode_features(r[3])});
  });
  return out;
}

void write_campaigns(std::ostream& out, const serving::CampaignDb& campaigns) {
  header(out, "campaigns");
  for (const auto& [group, c] : campaigns) {
    std::vector<std::string> genders;
    for (auto g : c.target_genders) genders.emplace_back(trending::to_string(g));
    out << c.campaign_id << '\t' << group << '\t' << c.budget_remaining << '\t'
        << (genders.empty() ? kEmpty : join(genders, ',')) << '\t' << c.expiration_day << '\t' << c.bid << '\t'
        << col(c.language) << '\n';
  }
}

serving::CampaignDb read_campaigns(std::istream& in) {
  serving::CampaignDb db;
  for_rows(in, "campaigns", 7, [&](const std::vector<std::string>& r) {
    serving::Campaign c;
    c.campaign_id = r[0];
    c.product_group = r[1];
    c.budget_remaining = parse_int(r[2], "budget");
    if (r[3] != kEmpty) {
      for (const auto& g : split(r[3], ',')) c.target_genders.insert(trending::parse_gender(g));
    }
    c.expiration_day = parse_int(r[4], "expiration day");
    c.bid = parse_int(r[5], "bid");
    c.language = uncol(r[6]);
    db[c.product_group] = std::move(c);
  });
  return db;
}

void write_impressions(std::ostream& out, const std::vector<ImpressionRecord>& rows) {
  header(out, "impressions");
  for (const auto& r : rows) {
    out << r.timestamp << '\t' << r.user_id << '\t' << format_product_path(r.product) << '\t' << to_string(r.type)
        << '\t' << col(r.page_section) << '\t' << serving::to_string(r.device) << '\t' << r.slot << '\t'
        << r.clicked << '\t' << r.cost << '\n';
  }
}

std::vector<ImpressionRecord> read_impressions(std::istream& in) {
  std::vector<ImpressionRecord> out;
  for_rows(in, "impressions", 9, [&](const std::vector<std::string>& r) {
    ImpressionRecord x;
    x.timestamp = parse_int(r[0], "timestamp");
    x.user_id = r[1];
    x.product = parse_product_path(r[2]);
    x.type = parse_dpa_type(r[3]);
    x.page_section = uncol(r[4]);
    x.device = serving::parse_device(r[5]);
    x.slot = static_cast<int>(parse_int(r[6], "slot"));
    x.clicked = parse_flag(r[7], "clicked");
    x.cost = parse_int(r[8], "cost");
    out.push_back(std::move(x));
  });
  return out;
}

void write_conversions(std::ostream& out, const std::vector<conversion::ConversionRecord>& rows) {
  header(out, "conversions");
  for (const auto& r : rows) {
    out << r.timestamp << '\t' << r.user_id << '\t' << format_product_path(r.product) << '\n';
  }
}

std::vector<conversion::ConversionRecord> read_conversions(std::istream& in) {
  std::vector<conversion::ConversionRecord> out;
  for_rows(in, "conversions", 3, [&](const std::vector<std::string>& r) {
    out.push_back({parse_int(r[0], "timestamp"), r[1], parse_product_path(r[2])});
  });
  return out;
}

void write_pixels(std::ostream& out, const std::vector<trending::PixelEvent>& rows) {
  header(out, "pixel");
  for (const auto& r : rows) {
    out << r.timestamp << '\t' << r.user_id << '\t' << encode_age(r.user) << '\t' << trending::to_string(r.user.gender)
        << '\t' << format_product_path(r.product) << '\t' << trending::to_string(r.kind) << '\n';
  }
}

std::vector<trending::PixelEvent> read_pixels(std::istream& in) {
  std::vector<trending::PixelEvent> out;
  for_rows(in, "pixel", 6, [&](const std::vector<std::string>& r) {
    trending::PixelEvent e;
    e.timestamp = parse_int(r[0], "timestamp");
    e.user_id = r[1];
    e.user = {decode_age(r[2]), trending::parse_gender(r[3])};
    e.product = parse_product_path(r[4]);
    e.kind = trending::parse_pixel_kind(r[5]);
    out.push_back(std::move(e));
  });
  return out;
}

void write_events(std::ostream& out, const std::vector<offset::Event>& rows) {
  header(out, "events");
  for (const auto& e : rows) {
    out << e.timestamp << '\t' << offset::to_string(e.kind) << '\t' << e.label << '\t'
        << encode_features(e.user_values) << '\t' << encode_assignment(e.ad_values) << '\t'
        << encode_assignment(e.sim_bins) << '\n';
  }
}

std::vector<offset::Event> read_events(std::istream& in) {
  std::vector<offset::Event> out;
  for_rows(in, "events", 6, [&](const std::vector<std::string>& r) {
    offset::Event e;
    e.timestamp = parse_int(r[0], "timestamp");
    e.kind = offset::parse_event_kind(r[1]);
    e.label = parse_flag(r[2], "label");
    e.user_values = decode_features(r[3]);
    e.ad_values = decode_assignment(r[4]);
    e.sim_bins = decode_assignment(r[5]);
    out.push_back(std::move(e));
  });
  return out;
}

void write_requests(std::ostream& out, const std::vector<RequestRecord>& rows) {
  header(out, "requests");
  for (const auto& r : rows) {
    out << r.request_id << '\t' << r.timestamp << '\t' << r.day << '\t' << r.user_id << '\t' << col(r.page_section)
        << '\t' << r.floor_price << '\t' << (r.supports_carousel ? 1 : 0) << '\t' << serving::to_string(r.device)
        << '\t' << col(r.language) << '\t' << encode_assignment(r.sim_bins) << '\n';
  }
}

std::vector<RequestRecord> read_requests(std::istream& in) {
  std::vector<RequestRecord> out;
  for_rows(in, "requests", 10, [&](const std::vector<std::string>& r) {
    RequestRecord x;
    x.request_id = r[0];
    x.timestamp = parse_int(r[1], "timestamp");
    x.day = parse_int(r[2], "day");
    x.user_id = r[3];
    x.page_section = uncol(r[4]);
    x.floor_price = parse_int(r[5], "floor price");
    x.supports_carousel = parse_flag(r[6], "carousel") == 1;
    x.device = serving::parse_device(r[7]);
    x.language = uncol(r[8]);
    x.sim_bins = decode_assignment(r[9]);
    out.push_back(std::move(x));
  });
  return out;
}

void write_stats(std::ostream& out, const std::vector<StatsRow>& rows) {
  header(out, "product-stats");
  for (const auto& r : rows) {
    out << format_product_path(r.product) << '\t' << r.stats.impressions << '\t' << r.stats.clicks << '\t'
        << r.stats.conversions << '\t' << r.stats.spend << '\t' << r.stats.last_seen_day << '\n';
  }
}

std::vector<StatsRow> read_stats(std::istream& in) {
  std::vector<StatsRow> out;
  for_rows(in, "product-stats", 6, [&](const std::vector<std::string>& r) {
    StatsRow s;
    s.product = parse_product_path(r[0]);
    s.stats.impressions = parse_int(r[1], "impressions");
    s.stats.clicks = parse_int(r[2], "clicks");
    s.stats.conversions = parse_int(r[3], "conversions");
    s.stats.spend = parse_int(r[4], "spend");
    s.stats.last_seen_day = parse_int(r[5], "last seen day");
    out.push_back(std::move(s));
  });
  return out;
}

void write_perf(std::ostream& out, const std::vector<PerfRow>& rows) {
  header(out, "advertiser-perf");
  for (const auto& r : rows) {
    out << r.advertiser << '\t' << to_string(r.type) << '\t' << r.spend << '\t' << r.conversions << '\n';
  }
}

std::vector<PerfRow> read_perf(std::istream& in) {
  std::vector<PerfRow> out;
  for_rows(in, "advertiser-perf", 4, [&](const std::vector<std::string>& r) {
    out.push_back({r[0], parse_dpa_type(r[1]), parse_int(r[2], "spend"), parse_int(r[3], "conversions")});
  });
  return out;
}

void write_history(std::ostream& out, const std::map<std::string, std::vector<std::string>>& history) {
  header(out, "history");
  for (const auto& [user, products] : history) {
    out << user << '\t' << (products.empty() ? kEmpty : join(products, ',')) << '\n';
  }
}

std::map<std::string, std::vector<std::string>> read_history(std::istream& in) {
  std::map<std::string, std::vector<std::string>> out;
  for_rows(in, "history", 2, [&](const std::vector<std::string>& r) {
    out[r[0]] = r[1] == kEmpty ? std::vector<std::string>{} : split(r[1], ',');
  });
  return out;
}

void write_bucket(std::ostream& out, const std::vector<BucketRow>& rows) {
  header(out, "bucket");
  for (const auto& r : rows) {
    out << r.day << '\t' << r.advertiser << '\t' << r.type << '\t' << r.impressions << '\t' << r.clicks << '\t'
        << r.spend << '\t' << r.conversions << '\n';
  }
}

std::vector<BucketRow> read_bucket(std::istream& in) {
  std::vector<BucketRow> out;
  for_rows(in, "bucket", 7, [&](const std::vector<std::string>& r) {
    out.push_back({parse_int(r[0], "day"), r[1], r[2], parse_int(r[3], "impressions"), parse_int(r[4], "clicks"),
                   parse_int(r[5], "spend"), parse_int(r[6], "conversions")});
  });
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot open '" + path + "' for writing");
  return out;
}

}  // namespace dpa::feeds
