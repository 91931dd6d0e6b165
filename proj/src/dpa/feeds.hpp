#pragma once

// Line-delimited, tab-separated feed files. Every file starts with a one-line
// "#<kind> v1" header; "-" marks an empty column.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dpa/conversion.hpp"
#include "dpa/offset.hpp"
#include "dpa/product.hpp"
#include "dpa/serving.hpp"
#include "dpa/trending.hpp"

namespace dpa::feeds {

using FeatureValues = std::map<std::string, std::vector<offset::WeightedValue>>;

// "name=value:weight|value:weight;name=..."
std::string encode_features(const FeatureValues& f);
FeatureValues decode_features(std::string_view s);
// "name=value;name=value"
std::string encode_assignment(const std::map<std::string, std::string>& a);
std::map<std::string, std::string> decode_assignment(std::string_view s);

struct UserRecord {
  std::string user_id;
  trending::Demographics demographics;
  FeatureValues features;
  bool operator==(const UserRecord&) const = default;
};

struct ImpressionRecord {
  std::int64_t timestamp = 0;
  std::string user_id;
  ProductKey product;
  DpaType type = DpaType::retargeting;
  std::string page_section;
  serving::Device device = serving::Device::desktop;
  int slot = 1;
  int clicked = 0;
  Cents cost = 0;  // charged on click
  bool operator==(const ImpressionRecord&) const = default;
};

struct RequestRecord {
  std::string request_id;
  std::int64_t timestamp = 0;
  std::int64_t day = 0;
  std::string user_id;
  std::string page_section;
  Cents floor_price = 0;
  bool supports_carousel = true;
  serving::Device device = serving::Device::desktop;
  std::string language = "en";
  std::map<std::string, std::string> sim_bins;
  bool operator==(const RequestRecord&) const = default;
};

struct StatsRow {
  ProductKey product;
  ProductStats stats;
  bool operator==(const StatsRow&) const = default;
};

struct PerfRow {
  std::string advertiser;
  DpaType type = DpaType::retargeting;
  Cents spend = 0;
  std::int64_t conversions = 0;
  bool operator==(const PerfRow&) const = default;
};

// One bucket's daily totals (advertiser "*") and per-advertiser, per-type rows.
struct BucketRow {
  std::int64_t day = 0;
  std::string advertiser;  // "*" for the day total
  std::string type;        // DPA type name, "*" for all
  std::int64_t impressions = 0;
  std::int64_t clicks = 0;
  Cents spend = 0;
  std::int64_t conversions = 0;
  bool operator==(const BucketRow&) const = default;
};

void write_catalog(std::ostream& out, const serving::Catalog& catalog);
serving::Catalog read_catalog(std::istream& in);

void write_users(std::ostream& out, const std::vector<UserRecord>& users);
std::vector<UserRecord> read_users(std::istream& in);

void write_campaigns(std::ostream& out, const serving::CampaignDb& campaigns);
serving::CampaignDb read_campaigns(std::istream& in);

void write_impressions(std::ostream& out, const std::vector<ImpressionRecord>& rows);
std::vector<ImpressionRecord> read_impressions(std::istream& in);

void write_conversions(std::ostream& out, const std::vector<conversion::ConversionRecord>& rows);
std::vector<conversion::ConversionRecord> read_conversions(std::istream& in);

void write_pixels(std::ostream& out, const std::vector<trending::PixelEvent>& rows);
std::vector<trending::PixelEvent> read_pixels(std::istream& in);

void write_events(std::ostream& out, const std::vector<offset::Event>& rows);
std::vector<offset::Event> read_events(std::istream& in);

void write_requests(std::ostream& out, const std::vector<RequestRecord>& rows);
std::vector<RequestRecord> read_requests(std::istream& in);

void write_stats(std::ostream& out, const std::vector<StatsRow>& rows);
std::vector<StatsRow> read_stats(std::istream& in);

void write_perf(std::ostream& out, const std::vector<PerfRow>& rows);
std::vector<PerfRow> read_perf(std::istream& in);

void write_history(std::ostream& out, const std::map<std::string, std::vector<std::string>>& history);
std::map<std::string, std::vector<std::string>> read_history(std::istream& in);

void write_bucket(std::ostream& out, const std::vector<BucketRow>& rows);
std::vector<BucketRow> read_bucket(std::istream& in);

// File helpers; throw io errors that name the path.
std::ifstream open_in(const std::string& path);
std::ofstream open_out(const std::string& path);

template <class Reader>
auto read_file(const std::string& path, Reader reader) {
  auto in = open_in(path);
  try {
    return reader(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace dpa::feeds
