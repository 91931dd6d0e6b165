#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "dpa/common.hpp"

namespace dpa {

// advertiser -> product set -> product group -> product
struct ProductKey {
  std::string advertiser;
  std::string product_set;
  std::string product_group;
  std::string product;

  bool complete() const {
    return !advertiser.empty() && !product_set.empty() && !product_group.empty() && !product.empty();
  }
  auto operator<=>(const ProductKey&) const = default;
  bool operator==(const ProductKey&) const = default;
};

// "adv/set/group/product"
std::string format_product_path(const ProductKey& key);
ProductKey parse_product_path(std::string_view path);

struct ProductStats {
  std::int64_t impressions = 0;
  std::int64_t clicks = 0;
  std::int64_t conversions = 0;
  Cents spend = 0;
  std::int64_t last_seen_day = 0;
  bool operator==(const ProductStats&) const = default;
};

// DPA types. The stub types are plugin points whose eligibility logic lives
// outside this library.
enum class DpaType {
  retargeting,
  cross_sell,
  out_of_stock_stub,
  search_stub,
  location_stub,
  conversion_prospecting,
  trending_prospecting,
};

std::string_view to_string(DpaType type);
DpaType parse_dpa_type(std::string_view s);
bool is_prospecting(DpaType type);
inline constexpr DpaType kAllDpaTypes[] = {
    DpaType::retargeting,   DpaType::cross_sell,    DpaType::out_of_stock_stub,      DpaType::search_stub,
    DpaType::location_stub, DpaType::conversion_prospecting, DpaType::trending_prospecting};

namespace feature {
inline constexpr const char* kAdvertiserId = "advertiser-id";
inline constexpr const char* kProductSetId = "product-set-id";
inline constexpr const char* kProductGroupId = "product-group-id";
inline constexpr const char* kProductId = "product-id";
}  // namespace feature

}  // namespace dpa
