#include "dpa/product.hpp"

namespace dpa {

std::string format_product_path(const ProductKey& key) {
  return key.advertiser + "/" + key.product_set + "/" + key.product_group + "/" + key.product;
}

ProductKey parse_product_path(std::string_view path) {
  auto parts = split(path, '/');
  if (parts.size() != 4) {
    throw Error(ErrorCode::parse, "product path needs four levels: '" + std::string(path) + "'");
  }
  ProductKey key{parts[0], parts[1], parts[2], parts[3]};
  if (!key.complete()) throw Error(ErrorCode::parse, "empty level in product path '" + std::string(path) + "'");
  return key;
}

std::string_view to_string(DpaType type) {
  switch (type) {
    case DpaType::retargeting: return "retargeting";
    case DpaType::cross_sell: return "cross_sell";
    case DpaType::out_of_stock_stub: return "out_of_stock";
    case DpaType::search_stub: return "search";
    case DpaType::location_stub: return "location";
    case DpaType::conversion_prospecting: return "conversion_prospecting";
    case DpaType::trending_prospecting: return "trending_prospecting";
  }
  return "retargeting";
}

DpaType parse_dpa_type(std::string_view s) {
  for (auto t : kAllDpaTypes) {
    if (to_string(t) == s) return t;
  }
  throw Error(ErrorCode::parse, "unknown DPA type '" + std::string(s) + "'");
}

bool is_prospecting(DpaType type) {
  switch (type) {
    case DpaType::search_stub:
    case DpaType::location_stub:
    case DpaType::conversion_prospecting:
    case DpaType::trending_prospecting:
      return true;
    default:
      return false;
  }
}

}  // namespace dpa
