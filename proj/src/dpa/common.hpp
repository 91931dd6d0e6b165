#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dpa {

// Error codes mirror the status values of the C API one-to-one.
enum class ErrorCode : int {
  invalid_schema = 1,
  invalid_event = 2,
  incomplete_event = 3,
  invalid_input = 4,
  undefined_metric = 5,
  empty_curve = 6,
  not_scorable = 7,
  io = 8,
  parse = 9,
  config = 10,
  stage_failed = 11,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Money is integer US cents. Computed bids and expected revenues are kept as
// fractional cents (double) until they are compared against stored amounts.
using Cents = std::int64_t;

// 64-bit FNV-1a followed by a splitmix finalizer. Stable across platforms and
// runs, used for seeding and digests of small keys.
std::uint64_t stable_hash(std::string_view data, std::uint64_t seed = 0);

// Seed for a named randomness stream ("world", "clicks", "negatives", ...).
std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream);

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, char sep);

// Round-trip-exact text encoding of doubles (hexfloat).
std::string encode_double(double v);
double decode_double(std::string_view s);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

long long parse_int(std::string_view s, std::string_view what);
double parse_double(std::string_view s, std::string_view what);

}  // namespace dpa
