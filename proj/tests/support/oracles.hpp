#pragma once

// Independent reference implementations used by the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dpa/offset.hpp"
#include "dpa/serving.hpp"

namespace oracle {

inline std::size_t choose2(std::size_t k) { return k * (k - 1) / 2; }

// O(n^2) pair scan; ties earn half credit.
inline double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  std::uint64_t twice = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      if (s[i] > s[j]) twice += 2;
      else if (s[i] == s[j]) twice += 1;
    }
  }
  std::uint64_t pos = std::count(y.begin(), y.end(), 1);
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(y.size() - pos));
}

// Top l by repeated selection of the best remaining candidate.
inline std::vector<dpa::serving::Candidate> brute_top(std::vector<dpa::serving::Candidate> c, std::size_t l) {
  std::vector<dpa::serving::Candidate> out;
  while (out.size() < l && !c.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < c.size(); ++i) {
      const auto& a = c[i];
      const auto& b = c[best];
      if (a.score != b.score) {
        if (a.score > b.score) best = i;
      } else if (a.product.product != b.product.product) {
        if (a.product.product < b.product.product) best = i;
      } else if (static_cast<int>(a.source) < static_cast<int>(b.source)) {
        best = i;
      }
    }
    out.push_back(c[best]);
    c.erase(c.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return out;
}

inline bool same_candidates(const std::vector<dpa::serving::Candidate>& a,
                            const std::vector<dpa::serving::Candidate>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].product != b[i].product || a[i].source != b[i].source || a[i].score != b[i].score ||
        a[i].bid != b[i].bid)
      return false;
  }
  return true;
}

// Relative error with the denominator floored so that gradients that are
// essentially zero are compared absolutely.
inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
