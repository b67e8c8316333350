#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "deltametrics/error.hpp"

namespace deltametrics {

namespace detail {

// `ranks` are sorted, 0-based, and lie in [first - base, last - base).
template <typename It>
void multi_select(It first, It last, std::span<const std::size_t> ranks, std::size_t base) {
  if (ranks.empty()) return;
  const std::size_t mid = ranks.size() / 2;
  const It pivot = first + static_cast<std::ptrdiff_t>(ranks[mid] - base);
  std::nth_element(first, pivot, last);
  multi_select(first, pivot, ranks.first(mid), base);
  // Skip duplicates of the pivot rank.
  std::size_t next = mid + 1;
  while (next < ranks.size() && ranks[next] == ranks[mid]) ++next;
  multi_select(pivot + 1, last, ranks.subspan(next), ranks[mid] + 1);
}

}  // namespace detail

// Reorders `values` so that every requested 1-based rank holds its order
// statistic, partitioning once per rank instead of sorting. Returns
// rank -> value.
inline std::map<std::size_t, double> select_ranks_inplace(std::span<double> values,
                                                          std::vector<std::size_t> ranks) {
  const std::size_t n = values.size();
  for (std::size_t r : ranks) {
    if (r < 1 || r > n) {
      throw InputError("rank " + std::to_string(r) + " outside [1, " + std::to_string(n) + "]");
    }
  }
  std::sort(ranks.begin(), ranks.end());
  ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
  std::vector<std::size_t> zero_based(ranks.size());
  std::transform(ranks.begin(), ranks.end(), zero_based.begin(),
                 [](std::size_t r) { return r - 1; });
  detail::multi_select(values.begin(), values.end(), zero_based, 0);
  std::map<std::size_t, double> out;
  for (std::size_t r : ranks) out.emplace(r, values[r - 1]);
  return out;
}

inline std::map<std::size_t, double> select_ranks(std::vector<double> values,
                                                  std::vector<std::size_t> ranks) {
  return select_ranks_inplace(values, std::move(ranks));
}

}  // namespace deltametrics
