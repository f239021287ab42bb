#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace planlm::metrics {

/// exp of the mean negative log-likelihood.
double perplexity_from_nll(std::span<const double> token_nll);

struct Rouge2 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Clipped bigram overlap between reference and hypothesis token lists.
Rouge2 rouge2(std::span<const std::string> reference, std::span<const std::string> hypothesis);
double rouge2_f1(std::span<const std::string> reference, std::span<const std::string> hypothesis);

/// Unit-cost edit distance (two-row dynamic programme).
template <typename T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  return levenshtein<int>(a, b);
}

/// raw * base_len / generated_len (raw when generated_len is 0).
double normalized_edit(std::size_t raw_distance, std::size_t base_len, std::size_t generated_len);

}  // namespace planlm::metrics
