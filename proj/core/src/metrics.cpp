#include "planlm/metrics.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <utility>

namespace planlm::metrics {
namespace {

using Bigram = std::pair<std::string, std::string>;

std::map<Bigram, std::size_t> bigram_counts(std::span<const std::string> tokens) {
  std::map<Bigram, std::size_t> counts;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) ++counts[{tokens[i], tokens[i + 1]}];
  return counts;
}

}  // namespace

double perplexity_from_nll(std::span<const double> token_nll) {
  if (token_nll.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double v : token_nll) s += v;
  return std::exp(s / static_cast<double>(token_nll.size()));
}

Rouge2 rouge2(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  const auto ref = bigram_counts(reference);
  const auto hyp = bigram_counts(hypothesis);
  const std::size_t ref_total = reference.size() > 1 ? reference.size() - 1 : 0;
  const std::size_t hyp_total = hypothesis.size() > 1 ? hypothesis.size() - 1 : 0;
  std::size_t overlap = 0;
  for (const auto& [bigram, n] : hyp) {
    auto it = ref.find(bigram);
    if (it != ref.end()) overlap += std::min(n, it->second);
  }
  Rouge2 r;
  if (hyp_total) r.precision = static_cast<double>(overlap) / static_cast<double>(hyp_total);
  if (ref_total) r.recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
  if (r.precision + r.recall > 0.0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

double rouge2_f1(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  return rouge2(reference, hypothesis).f1;
}

double normalized_edit(std::size_t raw_distance, std::size_t base_len, std::size_t generated_len) {
  if (generated_len == 0) return static_cast<double>(raw_distance);
  return static_cast<double>(raw_distance) * static_cast<double>(base_len) /
         static_cast<double>(generated_len);
}

}  // namespace planlm::metrics
