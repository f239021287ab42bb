#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "planlm/corpus.hpp"
#include "planlm/lm.hpp"

namespace planlm::scan {

using actions::ActionId;

struct ArticleScan {
  std::string article_id;
  std::size_t sentences = 0;
  double rank1_ppl = 0.0;   // always taking the per-sentence best variant
  double oracle_ppl = 0.0;  // oracle action everywhere
};

struct ScanResult {
  /// curve[k-1]: perplexity when always taking the k-th best variant.
  std::vector<double> curve;
  double oracle_ppl = 0.0;
  /// Per scored sentence: 1 + number of variants strictly better than the
  /// oracle (oracle scan only).
  std::vector<std::size_t> oracle_ranks;
  double mean_oracle_rank = 0.0;
  /// Rank whose curve value is nearest to oracle_ppl.
  std::size_t nearest_rank = 0;
  std::vector<ArticleScan> articles;
  /// Noise scale used by the noise scan (0 for the action scan).
  double sigma = 0.0;
};

/// Scores every sentence under every action (earlier sentences keep their
/// oracle actions) and ranks the actions by the sentence's mean token NLL.
/// Perplexities are exp of the sentence-averaged mean NLL.
ScanResult oracle_scan(const lm::LanguageModel& model, std::span<const corpus::TokenStream> streams,
                       const std::vector<std::vector<ActionId>>& oracle_actions);

/// Same ranking over `variants` Gaussian perturbations of the oracle action
/// embedding per sentence. The noise scale is `sigma` when non-negative,
/// else the empirical standard deviation of all adapter action tables. One
/// noise vector is shared by all adapted layers.
ScanResult noise_scan(const lm::LanguageModel& model, std::span<const corpus::TokenStream> streams,
                      const std::vector<std::vector<ActionId>>& oracle_actions, std::size_t variants,
                      std::uint64_t seed, double sigma = -1.0);

/// Standard deviation over every entry of the adapter action tables.
double action_embedding_stddev(const lm::LanguageModel& model);

/// `rank,ppl` lines.
void write_curve_csv(const std::filesystem::path& path, std::span<const double> curve);

}  // namespace planlm::scan
