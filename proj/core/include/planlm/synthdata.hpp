#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "planlm/corpus.hpp"

namespace planlm::synthdata {

/// Templates use `{slot}` placeholders filled from the section's lexicons.
struct Section {
  std::string name;
  std::vector<std::string> templates;
  std::map<std::string, std::vector<std::string>> slots;
};

struct TemplateGrammar {
  std::vector<Section> sections;
  std::vector<double> initial;     // S
  std::vector<double> transition;  // S x S, row-stochastic
  std::uint64_t seed = 0;
  /// Clause inserted before the final period of every sentence. Identical for
  /// all sections, so a reader whose window holds only the coda cannot tell
  /// which section came last. Empty disables it.
  std::string coda;

  std::size_t size() const { return sections.size(); }
  double trans(std::size_t i, std::size_t j) const { return transition[i * sections.size() + j]; }
  /// Throws ValidationError on non-stochastic rows, unknown slots, or
  /// templates shorter than three tokens.
  void validate() const;
};

/// Eight biography-like sections (origin, education, career, awards, family,
/// travel, death, legacy) with disjoint slot lexicons. Each row moves to the
/// next section of the cycle with probability `cycle_prob` and to any other
/// section uniformly otherwise; articles start in section 0.
TemplateGrammar biography_grammar(double cycle_prob = 0.6, std::uint64_t seed = 0);

/// Nine words plus the period: ten tokens.
inline constexpr const char* kRecordsCoda = "as the old parish records of the county show";

struct SyntheticCorpus {
  std::vector<corpus::Article> articles;
  std::vector<std::vector<int>> labels;  // section per sentence
};

SyntheticCorpus generate_corpus(const TemplateGrammar& grammar, std::size_t n_articles,
                                std::size_t sentences_per_article);

/// Expands one template with slot values drawn from `rng_seed`.
std::string realize(const Section& section, std::size_t template_index, std::uint64_t rng_seed);

/// `article_id<TAB>s_0 s_1 ...` lines.
void write_labels(const std::filesystem::path& path, const SyntheticCorpus& corpus);
std::vector<std::vector<int>> read_labels(const std::filesystem::path& path);

/// Row-normalized transition counts (rows without observations stay zero).
std::vector<double> empirical_transitions(std::span<const std::vector<int>> labels, std::size_t n_states);

/// Fraction of items whose cluster maps to their label under the best
/// one-to-one cluster/label matching.
double matched_agreement(std::span<const int> labels, std::span<const int> clusters);

}  // namespace planlm::synthdata
