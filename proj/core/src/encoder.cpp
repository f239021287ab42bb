#include "planlm/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "planlm/errors.hpp"
#include "planlm/rng.hpp"

namespace planlm::encoder {

void EncoderConfig::validate() const {
  if (dim < 8) throw ValidationError("encoder dim must be >= 8");
  if (hash_buckets < dim) throw ValidationError("encoder hash_buckets must be >= dim");
  if (ngram_order < 1) throw ValidationError("encoder ngram_order must be >= 1");
}

std::vector<std::pair<std::size_t, float>> ngram_counts(std::string_view text,
                                                        const EncoderConfig& config) {
  std::string lowered(text);
  for (auto& c : lowered) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  std::map<std::size_t, float> counts;
  const std::string_view s = lowered;
  for (std::size_t order = 1; order <= config.ngram_order; ++order) {
    if (s.size() < order) break;
    for (std::size_t i = 0; i + order <= s.size(); ++i) {
      counts[fnv1a64(s.substr(i, order)) % config.hash_buckets] += 1.0f;
    }
  }
  return {counts.begin(), counts.end()};
}

Encoder::Encoder(EncoderConfig config) : config_(config) { config_.validate(); }

const std::vector<float>& Encoder::projection_row(std::size_t bucket) const {
  std::lock_guard<std::mutex> lock(cache_mutex_);
  auto it = rows_.find(bucket);
  if (it != rows_.end()) return it->second;
  Rng rng(splitmix64(config_.projection_seed) ^ splitmix64(bucket + 0x51ed2701ULL));
  std::vector<float> row(config_.dim);
  for (auto& v : row) v = static_cast<float>(rng.normal());
  return rows_.emplace(bucket, std::move(row)).first->second;
}

EmbeddingVector Encoder::embed(std::string_view text) const {
  EmbeddingVector out(config_.dim, 0.0f);
  const bool blank = std::all_of(text.begin(), text.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  });
  if (blank) {
    out[0] = 1.0f;
    return out;
  }
  std::vector<double> acc(config_.dim, 0.0);
  for (const auto& [bucket, tf] : ngram_counts(text, config_)) {
    const auto& row = projection_row(bucket);
    for (std::size_t k = 0; k < config_.dim; ++k) acc[k] += static_cast<double>(tf) * row[k];
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    out[0] = 1.0f;
    return out;
  }
  for (std::size_t k = 0; k < config_.dim; ++k) out[k] = static_cast<float>(acc[k] / norm);
  return out;
}

EmbeddingVector embed_sentence(std::string_view text, const EncoderConfig& config) {
  return Encoder(config).embed(text);
}

EmbeddedCorpus embed_corpus(std::span<const corpus::Article> articles, const Encoder& encoder) {
  EmbeddedCorpus out;
  std::vector<float> values;
  for (const auto& a : articles) {
    const std::string_view text = a.text;
    for (const auto& s : corpus::split_sentences(text)) {
      const auto z = encoder.embed(text.substr(s.char_start, s.char_end - s.char_start));
      values.insert(values.end(), z.begin(), z.end());
      out.index.emplace_back(a.id, s.index);
    }
  }
  out.embeddings.rows = out.index.size();
  out.embeddings.cols = encoder.dim();
  out.embeddings.values = std::move(values);
  return out;
}

}  // namespace planlm::encoder
