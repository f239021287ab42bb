#pragma once

#include <cstddef>
#include <cstdint>
#include <mutex>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "planlm/corpus.hpp"
#include "planlm/matrix_io.hpp"

namespace planlm::encoder {

struct EncoderConfig {
  std::size_t dim = 256;
  std::size_t ngram_order = 3;
  std::size_t hash_buckets = std::size_t{1} << 18;
  std::uint64_t projection_seed = 0;

  void validate() const;
};

using EmbeddingVector = std::vector<float>;

/// Frozen sentence encoder: hashed character n-gram counts followed by a
/// fixed Gaussian random projection and L2 normalization. Projection rows are
/// generated on demand from (projection_seed, bucket) and memoized; the full
/// hash_buckets x dim matrix is never materialized.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }

  /// Unit-norm embedding; blank text maps to the first standard basis vector.
  EmbeddingVector embed(std::string_view text) const;

 private:
  const std::vector<float>& projection_row(std::size_t bucket) const;

  EncoderConfig config_;
  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<std::size_t, std::vector<float>> rows_;
};

/// Uncached convenience wrapper.
EmbeddingVector embed_sentence(std::string_view text, const EncoderConfig& config);

/// Hashed n-gram term frequencies, keyed by bucket (exposed for tests).
std::vector<std::pair<std::size_t, float>> ngram_counts(std::string_view text,
                                                        const EncoderConfig& config);

struct EmbeddedCorpus {
  Matrix embeddings;
  std::vector<RowKey> index;
};

/// One row per sentence, in corpus order then sentence order.
EmbeddedCorpus embed_corpus(std::span<const corpus::Article> articles, const Encoder& encoder);

}  // namespace planlm::encoder
