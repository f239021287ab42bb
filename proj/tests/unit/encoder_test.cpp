#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "planlm/corpus.hpp"
#include "planlm/encoder.hpp"
#include "planlm/errors.hpp"

namespace planlm {
namespace {

using encoder::EncoderConfig;

double norm(const std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += double(x) * x;
  return std::sqrt(s);
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * b[i];
  return s / (norm(a) * norm(b));
}

TEST(Encoder, DeterministicUnitNorm) {
  const encoder::Encoder enc(EncoderConfig{.dim = 64, .projection_seed = 3});
  const auto a = enc.embed("The cat sat on the mat.");
  EXPECT_EQ(a, enc.embed("The cat sat on the mat."));
  EXPECT_EQ(a, encoder::embed_sentence("The cat sat on the mat.", enc.config()));
  EXPECT_NEAR(norm(a), 1.0, 1e-6);
  EXPECT_EQ(a.size(), 64u);
}

TEST(Encoder, BlankTextIsFirstBasisVector) {
  const encoder::Encoder enc(EncoderConfig{.dim = 16});
  for (const char* blank : {"", "   ", "\n\t"}) {
    const auto v = enc.embed(blank);
    EXPECT_EQ(v[0], 1.0f);
    EXPECT_EQ(std::accumulate(v.begin() + 1, v.end(), 0.0f, [](float s, float x) { return s + std::abs(x); }), 0.0f);
  }
}

TEST(Encoder, SharedNgramsRaiseCosine) {
  const encoder::Encoder enc(EncoderConfig{.dim = 256});
  const auto sat = enc.embed("the cat sat");
  EXPECT_GT(cosine(sat, enc.embed("the cat sits")), cosine(sat, enc.embed("quarterly earnings report")));
}

TEST(Encoder, CaseInsensitive) {
  const encoder::Encoder enc(EncoderConfig{.dim = 32});
  EXPECT_EQ(enc.embed("Hello World"), enc.embed("hello world"));
}

TEST(Encoder, SeedChangesEmbeddingButKeepsNorm) {
  const auto a = encoder::embed_sentence("some sentence", EncoderConfig{.dim = 32, .projection_seed = 1});
  const auto b = encoder::embed_sentence("some sentence", EncoderConfig{.dim = 32, .projection_seed = 2});
  EXPECT_NE(a, b);
  EXPECT_NEAR(norm(b), 1.0, 1e-6);
}

TEST(Encoder, NgramCountsCoverOrdersOneToN) {
  const EncoderConfig cfg{.dim = 8, .ngram_order = 3, .hash_buckets = 1u << 20};
  double total = 0;
  for (const auto& [bucket, count] : encoder::ngram_counts("abcd", cfg)) {
    EXPECT_LT(bucket, cfg.hash_buckets);
    total += count;
  }
  EXPECT_DOUBLE_EQ(total, 4 + 3 + 2);
}

TEST(Encoder, ConfigValidation) {
  EXPECT_THROW((EncoderConfig{.dim = 4}.validate()), ValidationError);
  EXPECT_THROW((EncoderConfig{.dim = 64, .hash_buckets = 32}.validate()), ValidationError);
}

TEST(EmbedCorpus, RowsFollowCorpusOrderWithoutCrossSentenceState) {
  const encoder::Encoder enc(EncoderConfig{.dim = 32});
  const std::vector<corpus::Article> arts = {{"a", "", "One fish. Two fish. Red fish."}, {"b", "", "Blue fish."}};
  const auto e = encoder::embed_corpus(arts, enc);
  ASSERT_EQ(e.embeddings.rows, 4u);
  EXPECT_EQ(e.index[2], (RowKey{"a", 2}));
  EXPECT_EQ(e.index[3], (RowKey{"b", 0}));
  const auto r2 = e.embeddings.row(2);
  EXPECT_EQ(std::vector<float>(r2.begin(), r2.end()), enc.embed("Red fish."));

  const std::vector<corpus::Article> swapped = {{"b", "", "Blue fish."}, {"a", "", "One fish. Two fish. Red fish."}};
  const auto s = encoder::embed_corpus(swapped, enc);
  const auto s0 = s.embeddings.row(0), e3 = e.embeddings.row(3);
  EXPECT_TRUE(std::equal(s0.begin(), s0.end(), e3.begin()));
}

}  // namespace
}  // namespace planlm
