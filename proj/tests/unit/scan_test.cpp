#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "planlm/lm.hpp"
#include "planlm/rng.hpp"
#include "planlm/scan.hpp"

namespace planlm {
namespace {

struct Fixture {
  lm::LanguageModel model{[] {
    lm::LmConfig c;
    c.vocab_size = 10;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.context = 32;
    c.seed = 5;
    return c;
  }()};
  std::vector<corpus::TokenStream> streams;
  std::vector<std::vector<int>> oracle;

  Fixture() {
    Rng rng(1);
    Matrix c(4, 6);
    for (auto& v : c.values) v = static_cast<float>(rng.normal());
    model.attach_adapter(c);
    for (int a = 0; a < 3; ++a) {
      corpus::TokenStream s;
      s.article_id = std::to_string(a);
      s.token_ids = {corpus::kBos};
      s.sentence_index_of_token = {0};
      for (std::size_t sent = 0; sent < 4; ++sent) {
        for (int t = 0; t < 5; ++t) {
          s.token_ids.push_back(2 + static_cast<int>(rng.next() % 8));
          s.sentence_index_of_token.push_back(sent);
        }
      }
      streams.push_back(s);
      oracle.push_back({a % 4, (a + 1) % 4, 2, 3});
    }
  }
};

TEST(Scan, CurveIsMonotoneAndRankOneBeatsOracle) {
  Fixture f;
  const auto r = scan::oracle_scan(f.model, f.streams, f.oracle);
  ASSERT_EQ(r.curve.size(), 4u);
  for (std::size_t i = 1; i < r.curve.size(); ++i) EXPECT_LE(r.curve[i - 1], r.curve[i]);
  EXPECT_LE(r.curve.front(), r.oracle_ppl);
  ASSERT_EQ(r.articles.size(), 3u);
  for (const auto& a : r.articles) EXPECT_LE(a.rank1_ppl, a.oracle_ppl * (1 + 1e-12));
  for (std::size_t k : r.oracle_ranks) {
    EXPECT_GE(k, 1u);
    EXPECT_LE(k, 4u);
  }
  EXPECT_GE(r.nearest_rank, 1u);
  EXPECT_LE(r.nearest_rank, 4u);
}

TEST(Scan, NoiseScanIsSeededAndUsesTableSpread) {
  Fixture f;
  const auto a = scan::noise_scan(f.model, f.streams, f.oracle, 5, 3);
  const auto b = scan::noise_scan(f.model, f.streams, f.oracle, 5, 3);
  EXPECT_EQ(a.curve, b.curve);
  EXPECT_DOUBLE_EQ(a.sigma, scan::action_embedding_stddev(f.model));
  ASSERT_EQ(a.curve.size(), 5u);
  EXPECT_TRUE(std::is_sorted(a.curve.begin(), a.curve.end()));
  const auto zero = scan::noise_scan(f.model, f.streams, f.oracle, 3, 3, 0.0);
  for (double p : zero.curve) EXPECT_NEAR(p, zero.oracle_ppl, 1e-9 * p);
}

}  // namespace
}  // namespace planlm
