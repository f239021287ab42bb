#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "planlm/hmm.hpp"
#include "planlm/rng.hpp"

namespace planlm {
namespace {

hmm::HmmCritic random_critic(std::size_t n, std::size_t k, Rng& rng) {
  hmm::HmmCritic c;
  c.n_states = n;
  c.n_symbols = k;
  auto row = [&](std::size_t len) {
    std::vector<double> r(len);
    double s = 0;
    for (auto& v : r) s += (v = 0.05 + rng.uniform());
    for (auto& v : r) v /= s;
    return r;
  };
  c.initial = row(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = row(n);
    c.transition.insert(c.transition.end(), t.begin(), t.end());
    const auto e = row(k);
    c.emission.insert(c.emission.end(), e.begin(), e.end());
  }
  return c;
}

TEST(Hmm, ForwardMatchesPathEnumeration) {
  Rng rng(5);
  for (std::size_t n = 1; n <= 3; ++n) {
    for (std::size_t t = 1; t <= 5; ++t) {
      for (int rep = 0; rep < 5; ++rep) {
        const auto c = random_critic(n, 4, rng);
        std::vector<int> seq(t);
        for (auto& s : seq) s = static_cast<int>(rng.index(4));
        EXPECT_NEAR(hmm::log_likelihood(c, seq), testing::hmm_enumerate(c, seq), 1e-8);
      }
    }
  }
}

TEST(Hmm, SingleStateLearnsUnigram) {
  const std::vector<std::vector<int>> seqs = {{0, 1, 1, 2}, {1, 1, 3, 0}};
  const auto c = hmm::hmm_fit(seqs, 1, 4, 3);
  const double counts[4] = {2, 4, 1, 1};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(c.emit(0, k), counts[k] / 8.0, 1e-5);
}

TEST(Hmm, EmLikelihoodNeverDecreasesAndRowsAreStochastic) {
  Rng rng(8);
  std::vector<std::vector<int>> seqs;
  for (int i = 0; i < 40; ++i) {
    std::vector<int> s;
    int a = static_cast<int>(rng.index(6));
    for (int j = 0; j < 12; ++j) {
      s.push_back(a);
      a = rng.uniform() < 0.8 ? (a + 1) % 6 : static_cast<int>(rng.index(6));
    }
    seqs.push_back(s);
  }
  const auto c = hmm::hmm_fit(seqs, 4, 6, 2, 60);
  ASSERT_GE(c.log_likelihood_trace.size(), 2u);
  for (std::size_t i = 1; i < c.log_likelihood_trace.size(); ++i) {
    EXPECT_GE(c.log_likelihood_trace[i], c.log_likelihood_trace[i - 1] - 1e-9) << i;
  }
  auto check_rows = [](const std::vector<double>& m, std::size_t cols) {
    for (std::size_t r = 0; r < m.size() / cols; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < cols; ++j) {
        EXPECT_GE(m[r * cols + j], 0.0);
        s += m[r * cols + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  };
  check_rows(c.initial, c.n_states);
  check_rows(c.transition, c.n_states);
  check_rows(c.emission, c.n_symbols);
}

TEST(Hmm, LatentPerplexityLimits) {
  hmm::HmmCritic uniform;
  uniform.n_states = 1;
  uniform.n_symbols = 8;
  uniform.initial = {1.0};
  uniform.transition = {1.0};
  uniform.emission.assign(8, 1.0 / 8);
  const std::vector<int> seq = {3, 1, 7, 7, 0};
  EXPECT_NEAR(*hmm::latent_perplexity(uniform, seq), 8.0, 1e-9);
  EXPECT_FALSE(hmm::latent_perplexity(uniform, std::vector<int>{}).has_value());

  hmm::HmmCritic peaked = uniform;
  peaked.emission.assign(8, 1e-9);
  peaked.emission[2] = 1.0 - 7e-9;
  EXPECT_NEAR(*hmm::latent_perplexity(peaked, std::vector<int>(20, 2)), 1.0, 1e-6);
}

TEST(Hmm, LongSequencesDoNotUnderflow) {
  Rng rng(1);
  const auto c = random_critic(3, 5, rng);
  std::vector<int> seq(10000);
  for (auto& s : seq) s = static_cast<int>(rng.index(5));
  const double ll = hmm::log_likelihood(c, seq);
  EXPECT_TRUE(std::isfinite(ll));
  EXPECT_LT(ll, 0.0);
}

}  // namespace
}  // namespace planlm
