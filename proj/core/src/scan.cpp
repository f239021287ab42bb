#include "planlm/scan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "planlm/errors.hpp"
#include "planlm/rng.hpp"

namespace planlm::scan {
namespace {

using ad::Tensor;

constexpr std::size_t kVariantsPerForward = 32;

// One sentence to score: input window [start, end) of the stream; targets
// are tokens start+1..end, of which those in `sentence` are scored.
struct SentenceWindow {
  std::size_t start;
  std::size_t end;  // index of the sentence's last token
  std::size_t sentence;
};

std::vector<SentenceWindow> sentence_windows(const corpus::TokenStream& s, std::size_t context) {
  std::vector<SentenceWindow> out;
  const auto& idx = s.sentence_index_of_token;
  for (std::size_t i = 1; i < idx.size(); ++i) {
    const bool last_of_sentence = i + 1 == idx.size() || idx[i + 1] != idx[i];
    if (!last_of_sentence) continue;
    const std::size_t start = i > context ? i - context : 0;
    out.push_back({start, i, idx[i]});
  }
  return out;
}

// Mean NLL of the sentence's tokens for each variant. `make` fills the
// per-position actions (and optionally noise rows) of one variant.
template <typename Fill>
std::vector<double> score_variants(const lm::LanguageModel& model, const corpus::TokenStream& s,
                                   const SentenceWindow& w, std::size_t n_variants, Fill fill) {
  const std::size_t len = w.end - w.start;
  std::vector<double> out;
  out.reserve(n_variants);
  ad::NoGradGuard guard;
  for (std::size_t v0 = 0; v0 < n_variants; v0 += kVariantsPerForward) {
    const std::size_t nv = std::min(kVariantsPerForward, n_variants - v0);
    std::vector<int> tokens, acts, targets;
    std::vector<float> noise;
    std::vector<std::size_t> lengths(nv, len);
    bool any_noise = false;
    for (std::size_t v = 0; v < nv; ++v) {
      for (std::size_t p = w.start; p < w.end; ++p) {
        tokens.push_back(s.token_ids[p]);
        const bool in_sentence = s.sentence_index_of_token[p + 1] == w.sentence;
        targets.push_back(in_sentence ? s.token_ids[p + 1] : -1);
      }
      any_noise |= fill(v0 + v, w, acts, noise);
    }
    Tensor noise_t;
    lm::Conditioning cond{acts, nullptr};
    if (any_noise) {
      noise_t = Tensor::from({tokens.size(), model.action_dim()}, std::move(noise));
      cond.noise = &noise_t;
    }
    const auto nll = ad::row_nll(model.forward(tokens, lengths, &cond), targets);
    for (std::size_t v = 0; v < nv; ++v) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t i = v * len; i < (v + 1) * len; ++i) {
        if (targets[i] < 0) continue;
        sum += nll[i];
        ++n;
      }
      out.push_back(n ? sum / static_cast<double>(n) : 0.0);
    }
  }
  return out;
}

void finish(ScanResult& r, std::vector<std::vector<double>>& sorted, std::vector<double>& oracle_nll) {
  if (sorted.empty()) throw ValidationError("scan found no sentences to score");
  const std::size_t k = sorted.front().size();
  r.curve.assign(k, 0.0);
  for (const auto& row : sorted) {
    for (std::size_t i = 0; i < k; ++i) r.curve[i] += row[i];
  }
  for (auto& c : r.curve) c = std::exp(c / static_cast<double>(sorted.size()));
  r.oracle_ppl = std::exp(std::accumulate(oracle_nll.begin(), oracle_nll.end(), 0.0) /
                          static_cast<double>(oracle_nll.size()));
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    const double d = std::abs(r.curve[i] - r.oracle_ppl);
    if (d < best) {
      best = d;
      r.nearest_rank = i + 1;
    }
  }
  if (!r.oracle_ranks.empty()) {
    r.mean_oracle_rank = std::accumulate(r.oracle_ranks.begin(), r.oracle_ranks.end(), 0.0) /
                         static_cast<double>(r.oracle_ranks.size());
  }
}

void check_inputs(const lm::LanguageModel& model, std::span<const corpus::TokenStream> streams,
                  const std::vector<std::vector<ActionId>>& oracle_actions) {
  if (!model.has_adapter()) throw ValidationError("scans need an adapter-conditioned model");
  if (oracle_actions.size() != streams.size()) {
    throw ValidationError("scans need one oracle action list per article");
  }
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (oracle_actions[i].size() < streams[i].sentence_count()) {
      throw ValidationError("article '" + streams[i].article_id + "' lacks oracle actions");
    }
  }
}

// Shared driver: `variants` per sentence, `fill` builds each one, `oracle`
// is the variant index equal to the oracle (or none).
template <typename Fill, typename OracleOf>
ScanResult run_scan(const lm::LanguageModel& model, std::span<const corpus::TokenStream> streams,
                    std::size_t variants, Fill fill, OracleOf oracle_nll_of, bool rank_oracle) {
  ScanResult r;
  std::vector<std::vector<double>> sorted;
  std::vector<double> oracle_nll;
  for (std::size_t a = 0; a < streams.size(); ++a) {
    const auto& s = streams[a];
    ArticleScan art;
    art.article_id = s.article_id;
    double best_sum = 0.0, oracle_sum = 0.0;
    for (const auto& w : sentence_windows(s, model.config().context)) {
      auto nll = score_variants(model, s, w, variants,
                                [&](std::size_t v, const SentenceWindow& sw, std::vector<int>& acts,
                                    std::vector<float>& noise) { return fill(a, v, sw, acts, noise); });
      const double o = oracle_nll_of(a, w, nll);
      if (rank_oracle) {
        r.oracle_ranks.push_back(1 + static_cast<std::size_t>(
                                         std::count_if(nll.begin(), nll.end(), [o](double x) { return x < o; })));
      }
      std::sort(nll.begin(), nll.end());
      best_sum += nll.front();
      oracle_sum += o;
      oracle_nll.push_back(o);
      sorted.push_back(std::move(nll));
      ++art.sentences;
    }
    if (art.sentences) {
      art.rank1_ppl = std::exp(best_sum / static_cast<double>(art.sentences));
      art.oracle_ppl = std::exp(oracle_sum / static_cast<double>(art.sentences));
      r.articles.push_back(art);
    }
  }
  finish(r, sorted, oracle_nll);
  return r;
}

}  // namespace

ScanResult oracle_scan(const lm::LanguageModel& model, std::span<const corpus::TokenStream> streams,
                       const std::vector<std::vector<ActionId>>& oracle_actions) {
  check_inputs(model, streams, oracle_actions);
  const std::size_t k = model.num_actions();
  auto fill = [&](std::size_t a, std::size_t v, const SentenceWindow& w, std::vector<int>& acts,
                  std::vector<float>&) {
    const auto& s = streams[a];
    for (std::size_t p = w.start; p < w.end; ++p) {
      const std::size_t sent = s.sentence_index_of_token[p + 1];
      acts.push_back(sent == w.sentence ? static_cast<int>(v) : oracle_actions[a][sent]);
    }
    return false;
  };
  auto oracle_of = [&](std::size_t a, const SentenceWindow& w, const std::vector<double>& nll) {
    return nll[static_cast<std::size_t>(oracle_actions[a][w.sentence])];
  };
  return run_scan(model, streams, k, fill, oracle_of, /*rank_oracle=*/true);
}

ScanResult noise_scan(const lm::LanguageModel& model, std::span<const corpus::TokenStream> streams,
                      const std::vector<std::vector<ActionId>>& oracle_actions, std::size_t variants,
                      std::uint64_t seed, double sigma) {
  check_inputs(model, streams, oracle_actions);
  if (variants == 0) throw ValidationError("noise scan needs at least one variant");
  if (sigma < 0.0) sigma = action_embedding_stddev(model);
  const std::size_t d = model.action_dim();
  Rng rng(seed);
  std::vector<float> eps(d);
  auto fill = [&](std::size_t a, std::size_t, const SentenceWindow& w, std::vector<int>& acts,
                  std::vector<float>& noise) {
    const auto& s = streams[a];
    for (auto& e : eps) e = static_cast<float>(rng.normal() * sigma);
    for (std::size_t p = w.start; p < w.end; ++p) {
      const std::size_t sent = s.sentence_index_of_token[p + 1];
      acts.push_back(oracle_actions[a][sent]);
      if (sent == w.sentence) {
        noise.insert(noise.end(), eps.begin(), eps.end());
      } else {
        noise.insert(noise.end(), d, 0.0f);
      }
    }
    return true;
  };
  // The unperturbed oracle is scored once per sentence for reference.
  auto oracle_of = [&](std::size_t a, const SentenceWindow& w, const std::vector<double>&) {
    const auto clean = score_variants(model, streams[a], w, 1,
                                      [&](std::size_t, const SentenceWindow& sw, std::vector<int>& acts,
                                          std::vector<float>&) {
                                        for (std::size_t p = sw.start; p < sw.end; ++p) {
                                          acts.push_back(oracle_actions[a][streams[a].sentence_index_of_token[p + 1]]);
                                        }
                                        return false;
                                      });
    return clean.front();
  };
  ScanResult r = run_scan(model, streams, variants, fill, oracle_of, /*rank_oracle=*/false);
  r.sigma = sigma;
  return r;
}

double action_embedding_stddev(const lm::LanguageModel& model) {
  if (!model.has_adapter()) throw ValidationError("model has no adapter");
  std::set<const ad::Node*> seen;
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t l = model.first_adapted_layer(); l < model.config().n_layers; ++l) {
    const auto& t = model.action_table(l);
    if (!seen.insert(t.node()).second) continue;
    for (float x : t.data()) {
      sum += x;
      sq += static_cast<double>(x) * x;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  return std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean));
}

void write_curve_csv(const std::filesystem::path& path, std::span<const double> curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "rank,ppl\n";
  out.precision(17);
  for (std::size_t i = 0; i < curve.size(); ++i) out << i + 1 << ',' << curve[i] << '\n';
}

}  // namespace planlm::scan
