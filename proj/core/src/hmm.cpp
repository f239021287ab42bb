#include "planlm/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "planlm/errors.hpp"
#include "planlm/rng.hpp"

namespace planlm::hmm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kSmoothing = 1e-6;

double log_sum_exp(const double* v, std::size_t n) {
  double mx = kNegInf;
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

std::vector<double> to_log(const std::vector<double>& p) {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] > 0.0 ? std::log(p[i]) : kNegInf;
  return out;
}

void dirichlet_row(Rng& rng, double* row, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    row[i] = -std::log(u);
    s += row[i];
  }
  for (std::size_t i = 0; i < n; ++i) row[i] /= s;
}

void check_symbols(std::span<const int> seq, std::size_t k) {
  for (int s : seq) {
    if (s < 0 || static_cast<std::size_t>(s) >= k) {
      throw ValidationError("symbol " + std::to_string(s) + " outside [0, " + std::to_string(k) + ")");
    }
  }
}

// log alpha, T x N.
double forward(const std::vector<double>& log_pi, const std::vector<double>& log_a,
               const std::vector<double>& log_b, std::size_t n, std::size_t k,
               std::span<const int> seq, std::vector<double>& alpha) {
  const std::size_t t_len = seq.size();
  alpha.assign(t_len * n, kNegInf);
  std::vector<double> tmp(n);
  for (std::size_t i = 0; i < n; ++i) alpha[i] = log_pi[i] + log_b[i * k + static_cast<std::size_t>(seq[0])];
  for (std::size_t t = 1; t < t_len; ++t) {
    const double* prev = alpha.data() + (t - 1) * n;
    double* cur = alpha.data() + t * n;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) tmp[i] = prev[i] + log_a[i * n + j];
      cur[j] = log_sum_exp(tmp.data(), n) + log_b[j * k + static_cast<std::size_t>(seq[t])];
    }
  }
  return log_sum_exp(alpha.data() + (t_len - 1) * n, n);
}

void backward(const std::vector<double>& log_a, const std::vector<double>& log_b, std::size_t n,
              std::size_t k, std::span<const int> seq, std::vector<double>& beta) {
  const std::size_t t_len = seq.size();
  beta.assign(t_len * n, 0.0);
  std::vector<double> tmp(n);
  for (std::size_t t = t_len - 1; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * n;
    double* cur = beta.data() + t * n;
    const std::size_t sym = static_cast<std::size_t>(seq[t + 1]);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) tmp[j] = log_a[i * n + j] + log_b[j * k + sym] + next[j];
      cur[i] = log_sum_exp(tmp.data(), n);
    }
  }
}

void normalize_rows(std::vector<double>& m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] /= s;
  }
}

}  // namespace

double log_likelihood(const HmmCritic& critic, std::span<const int> sequence) {
  if (sequence.empty()) return 0.0;
  check_symbols(sequence, critic.n_symbols);
  std::vector<double> alpha;
  return forward(to_log(critic.initial), to_log(critic.transition), to_log(critic.emission),
                 critic.n_states, critic.n_symbols, sequence, alpha);
}

HmmCritic hmm_fit(std::span<const std::vector<int>> sequences, std::size_t n_states,
                  std::size_t n_symbols, std::uint64_t seed, std::size_t max_iters) {
  if (n_states == 0 || n_symbols == 0) throw ValidationError("HMM needs N >= 1 and K >= 1");
  std::size_t total_symbols = 0;
  for (const auto& s : sequences) {
    check_symbols(s, n_symbols);
    total_symbols += s.size();
  }
  if (total_symbols == 0) throw ValidationError("HMM training needs at least one nonempty sequence");

  const std::size_t n = n_states, k = n_symbols;
  HmmCritic c;
  c.n_states = n;
  c.n_symbols = k;
  c.initial.resize(n);
  c.transition.resize(n * n);
  c.emission.resize(n * k);
  Rng rng(seed);
  dirichlet_row(rng, c.initial.data(), n);
  for (std::size_t i = 0; i < n; ++i) dirichlet_row(rng, c.transition.data() + i * n, n);
  for (std::size_t i = 0; i < n; ++i) dirichlet_row(rng, c.emission.data() + i * k, k);

  std::vector<double> alpha, beta;
  double previous = kNegInf;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    const auto log_pi = to_log(c.initial);
    const auto log_a = to_log(c.transition);
    const auto log_b = to_log(c.emission);
    std::vector<double> pi_acc(n, kSmoothing), a_acc(n * n, kSmoothing), b_acc(n * k, kSmoothing);
    double total_ll = 0.0;

    for (const auto& seq : sequences) {
      if (seq.empty()) continue;
      const double ll = forward(log_pi, log_a, log_b, n, k, seq, alpha);
      backward(log_a, log_b, n, k, seq, beta);
      total_ll += ll;
      const std::size_t t_len = seq.size();
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t sym = static_cast<std::size_t>(seq[t]);
        for (std::size_t i = 0; i < n; ++i) {
          const double g = std::exp(alpha[t * n + i] + beta[t * n + i] - ll);
          if (t == 0) pi_acc[i] += g;
          b_acc[i * k + sym] += g;
        }
        if (t + 1 == t_len) continue;
        const std::size_t next_sym = static_cast<std::size_t>(seq[t + 1]);
        for (std::size_t i = 0; i < n; ++i) {
          const double ai = alpha[t * n + i];
          for (std::size_t j = 0; j < n; ++j) {
            a_acc[i * n + j] +=
                std::exp(ai + log_a[i * n + j] + log_b[j * k + next_sym] + beta[(t + 1) * n + j] - ll);
          }
        }
      }
    }
    c.log_likelihood_trace.push_back(total_ll);
    c.initial = pi_acc;
    normalize_rows(c.initial, 1, n);
    c.transition = a_acc;
    normalize_rows(c.transition, n, n);
    c.emission = b_acc;
    normalize_rows(c.emission, n, k);

    if (iter > 0 && (total_ll - previous) / static_cast<double>(total_symbols) < 1e-6) break;
    previous = total_ll;
  }
  return c;
}

std::optional<double> latent_perplexity(const HmmCritic& critic, std::span<const int> sequence) {
  if (sequence.empty()) return std::nullopt;
  return std::exp(-log_likelihood(critic, sequence) / static_cast<double>(sequence.size()));
}

}  // namespace planlm::hmm
