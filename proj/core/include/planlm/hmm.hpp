#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace planlm::hmm {

/// Discrete HMM over action symbols. Probabilities are stored row-major.
struct HmmCritic {
  std::size_t n_states = 0;
  std::size_t n_symbols = 0;
  std::vector<double> initial;     // N
  std::vector<double> transition;  // N x N
  std::vector<double> emission;    // N x K
  /// Total training log-likelihood after each EM iteration.
  std::vector<double> log_likelihood_trace;

  double trans(std::size_t i, std::size_t j) const { return transition[i * n_states + j]; }
  double emit(std::size_t i, std::size_t k) const { return emission[i * n_symbols + k]; }
};

/// Log-space forward algorithm: log p(sequence).
double log_likelihood(const HmmCritic& critic, std::span<const int> sequence);

/// Baum-Welch in log space from a Dirichlet(1) random start. Each M-step adds
/// 1e-6 to expected counts before normalizing. Stops after max_iters or when
/// the per-symbol log-likelihood gain drops below 1e-6.
HmmCritic hmm_fit(std::span<const std::vector<int>> sequences, std::size_t n_states,
                  std::size_t n_symbols, std::uint64_t seed, std::size_t max_iters = 100);

/// exp(-log p / T); absent for an empty sequence.
std::optional<double> latent_perplexity(const HmmCritic& critic, std::span<const int> sequence);

}  // namespace planlm::hmm
