#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "planlm/corpus.hpp"
#include "planlm/lm.hpp"

namespace planlm::lm {

/// One token sequence for training or scoring.
struct LmDocument {
  std::string id;
  std::vector<int> tokens;
  /// Action at each position; empty for unconditioned use.
  std::vector<int> actions;
  /// 1 where the token counts as a prediction target; empty means all.
  std::vector<std::uint8_t> target_mask;
};

/// Plain documents from token streams; with `sentence_actions` (one list per
/// stream) each position gets the action of the sentence of token p+1.
std::vector<LmDocument> make_documents(std::span<const corpus::TokenStream> streams,
                                       const std::vector<std::vector<ActionId>>* sentence_actions = nullptr);

/// Same documents with every action replaced by `action`.
std::vector<LmDocument> with_constant_action(std::span<const LmDocument> docs, int action);

struct LmTrainConfig {
  float learning_rate = 1e-4f;
  std::size_t batch_size = 32;
  std::size_t max_steps = 1000;
  /// Validation interval in steps; 0 disables early stopping.
  std::size_t eval_every = 0;
  std::size_t patience = 3;
  float clip_norm = 1.0f;
  std::uint64_t seed = 0;
};

struct LmTrainResult {
  std::vector<double> train_loss;  // per step
  std::vector<double> val_ppl;     // per evaluation
  std::size_t best_step = 0;
  std::size_t steps = 0;
};

struct PerplexityResult {
  double nll_sum = 0.0;
  std::size_t tokens = 0;
  double mean_nll() const { return tokens ? nll_sum / static_cast<double>(tokens) : 0.0; }
  double ppl() const;
};

/// Sliding-window perplexity: windows of the context size with stride
/// context/2; after the first window only the second half of each window is
/// scored. Masked targets are skipped. Uses document actions when
/// `conditioned`.
PerplexityResult perplexity(const LanguageModel& model, std::span<const LmDocument> docs,
                            bool conditioned);

/// Next-token training of all base parameters, no actions, fixed step budget.
LmTrainResult pretrain_base(LanguageModel& model, std::span<const LmDocument> train,
                            std::span<const LmDocument> val, const LmTrainConfig& config);

/// Trains only the adapter; base weights stay frozen. Early stopping on
/// validation perplexity keeps the best adapter.
LmTrainResult finetune_adapter(LanguageModel& model, std::span<const LmDocument> train,
                               std::span<const LmDocument> val, const LmTrainConfig& config);

/// Trains every parameter (insert style).
LmTrainResult finetune_full(LanguageModel& model, std::span<const LmDocument> train,
                            std::span<const LmDocument> val, const LmTrainConfig& config);

}  // namespace planlm::lm
