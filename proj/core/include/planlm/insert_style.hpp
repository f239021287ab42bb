#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "planlm/corpus.hpp"
#include "planlm/lm.hpp"
#include "planlm/lm_training.hpp"

namespace planlm::lm {

/// Interleaves action tokens (a + V) before the first token of each
/// sentence. A leading <bos> stays in front.
std::vector<int> insert_style_sequence(const corpus::TokenStream& stream,
                                       std::span<const ActionId> sentence_actions, std::size_t vocab_size);

struct Deinterleaved {
  std::vector<int> tokens;
  std::vector<ActionId> actions;
};

/// Splits an extended-id sequence back into text tokens and actions.
Deinterleaved deinterleave(std::span<const int> ids, std::size_t vocab_size);

inline bool is_action_token(int id, std::size_t vocab_size) {
  return id >= 0 && static_cast<std::size_t>(id) >= vocab_size;
}

/// Insert-style training/scoring document. EXTERNAL masks the action-token
/// targets; INTERNAL scores every target when `score_actions` is set.
LmDocument insert_document(const corpus::TokenStream& stream, std::span<const ActionId> sentence_actions,
                           std::size_t vocab_size, Locus locus, bool score_actions = true);

/// Builds the insert-style model from a base LM (V + K rows) and finetunes
/// every parameter. INTERNAL trains on oracle actions with action targets
/// scored; EXTERNAL trains on the supplied actions with them masked.
LanguageModel finetune_insert(const LanguageModel& base, std::size_t num_actions, Locus locus,
                              std::span<const corpus::TokenStream> train,
                              const std::vector<std::vector<ActionId>>& train_actions,
                              std::span<const corpus::TokenStream> val,
                              const std::vector<std::vector<ActionId>>& val_actions,
                              const LmTrainConfig& config, LmTrainResult* result = nullptr);

/// Text-token perplexity of an insert-style model. EXTERNAL uses the given
/// actions; INTERNAL lets the model choose each action greedily among the
/// action ids at every sentence start.
PerplexityResult insert_perplexity(const LanguageModel& model, std::size_t base_vocab, Locus locus,
                                   std::span<const corpus::TokenStream> streams,
                                   const std::vector<std::vector<ActionId>>* actions);

/// Greedy self-predicted actions of an INTERNAL insert model for one stream.
std::vector<ActionId> internal_actions(const LanguageModel& model, std::size_t base_vocab,
                                       const corpus::TokenStream& stream);

}  // namespace planlm::lm
