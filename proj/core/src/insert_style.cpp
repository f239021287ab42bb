#include "planlm/insert_style.hpp"

#include <algorithm>

#include "planlm/errors.hpp"

namespace planlm::lm {

std::vector<int> insert_style_sequence(const corpus::TokenStream& stream,
                                       std::span<const ActionId> sentence_actions, std::size_t vocab_size) {
  if (stream.sentence_index_of_token.size() != stream.token_ids.size()) {
    throw ValidationError("token stream '" + stream.article_id + "' is misaligned");
  }
  std::vector<int> out;
  out.reserve(stream.token_ids.size() + sentence_actions.size());
  std::size_t next_sentence = 0;
  for (std::size_t i = 0; i < stream.token_ids.size(); ++i) {
    const int tok = stream.token_ids[i];
    const std::size_t s = stream.sentence_index_of_token[i];
    if (!(i == 0 && tok == corpus::kBos) && s >= next_sentence) {
      if (s >= sentence_actions.size()) {
        throw ValidationError("no action for sentence " + std::to_string(s) + " of '" +
                              stream.article_id + "'");
      }
      out.push_back(sentence_actions[s] + static_cast<int>(vocab_size));
      next_sentence = s + 1;
    }
    out.push_back(tok);
  }
  return out;
}

Deinterleaved deinterleave(std::span<const int> ids, std::size_t vocab_size) {
  Deinterleaved d;
  for (int id : ids) {
    if (is_action_token(id, vocab_size)) {
      d.actions.push_back(id - static_cast<int>(vocab_size));
    } else {
      d.tokens.push_back(id);
    }
  }
  return d;
}

LmDocument insert_document(const corpus::TokenStream& stream, std::span<const ActionId> sentence_actions,
                           std::size_t vocab_size, Locus locus, bool score_actions) {
  LmDocument doc;
  doc.id = stream.article_id;
  doc.tokens = insert_style_sequence(stream, sentence_actions, vocab_size);
  const bool mask_actions = locus == Locus::kExternal || !score_actions;
  if (mask_actions) {
    doc.target_mask.resize(doc.tokens.size());
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
      doc.target_mask[i] = is_action_token(doc.tokens[i], vocab_size) ? 0 : 1;
    }
  }
  return doc;
}

LanguageModel finetune_insert(const LanguageModel& base, std::size_t num_actions, Locus locus,
                              std::span<const corpus::TokenStream> train,
                              const std::vector<std::vector<ActionId>>& train_actions,
                              std::span<const corpus::TokenStream> val,
                              const std::vector<std::vector<ActionId>>& val_actions,
                              const LmTrainConfig& config, LmTrainResult* result) {
  if (train_actions.size() != train.size() || val_actions.size() != val.size()) {
    throw ValidationError("insert-style finetuning needs one action list per article");
  }
  const std::size_t v = base.vocab_size();
  LanguageModel model = base.extend_vocabulary(num_actions, base.config().seed ^ 0x696e73657274ULL);
  std::vector<LmDocument> train_docs, val_docs;
  for (std::size_t i = 0; i < train.size(); ++i) {
    train_docs.push_back(insert_document(train[i], train_actions[i], v, locus));
  }
  // Validation always scores text tokens only so both loci are comparable.
  for (std::size_t i = 0; i < val.size(); ++i) {
    val_docs.push_back(insert_document(val[i], val_actions[i], v, Locus::kExternal));
  }
  auto r = finetune_full(model, train_docs, val_docs, config);
  if (result != nullptr) *result = std::move(r);
  return model;
}

std::vector<ActionId> internal_actions(const LanguageModel& model, std::size_t base_vocab,
                                       const corpus::TokenStream& stream) {
  const std::size_t total = model.vocab_size();
  if (total <= base_vocab) throw ValidationError("model has no action tokens");
  const std::size_t ctx = model.config().context;
  std::vector<ActionId> chosen;
  std::vector<int> seq;
  ad::NoGradGuard guard;
  std::size_t next_sentence = 0;
  for (std::size_t i = 0; i < stream.token_ids.size(); ++i) {
    const int tok = stream.token_ids[i];
    const std::size_t s = stream.sentence_index_of_token[i];
    if (!(i == 0 && tok == corpus::kBos) && s >= next_sentence) {
      ActionId a = 0;
      if (!seq.empty()) {
        const std::size_t start = seq.size() > ctx ? seq.size() - ctx : 0;
        std::span<const int> window(seq.data() + start, seq.size() - start);
        const std::size_t len = window.size();
        const auto logits = model.forward(window, std::span<const std::size_t>(&len, 1));
        const auto last = logits.data().subspan((len - 1) * total, total);
        a = static_cast<ActionId>(std::max_element(last.begin() + static_cast<std::ptrdiff_t>(base_vocab), last.end()) -
                                  (last.begin() + static_cast<std::ptrdiff_t>(base_vocab)));
      }
      chosen.push_back(a);
      seq.push_back(a + static_cast<int>(base_vocab));
      next_sentence = s + 1;
    }
    seq.push_back(tok);
  }
  return chosen;
}

PerplexityResult insert_perplexity(const LanguageModel& model, std::size_t base_vocab, Locus locus,
                                   std::span<const corpus::TokenStream> streams,
                                   const std::vector<std::vector<ActionId>>* actions) {
  std::vector<LmDocument> docs;
  docs.reserve(streams.size());
  for (std::size_t i = 0; i < streams.size(); ++i) {
    std::vector<ActionId> acts;
    if (locus == Locus::kInternal) {
      acts = internal_actions(model, base_vocab, streams[i]);
    } else {
      if (actions == nullptr || actions->size() != streams.size()) {
        throw ValidationError("external insert-style scoring needs one action list per article");
      }
      acts = (*actions)[i];
    }
    docs.push_back(insert_document(streams[i], acts, base_vocab, Locus::kExternal));
  }
  return perplexity(model, docs, /*conditioned=*/false);
}

}  // namespace planlm::lm
