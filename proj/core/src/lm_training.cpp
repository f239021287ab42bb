#include "planlm/lm_training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "planlm/autodiff/optimizer.hpp"
#include "planlm/errors.hpp"
#include "planlm/rng.hpp"

namespace planlm::lm {
namespace {

using ad::Tensor;

// A slice of one document: inputs [start, start+len), targets shifted by one.
// Targets before `score_from` are not counted.
struct Window {
  std::size_t doc;
  std::size_t start;
  std::size_t len;
  std::size_t score_from;
};

bool scored(const LmDocument& d, std::size_t token) {
  return d.target_mask.empty() || d.target_mask[token] != 0;
}

void check_document(const LmDocument& d, bool conditioned) {
  if (!d.target_mask.empty() && d.target_mask.size() != d.tokens.size()) {
    throw ValidationError("document '" + d.id + "' target mask does not match its tokens");
  }
  if (conditioned && d.actions.size() != d.tokens.size()) {
    throw ValidationError("document '" + d.id + "' has " + std::to_string(d.actions.size()) +
                          " actions for " + std::to_string(d.tokens.size()) + " tokens");
  }
}

std::vector<Window> training_windows(std::span<const LmDocument> docs, std::size_t context) {
  std::vector<Window> out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const std::size_t n_targets = docs[i].tokens.size() > 0 ? docs[i].tokens.size() - 1 : 0;
    for (std::size_t s = 0; s < n_targets; s += context) {
      out.push_back({i, s, std::min(context, n_targets - s), s});
    }
  }
  return out;
}

std::vector<Window> eval_windows(std::span<const LmDocument> docs, std::size_t context) {
  std::vector<Window> out;
  const std::size_t stride = std::max<std::size_t>(1, context / 2);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const std::size_t n_targets = docs[i].tokens.size() > 0 ? docs[i].tokens.size() - 1 : 0;
    std::size_t scored_until = 0;
    for (std::size_t s = 0; scored_until < n_targets; s += stride) {
      const std::size_t end = std::min(s + context, n_targets);
      out.push_back({i, s, end - s, scored_until});
      scored_until = end;
    }
  }
  return out;
}

struct Packed {
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<int> actions;
  std::vector<std::size_t> lengths;
};

void pack(std::span<const LmDocument> docs, std::span<const Window> windows, bool conditioned,
          Packed& out) {
  out.tokens.clear();
  out.targets.clear();
  out.actions.clear();
  out.lengths.clear();
  for (const auto& w : windows) {
    const auto& d = docs[w.doc];
    for (std::size_t p = w.start; p < w.start + w.len; ++p) {
      out.tokens.push_back(d.tokens[p]);
      const bool count = p >= w.score_from && scored(d, p + 1);
      out.targets.push_back(count ? d.tokens[p + 1] : -1);
      if (conditioned) out.actions.push_back(d.actions[p]);
    }
    out.lengths.push_back(w.len);
  }
}

Tensor batch_logits(const LanguageModel& model, const Packed& b, bool conditioned) {
  if (!conditioned) return model.forward(b.tokens, b.lengths);
  Conditioning cond{b.actions, nullptr};
  return model.forward(b.tokens, b.lengths, &cond);
}

LmTrainResult train_loop(LanguageModel& model, nn::ParamSet& trainable, bool conditioned,
                         std::span<const LmDocument> train, std::span<const LmDocument> val,
                         const LmTrainConfig& config) {
  if (config.batch_size == 0) throw ValidationError("LM batch_size must be >= 1");
  for (const auto& d : train) check_document(d, conditioned);
  for (const auto& d : val) check_document(d, conditioned);
  auto windows = training_windows(train, model.config().context);
  LmTrainResult result;
  if (windows.empty() || config.max_steps == 0) return result;

  ad::Adam opt(trainable.tensors(), {config.learning_rate, 0.9f, 0.999f, 1e-8f, config.clip_norm});
  Rng rng(config.seed);
  rng.shuffle(windows);
  std::size_t cursor = 0;
  double best = std::numeric_limits<double>::infinity();
  auto best_weights = trainable.snapshot();
  std::size_t since_best = 0;
  Packed batch;

  while (result.steps < config.max_steps) {
    if (cursor + config.batch_size > windows.size()) {
      rng.shuffle(windows);
      cursor = 0;
    }
    const std::size_t n = std::min(config.batch_size, windows.size() - cursor);
    pack(train, std::span<const Window>(windows).subspan(cursor, n), conditioned, batch);
    cursor += n;
    Tensor loss = ad::cross_entropy(batch_logits(model, batch, conditioned), batch.targets);
    ad::backward(loss);
    opt.step();
    result.train_loss.push_back(loss.item());
    ++result.steps;

    if (config.eval_every > 0 && !val.empty() &&
        (result.steps % config.eval_every == 0 || result.steps == config.max_steps)) {
      const double v = perplexity(model, val, conditioned).ppl();
      result.val_ppl.push_back(v);
      if (v < best) {
        best = v;
        best_weights = trainable.snapshot();
        result.best_step = result.steps;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
  }
  if (config.eval_every > 0 && !val.empty()) {
    trainable.restore(best_weights);
  } else {
    result.best_step = result.steps;
  }
  return result;
}

}  // namespace

double PerplexityResult::ppl() const {
  return tokens ? std::exp(mean_nll()) : std::numeric_limits<double>::quiet_NaN();
}

std::vector<LmDocument> make_documents(std::span<const corpus::TokenStream> streams,
                                       const std::vector<std::vector<ActionId>>* sentence_actions) {
  if (sentence_actions != nullptr && sentence_actions->size() != streams.size()) {
    throw ValidationError("action lists (" + std::to_string(sentence_actions->size()) +
                          ") do not match token streams (" + std::to_string(streams.size()) + ")");
  }
  std::vector<LmDocument> docs;
  docs.reserve(streams.size());
  for (std::size_t i = 0; i < streams.size(); ++i) {
    LmDocument d;
    d.id = streams[i].article_id;
    d.tokens.assign(streams[i].token_ids.begin(), streams[i].token_ids.end());
    if (sentence_actions != nullptr) d.actions = position_actions(streams[i], (*sentence_actions)[i]);
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<LmDocument> with_constant_action(std::span<const LmDocument> docs, int action) {
  std::vector<LmDocument> out(docs.begin(), docs.end());
  for (auto& d : out) d.actions.assign(d.tokens.size(), action);
  return out;
}

PerplexityResult perplexity(const LanguageModel& model, std::span<const LmDocument> docs,
                            bool conditioned) {
  conditioned = conditioned && model.has_adapter();
  for (const auto& d : docs) check_document(d, conditioned);
  const auto windows = eval_windows(docs, model.config().context);
  PerplexityResult r;
  ad::NoGradGuard guard;
  Packed batch;
  constexpr std::size_t kWindowsPerBatch = 32;
  for (std::size_t start = 0; start < windows.size(); start += kWindowsPerBatch) {
    const std::size_t n = std::min(kWindowsPerBatch, windows.size() - start);
    pack(docs, std::span<const Window>(windows).subspan(start, n), conditioned, batch);
    const auto nll = ad::row_nll(batch_logits(model, batch, conditioned), batch.targets);
    for (std::size_t i = 0; i < nll.size(); ++i) {
      if (batch.targets[i] < 0) continue;
      r.nll_sum += nll[i];
      ++r.tokens;
    }
  }
  return r;
}

LmTrainResult pretrain_base(LanguageModel& model, std::span<const LmDocument> train,
                            std::span<const LmDocument> val, const LmTrainConfig& config) {
  model.base_params().set_trainable(true);
  model.adapter_params().set_trainable(false);
  auto result = train_loop(model, model.base_params(), /*conditioned=*/false, train, val, config);
  return result;
}

LmTrainResult finetune_adapter(LanguageModel& model, std::span<const LmDocument> train,
                               std::span<const LmDocument> val, const LmTrainConfig& config) {
  if (!model.has_adapter()) throw ValidationError("finetune_adapter needs an attached adapter");
  model.base_params().set_trainable(false);
  model.adapter_params().set_trainable(true);
  auto result = train_loop(model, model.adapter_params(), /*conditioned=*/true, train, val, config);
  model.adapter_params().set_trainable(false);
  return result;
}

LmTrainResult finetune_full(LanguageModel& model, std::span<const LmDocument> train,
                            std::span<const LmDocument> val, const LmTrainConfig& config) {
  model.base_params().set_trainable(true);
  model.adapter_params().set_trainable(false);
  return train_loop(model, model.base_params(), /*conditioned=*/false, train, val, config);
}

}  // namespace planlm::lm
