#include "planlm/generation.hpp"

#include <algorithm>
#include <cmath>

#include "planlm/errors.hpp"
#include "planlm/insert_style.hpp"
#include "planlm/rng.hpp"

namespace planlm::generation {
namespace {

using lm::Regime;
using lm::Style;

// Samples an id in [lo, hi) (never <bos>) from one row of logits.
int sample(std::span<const float> row, std::size_t lo, std::size_t hi, const GenerationConfig& cfg,
           Rng& rng) {
  std::vector<std::pair<float, int>> cand;
  cand.reserve(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    if (static_cast<int>(i) == corpus::kBos) continue;
    cand.emplace_back(row[i], static_cast<int>(i));
  }
  if (cand.empty()) throw ValidationError("no token available to sample");
  auto better = [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  };
  if (cfg.temperature <= 0.0) return std::min_element(cand.begin(), cand.end(), better)->second;
  const std::size_t k = cfg.top_k == 0 ? cand.size() : std::min(cfg.top_k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  cand.resize(k);
  std::vector<double> w(k);
  const double top = cand[0].first;
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp((cand[i].first - top) / cfg.temperature);
    z += w[i];
  }
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < k; ++i) {
    u -= w[i];
    if (u < 0.0) return cand[i].second;
  }
  return cand[k - 1].second;
}

planner::Context context_of(const std::vector<encoder::EmbeddingVector>& embeds, std::size_t n) {
  planner::Context c;
  c.reserve(n);
  for (std::size_t i = 0; i < n; ++i) c.emplace_back(embeds[i]);
  return c;
}

}  // namespace

ActionId PlannerPredictor::predict(const planner::Context& context) {
  ++calls_;
  return model_.predict(context);
}

ActionId ConstantPredictor::predict(const planner::Context&) {
  ++calls_;
  return action_;
}

Prefix make_prefix(const corpus::Article& article, const corpus::Vocabulary& vocab, std::size_t n_sentences) {
  auto spans = corpus::segment(article, vocab);
  if (n_sentences < spans.size()) spans.resize(n_sentences);
  Prefix p;
  p.stream = corpus::tokenize(article.id, spans);
  for (const auto& s : spans) p.sentences.push_back(article.text.substr(s.char_start, s.char_end - s.char_start));
  return p;
}

Prefix empty_prefix() {
  Prefix p;
  p.stream.token_ids = {corpus::kBos};
  p.stream.sentence_index_of_token = {0};
  return p;
}

GenerationRecord Generator::generate(const Prefix& prefix, const GenerationConfig& config,
                                     const GenerationHooks* hooks) const {
  spec.validate();
  const bool insert = spec.style == Style::kInsert;
  const bool internal = insert && spec.locus == lm::Locus::kInternal;
  const bool conditioned = !insert && spec.regime != Regime::kNone && model.has_adapter();
  const bool fixed = spec.regime == Regime::kFixed;
  const bool plans = spec.regime != Regime::kNone && !fixed && !internal;
  if (plans && predictor == nullptr) {
    throw ValidationError("regime '" + lm::to_string(spec.regime) + "' needs a planner for generation");
  }
  const std::size_t v = vocab.size();
  if (insert && model.vocab_size() <= v) throw ValidationError("insert-style generation needs action tokens");
  if (!insert && model.vocab_size() != v) {
    throw ValidationError("model vocabulary (" + std::to_string(model.vocab_size()) +
                          ") does not match the corpus vocabulary (" + std::to_string(v) + ")");
  }
  const std::size_t ctx = model.config().context;
  const std::size_t max_window = ctx > 1 ? ctx - 1 : 1;
  Rng rng(config.seed);

  std::vector<encoder::EmbeddingVector> embeds;
  for (const auto& s : prefix.sentences) embeds.push_back(encoder.embed(s));
  const std::size_t n_prefix = prefix.sentences.size();

  auto plan = [&](std::size_t n_context) -> ActionId {
    if (fixed) return 0;
    if (!plans) return -1;
    if (hooks && hooks->on_planner_call) hooks->on_planner_call();
    return predictor->predict(context_of(embeds, n_context));
  };

  std::vector<ActionId> sentence_action;
  if (!prefix.sentence_actions.empty()) {
    if (prefix.sentence_actions.size() != n_prefix) throw ValidationError("prefix actions do not match its sentences");
    sentence_action = prefix.sentence_actions;
  } else if (internal) {
    if (n_prefix > 0) sentence_action = lm::internal_actions(model, v, prefix.stream);
  } else {
    for (std::size_t j = 0; j < n_prefix; ++j) sentence_action.push_back(plan(j));
  }

  std::vector<int> seq;
  std::vector<std::size_t> sent_of;
  if (insert) {
    seq = lm::insert_style_sequence(prefix.stream, sentence_action, v);
  } else {
    seq.assign(prefix.stream.token_ids.begin(), prefix.stream.token_ids.end());
    sent_of = prefix.stream.sentence_index_of_token;
  }
  if (seq.empty()) throw ValidationError("generation prefix is empty");

  GenerationRecord rec;
  std::vector<int> current;
  std::size_t current_sentence = n_prefix;
  bool need_plan = true;
  ActionId current_action = -1;
  std::vector<int> window_actions;

  auto run = [&](std::size_t& window_len) {
    window_len = std::min(seq.size(), max_window);
    const std::size_t start = seq.size() - window_len;
    std::span<const int> window(seq.data() + start, window_len);
    ad::NoGradGuard guard;
    ad::Tensor logits;
    if (conditioned) {
      window_actions.resize(window_len);
      for (std::size_t p = start; p < seq.size(); ++p) {
        window_actions[p - start] = p + 1 < seq.size() ? sentence_action[sent_of[p + 1]] : current_action;
      }
      lm::Conditioning cond{window_actions, nullptr};
      logits = model.forward(window, std::span<const std::size_t>(&window_len, 1), &cond);
    } else {
      logits = model.forward(window, std::span<const std::size_t>(&window_len, 1));
    }
    const std::size_t width = model.vocab_size();
    const auto row = logits.data().subspan((window_len - 1) * width, width);
    return std::vector<float>(row.begin(), row.end());
  };

  for (std::size_t step = 0; step < config.max_tokens; ++step) {
    std::size_t window_len = 0;
    if (need_plan) {
      if (internal) {
        const auto row = run(window_len);
        current_action = sample(row, v, model.vocab_size(), config, rng) - static_cast<int>(v);
      } else {
        current_action = plan(embeds.size());
      }
      sentence_action.push_back(current_action);
      if (insert) {
        seq.push_back(current_action + static_cast<int>(v));
        rec.model_ids.push_back(seq.back());
      }
      need_plan = false;
    }
    const auto row = run(window_len);
    const int tok = sample(row, 0, v, config, rng);
    seq.push_back(tok);
    if (!insert) sent_of.push_back(current_sentence);
    rec.model_ids.push_back(tok);
    rec.token_ids.push_back(tok);
    current.push_back(tok);
    if (hooks && hooks->on_step) hooks->on_step(step, conditioned || insert || fixed ? current_action : -1, window_len);

    const std::string text = corpus::decode(current, vocab);
    if (corpus::ends_sentence(text)) {
      const auto emb = encoder.embed(text);
      rec.sentences.push_back(text);
      rec.realized_actions.push_back(actions::assign_action(emb, actions));
      if (spec.regime != Regime::kNone || insert) rec.planned_actions.push_back(current_action);
      embeds.push_back(emb);
      current.clear();
      ++current_sentence;
      need_plan = true;
    }
  }
  if (!current.empty()) {
    rec.trailing_realized = actions::assign_action(encoder.embed(corpus::decode(current, vocab)), actions);
    if (spec.regime != Regime::kNone || insert) rec.trailing_planned = current_action;
  }
  rec.text = corpus::decode(rec.token_ids, vocab);
  rec.plan_following_rate = plan_following_rate(rec.planned_actions, rec.realized_actions);
  return rec;
}

std::optional<double> plan_following_rate(std::span<const ActionId> planned,
                                          std::span<const ActionId> realized) {
  if (planned.empty() || planned.size() != realized.size()) return std::nullopt;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < planned.size(); ++i) hit += planned[i] == realized[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(planned.size());
}

std::optional<double> plan_following_rate(const GenerationRecord& record,
                                          const actions::ActionSet& actions,
                                          const encoder::Encoder& encoder) {
  std::vector<ActionId> realized;
  for (const auto& s : record.sentences) realized.push_back(actions::assign_action(encoder.embed(s), actions));
  return plan_following_rate(record.planned_actions, realized);
}

GenerationRecord teacher_forced_record(std::span<const std::string> sentences,
                                       std::span<const ActionId> planned,
                                       const actions::ActionSet& actions,
                                       const encoder::Encoder& encoder) {
  if (sentences.size() != planned.size()) throw ValidationError("one planned action per sentence required");
  GenerationRecord rec;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    rec.sentences.emplace_back(sentences[i]);
    rec.planned_actions.push_back(planned[i]);
    rec.realized_actions.push_back(actions::assign_action(encoder.embed(sentences[i]), actions));
    if (i) rec.text += ' ';
    rec.text += sentences[i];
  }
  rec.plan_following_rate = plan_following_rate(rec.planned_actions, rec.realized_actions);
  return rec;
}

TokenSentences split_token_sentences(std::span<const int> ids, const corpus::Vocabulary& vocab) {
  TokenSentences out;
  std::vector<int> current;
  for (int id : ids) {
    if (id == corpus::kBos) continue;
    current.push_back(id);
    std::string text = corpus::decode(current, vocab);
    if (corpus::ends_sentence(text)) {
      out.complete.push_back(std::move(text));
      current.clear();
    }
  }
  if (!current.empty()) out.trailing = corpus::decode(current, vocab);
  return out;
}

std::vector<ActionId> token_actions(std::span<const int> ids, const corpus::Vocabulary& vocab,
                                    const actions::ActionSet& actions, const encoder::Encoder& encoder) {
  const auto parts = split_token_sentences(ids, vocab);
  std::vector<ActionId> out;
  for (const auto& s : parts.complete) out.push_back(actions::assign_action(encoder.embed(s), actions));
  if (!parts.trailing.empty()) out.push_back(actions::assign_action(encoder.embed(parts.trailing), actions));
  return out;
}

}  // namespace planlm::generation
