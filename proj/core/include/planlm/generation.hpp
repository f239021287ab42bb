#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "planlm/actions.hpp"
#include "planlm/corpus.hpp"
#include "planlm/encoder.hpp"
#include "planlm/lm.hpp"
#include "planlm/planner.hpp"

namespace planlm::generation {

using actions::ActionId;

enum class Mode { kConditional, kUnconditional };

struct GenerationConfig {
  std::size_t max_tokens = 128;
  /// 0 selects greedy decoding.
  double temperature = 1.0;
  std::size_t top_k = 40;
  std::uint64_t seed = 0;
  Mode mode = Mode::kConditional;
};

/// Source of the next action given the embeddings of the sentences so far.
class ActionPredictor {
 public:
  virtual ~ActionPredictor() = default;
  virtual ActionId predict(const planner::Context& context) = 0;
  std::size_t calls() const { return calls_; }

 protected:
  std::size_t calls_ = 0;
};

class PlannerPredictor : public ActionPredictor {
 public:
  explicit PlannerPredictor(const planner::PlannerModel& model) : model_(model) {}
  ActionId predict(const planner::Context& context) override;

 private:
  const planner::PlannerModel& model_;
};

class ConstantPredictor : public ActionPredictor {
 public:
  explicit ConstantPredictor(ActionId action) : action_(action) {}
  ActionId predict(const planner::Context&) override;

 private:
  ActionId action_;
};

/// Instrumentation. `on_step` sees the action conditioning each sampled
/// token (-1 when unconditioned) and the size of the window fed to the model.
struct GenerationHooks {
  std::function<void(std::size_t step, ActionId action, std::size_t window)> on_step;
  std::function<void()> on_planner_call;
};

struct GenerationRecord {
  std::vector<int> token_ids;  // generated text tokens only
  /// Everything appended to the model input, including action tokens in
  /// insert style.
  std::vector<int> model_ids;
  std::string text;
  /// Complete generated sentences and their actions. `planned_actions` is
  /// empty for the NONE regime, otherwise the same length as
  /// `realized_actions`.
  std::vector<std::string> sentences;
  std::vector<ActionId> planned_actions;
  std::vector<ActionId> realized_actions;
  /// Actions of the incomplete trailing sentence, when there is one.
  std::optional<ActionId> trailing_planned;
  std::optional<ActionId> trailing_realized;
  std::optional<double> plan_following_rate;
};

/// Text the generation continues from: a token stream (starting with <bos>)
/// plus the raw text of each of its sentences.
struct Prefix {
  corpus::TokenStream stream;
  std::vector<std::string> sentences;
  /// Actions for the prefix sentences; when empty they are produced the
  /// same way as during generation.
  std::vector<ActionId> sentence_actions;
};

/// Prefix made of the first `n_sentences` sentences of an article.
Prefix make_prefix(const corpus::Article& article, const corpus::Vocabulary& vocab, std::size_t n_sentences);
Prefix empty_prefix();

struct Generator {
  const lm::LanguageModel& model;
  lm::RegimeSpec spec;
  const actions::ActionSet& actions;
  const encoder::Encoder& encoder;
  const corpus::Vocabulary& vocab;
  /// Required for every regime except NONE and FIXED.
  ActionPredictor* predictor = nullptr;

  GenerationRecord generate(const Prefix& prefix, const GenerationConfig& config,
                            const GenerationHooks* hooks = nullptr) const;
};

/// Mean agreement of planned and realized actions; absent when empty.
std::optional<double> plan_following_rate(std::span<const ActionId> planned,
                                          std::span<const ActionId> realized);

/// Recomputes realized actions from the record's sentences.
std::optional<double> plan_following_rate(const GenerationRecord& record,
                                          const actions::ActionSet& actions,
                                          const encoder::Encoder& encoder);

/// Record for a real article replayed as if generated under `planned`.
GenerationRecord teacher_forced_record(std::span<const std::string> sentences,
                                       std::span<const ActionId> planned,
                                       const actions::ActionSet& actions,
                                       const encoder::Encoder& encoder);

/// Sentences of a token sequence under the incremental boundary rule; the
/// last entry may be an incomplete sentence.
struct TokenSentences {
  std::vector<std::string> complete;
  std::string trailing;
};
TokenSentences split_token_sentences(std::span<const int> ids, const corpus::Vocabulary& vocab);

/// Action sequence of a token sequence (complete sentences plus any
/// trailing fragment).
std::vector<ActionId> token_actions(std::span<const int> ids, const corpus::Vocabulary& vocab,
                                    const actions::ActionSet& actions, const encoder::Encoder& encoder);

}  // namespace planlm::generation
