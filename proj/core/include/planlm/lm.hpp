#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "planlm/actions.hpp"
#include "planlm/autodiff/checkpoint.hpp"
#include "planlm/corpus.hpp"
#include "planlm/matrix_io.hpp"
#include "planlm/nn.hpp"

namespace planlm::lm {

using actions::ActionId;

enum class Regime { kNone, kFixed, kOracle, kPredictedOA, kPredictedPA };
enum class Style { kAdapter, kInsert };
enum class Locus { kExternal, kInternal };

std::string to_string(Regime r);
std::string to_string(Style s);
std::string to_string(Locus l);
Regime parse_regime(std::string_view s);
Style parse_style(std::string_view s);
Locus parse_locus(std::string_view s);

struct RegimeSpec {
  Regime regime = Regime::kOracle;
  Style style = Style::kAdapter;
  Locus locus = Locus::kExternal;

  /// Throws ValidationError when INTERNAL is paired with ADAPTER.
  void validate() const;
  bool uses_planner() const {
    return regime == Regime::kPredictedOA || regime == Regime::kPredictedPA;
  }
};

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 256;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t ff_mult = 4;
  std::size_t context = 128;
  /// Adapted (last) layers; 0 means n_layers / 2.
  std::size_t adapted_layers = 0;
  /// One action table shared by all adapted layers.
  bool share_action_tables = false;
  /// Seed the action tables with the centroids.
  bool adapter_init_from_centroids = true;
  std::uint64_t seed = 0;

  std::size_t resolved_adapted_layers() const;
  void validate() const;
};

/// Per-position conditioning for the adapter. `actions[p]` is the action
/// applied at position p (already aligned to the sentence of token p+1).
/// `noise`, when set, is an [n, d] tensor added to every looked-up action
/// embedding in all adapted layers.
struct Conditioning {
  std::span<const int> actions;
  const ad::Tensor* noise = nullptr;
};

/// Decoder-only pre-LN transformer with learned positions, untied output
/// projection, and an optional action adapter in its last layers.
class LanguageModel {
 public:
  explicit LanguageModel(LmConfig config);

  const LmConfig& config() const { return config_; }
  std::size_t vocab_size() const { return config_.vocab_size; }

  /// Adds E_A (K x d) and W_A (d' x d) to each adapted layer. E_A is seeded
  /// from `centroids` when init is enabled, else Gaussian(0, 0.02).
  void attach_adapter(const Matrix& centroids);
  bool has_adapter() const { return num_actions_ > 0; }
  std::size_t num_actions() const { return num_actions_; }
  std::size_t action_dim() const { return action_dim_; }
  std::size_t first_adapted_layer() const;

  nn::ParamSet& base_params() { return base_; }
  const nn::ParamSet& base_params() const { return base_; }
  nn::ParamSet& adapter_params() { return adapter_; }
  const nn::ParamSet& adapter_params() const { return adapter_; }

  /// Action table and projection used by adapted layer `layer`.
  const ad::Tensor& action_table(std::size_t layer) const;
  const ad::Tensor& action_projection(std::size_t layer) const;

  /// Logits [n, V] for packed sequences. Each segment starts at position 0
  /// and must not exceed the context window. A null `cond` (or a model
  /// without adapter) runs the base LM.
  ad::Tensor forward(std::span<const int> tokens, std::span<const std::size_t> segment_lengths,
                     const Conditioning* cond = nullptr) const;

  /// Copy with input and output layers grown from V to V + extra rows; new
  /// rows are Gaussian(0, 0.02). The adapter is not carried over.
  LanguageModel extend_vocabulary(std::size_t extra, std::uint64_t seed) const;

  /// Deep copy with independent storage.
  LanguageModel clone() const;

  ad::Checkpoint to_checkpoint(const std::string& extra_meta_json = "{}") const;
  static LanguageModel from_checkpoint(const ad::Checkpoint& ckpt);

 private:
  void build_base(Rng& rng);

  LmConfig config_;
  nn::ParamSet base_;
  nn::ParamSet adapter_;
  ad::Tensor tok_, pos_, out_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_f_;
  std::vector<ad::Tensor> e_a_;
  std::vector<ad::Tensor> w_a_;
  std::size_t num_actions_ = 0;
  std::size_t action_dim_ = 0;
};

/// Action of the sentence containing token p+1 (the last sentence's action
/// when p+1 runs past the end).
ActionId select_action_for_position(const corpus::TokenStream& stream,
                                    std::span<const ActionId> sentence_actions, std::size_t p);

/// select_action_for_position for every position of the stream.
std::vector<int> position_actions(const corpus::TokenStream& stream,
                                  std::span<const ActionId> sentence_actions);

}  // namespace planlm::lm
