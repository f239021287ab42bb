#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "planlm/actions.hpp"
#include "planlm/autodiff/checkpoint.hpp"
#include "planlm/matrix_io.hpp"
#include "planlm/nn.hpp"

namespace planlm::planner {

using actions::ActionId;

enum class PlannerVariant {
  kTransformer,  // per-sentence encoding, positions, encoder, mean pooling
  kNoSentRep,    // mean of context embeddings followed by an MLP
};

struct PlannerConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ff_mult = 4;
  /// Most recent sentences kept as context.
  std::size_t max_context = 64;
  /// Copy the centroids into the output matrix at construction.
  bool init_from_centroids = true;
  PlannerVariant variant = PlannerVariant::kTransformer;
  std::uint64_t seed = 0;
};

/// Sentence embeddings preceding the position to predict, oldest first.
using Context = std::vector<std::span<const float>>;

class PlannerModel {
 public:
  /// `centroids` fixes K and d; it seeds W_o when init is enabled.
  PlannerModel(PlannerConfig config, const Matrix& centroids);

  const PlannerConfig& config() const { return config_; }
  std::size_t num_actions() const { return k_; }
  std::size_t dim() const { return d_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// Pre-softmax scores, one row per context.
  ad::Tensor logits(std::span<const Context> batch) const;
  std::vector<float> scores(const Context& context) const;
  std::vector<float> probabilities(const Context& context) const;
  ActionId predict(const Context& context) const;

  ad::Checkpoint to_checkpoint(const std::string& extra_meta_json = "{}") const;
  static PlannerModel from_checkpoint(const ad::Checkpoint& ckpt);

 private:
  PlannerModel(PlannerConfig config, std::size_t k, std::size_t d);
  void build(const Matrix* centroids);

  PlannerConfig config_;
  std::size_t k_ = 0;
  std::size_t d_ = 0;
  nn::ParamSet params_;
  ad::Tensor pos_, begin_, w_o_, b_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear mlp1_, mlp2_;
};

/// One article: sentence embeddings (rows) and their oracle actions.
struct PlannerArticle {
  Matrix embeddings;
  std::vector<ActionId> actions;
};

struct PlannerTrainConfig {
  float learning_rate = 1e-4f;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 20;
  /// Optional cap on optimizer steps per epoch (0 = full pass).
  std::size_t steps_per_epoch = 0;
  std::size_t patience = 3;
  float clip_norm = 1.0f;
  std::uint64_t seed = 0;
};

struct PlannerTrainResult {
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> val_loss;    // per evaluation
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
};

/// Cross-entropy training of a_i given z_1..z_{i-1} over every position.
/// Keeps the weights of the best validation evaluation.
PlannerTrainResult train_planner(PlannerModel& model, std::span<const PlannerArticle> train,
                                 std::span<const PlannerArticle> val,
                                 const PlannerTrainConfig& config);

struct PlannerMetrics {
  double accuracy = 0.0;
  double average_rank = 0.0;
  double cross_entropy = 0.0;
  std::size_t count = 0;
};

/// Accuracy and mean oracle rank (1 + number of strictly greater scores).
/// With `tie_noise` > 0, scores are perturbed by uniform noise in
/// [0, tie_noise) drawn from `seed` before ranking.
PlannerMetrics evaluate_planner(const PlannerModel& model, std::span<const PlannerArticle> data,
                                double tie_noise = 0.0, std::uint64_t seed = 0);

/// Rank of `target` under the strict-greater rule.
std::size_t oracle_rank(std::span<const float> scores, ActionId target);

/// Argmax prediction for every sentence from the embeddings of its
/// predecessors; the first comes from the begin context.
std::vector<ActionId> predict_actions_for_article(const PlannerModel& model, const Matrix& embeddings);

/// Context for predicting sentence `i` (rows 0..i-1 of `embeddings`).
Context context_before(const Matrix& embeddings, std::size_t i);

}  // namespace planlm::planner
