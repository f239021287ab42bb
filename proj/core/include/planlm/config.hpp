#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "planlm/encoder.hpp"
#include "planlm/generation.hpp"
#include "planlm/lm.hpp"
#include "planlm/lm_training.hpp"
#include "planlm/planner.hpp"

namespace planlm {

/// Every knob of a pipeline run. Text form is `key = value` per line with
/// `#` comments; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 42;

  // corpus
  std::size_t vocab_size = 20000;
  std::size_t n_val = 100;
  std::size_t n_test = 100;

  // encoder
  std::size_t encoder_dim = 256;
  std::size_t ngram_order = 3;
  std::size_t hash_buckets = std::size_t{1} << 18;
  std::uint64_t projection_seed = 0;

  // actions
  std::size_t k = 64;
  std::size_t kmeans_max_iters = 300;
  std::size_t kmeans_restarts = 1;  // best-inertia of this many runs

  // planner
  std::size_t planner_layers = 2;
  std::size_t planner_heads = 4;
  std::size_t planner_max_context = 64;
  bool planner_init_from_centroids = true;
  std::string planner_variant = "transformer";
  double planner_lr = 1e-4;
  std::size_t planner_batch = 32;
  std::size_t planner_max_epochs = 20;
  std::size_t planner_steps_per_epoch = 0;
  std::size_t planner_patience = 3;

  // language model
  std::size_t lm_dim = 256;
  std::size_t lm_layers = 4;
  std::size_t lm_heads = 4;
  std::size_t lm_context = 128;
  std::size_t lm_adapted_layers = 0;  // 0 = lm_layers / 2
  bool lm_share_action_tables = false;
  bool adapter_init_from_centroids = true;
  double pretrain_lr = 5e-4;
  std::size_t pretrain_batch = 32;
  std::size_t pretrain_steps = 2000;
  double finetune_lr = 1e-4;
  std::size_t finetune_batch = 32;
  std::size_t finetune_steps = 2000;
  std::size_t finetune_eval_every = 200;
  std::size_t finetune_patience = 3;
  double clip_norm = 1.0;

  // generation and evaluation
  std::vector<std::size_t> lengths = {32, 64, 128};
  std::size_t edit_base_len = 128;
  double temperature = 1.0;
  std::size_t top_k = 40;
  std::size_t eval_articles = 100;
  std::size_t uncond_samples = 20;
  std::size_t uncond_tokens = 128;
  std::size_t hmm_states = 16;
  std::size_t hmm_max_iters = 100;
  std::size_t scan_articles = 20;
  std::size_t noise_variants = 0;  // 0 = k

  // selectors, not part of the digest
  std::string regime = "oracle";
  std::string style = "adapter";
  std::string locus = "external";

  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  /// All keys in canonical order.
  static const std::vector<std::string>& keys();
  static bool is_selector(std::string_view key);

  /// Throws ValidationError on inconsistent values.
  void validate() const;

  /// `key = value` lines for every key.
  std::string to_text() const;
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  /// 16 hex digits of FNV-1a over the canonical text of all non-selector keys.
  std::string digest() const;

  lm::RegimeSpec regime_spec() const;
  encoder::EncoderConfig encoder_config() const;
  planner::PlannerConfig planner_config() const;
  planner::PlannerTrainConfig planner_train_config() const;
  lm::LmConfig lm_config(std::size_t vocab) const;
  lm::LmTrainConfig pretrain_config() const;
  lm::LmTrainConfig finetune_config() const;
  generation::GenerationConfig generation_config(std::size_t max_tokens, std::uint64_t seed) const;
};

}  // namespace planlm
