#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "planlm/actions.hpp"
#include "planlm/config.hpp"
#include "planlm/lm.hpp"
#include "planlm/planner.hpp"
#include "planlm/scan.hpp"

namespace planlm::pipeline {

/// Quantitative summary of one regime.
struct EvalReport {
  std::string regime;
  std::string style;
  std::string locus;
  std::string config_digest;
  std::uint64_t seed = 0;
  double val_ppl = 0.0;
  double ppl = 0.0;  // test split
  std::vector<std::size_t> lengths;
  std::vector<double> rouge2;  // per length
  double rouge2_mean = 0.0;
  std::vector<double> edit;  // normalized, per length
  double edit_mean = 0.0;
  std::optional<double> latent_ppl;
  std::optional<double> plan_following_rate;
  std::optional<double> planner_accuracy;
  std::optional<double> planner_average_rank;
  std::size_t planner_invocations = 0;
  std::size_t conditional_samples = 0;
  std::size_t unconditional_samples = 0;

  /// Pretty JSON; throws ValidationError when a value is not finite.
  std::string to_json() const;
};

struct ScanReport {
  scan::ScanResult oracle;
  scan::ScanResult noise;
};

struct SweepRow {
  std::size_t k = 0;
  double val_ppl = 0.0;
  double test_ppl = 0.0;
  double accuracy = 0.0;
  double average_rank = 0.0;
};

/// Artifact directory of one pipeline run. Every stage reads its inputs from
/// and writes its outputs to this directory, and records a manifest under
/// `manifests/`. Upstream artifacts produced under a different config digest
/// are refused unless `force` is set.
class Workspace {
 public:
  Workspace(std::filesystem::path dir, RunConfig config, bool force = false);

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& rel) const { return dir_ / rel; }
  /// Like path(), creating the parent directory first.
  std::filesystem::path output(const std::string& rel) const;
  const std::string& digest() const { return digest_; }

  /// Name used for per-regime artifacts, e.g. `oracle` or `insert_internal`.
  static std::string tag(const lm::RegimeSpec& spec);

  void ingest(const std::filesystem::path& input);
  /// With `external`, rows are taken from that PLMB file (and its `.idx`
  /// sidecar) instead of the built-in encoder.
  void embed(const std::optional<std::filesystem::path>& external = std::nullopt);
  actions::ActionSet cluster();
  void assign_actions();
  void pretrain_lm();
  planner::PlannerMetrics train_planner();
  void finetune(const lm::RegimeSpec& spec);
  void generate(const lm::RegimeSpec& spec);
  EvalReport evaluate(const lm::RegimeSpec& spec);
  ScanReport scan_oracle();
  actions::ClusterReport inspect_cluster(actions::ActionId action, std::size_t top_n) const;
  std::vector<SweepRow> sweep_k(std::span<const std::size_t> ks);

  /// Regime-consistent perplexity of the finetuned model on `split`.
  double regime_perplexity(const lm::RegimeSpec& spec, const std::string& split);

 private:
  struct StageTimer;
  std::string require(const std::string& manifest, const std::string& producer,
                      std::span<const std::string> files) const;
  void write_manifest(const std::string& manifest, const std::string& command,
                      std::span<const std::string> inputs, std::span<const std::string> outputs,
                      double wall_seconds) const;

  std::filesystem::path dir_;
  RunConfig config_;
  bool force_ = false;
  std::string digest_;
};

}  // namespace planlm::pipeline
