#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "planlm/corpus.hpp"
#include "planlm/encoder.hpp"
#include "planlm/matrix_io.hpp"

namespace planlm::actions {

using ActionId = std::int32_t;

/// The discrete action vocabulary: one centroid per action.
struct ActionSet {
  Matrix centroids;  // K x d
  double inertia = 0.0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t max_iters = 0;
  std::size_t restarts = 1;
  std::size_t iterations = 0;
  /// Inertia after each assignment step; non-increasing.
  std::vector<double> inertia_trace;

  std::size_t size() const { return centroids.rows; }
  std::size_t dim() const { return centroids.cols; }
};

/// Greedy k-means++ seeding followed by Lloyd iterations until the
/// assignment stops changing or max_iters is reached. Empty clusters take the
/// point farthest from its current centroid. With `restarts` > 1 the whole
/// procedure repeats from further draws of the same generator and the lowest
/// inertia wins; the first run is always the single-run result. Throws
/// ValidationError when N < k.
ActionSet kmeans_fit(const Matrix& points, std::size_t k, std::uint64_t seed,
                     std::size_t max_iters = 300, std::size_t restarts = 1);
ActionId assign_action(std::span<const float> z, const ActionSet& actions);

/// Squared distance from `z` to every centroid.
std::vector<double> centroid_distances(std::span<const float> z, const ActionSet& actions);

struct ActionSequence {
  std::string article_id;
  std::vector<ActionId> actions;

  friend bool operator==(const ActionSequence&, const ActionSequence&) = default;
};

ActionSequence extract_action_sequence(const corpus::Article& article, const ActionSet& actions,
                                       const encoder::Encoder& encoder);

/// Actions of the sentences of an arbitrary text (e.g. a generated continuation).
std::vector<ActionId> actions_for_text(std::string_view text, const ActionSet& actions,
                                       const encoder::Encoder& encoder);

struct ClusterMember {
  std::string article_id;
  std::size_t sentence_index = 0;
  std::string text;
  double distance = 0.0;  // Euclidean
};

struct ClusterReport {
  ActionId action = 0;
  std::vector<ClusterMember> nearest;
  /// (action id, member count) for the largest clusters, size-descending.
  std::vector<std::pair<ActionId, std::size_t>> largest;
};

/// Lists the `top_n` corpus sentences nearest to a centroid (ascending
/// distance, ties by corpus order) plus the sizes of the ten largest clusters.
ClusterReport inspect_cluster(ActionId action, std::span<const corpus::Article> articles,
                              const ActionSet& actions, const encoder::Encoder& encoder,
                              std::size_t top_n);

/// One `article_id<TAB>a_0 a_1 ...` line per article.
void write_action_sequences(const std::filesystem::path& path,
                            std::span<const ActionSequence> sequences);
std::vector<ActionSequence> read_action_sequences(const std::filesystem::path& path);

}  // namespace planlm::actions
