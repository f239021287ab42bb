#include "planlm/actions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "planlm/errors.hpp"
#include "planlm/rng.hpp"

namespace planlm::actions {
namespace {

double sq_dist(std::span<const float> a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = static_cast<double>(a[i]) - b[i];
    s += diff * diff;
  }
  return s;
}

double sq_dist(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += diff * diff;
  }
  return s;
}

struct Assignment {
  std::vector<std::size_t> label;
  std::vector<double> dist;
  double inertia = 0.0;
};

Assignment assign_all(const Matrix& points, const std::vector<double>& centers, std::size_t k) {
  const std::size_t d = points.cols;
  Assignment a;
  a.label.resize(points.rows);
  a.dist.resize(points.rows);
  for (std::size_t i = 0; i < points.rows; ++i) {
    const auto p = points.row(i);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dd = sq_dist(p, centers.data() + c * d, d);
      if (dd < best_d) {
        best_d = dd;
        best = c;
      }
    }
    a.label[i] = best;
    a.dist[i] = best_d;
    a.inertia += best_d;
  }
  return a;
}

// Greedy k-means++: each new center is the best of a few candidates drawn
// with probability proportional to squared distance, judged by the potential
// (sum of squared distances to the nearest center) it leaves behind. One draw
// per step lands two seeds in the same cluster too often when clusters are
// only moderately separated.
std::vector<double> kmeanspp_seed(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  std::vector<double> centers(k * d);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);

  auto take = [&](std::size_t c, std::size_t idx) {
    chosen[idx] = true;
    const auto p = points.row(idx);
    for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = p[j];
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(points.row(i), centers.data() + c * d, d));
    }
  };

  auto sample = [&](double total) {
    const double target = rng.uniform() * total;
    double run = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      run += nearest[i];
      if (nearest[i] > 0.0 && run > target) return i;
    }
    for (std::size_t i = n; i-- > 0;) {  // rounding at the tail
      if (nearest[i] > 0.0) return i;
    }
    return n;
  };

  take(0, rng.index(n));
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t cand = sample(total);
        const auto q = points.row(cand);
        double potential = 0.0;
        for (std::size_t i = 0; i < n; ++i) potential += std::min(nearest[i], sq_dist(points.row(i), q));
        if (potential < best) {
          best = potential;
          pick = cand;
        }
      }
    } else {
      // Every point coincides with a chosen center; fall back to unused rows.
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    take(c, pick);
  }
  return centers;
}

ActionSet lloyd_run(const Matrix& points, std::size_t k, Rng& rng, std::size_t max_iters) {
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;
  std::vector<double> centers = kmeanspp_seed(points, k, rng);

  ActionSet out;
  out.k = k;

  Assignment a = assign_all(points, centers, k);
  out.inertia_trace.push_back(a.inertia);
  std::size_t iter = 0;
  while (iter < max_iters) {
    ++iter;
    std::vector<double> sums(k * d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = points.row(i);
      const std::size_t c = a.label[i];
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += p[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = sums[c * d + j] / counts[c];
    }
    // Empty-cluster repair: move the worst-served point into the empty cluster.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::vector<double> cur(n);
      for (std::size_t i = 0; i < n; ++i) {
        cur[i] = sq_dist(points.row(i), centers.data() + a.label[i] * d, d);
      }
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[a.label[i]] > 1 && cur[i] > far_d) {
          far_d = cur[i];
          far = i;
        }
      }
      if (far == n) break;
      --counts[a.label[far]];
      a.label[far] = c;
      counts[c] = 1;
      const auto p = points.row(far);
      for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = p[j];
    }

    Assignment next = assign_all(points, centers, k);
    out.inertia_trace.push_back(next.inertia);
    const bool fixpoint = next.label == a.label;
    a = std::move(next);
    if (fixpoint) break;
  }
  out.iterations = iter;

  out.centroids = Matrix(k, d);
  for (std::size_t i = 0; i < k * d; ++i) out.centroids.values[i] = static_cast<float>(centers[i]);
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = points.row(i);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) best = std::min(best, sq_dist(p, out.centroids.row(c)));
    inertia += best;
  }
  out.inertia = inertia;
  return out;
}

}  // namespace

ActionSet kmeans_fit(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iters,
                     std::size_t restarts) {
  if (k < 1) throw ValidationError("k-means requires k >= 1");
  if (points.rows < k) {
    throw ValidationError("k-means requires at least k points (N=" + std::to_string(points.rows) +
                          ", k=" + std::to_string(k) + ")");
  }
  for (float v : points.values) {
    if (!std::isfinite(v)) throw ValidationError("k-means input contains non-finite values");
  }
  if (restarts < 1) throw ValidationError("k-means requires restarts >= 1");
  // One generator across restarts, so the first run is the single-run result.
  Rng rng(seed);
  ActionSet best = lloyd_run(points, k, rng, max_iters);
  for (std::size_t r = 1; r < restarts; ++r) {
    ActionSet next = lloyd_run(points, k, rng, max_iters);
    if (next.inertia < best.inertia) best = std::move(next);
  }
  best.seed = seed;
  best.max_iters = max_iters;
  best.restarts = restarts;
  return best;
}


std::vector<double> centroid_distances(std::span<const float> z, const ActionSet& actions) {
  if (z.size() != actions.dim()) {
    throw ValidationError("embedding dim " + std::to_string(z.size()) + " != centroid dim " +
                          std::to_string(actions.dim()));
  }
  std::vector<double> out(actions.size());
  for (std::size_t c = 0; c < actions.size(); ++c) out[c] = sq_dist(z, actions.centroids.row(c));
  return out;
}

ActionId assign_action(std::span<const float> z, const ActionSet& actions) {
  const auto dist = centroid_distances(z, actions);
  std::size_t best = 0;
  for (std::size_t c = 1; c < dist.size(); ++c) {
    if (dist[c] < dist[best]) best = c;
  }
  return static_cast<ActionId>(best);
}

std::vector<ActionId> actions_for_text(std::string_view text, const ActionSet& actions,
                                       const encoder::Encoder& encoder) {
  std::vector<ActionId> out;
  for (const auto& s : corpus::split_sentences(text)) {
    const auto z = encoder.embed(text.substr(s.char_start, s.char_end - s.char_start));
    out.push_back(assign_action(z, actions));
  }
  return out;
}

ActionSequence extract_action_sequence(const corpus::Article& article, const ActionSet& actions,
                                       const encoder::Encoder& encoder) {
  return {article.id, actions_for_text(article.text, actions, encoder)};
}

ClusterReport inspect_cluster(ActionId action, std::span<const corpus::Article> articles,
                              const ActionSet& actions, const encoder::Encoder& encoder,
                              std::size_t top_n) {
  if (action < 0 || static_cast<std::size_t>(action) >= actions.size()) {
    throw ValidationError("unknown action id " + std::to_string(action) + " (K=" +
                          std::to_string(actions.size()) + ")");
  }
  ClusterReport report;
  report.action = action;
  std::vector<std::size_t> sizes(actions.size(), 0);
  std::vector<ClusterMember> all;
  for (const auto& a : articles) {
    const std::string_view text = a.text;
    for (const auto& s : corpus::split_sentences(text)) {
      const auto sentence = text.substr(s.char_start, s.char_end - s.char_start);
      const auto z = encoder.embed(sentence);
      const auto dist = centroid_distances(z, actions);
      ++sizes[static_cast<std::size_t>(assign_action(z, actions))];
      all.push_back({a.id, s.index, std::string(sentence),
                     std::sqrt(dist[static_cast<std::size_t>(action)])});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& x, const auto& y) { return x.distance < y.distance; });
  if (all.size() > top_n) all.resize(top_n);
  report.nearest = std::move(all);

  for (std::size_t c = 0; c < sizes.size(); ++c) {
    report.largest.emplace_back(static_cast<ActionId>(c), sizes[c]);
  }
  std::stable_sort(report.largest.begin(), report.largest.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  if (report.largest.size() > 10) report.largest.resize(10);
  return report;
}

void write_action_sequences(const std::filesystem::path& path,
                            std::span<const ActionSequence> sequences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : sequences) {
    out << s.article_id << '\t';
    for (std::size_t i = 0; i < s.actions.size(); ++i) {
      if (i) out << ' ';
      out << s.actions[i];
    }
    out << '\n';
  }
}

std::vector<ActionSequence> read_action_sequences(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string(), "actions");
  std::vector<ActionSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ": malformed action line");
    ActionSequence s;
    s.article_id = line.substr(0, tab);
    std::istringstream ids(line.substr(tab + 1));
    ActionId a;
    while (ids >> a) s.actions.push_back(a);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace planlm::actions
