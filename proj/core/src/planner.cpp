#include "planlm/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "planlm/autodiff/optimizer.hpp"
#include "planlm/errors.hpp"

namespace planlm::planner {
namespace {

using ad::Tensor;
using json = nlohmann::json;

const char* variant_name(PlannerVariant v) {
  return v == PlannerVariant::kNoSentRep ? "no_sent_rep" : "transformer";
}

PlannerVariant parse_variant(const std::string& s) {
  if (s == "transformer") return PlannerVariant::kTransformer;
  if (s == "no_sent_rep") return PlannerVariant::kNoSentRep;
  throw FormatError("unknown planner variant '" + s + "'");
}

struct Example {
  std::size_t article;
  std::size_t position;
};

std::vector<Example> examples_of(std::span<const PlannerArticle> data) {
  std::vector<Example> out;
  for (std::size_t a = 0; a < data.size(); ++a) {
    if (data[a].actions.size() != data[a].embeddings.rows) {
      throw ValidationError("planner article " + std::to_string(a) + " has " +
                            std::to_string(data[a].embeddings.rows) + " embeddings but " +
                            std::to_string(data[a].actions.size()) + " actions");
    }
    for (std::size_t i = 0; i < data[a].actions.size(); ++i) out.push_back({a, i});
  }
  return out;
}

// Runs `fn(batch_examples, logits)` over fixed-size batches without a graph.
template <typename Fn>
void for_each_batch(const PlannerModel& model, std::span<const PlannerArticle> data,
                    std::span<const Example> examples, std::size_t batch_size, Fn fn) {
  ad::NoGradGuard guard;
  std::vector<Context> contexts;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    contexts.clear();
    for (std::size_t e = start; e < end; ++e) {
      contexts.push_back(context_before(data[examples[e].article].embeddings, examples[e].position));
    }
    fn(examples.subspan(start, end - start), model.logits(contexts));
  }
}

double mean_cross_entropy(const PlannerModel& model, std::span<const PlannerArticle> data,
                          std::span<const Example> examples) {
  double total = 0.0;
  std::size_t n = 0;
  std::vector<int> targets;
  for_each_batch(model, data, examples, 64, [&](std::span<const Example> batch, const Tensor& logits) {
    targets.clear();
    for (const auto& e : batch) targets.push_back(data[e.article].actions[e.position]);
    for (double v : ad::row_nll(logits, targets)) total += v;
    n += batch.size();
  });
  return n ? total / static_cast<double>(n) : 0.0;
}

}  // namespace

Context context_before(const Matrix& embeddings, std::size_t i) {
  Context c;
  c.reserve(i);
  for (std::size_t j = 0; j < i; ++j) c.push_back(embeddings.row(j));
  return c;
}

PlannerModel::PlannerModel(PlannerConfig config, const Matrix& centroids)
    : PlannerModel(config, centroids.rows, centroids.cols) {
  build(&centroids);
}

PlannerModel::PlannerModel(PlannerConfig config, std::size_t k, std::size_t d)
    : config_(config), k_(k), d_(d) {
  if (k_ == 0 || d_ == 0) throw ValidationError("planner needs K >= 1 and d >= 1");
  if (config_.max_context == 0) throw ValidationError("planner max_context must be >= 1");
}

void PlannerModel::build(const Matrix* centroids) {
  Rng rng(splitmix64(config_.seed ^ 0x706c616e6e6572ULL));
  const std::size_t ff = config_.ff_mult * d_;
  begin_ = params_.add("planner.begin", nn::gaussian({1, d_}, rng));
  if (config_.variant == PlannerVariant::kTransformer) {
    pos_ = params_.add("planner.pos", nn::gaussian({config_.max_context, d_}, rng));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      blocks_.push_back(nn::make_block(params_, "planner.layer" + std::to_string(l), d_,
                                       config_.n_heads, ff, rng));
    }
    ln_f_ = nn::make_layer_norm(params_, "planner.ln_f", d_);
  } else {
    mlp1_ = nn::make_linear(params_, "planner.mlp.fc1", d_, ff, rng);
    mlp2_ = nn::make_linear(params_, "planner.mlp.fc2", ff, d_, rng);
  }
  Tensor w_o = nn::gaussian({k_, d_}, rng);
  if (centroids != nullptr && config_.init_from_centroids) {
    std::copy(centroids->values.begin(), centroids->values.end(), w_o.data().begin());
  }
  w_o_ = params_.add("planner.w_o", w_o);
  b_ = params_.add("planner.b", Tensor::zeros({k_}));
}

Tensor PlannerModel::logits(std::span<const Context> batch) const {
  std::vector<std::size_t> lengths;
  std::vector<int> positions;
  std::vector<float> inputs;
  std::vector<float> begin_mask;
  for (const auto& ctx : batch) {
    const std::size_t keep = std::min(ctx.size(), config_.max_context);
    if (keep == 0) {
      inputs.insert(inputs.end(), d_, 0.0f);
      begin_mask.push_back(1.0f);
      positions.push_back(0);
      lengths.push_back(1);
      continue;
    }
    for (std::size_t j = ctx.size() - keep; j < ctx.size(); ++j) {
      if (ctx[j].size() != d_) {
        throw ValidationError("planner context row has dim " + std::to_string(ctx[j].size()) +
                              ", expected " + std::to_string(d_));
      }
      inputs.insert(inputs.end(), ctx[j].begin(), ctx[j].end());
      begin_mask.push_back(0.0f);
      positions.push_back(static_cast<int>(j - (ctx.size() - keep)));
    }
    lengths.push_back(keep);
  }
  const std::size_t n = begin_mask.size();
  Tensor x = Tensor::from({n, d_}, std::move(inputs));
  x = ad::add(x, ad::matmul(Tensor::from({n, 1}, std::move(begin_mask)), begin_));

  Tensor pooled;
  if (config_.variant == PlannerVariant::kTransformer) {
    Tensor h = ad::add(x, ad::embedding(pos_, positions));
    for (const auto& block : blocks_) h = block.forward(h, lengths, /*causal=*/false);
    pooled = ad::segment_mean(ln_f_(h), lengths);
  } else {
    pooled = mlp2_(ad::gelu(mlp1_(ad::segment_mean(x, lengths))));
  }
  return ad::add(ad::matmul_nt(pooled, w_o_), b_);
}

std::vector<float> PlannerModel::scores(const Context& context) const {
  ad::NoGradGuard guard;
  const Tensor out = logits(std::span<const Context>(&context, 1));
  return {out.data().begin(), out.data().end()};
}

std::vector<float> PlannerModel::probabilities(const Context& context) const {
  ad::NoGradGuard guard;
  const Tensor out = ad::softmax_rows(logits(std::span<const Context>(&context, 1)));
  return {out.data().begin(), out.data().end()};
}

ActionId PlannerModel::predict(const Context& context) const {
  const auto s = scores(context);
  return static_cast<ActionId>(std::max_element(s.begin(), s.end()) - s.begin());
}

ad::Checkpoint PlannerModel::to_checkpoint(const std::string& extra_meta_json) const {
  json meta = json::parse(extra_meta_json);
  meta["kind"] = "planner";
  meta["planner"] = {{"k", k_},
                     {"d", d_},
                     {"n_layers", config_.n_layers},
                     {"n_heads", config_.n_heads},
                     {"ff_mult", config_.ff_mult},
                     {"max_context", config_.max_context},
                     {"init_from_centroids", config_.init_from_centroids},
                     {"variant", variant_name(config_.variant)},
                     {"seed", config_.seed}};
  ad::Checkpoint ckpt;
  ckpt.meta_json = meta.dump();
  params_.append_sections(ckpt.sections);
  return ckpt;
}

PlannerModel PlannerModel::from_checkpoint(const ad::Checkpoint& ckpt) {
  const json meta = json::parse(ckpt.meta_json);
  if (!meta.contains("planner")) throw FormatError("checkpoint is not a planner checkpoint");
  const auto& p = meta.at("planner");
  PlannerConfig cfg;
  cfg.n_layers = p.at("n_layers").get<std::size_t>();
  cfg.n_heads = p.at("n_heads").get<std::size_t>();
  cfg.ff_mult = p.at("ff_mult").get<std::size_t>();
  cfg.max_context = p.at("max_context").get<std::size_t>();
  cfg.init_from_centroids = p.at("init_from_centroids").get<bool>();
  cfg.variant = parse_variant(p.at("variant").get<std::string>());
  cfg.seed = p.at("seed").get<std::uint64_t>();
  PlannerModel model(cfg, p.at("k").get<std::size_t>(), p.at("d").get<std::size_t>());
  model.build(nullptr);
  model.params_.load_sections(ckpt);
  return model;
}

PlannerTrainResult train_planner(PlannerModel& model, std::span<const PlannerArticle> train,
                                 std::span<const PlannerArticle> val,
                                 const PlannerTrainConfig& config) {
  if (config.batch_size == 0) throw ValidationError("planner batch_size must be >= 1");
  auto train_examples = examples_of(train);
  const auto val_examples = examples_of(val);
  PlannerTrainResult result;
  if (train_examples.empty()) return result;

  model.params().set_trainable(true);
  ad::Adam opt(model.params().tensors(),
               {config.learning_rate, 0.9f, 0.999f, 1e-8f, config.clip_norm});
  Rng rng(config.seed);
  double best = std::numeric_limits<double>::infinity();
  auto best_weights = model.params().snapshot();
  std::size_t since_best = 0;
  std::vector<Context> contexts;
  std::vector<int> targets;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(train_examples);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train_examples.size(); start += config.batch_size) {
      if (config.steps_per_epoch && batches == config.steps_per_epoch) break;
      const std::size_t end = std::min(train_examples.size(), start + config.batch_size);
      contexts.clear();
      targets.clear();
      for (std::size_t e = start; e < end; ++e) {
        const auto& ex = train_examples[e];
        contexts.push_back(context_before(train[ex.article].embeddings, ex.position));
        targets.push_back(train[ex.article].actions[ex.position]);
      }
      Tensor loss = ad::cross_entropy(model.logits(contexts), targets);
      ad::backward(loss);
      opt.step();
      loss_sum += loss.item();
      ++batches;
      ++result.steps;
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)));

    if (val_examples.empty()) {
      best_weights = model.params().snapshot();
      result.best_epoch = epoch;
      continue;
    }
    const double v = mean_cross_entropy(model, val, val_examples);
    result.val_loss.push_back(v);
    if (v < best) {
      best = v;
      best_weights = model.params().snapshot();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.params().restore(best_weights);
  return result;
}

std::size_t oracle_rank(std::span<const float> scores, ActionId target) {
  if (target < 0 || static_cast<std::size_t>(target) >= scores.size()) {
    throw ValidationError("oracle action " + std::to_string(target) + " out of range");
  }
  const float s = scores[static_cast<std::size_t>(target)];
  return 1 + static_cast<std::size_t>(
                 std::count_if(scores.begin(), scores.end(), [s](float x) { return x > s; }));
}

PlannerMetrics evaluate_planner(const PlannerModel& model, std::span<const PlannerArticle> data,
                                double tie_noise, std::uint64_t seed) {
  const auto examples = examples_of(data);
  PlannerMetrics m;
  if (examples.empty()) return m;
  Rng rng(seed);
  double correct = 0.0, rank_sum = 0.0, ce = 0.0;
  std::vector<float> row;
  std::vector<int> targets;
  for_each_batch(model, data, examples, 64, [&](std::span<const Example> batch, const Tensor& logits) {
    const std::size_t k = model.num_actions();
    targets.clear();
    for (const auto& e : batch) targets.push_back(data[e.article].actions[e.position]);
    for (double v : ad::row_nll(logits, targets)) ce += v;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      row.assign(logits.data().begin() + b * k, logits.data().begin() + (b + 1) * k);
      if (tie_noise > 0.0) {
        for (auto& x : row) x += static_cast<float>(rng.uniform() * tie_noise);
      }
      const auto best = static_cast<ActionId>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == targets[b]) correct += 1.0;
      rank_sum += static_cast<double>(oracle_rank(row, targets[b]));
    }
  });
  const double n = static_cast<double>(examples.size());
  m.accuracy = correct / n;
  m.average_rank = rank_sum / n;
  m.cross_entropy = ce / n;
  m.count = examples.size();
  return m;
}

std::vector<ActionId> predict_actions_for_article(const PlannerModel& model, const Matrix& embeddings) {
  std::vector<ActionId> out;
  out.reserve(embeddings.rows);
  ad::NoGradGuard guard;
  std::vector<Context> contexts;
  for (std::size_t i = 0; i < embeddings.rows; ++i) contexts.push_back(context_before(embeddings, i));
  const std::size_t k = model.num_actions();
  for (std::size_t start = 0; start < contexts.size(); start += 64) {
    const std::size_t end = std::min(contexts.size(), start + 64);
    const Tensor logits = model.logits(std::span<const Context>(contexts).subspan(start, end - start));
    for (std::size_t b = 0; b < end - start; ++b) {
      const auto row = logits.data().subspan(b * k, k);
      out.push_back(static_cast<ActionId>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

}  // namespace planlm::planner
