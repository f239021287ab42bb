#include "planlm/lm.hpp"

#include <algorithm>

#include "json.hpp"
#include "planlm/errors.hpp"

namespace planlm::lm {
namespace {

using ad::Tensor;
using json = nlohmann::json;

constexpr std::uint64_t kBaseStream = 0x626173654c4dULL;
constexpr std::uint64_t kAdapterStream = 0x61646170746572ULL;

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kNone: return "none";
    case Regime::kFixed: return "fixed";
    case Regime::kOracle: return "oracle";
    case Regime::kPredictedOA: return "predicted_oa";
    case Regime::kPredictedPA: return "predicted_pa";
  }
  return "?";
}

std::string to_string(Style s) { return s == Style::kInsert ? "insert" : "adapter"; }
std::string to_string(Locus l) { return l == Locus::kInternal ? "internal" : "external"; }

Regime parse_regime(std::string_view s) {
  for (Regime r : {Regime::kNone, Regime::kFixed, Regime::kOracle, Regime::kPredictedOA,
                   Regime::kPredictedPA}) {
    if (s == to_string(r)) return r;
  }
  if (s == "predicted-oa") return Regime::kPredictedOA;
  if (s == "predicted-pa") return Regime::kPredictedPA;
  throw ValidationError("unknown regime '" + std::string(s) +
                        "' (expected none|fixed|oracle|predicted_oa|predicted_pa)");
}

Style parse_style(std::string_view s) {
  if (s == "adapter") return Style::kAdapter;
  if (s == "insert") return Style::kInsert;
  throw ValidationError("unknown style '" + std::string(s) + "' (expected adapter|insert)");
}

Locus parse_locus(std::string_view s) {
  if (s == "external") return Locus::kExternal;
  if (s == "internal") return Locus::kInternal;
  throw ValidationError("unknown locus '" + std::string(s) + "' (expected external|internal)");
}

void RegimeSpec::validate() const {
  if (locus == Locus::kInternal && style != Style::kInsert) {
    throw ValidationError("the internal planner locus requires the insert style");
  }
}

std::size_t LmConfig::resolved_adapted_layers() const {
  return adapted_layers == 0 ? n_layers / 2 : adapted_layers;
}

void LmConfig::validate() const {
  if (vocab_size < 3) throw ValidationError("LM vocab_size must be >= 3");
  if (n_layers == 0) throw ValidationError("LM n_layers must be >= 1");
  if (context < 2) throw ValidationError("LM context must be >= 2");
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ValidationError("LM d_model " + std::to_string(d_model) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
  }
  if (resolved_adapted_layers() > n_layers) {
    throw ValidationError("adapted_layers " + std::to_string(adapted_layers) + " exceeds n_layers " +
                          std::to_string(n_layers));
  }
}

LanguageModel::LanguageModel(LmConfig config) : config_(config) {
  config_.validate();
  Rng rng(splitmix64(config_.seed ^ kBaseStream));
  build_base(rng);
}

void LanguageModel::build_base(Rng& rng) {
  const std::size_t d = config_.d_model;
  tok_ = base_.add("lm.tok", nn::gaussian({config_.vocab_size, d}, rng));
  pos_ = base_.add("lm.pos", nn::gaussian({config_.context, d}, rng));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    blocks_.push_back(nn::make_block(base_, "lm.layer" + std::to_string(l), d, config_.n_heads,
                                     config_.ff_mult * d, rng));
  }
  ln_f_ = nn::make_layer_norm(base_, "lm.ln_f", d);
  out_ = base_.add("lm.out", nn::gaussian({d, config_.vocab_size}, rng));
}

std::size_t LanguageModel::first_adapted_layer() const {
  return config_.n_layers - config_.resolved_adapted_layers();
}

void LanguageModel::attach_adapter(const Matrix& centroids) {
  if (has_adapter()) throw ValidationError("adapter already attached");
  if (centroids.rows == 0 || centroids.cols == 0) throw ValidationError("adapter needs K >= 1 actions");
  num_actions_ = centroids.rows;
  action_dim_ = centroids.cols;
  Rng rng(splitmix64(config_.seed ^ kAdapterStream));
  auto table = [&](const std::string& name) {
    Tensor t = config_.adapter_init_from_centroids
                   ? Tensor::from({num_actions_, action_dim_}, centroids.values)
                   : nn::gaussian({num_actions_, action_dim_}, rng);
    return adapter_.add(name, t);
  };
  Tensor shared;
  if (config_.share_action_tables) shared = table("lm.adapter.e_a");
  for (std::size_t l = first_adapted_layer(); l < config_.n_layers; ++l) {
    const std::string prefix = "lm.layer" + std::to_string(l) + ".adapter";
    e_a_.push_back(config_.share_action_tables ? shared : table(prefix + ".e_a"));
    w_a_.push_back(adapter_.add(prefix + ".w_a", nn::gaussian({config_.d_model, action_dim_}, rng)));
  }
}

const Tensor& LanguageModel::action_table(std::size_t layer) const {
  if (!has_adapter() || layer < first_adapted_layer() || layer >= config_.n_layers) {
    throw ValidationError("layer " + std::to_string(layer) + " has no adapter");
  }
  return e_a_[layer - first_adapted_layer()];
}

const Tensor& LanguageModel::action_projection(std::size_t layer) const {
  if (!has_adapter() || layer < first_adapted_layer() || layer >= config_.n_layers) {
    throw ValidationError("layer " + std::to_string(layer) + " has no adapter");
  }
  return w_a_[layer - first_adapted_layer()];
}

Tensor LanguageModel::forward(std::span<const int> tokens, std::span<const std::size_t> segment_lengths,
                              const Conditioning* cond) const {
  std::vector<int> positions;
  positions.reserve(tokens.size());
  for (auto len : segment_lengths) {
    if (len > config_.context) {
      throw ValidationError("sequence of " + std::to_string(len) + " tokens exceeds the context window " +
                            std::to_string(config_.context));
    }
    for (std::size_t p = 0; p < len; ++p) positions.push_back(static_cast<int>(p));
  }
  if (positions.size() != tokens.size()) {
    throw ValidationError("segment lengths cover " + std::to_string(positions.size()) + " tokens, got " +
                          std::to_string(tokens.size()));
  }
  const bool conditioned = cond != nullptr && has_adapter();
  if (conditioned) {
    if (cond->actions.size() != tokens.size()) {
      throw ValidationError("conditioning has " + std::to_string(cond->actions.size()) +
                            " actions for " + std::to_string(tokens.size()) + " tokens");
    }
    if (cond->noise != nullptr &&
        cond->noise->shape() != ad::Shape{tokens.size(), action_dim_}) {
      throw ValidationError("action noise shape " + ad::shape_str(cond->noise->shape()) +
                            " does not match [" + std::to_string(tokens.size()) + ", " +
                            std::to_string(action_dim_) + "]");
    }
  }

  Tensor h = ad::add(ad::embedding(tok_, tokens), ad::embedding(pos_, positions));
  const std::size_t first = first_adapted_layer();
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    if (conditioned && l >= first) {
      Tensor e = ad::embedding(e_a_[l - first], cond->actions);
      if (cond->noise != nullptr) e = ad::add(e, *cond->noise);
      const Tensor r = ad::matmul_nt(e, w_a_[l - first]);
      h = blocks_[l].forward(h, segment_lengths, /*causal=*/true, &r);
    } else {
      h = blocks_[l].forward(h, segment_lengths, /*causal=*/true);
    }
  }
  return ad::matmul(ln_f_(h), out_);
}

LanguageModel LanguageModel::extend_vocabulary(std::size_t extra, std::uint64_t seed) const {
  LmConfig cfg = config_;
  cfg.vocab_size += extra;
  cfg.seed = seed;
  LanguageModel ext(cfg);
  const std::size_t d = config_.d_model, v = config_.vocab_size, w = cfg.vocab_size;
  for (const auto& [name, src] : base_.items()) {
    ad::Tensor dst_t = ext.base_.get(name);
    auto dst = dst_t.data();
    if (name == "lm.tok") {
      std::copy(src.data().begin(), src.data().end(), dst.begin());
    } else if (name == "lm.out") {
      for (std::size_t r = 0; r < d; ++r) {
        std::copy_n(src.data().begin() + r * v, v, dst.begin() + r * w);
      }
    } else {
      std::copy(src.data().begin(), src.data().end(), dst.begin());
    }
  }
  return ext;
}

LanguageModel LanguageModel::clone() const { return from_checkpoint(to_checkpoint()); }

ad::Checkpoint LanguageModel::to_checkpoint(const std::string& extra_meta_json) const {
  json meta = json::parse(extra_meta_json);
  meta["kind"] = "lm";
  meta["lm"] = {{"vocab_size", config_.vocab_size},
                {"d_model", config_.d_model},
                {"n_layers", config_.n_layers},
                {"n_heads", config_.n_heads},
                {"ff_mult", config_.ff_mult},
                {"context", config_.context},
                {"adapted_layers", config_.adapted_layers},
                {"share_action_tables", config_.share_action_tables},
                {"adapter_init_from_centroids", config_.adapter_init_from_centroids},
                {"seed", config_.seed},
                {"num_actions", num_actions_},
                {"action_dim", action_dim_}};
  ad::Checkpoint ckpt;
  ckpt.meta_json = meta.dump();
  base_.append_sections(ckpt.sections);
  adapter_.append_sections(ckpt.sections);
  return ckpt;
}

LanguageModel LanguageModel::from_checkpoint(const ad::Checkpoint& ckpt) {
  const json meta = json::parse(ckpt.meta_json);
  if (!meta.contains("lm")) throw FormatError("checkpoint is not a language-model checkpoint");
  const auto& m = meta.at("lm");
  LmConfig cfg;
  cfg.vocab_size = m.at("vocab_size").get<std::size_t>();
  cfg.d_model = m.at("d_model").get<std::size_t>();
  cfg.n_layers = m.at("n_layers").get<std::size_t>();
  cfg.n_heads = m.at("n_heads").get<std::size_t>();
  cfg.ff_mult = m.at("ff_mult").get<std::size_t>();
  cfg.context = m.at("context").get<std::size_t>();
  cfg.adapted_layers = m.at("adapted_layers").get<std::size_t>();
  cfg.share_action_tables = m.at("share_action_tables").get<bool>();
  cfg.adapter_init_from_centroids = m.at("adapter_init_from_centroids").get<bool>();
  cfg.seed = m.at("seed").get<std::uint64_t>();
  LanguageModel model(cfg);
  const auto k = m.at("num_actions").get<std::size_t>();
  if (k > 0) model.attach_adapter(Matrix(k, m.at("action_dim").get<std::size_t>()));
  model.base_.load_sections(ckpt);
  model.adapter_.load_sections(ckpt);
  return model;
}

ActionId select_action_for_position(const corpus::TokenStream& stream,
                                    std::span<const ActionId> sentence_actions, std::size_t p) {
  const auto& idx = stream.sentence_index_of_token;
  if (p >= idx.size()) {
    throw ValidationError("position " + std::to_string(p) + " out of range for " +
                          std::to_string(idx.size()) + " tokens");
  }
  const std::size_t sentence = p + 1 < idx.size() ? idx[p + 1] : idx.back();
  if (sentence >= sentence_actions.size()) {
    throw ValidationError("no action for sentence " + std::to_string(sentence));
  }
  return sentence_actions[sentence];
}

std::vector<int> position_actions(const corpus::TokenStream& stream,
                                  std::span<const ActionId> sentence_actions) {
  std::vector<int> out(stream.token_ids.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    out[p] = select_action_for_position(stream, sentence_actions, p);
  }
  return out;
}

}  // namespace planlm::lm
