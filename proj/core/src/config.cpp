#include "planlm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "planlm/errors.hpp"
#include "planlm/rng.hpp"

namespace planlm {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_int(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + std::string(key) + "' expects a non-negative integer, got '" +
                          std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw ValidationError("config key '" + std::string(key) + "' expects a number, got '" + s + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config key '" + std::string(key) + "' expects true/false, got '" + std::string(v) + "'");
}

std::string real_str(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field int_field(const char* name, T RunConfig::*m) {
  return {[m, name](RunConfig& c, std::string_view v) { c.*m = parse_int<T>(name, v); },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

using FieldTable = std::vector<std::pair<std::string, Field>>;

const FieldTable& table() {
  static const FieldTable t = [] {
    FieldTable f;
    auto sz = [&f](const char* name, std::size_t RunConfig::*m) { f.emplace_back(name, int_field(name, m)); };
    auto u64 = [&f](const char* name, std::uint64_t RunConfig::*m) { f.emplace_back(name, int_field(name, m)); };
    auto real = [&f](const char* name, double RunConfig::*m) {
      f.emplace_back(name, Field{[m, name](RunConfig& c, std::string_view v) { c.*m = parse_real(name, v); },
                                 [m](const RunConfig& c) { return real_str(c.*m); }});
    };
    auto flag = [&f](const char* name, bool RunConfig::*m) {
      f.emplace_back(name, Field{[m, name](RunConfig& c, std::string_view v) { c.*m = parse_bool(name, v); },
                                 [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }});
    };
    auto str = [&f](const char* name, std::string RunConfig::*m) {
      f.emplace_back(name, Field{[m](RunConfig& c, std::string_view v) { c.*m = std::string(v); },
                                 [m](const RunConfig& c) { return c.*m; }});
    };
    u64("seed", &RunConfig::seed);
    sz("vocab_size", &RunConfig::vocab_size);
    sz("n_val", &RunConfig::n_val);
    sz("n_test", &RunConfig::n_test);
    sz("encoder_dim", &RunConfig::encoder_dim);
    sz("ngram_order", &RunConfig::ngram_order);
    sz("hash_buckets", &RunConfig::hash_buckets);
    u64("projection_seed", &RunConfig::projection_seed);
    sz("k", &RunConfig::k);
    sz("kmeans_max_iters", &RunConfig::kmeans_max_iters);
    sz("kmeans_restarts", &RunConfig::kmeans_restarts);
    sz("planner_layers", &RunConfig::planner_layers);
    sz("planner_heads", &RunConfig::planner_heads);
    sz("planner_max_context", &RunConfig::planner_max_context);
    flag("planner_init_from_centroids", &RunConfig::planner_init_from_centroids);
    str("planner_variant", &RunConfig::planner_variant);
    real("planner_lr", &RunConfig::planner_lr);
    sz("planner_batch", &RunConfig::planner_batch);
    sz("planner_max_epochs", &RunConfig::planner_max_epochs);
    sz("planner_steps_per_epoch", &RunConfig::planner_steps_per_epoch);
    sz("planner_patience", &RunConfig::planner_patience);
    sz("lm_dim", &RunConfig::lm_dim);
    sz("lm_layers", &RunConfig::lm_layers);
    sz("lm_heads", &RunConfig::lm_heads);
    sz("lm_context", &RunConfig::lm_context);
    sz("lm_adapted_layers", &RunConfig::lm_adapted_layers);
    flag("lm_share_action_tables", &RunConfig::lm_share_action_tables);
    flag("adapter_init_from_centroids", &RunConfig::adapter_init_from_centroids);
    real("pretrain_lr", &RunConfig::pretrain_lr);
    sz("pretrain_batch", &RunConfig::pretrain_batch);
    sz("pretrain_steps", &RunConfig::pretrain_steps);
    real("finetune_lr", &RunConfig::finetune_lr);
    sz("finetune_batch", &RunConfig::finetune_batch);
    sz("finetune_steps", &RunConfig::finetune_steps);
    sz("finetune_eval_every", &RunConfig::finetune_eval_every);
    sz("finetune_patience", &RunConfig::finetune_patience);
    real("clip_norm", &RunConfig::clip_norm);
    f.emplace_back("lengths", Field{[](RunConfig& c, std::string_view v) {
                                      std::vector<std::size_t> out;
                                      std::size_t pos = 0;
                                      while (pos <= v.size()) {
                                        auto comma = v.find(',', pos);
                                        if (comma == std::string_view::npos) comma = v.size();
                                        out.push_back(parse_int<std::size_t>("lengths", trim(v.substr(pos, comma - pos))));
                                        pos = comma + 1;
                                      }
                                      c.lengths = std::move(out);
                                    },
                                    [](const RunConfig& c) {
                                      std::string s;
                                      for (std::size_t i = 0; i < c.lengths.size(); ++i) {
                                        s += (i ? "," : "") + std::to_string(c.lengths[i]);
                                      }
                                      return s;
                                    }});
    sz("edit_base_len", &RunConfig::edit_base_len);
    real("temperature", &RunConfig::temperature);
    sz("top_k", &RunConfig::top_k);
    sz("eval_articles", &RunConfig::eval_articles);
    sz("uncond_samples", &RunConfig::uncond_samples);
    sz("uncond_tokens", &RunConfig::uncond_tokens);
    sz("hmm_states", &RunConfig::hmm_states);
    sz("hmm_max_iters", &RunConfig::hmm_max_iters);
    sz("scan_articles", &RunConfig::scan_articles);
    sz("noise_variants", &RunConfig::noise_variants);
    str("regime", &RunConfig::regime);
    str("style", &RunConfig::style);
    str("locus", &RunConfig::locus);
    return f;
  }();
  return t;
}

const Field& field(std::string_view key) {
  for (const auto& [name, f] : table()) {
    if (name == key) return f;
  }
  throw ValidationError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  field(key).set(*this, trim(value));
}

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : table()) out.push_back(name);
    return out;
  }();
  return k;
}

bool RunConfig::is_selector(std::string_view key) {
  return key == "regime" || key == "style" || key == "locus";
}

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ValidationError(std::string("config key '") + name + "' must be positive");
  };
  if (vocab_size < 3) throw ValidationError("vocab_size must be at least 3");
  positive(encoder_dim, "encoder_dim");
  positive(ngram_order, "ngram_order");
  positive(hash_buckets, "hash_buckets");
  positive(k, "k");
  positive(kmeans_restarts, "kmeans_restarts");
  positive(planner_batch, "planner_batch");
  positive(pretrain_batch, "pretrain_batch");
  positive(finetune_batch, "finetune_batch");
  positive(edit_base_len, "edit_base_len");
  positive(hmm_states, "hmm_states");
  if (lengths.empty()) throw ValidationError("lengths must not be empty");
  for (auto l : lengths) positive(l, "lengths");
  if (temperature < 0.0) throw ValidationError("temperature must be non-negative");
  if (planner_variant != "transformer" && planner_variant != "no_sent_rep") {
    throw ValidationError("planner_variant must be 'transformer' or 'no_sent_rep'");
  }
  if (encoder_dim % planner_heads != 0) throw ValidationError("encoder_dim must be divisible by planner_heads");
  lm_config(3).validate();
  regime_spec().validate();
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, f] : table()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + " is not 'key = value'");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::digest() const {
  std::string canon;
  for (const auto& [name, f] : table()) {
    if (!is_selector(name)) canon += name + "=" + f.get(*this) + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
  return buf;
}

lm::RegimeSpec RunConfig::regime_spec() const {
  lm::RegimeSpec s;
  s.regime = lm::parse_regime(regime);
  s.style = lm::parse_style(style);
  s.locus = lm::parse_locus(locus);
  return s;
}

encoder::EncoderConfig RunConfig::encoder_config() const {
  encoder::EncoderConfig c;
  c.dim = encoder_dim;
  c.ngram_order = ngram_order;
  c.hash_buckets = hash_buckets;
  c.projection_seed = projection_seed;
  return c;
}

planner::PlannerConfig RunConfig::planner_config() const {
  planner::PlannerConfig c;
  c.n_layers = planner_layers;
  c.n_heads = planner_heads;
  c.max_context = planner_max_context;
  c.init_from_centroids = planner_init_from_centroids;
  c.variant = planner_variant == "no_sent_rep" ? planner::PlannerVariant::kNoSentRep
                                               : planner::PlannerVariant::kTransformer;
  c.seed = seed;
  return c;
}

planner::PlannerTrainConfig RunConfig::planner_train_config() const {
  planner::PlannerTrainConfig c;
  c.learning_rate = static_cast<float>(planner_lr);
  c.batch_size = planner_batch;
  c.max_epochs = planner_max_epochs;
  c.steps_per_epoch = planner_steps_per_epoch;
  c.patience = planner_patience;
  c.clip_norm = static_cast<float>(clip_norm);
  c.seed = seed;
  return c;
}

lm::LmConfig RunConfig::lm_config(std::size_t vocab) const {
  lm::LmConfig c;
  c.vocab_size = vocab;
  c.d_model = lm_dim;
  c.n_layers = lm_layers;
  c.n_heads = lm_heads;
  c.context = lm_context;
  c.adapted_layers = lm_adapted_layers;
  c.share_action_tables = lm_share_action_tables;
  c.adapter_init_from_centroids = adapter_init_from_centroids;
  c.seed = seed;
  return c;
}

lm::LmTrainConfig RunConfig::pretrain_config() const {
  lm::LmTrainConfig c;
  c.learning_rate = static_cast<float>(pretrain_lr);
  c.batch_size = pretrain_batch;
  c.max_steps = pretrain_steps;
  c.eval_every = 0;
  c.clip_norm = static_cast<float>(clip_norm);
  c.seed = seed;
  return c;
}

lm::LmTrainConfig RunConfig::finetune_config() const {
  lm::LmTrainConfig c;
  c.learning_rate = static_cast<float>(finetune_lr);
  c.batch_size = finetune_batch;
  c.max_steps = finetune_steps;
  c.eval_every = finetune_eval_every;
  c.patience = finetune_patience;
  c.clip_norm = static_cast<float>(clip_norm);
  c.seed = seed + 1;
  return c;
}

generation::GenerationConfig RunConfig::generation_config(std::size_t max_tokens, std::uint64_t gen_seed) const {
  generation::GenerationConfig c;
  c.max_tokens = max_tokens;
  c.temperature = temperature;
  c.top_k = top_k;
  c.seed = gen_seed;
  return c;
}

}  // namespace planlm
