#include "planlm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "planlm/autodiff/checkpoint.hpp"
#include "planlm/corpus.hpp"
#include "planlm/encoder.hpp"
#include "planlm/errors.hpp"
#include "planlm/generation.hpp"
#include "planlm/hmm.hpp"
#include "planlm/insert_style.hpp"
#include "planlm/lm_training.hpp"
#include "planlm/matrix_io.hpp"
#include "planlm/metrics.hpp"
#include "planlm/rng.hpp"

namespace planlm::pipeline {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using actions::ActionId;
using lm::Regime;
using lm::Style;

namespace {

constexpr const char* kSplits[] = {"train", "val", "test"};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << bytes;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string corpus_file(const std::string& split) { return "corpus/" + split + ".jsonl"; }
std::string embed_file(const std::string& split) { return "embeddings/" + split + ".plmb"; }
std::string embed_index(const std::string& split) { return "embeddings/" + split + ".plmb.idx"; }
std::string action_file(const std::string& split) { return "actions/" + split + ".tsv"; }
const std::string kVocab = "corpus/vocab.txt";
const std::string kCentroids = "actions/centroids.plmb";
const std::string kClusterInfo = "actions/cluster.json";
const std::string kBaseLm = "models/base_lm.plmc";
const std::string kPlanner = "models/planner.plmc";
std::string lm_file(const std::string& tag) { return "models/lm_" + tag + ".plmc"; }
std::string gen_file(const std::string& tag) { return "generations/" + tag + ".jsonl"; }
std::string report_file(const std::string& tag) { return "reports/eval_" + tag + ".json"; }

struct SplitData {
  std::vector<corpus::Article> articles;
  std::vector<corpus::TokenStream> streams;
  std::vector<Matrix> embeddings;
  std::vector<std::vector<ActionId>> actions;

  std::vector<planner::PlannerArticle> planner_articles() const {
    std::vector<planner::PlannerArticle> out;
    out.reserve(articles.size());
    for (std::size_t i = 0; i < articles.size(); ++i) out.push_back({embeddings[i], actions[i]});
    return out;
  }
};

std::vector<Matrix> per_article_rows(const Matrix& m, std::span<const RowKey> index,
                                     std::span<const corpus::Article> articles) {
  if (index.size() != m.rows) throw FormatError("embedding index does not match its matrix");
  std::map<std::string, std::vector<std::size_t>> rows;
  for (std::size_t r = 0; r < index.size(); ++r) rows[index[r].first].push_back(r);
  std::vector<Matrix> out;
  out.reserve(articles.size());
  for (const auto& a : articles) {
    auto it = rows.find(a.id);
    if (it == rows.end()) throw FormatError("no embeddings for article '" + a.id + "'");
    Matrix e(it->second.size(), m.cols);
    for (std::size_t j = 0; j < it->second.size(); ++j) {
      std::copy(m.row(it->second[j]).begin(), m.row(it->second[j]).end(), e.row(j).begin());
    }
    out.push_back(std::move(e));
  }
  return out;
}

class SequencePredictor : public generation::ActionPredictor {
 public:
  explicit SequencePredictor(std::vector<ActionId> seq) : seq_(std::move(seq)) {}
  ActionId predict(const planner::Context& context) override {
    ++calls_;
    if (seq_.empty()) return 0;
    return seq_[std::min(context.size(), seq_.size() - 1)];
  }

 private:
  std::vector<ActionId> seq_;
};

std::vector<ActionId> predicted_actions(const planner::PlannerModel& model, const Matrix& embeddings,
                                        std::size_t* calls) {
  if (calls) *calls += embeddings.rows;
  return planner::predict_actions_for_article(model, embeddings);
}

// Actions conditioning the LM under `regime`; `training` selects the
// train-time source for PREDICTED_OA.
std::vector<std::vector<ActionId>> regime_actions(Regime regime, bool training, const SplitData& d,
                                                  const planner::PlannerModel* model, std::size_t* calls) {
  std::vector<std::vector<ActionId>> out;
  switch (regime) {
    case Regime::kNone:
      return out;
    case Regime::kFixed:
      for (const auto& a : d.actions) out.emplace_back(a.size(), 0);
      return out;
    case Regime::kOracle:
      return d.actions;
    case Regime::kPredictedOA:
      if (training) return d.actions;
      [[fallthrough]];
    case Regime::kPredictedPA:
      if (!model) throw ValidationError("predicted regimes need a trained planner");
      for (const auto& e : d.embeddings) out.push_back(predicted_actions(*model, e, calls));
      return out;
  }
  return out;
}

bool needs_planner(const lm::RegimeSpec& spec, bool training) {
  if (spec.style == Style::kInsert && spec.locus == lm::Locus::kInternal) return false;
  if (spec.regime == Regime::kPredictedPA) return true;
  return spec.regime == Regime::kPredictedOA && !training;
}

json record_json(const generation::GenerationRecord& r) {
  json j;
  j["token_ids"] = r.token_ids;
  j["model_ids"] = r.model_ids;
  j["text"] = r.text;
  j["sentences"] = r.sentences;
  j["planned_actions"] = r.planned_actions;
  j["realized_actions"] = r.realized_actions;
  j["trailing_planned"] = r.trailing_planned ? json(*r.trailing_planned) : json(nullptr);
  j["trailing_realized"] = r.trailing_realized ? json(*r.trailing_realized) : json(nullptr);
  j["plan_following_rate"] = r.plan_following_rate ? json(*r.plan_following_rate) : json(nullptr);
  return j;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

struct Workspace::StageTimer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

// ---------------------------------------------------------------------------

std::string EvalReport::to_json() const {
  auto finite = [](double v, const char* what) {
    if (!std::isfinite(v)) throw ValidationError(std::string("evaluation produced a non-finite ") + what);
    return v;
  };
  json j;
  j["regime"] = regime;
  j["style"] = style;
  j["locus"] = locus;
  j["config_digest"] = config_digest;
  j["seed"] = seed;
  j["val_ppl"] = finite(val_ppl, "val_ppl");
  j["ppl"] = finite(ppl, "ppl");
  j["lengths"] = lengths;
  json rouge = json::object(), ed = json::object();
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    rouge[std::to_string(lengths[i])] = finite(rouge2.at(i), "rouge2");
    ed[std::to_string(lengths[i])] = finite(edit.at(i), "edit distance");
  }
  j["rouge2"] = rouge;
  j["rouge2_mean"] = finite(rouge2_mean, "rouge2_mean");
  j["edit"] = ed;
  j["edit_mean"] = finite(edit_mean, "edit_mean");
  j["latent_ppl"] = latent_ppl ? json(finite(*latent_ppl, "latent_ppl")) : json(nullptr);
  j["plan_following_rate"] = plan_following_rate ? json(*plan_following_rate) : json(nullptr);
  json pl = json::object();
  pl["accuracy"] = planner_accuracy ? json(*planner_accuracy) : json(nullptr);
  pl["average_rank"] = planner_average_rank ? json(*planner_average_rank) : json(nullptr);
  pl["invocations"] = planner_invocations;
  j["planner"] = pl;
  j["conditional_samples"] = conditional_samples;
  j["unconditional_samples"] = unconditional_samples;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

Workspace::Workspace(fs::path dir, RunConfig config, bool force)
    : dir_(std::move(dir)), config_(std::move(config)), force_(force) {
  config_.validate();
  digest_ = config_.digest();
}

fs::path Workspace::output(const std::string& rel) const {
  const fs::path p = path(rel);
  fs::create_directories(p.parent_path());
  return p;
}

std::string Workspace::tag(const lm::RegimeSpec& spec) {
  if (spec.style == Style::kAdapter) return lm::to_string(spec.regime);
  if (spec.locus == lm::Locus::kInternal) return "insert_internal";
  return "insert_external_" + lm::to_string(spec.regime);
}

std::string Workspace::require(const std::string& manifest, const std::string& producer,
                               std::span<const std::string> files) const {
  for (const auto& f : files) {
    if (!fs::exists(path(f))) throw MissingArtifactError(path(f).string(), producer);
  }
  const fs::path mpath = path("manifests/" + manifest + ".json");
  if (!fs::exists(mpath)) throw MissingArtifactError(mpath.string(), producer);
  const json m = json::parse(read_file(mpath));
  const std::string found = m.at("config_digest").get<std::string>();
  if (found != digest_ && !force_) {
    throw ValidationError("artifact from `" + producer + "` was built with config digest " + found +
                          " but the current config digest is " + digest_ +
                          "; rerun that step or pass --force");
  }
  return found;
}

void Workspace::write_manifest(const std::string& manifest, const std::string& command,
                               std::span<const std::string> inputs, std::span<const std::string> outputs,
                               double wall_seconds) const {
  auto files = [this](std::span<const std::string> list) {
    json arr = json::array();
    for (const auto& f : list) {
      arr.push_back({{"path", f}, {"fnv1a64", hex64(fnv1a64(read_file(path(f))))}});
    }
    return arr;
  };
  json m;
  m["command"] = command;
  m["config_digest"] = digest_;
  m["seed"] = config_.seed;
  m["inputs"] = files(inputs);
  m["outputs"] = files(outputs);
  m["wall_time_seconds"] = wall_seconds;
  json cfg = json::object();
  for (const auto& k : RunConfig::keys()) cfg[k] = config_.get(k);
  m["config"] = cfg;
  write_file(path("manifests/" + manifest + ".json"), m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

namespace {

struct Loader {
  const Workspace& ws;

  corpus::Vocabulary vocab() const { return corpus::Vocabulary::load(ws.path(kVocab)); }

  std::vector<corpus::Article> articles(const std::string& split) const {
    const auto p = ws.path(corpus_file(split));
    if (!fs::exists(p)) throw MissingArtifactError(p.string(), "ingest");
    return corpus::read_jsonl(p);
  }

  actions::ActionSet action_set() const {
    actions::ActionSet set;
    set.centroids = read_plmb(ws.path(kCentroids), "cluster");
    set.k = set.centroids.rows;
    return set;
  }

  SplitData split(const std::string& name, const corpus::Vocabulary& vocab, bool with_embeddings,
                  bool with_actions) const {
    SplitData d;
    d.articles = articles(name);
    for (const auto& a : d.articles) d.streams.push_back(corpus::tokenize(a, vocab));
    if (with_embeddings) {
      const Matrix m = read_plmb(ws.path(embed_file(name)), "embed");
      const auto index = read_row_index(ws.path(embed_index(name)));
      d.embeddings = per_article_rows(m, index, d.articles);
    }
    if (with_actions) {
      const auto p = ws.path(action_file(name));
      if (!fs::exists(p)) throw MissingArtifactError(p.string(), "actions");
      const auto seqs = actions::read_action_sequences(p);
      std::map<std::string, const actions::ActionSequence*> by_id;
      for (const auto& s : seqs) by_id[s.article_id] = &s;
      for (std::size_t i = 0; i < d.articles.size(); ++i) {
        auto it = by_id.find(d.articles[i].id);
        if (it == by_id.end()) throw FormatError("no actions for article '" + d.articles[i].id + "'");
        if (it->second->actions.size() != d.streams[i].sentence_count()) {
          throw FormatError("action count does not match sentence count for '" + d.articles[i].id + "'");
        }
        d.actions.push_back(it->second->actions);
      }
    }
    return d;
  }

  lm::LanguageModel model(const std::string& rel, const std::string& producer) const {
    return lm::LanguageModel::from_checkpoint(ad::load_checkpoint(ws.path(rel), producer));
  }

  planner::PlannerModel planner() const {
    return planner::PlannerModel::from_checkpoint(ad::load_checkpoint(ws.path(kPlanner), "train-planner"));
  }
};

std::vector<std::string> split_files(std::string (*fn)(const std::string&)) {
  std::vector<std::string> out;
  for (const char* s : kSplits) out.push_back(fn(s));
  return out;
}

}  // namespace

void Workspace::ingest(const fs::path& input) {
  StageTimer timer;
  if (!fs::exists(input)) throw ValidationError("input corpus '" + input.string() + "' does not exist");
  const auto articles = corpus::read_articles(input);
  corpus::validate_articles(articles);
  const auto split = corpus::split_corpus(articles, config_.seed, config_.n_val, config_.n_test);
  const auto vocab = corpus::build_vocabulary(split.train, config_.vocab_size);
  fs::create_directories(path("corpus"));
  corpus::write_jsonl(output(corpus_file("train")), split.train);
  corpus::write_jsonl(output(corpus_file("val")), split.val);
  corpus::write_jsonl(output(corpus_file("test")), split.test);
  vocab.save(output(kVocab));
  auto outputs = split_files(corpus_file);
  outputs.push_back(kVocab);
  write_manifest("ingest", "ingest", {}, outputs, timer.seconds());
}

void Workspace::embed(const std::optional<fs::path>& external) {
  StageTimer timer;
  auto inputs = split_files(corpus_file);
  require("ingest", "ingest", inputs);
  Loader load{*this};
  fs::create_directories(path("embeddings"));
  std::optional<Matrix> ext;
  std::map<RowKey, std::size_t> ext_rows;
  if (external) {
    ext = read_plmb(*external, "embed");
    if (ext->cols != config_.encoder_dim) {
      throw ValidationError("external embeddings have dimension " + std::to_string(ext->cols) +
                            " but encoder_dim is " + std::to_string(config_.encoder_dim));
    }
    fs::path idx = *external;
    idx += ".idx";
    const auto keys = read_row_index(idx);
    if (keys.size() != ext->rows) throw FormatError("external embedding index does not match its matrix");
    for (std::size_t r = 0; r < keys.size(); ++r) ext_rows[keys[r]] = r;
  }
  const encoder::Encoder enc(config_.encoder_config());
  std::vector<std::string> outputs;
  for (const char* split : kSplits) {
    const auto articles = load.articles(split);
    encoder::EmbeddedCorpus ec;
    if (ext) {
      for (const auto& a : articles) {
        for (const auto& s : corpus::split_sentences(a.text)) ec.index.emplace_back(a.id, s.index);
      }
      ec.embeddings = Matrix(ec.index.size(), ext->cols);
      for (std::size_t r = 0; r < ec.index.size(); ++r) {
        auto it = ext_rows.find(ec.index[r]);
        if (it == ext_rows.end()) {
          throw ValidationError("external embeddings lack article '" + ec.index[r].first + "' sentence " +
                                std::to_string(ec.index[r].second));
        }
        std::copy(ext->row(it->second).begin(), ext->row(it->second).end(), ec.embeddings.row(r).begin());
      }
    } else {
      ec = encoder::embed_corpus(articles, enc);
    }
    write_plmb(output(embed_file(split)), ec.embeddings);
    write_row_index(output(embed_index(split)), ec.index);
    outputs.push_back(embed_file(split));
    outputs.push_back(embed_index(split));
  }
  write_manifest("embed", "embed", inputs, outputs, timer.seconds());
}

actions::ActionSet Workspace::cluster() {
  StageTimer timer;
  const std::vector<std::string> inputs{embed_file("train")};
  require("embed", "embed", inputs);
  const Matrix points = read_plmb(path(embed_file("train")), "embed");
  auto set = actions::kmeans_fit(points, config_.k, config_.seed, config_.kmeans_max_iters,
                                 config_.kmeans_restarts);
  write_plmb(output(kCentroids), set.centroids);
  json info;
  info["config_digest"] = digest_;
  info["k"] = set.k;
  info["seed"] = set.seed;
  info["max_iters"] = set.max_iters;
  info["restarts"] = set.restarts;
  info["iterations"] = set.iterations;
  info["inertia"] = set.inertia;
  info["inertia_trace"] = set.inertia_trace;
  write_file(path(kClusterInfo), info.dump(2) + "\n");
  const std::vector<std::string> outputs{kCentroids, kClusterInfo};
  write_manifest("cluster", "cluster", inputs, outputs, timer.seconds());
  return set;
}

void Workspace::assign_actions() {
  StageTimer timer;
  auto inputs = split_files(embed_file);
  require("embed", "embed", inputs);
  require("cluster", "cluster", std::vector<std::string>{kCentroids});
  inputs.push_back(kCentroids);
  Loader load{*this};
  const auto set = load.action_set();
  std::vector<std::string> outputs;
  for (const char* split : kSplits) {
    const Matrix m = read_plmb(path(embed_file(split)), "embed");
    const auto index = read_row_index(path(embed_index(split)));
    std::vector<actions::ActionSequence> seqs;
    for (std::size_t r = 0; r < index.size(); ++r) {
      if (seqs.empty() || seqs.back().article_id != index[r].first) seqs.push_back({index[r].first, {}});
      seqs.back().actions.push_back(actions::assign_action(m.row(r), set));
    }
    fs::create_directories(path("actions"));
    actions::write_action_sequences(output(action_file(split)), seqs);
    outputs.push_back(action_file(split));
  }
  write_manifest("actions", "actions", inputs, outputs, timer.seconds());
}

void Workspace::pretrain_lm() {
  StageTimer timer;
  std::vector<std::string> inputs{corpus_file("train"), corpus_file("val"), kVocab};
  require("ingest", "ingest", inputs);
  Loader load{*this};
  const auto vocab = load.vocab();
  const auto train = load.split("train", vocab, false, false);
  const auto val = load.split("val", vocab, false, false);
  lm::LanguageModel model(config_.lm_config(vocab.size()));
  const auto result = lm::pretrain_base(model, lm::make_documents(train.streams),
                                        lm::make_documents(val.streams), config_.pretrain_config());
  nlohmann::json meta;
  meta["config_digest"] = digest_;
  meta["stage"] = "pretrain-lm";
  meta["steps"] = result.steps;
  meta["final_train_loss"] = result.train_loss.empty() ? 0.0 : result.train_loss.back();
  ad::save_checkpoint(output(kBaseLm), model.to_checkpoint(meta.dump()));
  write_manifest("pretrain-lm", "pretrain-lm", inputs, std::vector<std::string>{kBaseLm}, timer.seconds());
}

planner::PlannerMetrics Workspace::train_planner() {
  StageTimer timer;
  std::vector<std::string> inputs{embed_file("train"), embed_file("val"), action_file("train"),
                                  action_file("val"), kCentroids, kVocab};
  require("embed", "embed", std::span(inputs).subspan(0, 2));
  require("actions", "actions", std::span(inputs).subspan(2, 2));
  require("cluster", "cluster", std::span(inputs).subspan(4, 1));
  Loader load{*this};
  const auto vocab = load.vocab();
  const auto set = load.action_set();
  const auto train = load.split("train", vocab, true, true).planner_articles();
  const auto val = load.split("val", vocab, true, true).planner_articles();
  planner::PlannerModel model(config_.planner_config(), set.centroids);
  const auto result = planner::train_planner(model, train, val, config_.planner_train_config());
  const auto metrics = planner::evaluate_planner(model, val);
  nlohmann::json meta;
  meta["config_digest"] = digest_;
  meta["stage"] = "train-planner";
  meta["best_epoch"] = result.best_epoch;
  meta["steps"] = result.steps;
  meta["val_accuracy"] = metrics.accuracy;
  meta["val_average_rank"] = metrics.average_rank;
  ad::save_checkpoint(output(kPlanner), model.to_checkpoint(meta.dump()));
  write_manifest("train-planner", "train-planner", inputs, std::vector<std::string>{kPlanner}, timer.seconds());
  return metrics;
}

void Workspace::finetune(const lm::RegimeSpec& spec) {
  StageTimer timer;
  spec.validate();
  const bool insert = spec.style == Style::kInsert;
  const bool internal = insert && spec.locus == lm::Locus::kInternal;
  if (insert && !internal && spec.regime == Regime::kNone) {
    throw ValidationError("insert style with the external locus needs a regime other than none");
  }
  const std::string t = tag(spec);
  std::vector<std::string> inputs{kBaseLm, kVocab, corpus_file("train"), corpus_file("val")};
  require("pretrain-lm", "pretrain-lm", std::vector<std::string>{kBaseLm});
  require("ingest", "ingest", std::vector<std::string>{kVocab});
  const bool adapts = spec.regime != Regime::kNone || insert;
  if (adapts) {
    const std::vector<std::string> acts{action_file("train"), action_file("val"), kCentroids};
    require("actions", "actions", std::span(acts).subspan(0, 2));
    require("cluster", "cluster", std::span(acts).subspan(2, 1));
    inputs.insert(inputs.end(), acts.begin(), acts.end());
  }
  const bool planned = needs_planner(spec, true);
  if (planned) {
    require("train-planner", "train-planner", std::vector<std::string>{kPlanner});
    require("embed", "embed", std::vector<std::string>{embed_file("train"), embed_file("val")});
    inputs.push_back(kPlanner);
  }

  Loader load{*this};
  const auto vocab = load.vocab();
  lm::LanguageModel base = load.model(kBaseLm, "pretrain-lm");
  const auto train = load.split("train", vocab, planned, adapts);
  const auto val = load.split("val", vocab, planned, adapts);
  std::optional<planner::PlannerModel> pl;
  if (planned) pl.emplace(load.planner());
  const Regime source = internal ? Regime::kOracle : spec.regime;
  const auto train_actions = regime_actions(source, true, train, pl ? &*pl : nullptr, nullptr);
  const auto val_actions = regime_actions(source, true, val, pl ? &*pl : nullptr, nullptr);

  lm::LmTrainResult result;
  std::optional<lm::LanguageModel> model;
  if (insert) {
    model.emplace(lm::finetune_insert(base, config_.k, spec.locus, train.streams, train_actions, val.streams,
                                      val_actions, config_.finetune_config(), &result));
  } else if (spec.regime == Regime::kNone) {
    model.emplace(std::move(base));
  } else {
    base.attach_adapter(load.action_set().centroids);
    result = lm::finetune_adapter(base, lm::make_documents(train.streams, &train_actions),
                                  lm::make_documents(val.streams, &val_actions), config_.finetune_config());
    model.emplace(std::move(base));
  }
  nlohmann::json meta;
  meta["config_digest"] = digest_;
  meta["stage"] = "finetune";
  meta["regime"] = lm::to_string(spec.regime);
  meta["style"] = lm::to_string(spec.style);
  meta["locus"] = lm::to_string(spec.locus);
  meta["steps"] = result.steps;
  meta["best_step"] = result.best_step;
  ad::save_checkpoint(output(lm_file(t)), model->to_checkpoint(meta.dump()));
  write_manifest("finetune." + t, "finetune", inputs, std::vector<std::string>{lm_file(t)}, timer.seconds());
}

void Workspace::generate(const lm::RegimeSpec& spec) {
  StageTimer timer;
  spec.validate();
  const std::string t = tag(spec);
  const bool insert = spec.style == Style::kInsert;
  const bool internal = insert && spec.locus == lm::Locus::kInternal;
  std::vector<std::string> inputs{lm_file(t), kVocab, kCentroids, corpus_file("train"), corpus_file("test"),
                                  action_file("train"), action_file("test")};
  require("finetune." + t, "finetune", std::span(inputs).subspan(0, 1));
  require("ingest", "ingest", std::span(inputs).subspan(1, 1));
  require("cluster", "cluster", std::span(inputs).subspan(2, 1));
  require("actions", "actions", std::span(inputs).subspan(5, 2));
  const bool planned = needs_planner(spec, false);
  if (planned) {
    require("train-planner", "train-planner", std::vector<std::string>{kPlanner});
    inputs.push_back(kPlanner);
  }
  Loader load{*this};
  const auto vocab = load.vocab();
  const auto set = load.action_set();
  const auto model = load.model(lm_file(t), "finetune");
  const encoder::Encoder enc(config_.encoder_config());
  const auto test = load.split("test", vocab, false, true);
  const auto train = load.split("train", vocab, false, true);
  std::optional<planner::PlannerModel> pl;
  if (planned) pl.emplace(load.planner());

  const std::size_t max_len = *std::max_element(config_.lengths.begin(), config_.lengths.end());
  std::string out;
  auto emit = [&](const generation::GenerationRecord& rec, json head) {
    const json body = record_json(rec);
    for (const auto& [k, v] : body.items()) head[k] = v;
    out += head.dump() + "\n";
  };
  auto predictor_for = [&](const std::vector<ActionId>& oracle) -> std::unique_ptr<generation::ActionPredictor> {
    if (internal || spec.regime == Regime::kNone || spec.regime == Regime::kFixed) return nullptr;
    if (spec.regime == Regime::kOracle) return std::make_unique<SequencePredictor>(oracle);
    return std::make_unique<generation::PlannerPredictor>(*pl);
  };

  std::size_t produced = 0;
  for (std::size_t i = 0; i < test.articles.size() && produced < config_.eval_articles; ++i) {
    const std::size_t n = test.streams[i].sentence_count();
    if (n < 2) continue;
    const std::size_t n_prefix = n / 2;
    auto predictor = predictor_for(test.actions[i]);
    generation::Generator gen{model, spec, set, enc, vocab, predictor.get()};
    const auto prefix = generation::make_prefix(test.articles[i], vocab, n_prefix);
    const std::uint64_t seed = splitmix64(config_.seed + i);
    const auto rec = gen.generate(prefix, config_.generation_config(max_len, seed));
    json head;
    head["config_digest"] = digest_;
    head["mode"] = "conditional";
    head["article_id"] = test.articles[i].id;
    head["prefix_sentences"] = n_prefix;
    head["seed"] = seed;
    emit(rec, head);
    ++produced;
  }
  for (std::size_t i = 0; i < config_.uncond_samples; ++i) {
    auto predictor = predictor_for(train.actions.empty() ? std::vector<ActionId>{}
                                                         : train.actions[i % train.actions.size()]);
    generation::Generator gen{model, spec, set, enc, vocab, predictor.get()};
    auto cfg = config_.generation_config(config_.uncond_tokens, splitmix64(config_.seed + 1000003 + i));
    cfg.mode = generation::Mode::kUnconditional;
    const auto rec = gen.generate(generation::empty_prefix(), cfg);
    json head;
    head["config_digest"] = digest_;
    head["mode"] = "unconditional";
    head["article_id"] = nullptr;
    head["prefix_sentences"] = 0;
    head["seed"] = cfg.seed;
    emit(rec, head);
  }
  write_file(path(gen_file(t)), out);
  write_manifest("generate." + t, "generate", inputs, std::vector<std::string>{gen_file(t)}, timer.seconds());
}

double Workspace::regime_perplexity(const lm::RegimeSpec& spec, const std::string& split) {
  const std::string t = tag(spec);
  require("finetune." + t, "finetune", std::vector<std::string>{lm_file(t)});
  const bool insert = spec.style == Style::kInsert;
  const bool internal = insert && spec.locus == lm::Locus::kInternal;
  const bool planned = needs_planner(spec, false);
  const bool adapts = (spec.regime != Regime::kNone || insert) && !internal;
  Loader load{*this};
  const auto vocab = load.vocab();
  const auto model = load.model(lm_file(t), "finetune");
  const auto d = load.split(split, vocab, planned, adapts);
  std::optional<planner::PlannerModel> pl;
  if (planned) pl.emplace(load.planner());
  const auto acts = regime_actions(spec.regime, false, d, pl ? &*pl : nullptr, nullptr);
  if (internal) return lm::insert_perplexity(model, vocab.size(), spec.locus, d.streams, nullptr).ppl();
  if (insert) return lm::insert_perplexity(model, vocab.size(), spec.locus, d.streams, &acts).ppl();
  if (spec.regime == Regime::kNone) return lm::perplexity(model, lm::make_documents(d.streams), false).ppl();
  return lm::perplexity(model, lm::make_documents(d.streams, &acts), true).ppl();
}

EvalReport Workspace::evaluate(const lm::RegimeSpec& spec) {
  StageTimer timer;
  spec.validate();
  const std::string t = tag(spec);
  const bool insert = spec.style == Style::kInsert;
  const bool internal = insert && spec.locus == lm::Locus::kInternal;
  const bool planned = needs_planner(spec, false);
  std::vector<std::string> inputs{lm_file(t), gen_file(t), kVocab, kCentroids, corpus_file("val"),
                                  corpus_file("test"), action_file("train"), action_file("val"),
                                  action_file("test")};
  std::vector<std::string> digests;
  digests.push_back(require("finetune." + t, "finetune", std::span(inputs).subspan(0, 1)));
  digests.push_back(require("generate." + t, "generate", std::span(inputs).subspan(1, 1)));
  digests.push_back(require("ingest", "ingest", std::span(inputs).subspan(2, 1)));
  digests.push_back(require("cluster", "cluster", std::span(inputs).subspan(3, 1)));
  digests.push_back(require("actions", "actions", std::span(inputs).subspan(6, 3)));
  if (planned) {
    const std::vector<std::string> more{kPlanner, embed_file("val"), embed_file("test")};
    digests.push_back(require("train-planner", "train-planner", std::span(more).subspan(0, 1)));
    digests.push_back(require("embed", "embed", std::span(more).subspan(1, 2)));
    inputs.insert(inputs.end(), more.begin(), more.end());
  }
  for (const auto& d : digests) {
    if (d != digests.front()) {
      throw ValidationError("evaluation inputs come from different configs (digests " + digests.front() +
                            " and " + d + ")");
    }
  }

  Loader load{*this};
  const auto vocab = load.vocab();
  const auto set = load.action_set();
  const encoder::Encoder enc(config_.encoder_config());
  const auto model = load.model(lm_file(t), "finetune");
  std::optional<planner::PlannerModel> pl;
  if (planned) pl.emplace(load.planner());

  EvalReport rep;
  rep.regime = lm::to_string(spec.regime);
  rep.style = lm::to_string(spec.style);
  rep.locus = lm::to_string(spec.locus);
  rep.config_digest = digests.front();
  rep.seed = config_.seed;
  rep.lengths = config_.lengths;

  std::size_t calls = 0;
  auto split_ppl = [&](const SplitData& d) {
    const auto acts = regime_actions(spec.regime, false, d, pl ? &*pl : nullptr, &calls);
    if (internal) return lm::insert_perplexity(model, vocab.size(), spec.locus, d.streams, nullptr).ppl();
    if (insert) return lm::insert_perplexity(model, vocab.size(), spec.locus, d.streams, &acts).ppl();
    if (spec.regime == Regime::kNone) return lm::perplexity(model, lm::make_documents(d.streams), false).ppl();
    return lm::perplexity(model, lm::make_documents(d.streams, &acts), true).ppl();
  };
  const auto val = load.split("val", vocab, planned, true);
  const auto test = load.split("test", vocab, planned, true);
  rep.val_ppl = split_ppl(val);
  rep.ppl = split_ppl(test);

  // Generations: paired metrics on conditional samples, latent perplexity on
  // unconditional ones.
  std::map<std::string, std::size_t> test_index;
  for (std::size_t i = 0; i < test.articles.size(); ++i) test_index[test.articles[i].id] = i;
  std::vector<std::vector<double>> rouge(rep.lengths.size()), edit(rep.lengths.size());
  std::vector<double> follow, latent;
  std::vector<std::vector<int>> uncond_actions;
  std::istringstream gen_in(read_file(path(gen_file(t))));
  std::string line;
  while (std::getline(gen_in, line)) {
    if (line.empty()) continue;
    const json r = json::parse(line);
    if (r.at("config_digest").get<std::string>() != digests.front()) {
      throw ValidationError("generation record from a different config in " + gen_file(t));
    }
    if (!r.at("plan_following_rate").is_null()) follow.push_back(r.at("plan_following_rate").get<double>());
    const auto ids = r.at("token_ids").get<std::vector<int>>();
    if (r.at("mode").get<std::string>() == "unconditional") {
      auto acts = r.at("realized_actions").get<std::vector<int>>();
      if (!r.at("trailing_realized").is_null()) acts.push_back(r.at("trailing_realized").get<int>());
      uncond_actions.push_back(std::move(acts));
      ++rep.unconditional_samples;
      continue;
    }
    auto it = test_index.find(r.at("article_id").get<std::string>());
    if (it == test_index.end()) throw FormatError("generation refers to an unknown test article");
    const auto& stream = test.streams[it->second];
    const std::size_t n_prefix = r.at("prefix_sentences").get<std::size_t>();
    std::vector<int> ref_all;
    for (std::size_t p = 1; p < stream.token_ids.size(); ++p) {
      if (stream.sentence_index_of_token[p] >= n_prefix) ref_all.push_back(stream.token_ids[p]);
    }
    for (std::size_t li = 0; li < rep.lengths.size(); ++li) {
      const std::size_t len = rep.lengths[li];
      const std::span<const int> hyp(ids.data(), std::min(len, ids.size()));
      const std::span<const int> ref(ref_all.data(), std::min(len, ref_all.size()));
      std::vector<std::string> hyp_tok, ref_tok;
      for (int id : hyp) hyp_tok.push_back(vocab.token(id));
      for (int id : ref) ref_tok.push_back(vocab.token(id));
      rouge[li].push_back(metrics::rouge2_f1(ref_tok, hyp_tok));
      const auto ha = generation::token_actions(hyp, vocab, set, enc);
      const auto ra = generation::token_actions(ref, vocab, set, enc);
      edit[li].push_back(metrics::normalized_edit(metrics::levenshtein(ra, ha), config_.edit_base_len, len));
    }
    ++rep.conditional_samples;
  }
  for (std::size_t li = 0; li < rep.lengths.size(); ++li) {
    rep.rouge2.push_back(mean_of(rouge[li]));
    rep.edit.push_back(mean_of(edit[li]));
  }
  rep.rouge2_mean = mean_of(rep.rouge2);
  rep.edit_mean = mean_of(rep.edit);
  if (!follow.empty()) rep.plan_following_rate = mean_of(follow);

  if (!uncond_actions.empty()) {
    const auto train_acts = load.split("train", vocab, false, true).actions;
    std::vector<std::vector<int>> seqs(train_acts.begin(), train_acts.end());
    const auto critic = hmm::hmm_fit(seqs, config_.hmm_states, set.k, config_.seed, config_.hmm_max_iters);
    for (const auto& a : uncond_actions) {
      if (auto v = hmm::latent_perplexity(critic, a)) latent.push_back(*v);
    }
    if (!latent.empty()) rep.latent_ppl = mean_of(latent);
  }

  if (planned) {
    const auto metrics = planner::evaluate_planner(*pl, test.planner_articles());
    rep.planner_accuracy = metrics.accuracy;
    rep.planner_average_rank = metrics.average_rank;
    calls += metrics.count;
  }
  rep.planner_invocations = calls;

  write_file(path(report_file(t)), rep.to_json());
  write_manifest("evaluate." + t, "evaluate", inputs, std::vector<std::string>{report_file(t)}, timer.seconds());
  return rep;
}

ScanReport Workspace::scan_oracle() {
  StageTimer timer;
  const std::vector<std::string> inputs{lm_file("oracle"), kVocab, corpus_file("test"), action_file("test")};
  require("finetune.oracle", "finetune", std::span(inputs).subspan(0, 1));
  require("ingest", "ingest", std::span(inputs).subspan(1, 2));
  require("actions", "actions", std::span(inputs).subspan(3, 1));
  Loader load{*this};
  const auto vocab = load.vocab();
  const auto model = load.model(lm_file("oracle"), "finetune");
  if (!model.has_adapter()) throw ValidationError("scan-oracle needs an adapter-conditioned model");
  auto test = load.split("test", vocab, false, true);
  const std::size_t n = std::min(config_.scan_articles, test.streams.size());
  test.streams.resize(n);
  test.actions.resize(n);
  ScanReport rep;
  rep.oracle = scan::oracle_scan(model, test.streams, test.actions);
  const std::size_t variants = config_.noise_variants ? config_.noise_variants : model.num_actions();
  rep.noise = scan::noise_scan(model, test.streams, test.actions, variants, config_.seed);

  fs::create_directories(path("reports"));
  scan::write_curve_csv(output("reports/scan_oracle.csv"), rep.oracle.curve);
  scan::write_curve_csv(output("reports/scan_noise.csv"), rep.noise.curve);
  json j;
  j["config_digest"] = digest_;
  j["articles"] = n;
  j["oracle_ppl"] = rep.oracle.oracle_ppl;
  j["rank1_ppl"] = rep.oracle.curve.empty() ? 0.0 : rep.oracle.curve.front();
  j["mean_oracle_rank"] = rep.oracle.mean_oracle_rank;
  j["nearest_rank"] = rep.oracle.nearest_rank;
  j["noise_sigma"] = rep.noise.sigma;
  j["noise_variants"] = variants;
  j["noise_best_ppl"] = rep.noise.curve.empty() ? 0.0 : rep.noise.curve.front();
  j["noise_above_best_action"] =
      !rep.noise.curve.empty() && !rep.oracle.curve.empty() && rep.noise.curve.front() >= rep.oracle.curve.front();
  json per = json::array();
  for (const auto& a : rep.oracle.articles) {
    per.push_back({{"article_id", a.article_id},
                   {"sentences", a.sentences},
                   {"rank1_ppl", a.rank1_ppl},
                   {"oracle_ppl", a.oracle_ppl}});
  }
  j["per_article"] = per;
  write_file(path("reports/scan.json"), j.dump(2) + "\n");
  write_manifest("scan-oracle", "scan-oracle", inputs,
                 std::vector<std::string>{"reports/scan.json", "reports/scan_oracle.csv", "reports/scan_noise.csv"},
                 timer.seconds());
  return rep;
}

actions::ClusterReport Workspace::inspect_cluster(ActionId action, std::size_t top_n) const {
  require("cluster", "cluster", std::vector<std::string>{kCentroids});
  Loader load{*this};
  const auto set = load.action_set();
  if (action < 0 || static_cast<std::size_t>(action) >= set.size()) {
    throw ValidationError("action " + std::to_string(action) + " is outside [0, " + std::to_string(set.size()) + ")");
  }
  const encoder::Encoder enc(config_.encoder_config());
  return actions::inspect_cluster(action, load.articles("train"), set, enc, top_n);
}

std::vector<SweepRow> Workspace::sweep_k(std::span<const std::size_t> ks) {
  StageTimer timer;
  std::vector<std::string> shared = split_files(corpus_file);
  shared.push_back(kVocab);
  require("ingest", "ingest", shared);
  const auto emb = [] {
    std::vector<std::string> v;
    for (const char* s : kSplits) {
      v.push_back(embed_file(s));
      v.push_back(embed_index(s));
    }
    return v;
  }();
  require("embed", "embed", emb);
  require("pretrain-lm", "pretrain-lm", std::vector<std::string>{kBaseLm});

  const lm::RegimeSpec pa{Regime::kPredictedPA, Style::kAdapter, lm::Locus::kExternal};
  std::vector<SweepRow> rows;
  std::string csv = "k,val_ppl,test_ppl,accuracy,average_rank\n";
  for (std::size_t k : ks) {
    RunConfig sub_cfg = config_;
    sub_cfg.k = k;
    Workspace sub(dir_ / "sweep_k" / ("k" + std::to_string(k)), sub_cfg, force_);
    // Artifacts that do not depend on k are copied and re-registered under
    // the sub-run's digest.
    auto copy = [&](std::span<const std::string> files, const std::string& manifest) {
      for (const auto& f : files) {
        fs::create_directories(sub.path(f).parent_path());
        fs::copy_file(path(f), sub.path(f), fs::copy_options::overwrite_existing);
      }
      sub.write_manifest(manifest, "sweep-k", {}, files, 0.0);
    };
    copy(shared, "ingest");
    copy(emb, "embed");
    copy(std::vector<std::string>{kBaseLm}, "pretrain-lm");
    sub.cluster();
    sub.assign_actions();
    sub.train_planner();
    sub.finetune(pa);
    SweepRow row;
    row.k = k;
    row.val_ppl = sub.regime_perplexity(pa, "val");
    row.test_ppl = sub.regime_perplexity(pa, "test");
    Loader sl{sub};
    const auto vocab = sl.vocab();
    const auto metrics = planner::evaluate_planner(sl.planner(), sl.split("test", vocab, true, true).planner_articles());
    row.accuracy = metrics.accuracy;
    row.average_rank = metrics.average_rank;
    rows.push_back(row);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f\n", row.k, row.val_ppl, row.test_ppl, row.accuracy,
                  row.average_rank);
    csv += buf;
  }
  write_file(path("reports/sweep_k.csv"), csv);
  auto inputs = shared;
  inputs.insert(inputs.end(), emb.begin(), emb.end());
  inputs.push_back(kBaseLm);
  write_manifest("sweep-k", "sweep-k", inputs, std::vector<std::string>{"reports/sweep_k.csv"}, timer.seconds());
  return rows;
}

}  // namespace planlm::pipeline
