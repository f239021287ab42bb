#include "cli.hpp"

#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "planlm/config.hpp"
#include "planlm/errors.hpp"
#include "planlm/pipeline.hpp"
#include "planlm/synthdata.hpp"

namespace planlm::cli {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  std::string out_dir = "run";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool force = false;
  std::string log_level = "info";
};

struct Selectors {
  std::string regime;
  std::string style;
  std::string locus;
};

void add_selectors(CLI::App* sub, Selectors& sel) {
  sub->add_option("--regime", sel.regime, "none, fixed, oracle, predicted_oa or predicted_pa");
  sub->add_option("--style", sel.style, "adapter or insert");
  sub->add_option("--locus", sel.locus, "external or internal (insert style)");
}

RunConfig effective_config(const Common& c, const Selectors* sel) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (sel) {
    if (!sel->regime.empty()) cfg.regime = sel->regime;
    if (!sel->style.empty()) cfg.style = sel->style;
    if (!sel->locus.empty()) cfg.locus = sel->locus;
  }
  cfg.validate();
  return cfg;
}

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err, const std::string& level) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("planlm", sink);
  log->set_pattern("[%H:%M:%S] %v");
  log->set_level(spdlog::level::from_str(level));
  return log;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Planning-conditioned language modelling pipeline", "planlm"};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config_path, "key = value config file");
  app.add_option("--out-dir", common.out_dir, "artifact directory")->capture_default_str();
  app.add_option("--seed", common.seed, "override the config seed");
  app.add_option("--set", common.overrides, "override a config key (key=value), repeatable");
  app.add_flag("--force", common.force, "accept upstream artifacts built with a different config");
  app.add_option("--log-level", common.log_level, "trace, debug, info, warn, error or off")
      ->capture_default_str();

  Selectors sel;
  std::string input;
  std::string external;
  std::optional<std::size_t> k, max_iters, restarts;
  int action = 0;
  std::size_t top_n = 10;
  std::vector<std::size_t> ks;
  std::string synth_output;
  std::size_t synth_articles = 2000, synth_sentences = 16;
  double cycle_prob = 0.6;
  bool coda = false;

  auto* ingest = app.add_subcommand("ingest", "split and tokenize a corpus (JSONL file or text directory)");
  ingest->add_option("--input", input, "corpus path")->required();
  auto* embed = app.add_subcommand("embed", "embed every sentence");
  embed->add_option("--external-embeddings", external, "precomputed PLMB matrix with a .idx sidecar");
  auto* cluster = app.add_subcommand("cluster", "k-means over training sentence embeddings");
  cluster->add_option("--k", k, "number of actions");
  cluster->add_option("--max-iters", max_iters, "Lloyd iteration cap");
  cluster->add_option("--restarts", restarts, "keep the lowest-inertia of this many runs");
  auto* acts = app.add_subcommand("actions", "assign an action to every sentence");
  auto* pretrain = app.add_subcommand("pretrain-lm", "train the base language model");
  auto* train_planner = app.add_subcommand("train-planner", "train the next-action planner");
  auto* finetune = app.add_subcommand("finetune", "finetune the language model under a regime");
  add_selectors(finetune, sel);
  auto* generate = app.add_subcommand("generate", "sample conditional and unconditional continuations");
  add_selectors(generate, sel);
  auto* evaluate = app.add_subcommand("evaluate", "write the evaluation report of a regime");
  add_selectors(evaluate, sel);
  auto* scan = app.add_subcommand("scan-oracle", "rank every action per sentence under the oracle model");
  auto* inspect = app.add_subcommand("inspect-cluster", "show the sentences closest to an action");
  inspect->add_option("--action", action, "action id")->required();
  inspect->add_option("--top", top_n, "number of sentences")->capture_default_str();
  auto* sweep = app.add_subcommand("sweep-k", "rerun clustering, planner and finetuning per k");
  sweep->add_option("--ks", ks, "comma-separated k values")->required()->delimiter(',');
  auto* synth = app.add_subcommand("synth", "write a templated synthetic corpus with section labels");
  synth->add_option("--output", synth_output, "JSONL path; labels go to <path>.labels")->required();
  synth->add_option("--articles", synth_articles, "number of articles")->capture_default_str();
  synth->add_option("--sentences", synth_sentences, "sentences per article")->capture_default_str();
  synth->add_option("--cycle-prob", cycle_prob, "probability of moving to the next section")
      ->capture_default_str();
  synth->add_flag("--coda", coda, "end every sentence with the same shared clause");
  auto* show = app.add_subcommand("config", "print the effective config and its digest");
  add_selectors(show, sel);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  std::shared_ptr<spdlog::logger> log;
  try {
    log = make_logger(err, common.log_level);
    const auto t0 = std::chrono::steady_clock::now();
    auto done = [&](const std::string& what) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log->info("{} finished in {:.1f}s", what, s);
    };

    if (synth->parsed()) {
      RunConfig cfg = effective_config(common, nullptr);
      auto grammar = synthdata::biography_grammar(cycle_prob, cfg.seed);
      if (coda) grammar.coda = synthdata::kRecordsCoda;
      const auto corpus = synthdata::generate_corpus(grammar, synth_articles, synth_sentences);
      const fs::path path(synth_output);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      corpus::write_jsonl(path, corpus.articles);
      synthdata::write_labels(fs::path(synth_output + ".labels"), corpus);
      done("synth");
      return 0;
    }

    const bool selects = finetune->parsed() || generate->parsed() || evaluate->parsed() || show->parsed();
    RunConfig cfg = effective_config(common, selects ? &sel : nullptr);
    if (cluster->parsed()) {
      if (k) cfg.k = *k;
      if (max_iters) cfg.kmeans_max_iters = *max_iters;
      if (restarts) cfg.kmeans_restarts = *restarts;
      cfg.validate();
    }
    if (show->parsed()) {
      out << cfg.to_text() << "# digest " << cfg.digest() << "\n";
      return 0;
    }
    pipeline::Workspace ws(common.out_dir, cfg, common.force);
    log->info("config digest {}, out dir {}", ws.digest(), common.out_dir);

    if (ingest->parsed()) {
      ws.ingest(input);
      done("ingest");
    } else if (embed->parsed()) {
      ws.embed(external.empty() ? std::nullopt : std::optional<fs::path>(external));
      done("embed");
    } else if (cluster->parsed()) {
      const auto set = ws.cluster();
      log->info("k={} inertia={:.6g} after {} iterations", set.k, set.inertia, set.iterations);
      done("cluster");
    } else if (acts->parsed()) {
      ws.assign_actions();
      done("actions");
    } else if (pretrain->parsed()) {
      ws.pretrain_lm();
      done("pretrain-lm");
    } else if (train_planner->parsed()) {
      const auto m = ws.train_planner();
      log->info("validation accuracy {:.4f}, average rank {:.3f}", m.accuracy, m.average_rank);
      done("train-planner");
    } else if (finetune->parsed()) {
      ws.finetune(cfg.regime_spec());
      done("finetune");
    } else if (generate->parsed()) {
      ws.generate(cfg.regime_spec());
      done("generate");
    } else if (evaluate->parsed()) {
      const auto rep = ws.evaluate(cfg.regime_spec());
      out << rep.to_json();
      done("evaluate");
    } else if (scan->parsed()) {
      const auto rep = ws.scan_oracle();
      out << fmt::format("oracle ppl {:.4f}, rank-1 ppl {:.4f}, mean oracle rank {:.2f}, nearest rank {}\n",
                         rep.oracle.oracle_ppl, rep.oracle.curve.front(), rep.oracle.mean_oracle_rank,
                         rep.oracle.nearest_rank);
      out << fmt::format("noise sigma {:.4f}, best noise ppl {:.4f}\n", rep.noise.sigma, rep.noise.curve.front());
      done("scan-oracle");
    } else if (inspect->parsed()) {
      const auto rep = ws.inspect_cluster(action, top_n);
      nlohmann::ordered_json j;
      j["action"] = rep.action;
      j["nearest"] = nlohmann::ordered_json::array();
      for (const auto& m : rep.nearest) {
        j["nearest"].push_back({{"article_id", m.article_id},
                                {"sentence_index", m.sentence_index},
                                {"distance", m.distance},
                                {"text", m.text}});
      }
      j["largest"] = nlohmann::ordered_json::array();
      for (const auto& [a, n] : rep.largest) j["largest"].push_back({{"action", a}, {"size", n}});
      out << j.dump(2) << "\n";
    } else if (sweep->parsed()) {
      const auto rows = ws.sweep_k(ks);
      out << "k,val_ppl,test_ppl,accuracy,average_rank\n";
      for (const auto& r : rows) {
        out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.k, r.val_ppl, r.test_ppl, r.accuracy,
                           r.average_rank);
      }
      done("sweep-k");
    }
    return 0;
  } catch (const MissingArtifactError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace planlm::cli
