#include "planlm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "planlm/errors.hpp"
#include "planlm/rng.hpp"

namespace planlm::synthdata {
namespace {

std::vector<std::string> placeholders(const std::string& tmpl) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string::npos) {
    const auto end = tmpl.find('}', pos);
    if (end == std::string::npos) throw ValidationError("unterminated slot in template '" + tmpl + "'");
    out.push_back(tmpl.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}

std::size_t draw(Rng& rng, std::span<const double> probs) {
  double u = rng.uniform();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    u -= probs[i];
    if (u < 0.0) return i;
  }
  return probs.size() - 1;
}

std::string fill(const Section& s, std::size_t t, Rng& rng) {
  const std::string& tmpl = s.templates.at(t);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out += tmpl.substr(pos);
      break;
    }
    const auto close = tmpl.find('}', open);
    out += tmpl.substr(pos, open - pos);
    const auto& lex = s.slots.at(tmpl.substr(open + 1, close - open - 1));
    out += lex[rng.index(lex.size())];
    pos = close + 1;
  }
  return out;
}

// Minimum-cost assignment on a square matrix (Hungarian method, potentials).
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1), v(n + 1);
  std::vector<std::size_t> p(n + 1), way(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return row_to_col;
}

}  // namespace

void TemplateGrammar::validate() const {
  const std::size_t s = sections.size();
  if (s == 0) throw ValidationError("grammar has no sections");
  if (initial.size() != s || transition.size() != s * s) {
    throw ValidationError("grammar probabilities do not match its " + std::to_string(s) + " sections");
  }
  auto check_row = [](std::span<const double> row, const std::string& what) {
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw ValidationError(what + " has a negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError(what + " does not sum to 1");
  };
  check_row(initial, "initial distribution");
  for (std::size_t i = 0; i < s; ++i) {
    check_row(std::span<const double>(transition).subspan(i * s, s), "transition row " + std::to_string(i));
  }
  for (const auto& sec : sections) {
    if (sec.templates.empty()) throw ValidationError("section '" + sec.name + "' has no templates");
    for (const auto& t : sec.templates) {
      for (const auto& slot : placeholders(t)) {
        auto it = sec.slots.find(slot);
        if (it == sec.slots.end() || it->second.empty()) {
          throw ValidationError("section '" + sec.name + "' lacks lexicon for slot '" + slot + "'");
        }
      }
      if (!coda.empty() && (t.empty() || (t.back() != '.' && t.back() != '!' && t.back() != '?'))) {
        throw ValidationError("template '" + t + "' must end in terminal punctuation to take a coda");
      }
      if (corpus::word_tokens(t).size() < 3) {
        throw ValidationError("template '" + t + "' yields fewer than three tokens");
      }
    }
  }
}

TemplateGrammar biography_grammar(double cycle_prob, std::uint64_t seed) {
  if (cycle_prob < 0.0 || cycle_prob > 1.0) throw ValidationError("cycle_prob must lie in [0, 1]");
  TemplateGrammar g;
  g.seed = seed;
  g.sections = {
      {"origin",
       {"She was born in the village of {city} in {year}.",
        "In {year} she was born in the village of {city}.",
        "Early in {year} she was born in the village of {city}."},
       {{"city", {"ashford", "brookfield", "carlisle", "dunmore", "elmstead", "fairhaven", "glenrock", "hartwell"}},
        {"year", {"1851", "1863", "1872", "1880", "1894", "1902", "1911", "1925"}}}},
      {"education",
       {"She studied {subject} at the university of {school}.",
        "At the university of {school} she studied {subject}.",
        "Later she studied {subject} at the university of {school}."},
       {{"subject", {"physics", "chemistry", "botany", "geology", "anatomy", "algebra", "astronomy", "zoology"}},
        {"school", {"oxford", "leiden", "uppsala", "bologna", "padua", "geneva", "vienna", "prague"}}}},
      {"career",
       {"She worked as a {job} for the {firm} company.",
        "For the {firm} company she worked as a {job}.",
        "As a {job} she worked for the {firm} company."},
       {{"job", {"chemist", "surveyor", "banker", "pharmacist", "mechanic", "builder", "printer", "teacher"}},
        {"firm", {"acme", "vulcan", "orion", "zenith", "atlas", "summit", "beacon", "pioneer"}}}},
      {"awards",
       {"She received the {prize} prize in {season}.",
        "In {season} she received the {prize} prize.",
        "That {season} she received the {prize} prize."},
       {{"prize", {"nobel", "copley", "rumford", "lalande", "davy", "wollaston", "hughes", "darwin"}},
        {"season", {"spring", "summer", "autumn", "winter", "january", "march", "july", "october"}}}},
      {"family",
       {"She married {spouse} and raised {count} children.",
        "With {spouse} she raised {count} children after they married.",
        "After she married {spouse} she raised {count} children."},
       {{"spouse", {"robert", "william", "edward", "henry", "charles", "george", "arthur", "frederick"}},
        {"count", {"two", "three", "four", "five", "six", "seven", "eight", "nine"}}}},
      {"travel",
       {"She travelled through {country} by {vehicle}.",
        "By {vehicle} she travelled through {country}.",
        "Through {country} she travelled by {vehicle}."},
       {{"country", {"egypt", "persia", "india", "china", "japan", "brazil", "peru", "chile"}},
        {"vehicle", {"train", "steamer", "carriage", "horse", "bicycle", "camel", "canoe", "airship"}}}},
      {"death",
       {"She died in {hospital} of {illness}.",
        "Of {illness} she died in {hospital}.",
        "In {hospital} she died of {illness}."},
       {{"hospital", {"paris", "london", "berlin", "madrid", "lisbon", "dublin", "naples", "munich"}},
        {"illness", {"cholera", "typhus", "pneumonia", "influenza", "tuberculosis", "malaria", "smallpox", "diphtheria"}}}},
      {"legacy",
       {"A statue of her stands in {plaza} beside the {monument}.",
        "Beside the {monument} in {plaza} stands a statue of her.",
        "In {plaza} a statue of her stands beside the {monument}."},
       {{"plaza", {"trafalgar", "piccadilly", "kensington", "mayfair", "chelsea", "soho", "belgravia", "marylebone"}},
        {"monument", {"fountain", "obelisk", "cathedral", "library", "museum", "theatre", "observatory", "bridge"}}}},
  };
  const std::size_t s = g.sections.size();
  g.initial.assign(s, 0.0);
  g.initial[0] = 1.0;
  g.transition.assign(s * s, (1.0 - cycle_prob) / static_cast<double>(s - 1));
  for (std::size_t i = 0; i < s; ++i) {
    g.transition[i * s + i] = (1.0 - cycle_prob) / static_cast<double>(s - 1);
    g.transition[i * s + (i + 1) % s] = cycle_prob;
  }
  // Rows: cycle_prob to the successor, the rest spread over the other S-1.
  for (std::size_t i = 0; i < s; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < s; ++j) sum += g.transition[i * s + j];
    for (std::size_t j = 0; j < s; ++j) g.transition[i * s + j] /= sum;
  }
  g.validate();
  return g;
}

std::string realize(const Section& section, std::size_t template_index, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return fill(section, template_index, rng);
}

SyntheticCorpus generate_corpus(const TemplateGrammar& grammar, std::size_t n_articles,
                                std::size_t sentences_per_article) {
  grammar.validate();
  const std::size_t s = grammar.size();
  SyntheticCorpus out;
  out.articles.reserve(n_articles);
  out.labels.reserve(n_articles);
  Rng rng(grammar.seed);
  for (std::size_t a = 0; a < n_articles; ++a) {
    corpus::Article art;
    art.id = "synth-" + std::to_string(a);
    art.title = "Biography " + std::to_string(a);
    std::vector<int> labels;
    std::size_t state = draw(rng, grammar.initial);
    for (std::size_t j = 0; j < sentences_per_article; ++j) {
      if (j > 0) {
        state = draw(rng, std::span<const double>(grammar.transition).subspan(state * s, s));
        art.text += ' ';
      }
      const auto& sec = grammar.sections[state];
      std::string sentence = fill(sec, rng.index(sec.templates.size()), rng);
      if (!grammar.coda.empty()) sentence.insert(sentence.size() - 1, " " + grammar.coda);
      art.text += sentence;
      labels.push_back(static_cast<int>(state));
    }
    out.articles.push_back(std::move(art));
    out.labels.push_back(std::move(labels));
  }
  return out;
}

void write_labels(const std::filesystem::path& path, const SyntheticCorpus& corpus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < corpus.articles.size(); ++i) {
    out << corpus.articles[i].id << '\t';
    for (std::size_t j = 0; j < corpus.labels[i].size(); ++j) out << (j ? " " : "") << corpus.labels[i][j];
    out << '\n';
  }
}

std::vector<std::vector<int>> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError(path.string(), "synth");
  std::vector<std::vector<int>> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("malformed labels line: " + line);
    std::istringstream ss(line.substr(tab + 1));
    std::vector<int> row;
    int v;
    while (ss >> v) row.push_back(v);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<double> empirical_transitions(std::span<const std::vector<int>> labels, std::size_t n_states) {
  std::vector<double> m(n_states * n_states, 0.0);
  for (const auto& seq : labels) {
    for (std::size_t t = 1; t < seq.size(); ++t) {
      m[static_cast<std::size_t>(seq[t - 1]) * n_states + static_cast<std::size_t>(seq[t])] += 1.0;
    }
  }
  for (std::size_t i = 0; i < n_states; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n_states; ++j) sum += m[i * n_states + j];
    if (sum > 0.0) {
      for (std::size_t j = 0; j < n_states; ++j) m[i * n_states + j] /= sum;
    }
  }
  return m;
}

double matched_agreement(std::span<const int> labels, std::span<const int> clusters) {
  if (labels.size() != clusters.size()) throw ValidationError("labels and clusters differ in length");
  if (labels.empty()) return 0.0;
  const int max_label = *std::max_element(labels.begin(), labels.end());
  const int max_cluster = *std::max_element(clusters.begin(), clusters.end());
  const std::size_t n = static_cast<std::size_t>(std::max(max_label, max_cluster) + 1);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cost[static_cast<std::size_t>(clusters[i])][static_cast<std::size_t>(labels[i])] -= 1.0;
  }
  const auto match = hungarian(cost);
  double hits = 0.0;
  for (std::size_t c = 0; c < n; ++c) hits -= cost[c][static_cast<std::size_t>(match[c])];
  return hits / static_cast<double>(labels.size());
}

}  // namespace planlm::synthdata
