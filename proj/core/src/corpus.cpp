#include "planlm/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_set>

#include "planlm/errors.hpp"
#include "planlm/rng.hpp"

namespace planlm::corpus {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || (u >= '0' && u <= '9') || (u >= 'a' && u <= 'z') ||
         (u >= 'A' && u <= 'Z');
}

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

constexpr std::array<std::string_view, 9> kAbbreviations = {
    "dr.", "mr.", "mrs.", "st.", "e.g.", "i.e.", "etc.", "vs.", "no."};

bool is_abbreviation(std::string_view word) {
  std::string lowered(word);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(), ascii_lower);
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), lowered) !=
         kAbbreviations.end();
}

// Start of the whitespace-delimited word that ends just before `end`.
std::size_t word_start(std::string_view text, std::size_t floor, std::size_t end) {
  std::size_t ws = end;
  while (ws > floor && !is_space(text[ws - 1])) --ws;
  return ws;
}

}  // namespace

std::vector<SentenceSpan> split_sentences(std::string_view text) {
  std::vector<SentenceSpan> spans;
  constexpr std::size_t npos = std::string_view::npos;
  std::size_t start = npos;

  auto close = [&](std::size_t end) {
    while (end > start && is_space(text[end - 1])) --end;
    if (end > start) {
      SentenceSpan span;
      span.index = spans.size();
      span.char_start = start;
      span.char_end = end;
      spans.push_back(std::move(span));
    }
    start = npos;
  };

  const std::size_t n = text.size();
  for (std::size_t i = 0; i < n; ++i) {
    const char c = text[i];
    if (start == npos) {
      if (!is_space(c)) start = i;
      else continue;
    }
    if (c == '\n') {
      std::size_t j = i + 1;
      while (j < n && (text[j] == ' ' || text[j] == '\t' || text[j] == '\r')) ++j;
      if (j < n && text[j] == '\n') {
        close(i);
        i = j;
      }
      continue;
    }
    if (!is_terminal(c)) continue;

    std::size_t j = i;
    while (j + 1 < n && is_terminal(text[j + 1])) ++j;
    const std::size_t end = j + 1;
    std::size_t k = end;
    while (k < n && is_space(text[k])) ++k;
    if (k == n) {
      close(end);
      break;
    }
    const bool upper_next = text[k] >= 'A' && text[k] <= 'Z';
    if (k > end && upper_next &&
        !is_abbreviation(text.substr(word_start(text, start, end),
                                     end - word_start(text, start, end)))) {
      close(end);
      i = k - 1;
      continue;
    }
    i = j;
  }
  if (start != npos) close(n);
  return spans;
}

bool ends_sentence(std::string_view text) {
  std::size_t end = text.size();
  while (end > 0 && is_space(text[end - 1])) --end;
  if (end == 0 || !is_terminal(text[end - 1])) return false;
  const std::size_t ws = word_start(text, 0, end);
  return !is_abbreviation(text.substr(ws, end - ws));
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (is_word_byte(c)) {
      current.push_back(ascii_lower(c));
      continue;
    }
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
    if (!is_space(c)) out.emplace_back(1, c);
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  static const std::string_view attach = ".,!?;:)]}%";
  std::string out;
  for (const auto& tok : tokens) {
    const bool glue = tok.size() == 1 && attach.find(tok[0]) != std::string_view::npos;
    if (!out.empty() && !glue && out.back() != '(' && out.back() != '[') out.push_back(' ');
    out += tok;
  }
  return out;
}

Vocabulary::Vocabulary()
    : tokens_{std::string(kUnkToken), std::string(kBosToken)},
      ids_{{std::string(kUnkToken), kUnk}, {std::string(kBosToken), kBos}} {}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != kUnkToken || tokens[1] != kBosToken) {
    throw ValidationError("vocabulary must start with <unk>, <bos>");
  }
  Vocabulary v{};
  v.tokens_ = std::move(tokens);
  v.ids_.clear();
  v.ids_.reserve(v.tokens_.size());
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.find(std::string(token)) != ids_.end();
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string(), "ingest");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

Vocabulary build_vocabulary(std::span<const Article> articles, std::size_t max_size) {
  if (max_size < 3) throw ValidationError("vocabulary max_size must be >= 3");
  std::map<std::string, std::size_t> counts;
  for (const auto& a : articles) {
    for (auto& t : word_tokens(a.text)) ++counts[std::move(t)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is lexicographic, so a stable sort by count keeps the tie order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{std::string(kUnkToken), std::string(kBosToken)};
  for (std::size_t i = 0; i < ranked.size() && tokens.size() < max_size; ++i) {
    tokens.push_back(ranked[i].first);
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

std::vector<TokenId> encode_tokens(std::span<const std::string> tokens, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
  return ids;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::vector<std::string> toks;
  toks.reserve(ids.size());
  for (TokenId id : ids) {
    if (id == kBos) continue;
    toks.push_back(vocab.token(id));
  }
  return detokenize(toks);
}

std::vector<SentenceSpan> segment(const Article& article, const Vocabulary& vocab) {
  auto spans = split_sentences(article.text);
  const std::string_view text = article.text;
  for (auto& s : spans) {
    s.article_id = article.id;
    const auto toks = word_tokens(text.substr(s.char_start, s.char_end - s.char_start));
    s.token_ids = encode_tokens(toks, vocab);
  }
  return spans;
}

TokenStream tokenize(std::string_view article_id, std::span<const SentenceSpan> sentences) {
  TokenStream ts;
  ts.article_id = std::string(article_id);
  ts.token_ids.push_back(kBos);
  ts.sentence_index_of_token.push_back(0);
  for (std::size_t j = 0; j < sentences.size(); ++j) {
    for (TokenId id : sentences[j].token_ids) {
      ts.token_ids.push_back(id);
      ts.sentence_index_of_token.push_back(j);
    }
  }
  return ts;
}

TokenStream tokenize(const Article& article, const Vocabulary& vocab) {
  const auto spans = segment(article, vocab);
  return tokenize(article.id, spans);
}

CorpusSplit split_corpus(std::span<const Article> articles, std::uint64_t seed,
                         std::size_t n_val, std::size_t n_test) {
  if (n_val + n_test >= articles.size()) {
    throw ValidationError("corpus of " + std::to_string(articles.size()) +
                          " articles too small for n_val=" + std::to_string(n_val) +
                          " n_test=" + std::to_string(n_test));
  }
  std::vector<std::size_t> order(articles.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  CorpusSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& a = articles[order[i]];
    if (i < n_val) split.val.push_back(a);
    else if (i < n_val + n_test) split.test.push_back(a);
    else split.train.push_back(a);
  }
  return split;
}

void validate_articles(std::span<const Article> articles) {
  std::unordered_set<std::string> seen;
  for (const auto& a : articles) {
    if (!seen.insert(a.id).second) throw ValidationError("duplicate article id '" + a.id + "'");
    const bool blank = std::all_of(a.text.begin(), a.text.end(), is_space);
    if (blank) throw ValidationError("article '" + a.id + "' has empty text");
  }
}

}  // namespace planlm::corpus
