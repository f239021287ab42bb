#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace planlm::corpus {

using TokenId = std::int32_t;

inline constexpr TokenId kUnk = 0;
inline constexpr TokenId kBos = 1;
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<bos>";

struct Article {
  std::string id;
  std::string title;
  std::string text;
};

/// One text unit. Offsets are byte offsets into the owning article's text,
/// half-open [char_start, char_end).
struct SentenceSpan {
  std::string article_id;
  std::size_t index = 0;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::vector<TokenId> token_ids;
};

/// Token string <-> id bijection. Ids 0 and 1 are always <unk> and <bos>.
class Vocabulary {
 public:
  Vocabulary();

  /// Builds from an explicit token list; the first two entries must be the
  /// reserved tokens.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id_of(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Per-article token ids with the sentence index of each token.
struct TokenStream {
  std::string article_id;
  std::vector<TokenId> token_ids;
  std::vector<std::size_t> sentence_index_of_token;

  std::size_t sentence_count() const {
    return sentence_index_of_token.empty() ? 0 : sentence_index_of_token.back() + 1;
  }
};

/// Rule-based sentence splitter. A sentence ends at a run of `.`, `!` or `?`
/// followed by whitespace and an uppercase ASCII letter, or by end of text,
/// unless the word ending there is a known abbreviation. A blank line always
/// ends a sentence. Returned spans carry offsets and index; token ids are
/// left empty.
std::vector<SentenceSpan> split_sentences(std::string_view text);

/// True when `text` (trimmed) would be closed by the end-of-text rule, i.e.
/// it ends in terminal punctuation that is not an abbreviation. Used for
/// incremental boundary detection during decoding.
bool ends_sentence(std::string_view text);

/// Lowercased word/punctuation tokens: maximal runs of letters and digits
/// (non-ASCII bytes count as letters), and single punctuation marks.
std::vector<std::string> word_tokens(std::string_view text);

/// Joins tokens into text, attaching punctuation to the preceding word.
std::string detokenize(std::span<const std::string> tokens);

Vocabulary build_vocabulary(std::span<const Article> articles, std::size_t max_size);

/// Splits the article and maps tokens through `vocab`.
std::vector<SentenceSpan> segment(const Article& article, const Vocabulary& vocab);

/// Builds the token stream from already-split sentences: a single <bos>
/// (sentence 0) followed by each sentence's tokens.
TokenStream tokenize(std::string_view article_id, std::span<const SentenceSpan> sentences);
TokenStream tokenize(const Article& article, const Vocabulary& vocab);

std::vector<TokenId> encode_tokens(std::span<const std::string> tokens, const Vocabulary& vocab);
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

struct CorpusSplit {
  std::vector<Article> train;
  std::vector<Article> val;
  std::vector<Article> test;
};

/// Deterministic shuffled partition: first n_val go to val, next n_test to
/// test, the rest to train. Throws ValidationError unless n_val + n_test < N.
CorpusSplit split_corpus(std::span<const Article> articles, std::uint64_t seed,
                         std::size_t n_val, std::size_t n_test);

/// Reads one JSON object per line with fields id, title, text.
std::vector<Article> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const Article> articles);
/// Reads every `.txt` file in a directory (sorted by name): file stem is the
/// id, first line the title, the remaining lines the text.
std::vector<Article> read_text_dir(const std::filesystem::path& dir);
/// Dispatches on whether `path` is a directory.
std::vector<Article> read_articles(const std::filesystem::path& path);

/// Throws ValidationError on empty text or duplicate ids.
void validate_articles(std::span<const Article> articles);

}  // namespace planlm::corpus
