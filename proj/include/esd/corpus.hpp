#pragma once

// Context-labelled caption corpora: tokenizer, vocabulary and TSV I/O.

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace esd {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

/// Names a conditioning context: a class label or an image-surrogate id.
class ContextKey {
public:
  explicit ContextKey(std::string value);

  const std::string& str() const noexcept { return value_; }

  friend bool operator==(const ContextKey&, const ContextKey&) = default;
  friend auto operator<=>(const ContextKey&, const ContextKey&) = default;

private:
  std::string value_;
};

struct TokenizerConfig {
  bool lowercase = true;
};

/// Lowercases, turns ASCII punctuation into separators and splits on whitespace.
std::vector<std::string> tokenize(std::string_view text, const TokenizerConfig& config = {});

/// Immutable token <-> id bijection.
///
/// Layout: id 0 is `<bos>`, 1 is `<unk>`, 2 is `<eos>`, words follow in
/// sorted order. The next-token outcome space is EOS plus every word, i.e.
/// ids [2, size()); BOS and UNK only ever appear in histories.
class Vocabulary {
public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kFirstWord = 3;
  static constexpr std::string_view kBosToken = "<bos>";
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kEosToken = "<eos>";

  /// Deduplicates and sorts `words`; reserved spellings are rejected.
  static Vocabulary from_words(std::vector<std::string> words);

  /// Vocabulary file: one token per line, line number = id.
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary read(std::istream& in);
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t word_count() const noexcept { return tokens_.size() - kFirstWord; }
  std::size_t outcome_count() const noexcept { return tokens_.size() - kEos; }

  static std::size_t outcome_index(TokenId id) noexcept { return id - kEos; }
  static TokenId outcome_token(std::size_t index) noexcept { return static_cast<TokenId>(index + kEos); }
  static bool is_word(TokenId id) noexcept { return id >= kFirstWord; }

  std::optional<TokenId> find(std::string_view token) const;
  /// Word id, or kUnk when the token is not in the vocabulary.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;

  TokenSeq encode(std::span<const std::string> words) const;
  std::vector<std::string> words(std::span<const TokenId> ids) const;
  std::string decode(std::span<const TokenId> ids) const;

  /// FNV-1a over the newline-joined token list. Stable across builds.
  std::uint64_t hash() const noexcept { return hash_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::uint64_t hash_ = 0;
};

std::string format_hash(std::uint64_t hash);

/// Builds a vocabulary from raw caption lines. Throws on an empty corpus.
Vocabulary build_vocab(std::span<const std::string> lines, const TokenizerConfig& config = {});

struct Record {
  ContextKey context;
  TokenSeq tokens;

  friend bool operator==(const Record&, const Record&) = default;
};

class Corpus {
public:
  Corpus(std::shared_ptr<const Vocabulary> vocab, std::vector<Record> records);

  const Vocabulary& vocab() const noexcept { return *vocab_; }
  const std::shared_ptr<const Vocabulary>& vocab_ptr() const noexcept { return vocab_; }
  std::span<const Record> records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  /// Contexts in sorted order.
  std::vector<ContextKey> contexts() const;
  bool has_context(const ContextKey& key) const { return by_context_.contains(key); }
  /// Record indices for one context, in file order. Throws UnknownContextError.
  const std::vector<std::size_t>& indices(const ContextKey& key) const;

private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<Record> records_;
  std::map<ContextKey, std::vector<std::size_t>> by_context_;
};

struct LoadOptions {
  TokenizerConfig tokenizer;
  std::size_t max_record_tokens = 30;
};

struct LoadedCorpus {
  Corpus corpus;
  std::shared_ptr<const Vocabulary> vocab;
};

/// Reads `<context>\t<caption>` lines ('#' comments and blank lines skipped).
/// Without a vocabulary one is built from the file; with one, unknown words
/// map to UNK.
LoadedCorpus parse_corpus(std::istream& in, std::shared_ptr<const Vocabulary> vocab = nullptr,
                          const LoadOptions& options = {});
LoadedCorpus load_corpus(const std::filesystem::path& path,
                         std::shared_ptr<const Vocabulary> vocab = nullptr,
                         const LoadOptions& options = {});

void write_corpus(const Corpus& corpus, std::ostream& out);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct CorpusSplit {
  Corpus train;
  Corpus val;
  Corpus test;
};

/// Stratified by context; deterministic for a given seed. A context with fewer
/// than three records goes wholly to train (with a warning).
CorpusSplit split_corpus(const Corpus& corpus, const SplitFractions& fractions, std::uint64_t seed);

/// Concatenates corpora sharing one vocabulary.
Corpus merge_corpora(std::span<const Corpus* const> parts);

}  // namespace esd

template <>
struct std::hash<esd::ContextKey> {
  std::size_t operator()(const esd::ContextKey& k) const noexcept { return std::hash<std::string>{}(k.str()); }
};
