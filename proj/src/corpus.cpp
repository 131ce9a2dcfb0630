#include "esd/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "esd/diagnostics.hpp"
#include "esd/error.hpp"
#include "esd/random.hpp"

namespace esd {

ContextKey::ContextKey(std::string value) : value_(std::move(value)) {
  if (value_.empty()) throw Error("context key must be non-empty");
}

std::vector<std::string> tokenize(std::string_view text, const TokenizerConfig& config) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
      flush();
      continue;
    }
    current.push_back(config.lowercase && c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

namespace {

bool is_reserved(std::string_view t) {
  return t == Vocabulary::kBosToken || t == Vocabulary::kUnkToken || t == Vocabulary::kEosToken;
}

std::uint64_t fnv1a(const std::vector<std::string>& tokens) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (TokenId i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) throw Error("duplicate vocabulary token '" + tokens_[i] + "'");
  }
  hash_ = fnv1a(tokens_);
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  std::vector<std::string> tokens{std::string(kBosToken), std::string(kUnkToken), std::string(kEosToken)};
  for (auto& w : words) {
    if (w.empty()) throw Error("empty vocabulary token");
    if (is_reserved(w)) throw Error("reserved token '" + w + "' cannot be a word");
    tokens.push_back(std::move(w));
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::read(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError(lineno, "empty vocabulary entry");
    tokens.push_back(line);
  }
  if (tokens.size() < kFirstWord || tokens[kBos] != kBosToken || tokens[kUnk] != kUnkToken ||
      tokens[kEos] != kEosToken)
    throw Error("vocabulary file must start with <bos>, <unk>, <eos>");
  for (std::size_t i = kFirstWord; i < tokens.size(); ++i)
    if (is_reserved(tokens[i])) throw ParseError(i + 1, "reserved token used as a word");
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary file " + path.string());
  return read(in);
}

void Vocabulary::write(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << '\n';
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocabulary file " + path.string());
  write(out);
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto found = find(token);
  if (!found || !is_word(*found)) return kUnk;
  return *found;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw Error("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

TokenSeq Vocabulary::encode(std::span<const std::string> words) const {
  TokenSeq ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::words(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(token(id));
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::string format_hash(std::uint64_t hash) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, hash >>= 4) s[static_cast<std::size_t>(i)] = kHex[hash & 0xf];
  return s;
}

Vocabulary build_vocab(std::span<const std::string> lines, const TokenizerConfig& config) {
  std::vector<std::string> words;
  for (const auto& line : lines) {
    auto toks = tokenize(line, config);
    words.insert(words.end(), std::make_move_iterator(toks.begin()), std::make_move_iterator(toks.end()));
  }
  if (words.empty()) throw Error("cannot build a vocabulary from an empty corpus");
  return Vocabulary::from_words(std::move(words));
}

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(std::shared_ptr<const Vocabulary> vocab, std::vector<Record> records)
    : vocab_(std::move(vocab)), records_(std::move(records)) {
  if (!vocab_) throw Error("corpus requires a vocabulary");
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.tokens.empty()) throw Error("corpus record " + std::to_string(i) + " is empty");
    for (auto id : r.tokens)
      if (id >= vocab_->size() || id == Vocabulary::kBos || id == Vocabulary::kEos)
        throw Error("corpus record " + std::to_string(i) + " has invalid token id " + std::to_string(id));
    by_context_[r.context].push_back(i);
  }
}

std::vector<ContextKey> Corpus::contexts() const {
  std::vector<ContextKey> out;
  out.reserve(by_context_.size());
  for (const auto& [k, _] : by_context_) out.push_back(k);
  return out;
}

const std::vector<std::size_t>& Corpus::indices(const ContextKey& key) const {
  auto it = by_context_.find(key);
  if (it == by_context_.end()) throw UnknownContextError(key.str());
  return it->second;
}

namespace {

struct RawLine {
  std::size_t lineno;
  std::string context;
  std::vector<std::string> words;
};

}  // namespace

LoadedCorpus parse_corpus(std::istream& in, std::shared_ptr<const Vocabulary> vocab, const LoadOptions& options) {
  std::vector<RawLine> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw ParseError(lineno, "expected exactly two tab-separated fields");
    std::string context = line.substr(0, tab);
    if (context.empty()) throw ParseError(lineno, "empty context key");
    auto words = tokenize(std::string_view(line).substr(tab + 1), options.tokenizer);
    if (words.empty()) throw ParseError(lineno, "caption has no tokens");
    if (options.max_record_tokens > 0 && words.size() > options.max_record_tokens) {
      warn("line " + std::to_string(lineno) + ": caption truncated from " + std::to_string(words.size()) + " to " +
           std::to_string(options.max_record_tokens) + " tokens");
      words.resize(options.max_record_tokens);
    }
    raw.push_back({lineno, std::move(context), std::move(words)});
  }

  if (!vocab) {
    std::vector<std::string> all;
    for (const auto& r : raw) all.insert(all.end(), r.words.begin(), r.words.end());
    if (all.empty()) throw Error("cannot build a vocabulary from an empty corpus");
    vocab = std::make_shared<const Vocabulary>(Vocabulary::from_words(std::move(all)));
  }

  std::vector<Record> records;
  records.reserve(raw.size());
  for (auto& r : raw) records.push_back({ContextKey(std::move(r.context)), vocab->encode(r.words)});
  return {Corpus(vocab, std::move(records)), vocab};
}

LoadedCorpus load_corpus(const std::filesystem::path& path, std::shared_ptr<const Vocabulary> vocab,
                         const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file " + path.string());
  return parse_corpus(in, std::move(vocab), options);
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& r : corpus.records()) out << r.context.str() << '\t' << corpus.vocab().decode(r.tokens) << '\n';
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus file " + path.string());
  write_corpus(corpus, out);
}

CorpusSplit split_corpus(const Corpus& corpus, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0 && f.val > 0 && f.test > 0)) throw Error("split fractions must be positive");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw Error("split fractions must sum to 1");

  Rng rng(seed);
  std::vector<Record> train, val, test;
  const auto records = corpus.records();
  for (const auto& ctx : corpus.contexts()) {
    std::vector<std::size_t> idx = corpus.indices(ctx);
    const std::size_t n = idx.size();
    if (n < 3) {
      warn("context '" + ctx.str() + "' has " + std::to_string(n) + " records; assigned wholly to train");
      for (auto i : idx) train.push_back(records[i]);
      continue;
    }
    portable_shuffle(idx, rng);
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.test + 1e-9));
    std::vector<std::size_t> val_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> test_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_val),
                                      idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    std::vector<std::size_t> train_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), idx.end());
    for (auto* part : {&train_idx, &val_idx, &test_idx}) std::sort(part->begin(), part->end());
    for (auto i : train_idx) train.push_back(records[i]);
    for (auto i : val_idx) val.push_back(records[i]);
    for (auto i : test_idx) test.push_back(records[i]);
  }
  const auto& v = corpus.vocab_ptr();
  return {Corpus(v, std::move(train)), Corpus(v, std::move(val)), Corpus(v, std::move(test))};
}

Corpus merge_corpora(std::span<const Corpus* const> parts) {
  if (parts.empty()) throw Error("nothing to merge");
  std::vector<Record> records;
  for (const auto* p : parts) {
    if (p->vocab() != parts.front()->vocab()) throw Error("cannot merge corpora with different vocabularies");
    records.insert(records.end(), p->records().begin(), p->records().end());
  }
  return Corpus(parts.front()->vocab_ptr(), std::move(records));
}

}  // namespace esd
