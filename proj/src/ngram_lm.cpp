#include "esd/ngram_lm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "esd/error.hpp"

namespace esd {

std::size_t NGramLM::HistoryHash::operator()(const TokenSeq& h) const noexcept {
  std::uint64_t x = 0x84222325cbf29ce4ULL ^ h.size();
  for (auto id : h) x = mix_seed(x ^ id);
  return static_cast<std::size_t>(x);
}

NGramLM::NGramLM(std::shared_ptr<const Vocabulary> vocab, int order, double alpha,
                 std::map<ContextKey, HistoryTable> tables)
    : vocab_(std::move(vocab)), order_(order), alpha_(alpha), tables_(std::move(tables)) {
  if (!vocab_) throw Error("n-gram model requires a vocabulary");
  if (order_ < 1) throw Error("n-gram order must be >= 1");
  if (!(alpha_ > 0.0) || !std::isfinite(alpha_)) throw Error("smoothing alpha must be > 0");
  for (const auto& [ctx, table] : tables_) {
    auto it = table.find(TokenSeq{});
    if (it == table.end() || it->second.total == 0)
      throw Error("context '" + ctx.str() + "' has no unigram counts");
  }
}

std::vector<ContextKey> NGramLM::contexts() const {
  std::vector<ContextKey> out;
  for (const auto& [k, _] : tables_) out.push_back(k);
  return out;
}

const NGramLM::HistoryTable& NGramLM::table(const ContextKey& context) const {
  auto it = tables_.find(context);
  if (it == tables_.end()) throw UnknownContextError(context.str());
  return it->second;
}

namespace {

// Last order-1 tokens of BOS^(order-1) + prefix.
TokenSeq padded_history(std::span<const TokenId> prefix, int order) {
  const auto need = static_cast<std::size_t>(order - 1);
  TokenSeq h(need, Vocabulary::kBos);
  const std::size_t take = std::min(need, prefix.size());
  std::copy(prefix.end() - static_cast<std::ptrdiff_t>(take), prefix.end(),
            h.end() - static_cast<std::ptrdiff_t>(take));
  return h;
}

}  // namespace

NextTokenDistribution NGramLM::next_token_logprobs(const ContextKey& context, std::span<const TokenId> prefix) const {
  const auto& tab = table(context);
  TokenSeq history = padded_history(prefix, order_);

  const Continuations* found = nullptr;
  for (std::size_t k = history.size() + 1; k-- > 0;) {
    TokenSeq suffix(history.end() - static_cast<std::ptrdiff_t>(k), history.end());
    auto it = tab.find(suffix);
    if (it != tab.end() && it->second.total > 0) {
      found = &it->second;
      break;
    }
  }
  // The empty history always exists (checked at construction).

  const std::size_t outcomes = vocab_->outcome_count();
  const double denom = static_cast<double>(found->total) + alpha_ * static_cast<double>(outcomes);
  const double log_denom = std::log(denom);
  std::vector<double> lp(outcomes, std::log(alpha_) - log_denom);
  for (const auto& [outcome, c] : found->next) lp[outcome] = std::log(static_cast<double>(c) + alpha_) - log_denom;
  return NextTokenDistribution(std::move(lp));
}

std::uint64_t NGramLM::history_count(const ContextKey& context, std::span<const TokenId> history) const {
  const auto& tab = table(context);
  auto it = tab.find(TokenSeq(history.begin(), history.end()));
  return it == tab.end() ? 0 : it->second.total;
}

std::uint64_t NGramLM::count(const ContextKey& context, std::span<const TokenId> history, TokenId outcome) const {
  const auto& tab = table(context);
  auto it = tab.find(TokenSeq(history.begin(), history.end()));
  if (it == tab.end()) return 0;
  const auto idx = static_cast<std::uint32_t>(Vocabulary::outcome_index(outcome));
  for (const auto& [o, c] : it->second.next)
    if (o == idx) return c;
  return 0;
}

NGramLM train_ngram(const Corpus& corpus, int order, double alpha) {
  if (order < 1) throw Error("n-gram order must be >= 1");
  if (!(alpha > 0.0)) throw Error("smoothing alpha must be > 0");
  if (corpus.empty()) throw Error("cannot train on an empty corpus");

  const auto pad = static_cast<std::size_t>(order - 1);
  std::map<ContextKey, std::unordered_map<TokenSeq, std::map<std::uint32_t, std::uint64_t>, NGramLM::HistoryHash>> raw;
  for (const auto& rec : corpus.records()) {
    auto& ctx_table = raw[rec.context];
    TokenSeq seq(pad, Vocabulary::kBos);
    seq.insert(seq.end(), rec.tokens.begin(), rec.tokens.end());
    seq.push_back(Vocabulary::kEos);
    for (std::size_t i = pad; i < seq.size(); ++i) {
      if (seq[i] == Vocabulary::kUnk) continue;  // history-only token
      const auto outcome = static_cast<std::uint32_t>(Vocabulary::outcome_index(seq[i]));
      for (std::size_t k = 0; k <= pad; ++k) {
        TokenSeq h(seq.begin() + static_cast<std::ptrdiff_t>(i - k), seq.begin() + static_cast<std::ptrdiff_t>(i));
        ++ctx_table[std::move(h)][outcome];
      }
    }
  }

  std::map<ContextKey, NGramLM::HistoryTable> tables;
  for (auto& [ctx, hist_map] : raw) {
    auto& out = tables[ctx];
    out.reserve(hist_map.size());
    for (auto& [h, next] : hist_map) {
      NGramLM::Continuations c;
      for (const auto& [o, n] : next) {
        c.next.emplace_back(o, n);
        c.total += n;
      }
      out.emplace(h, std::move(c));
    }
  }
  return NGramLM(corpus.vocab_ptr(), order, alpha, std::move(tables));
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[8] = {'E', 'S', 'D', 'N', 'G', 'R', 'A', 'M'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}
void put_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}
void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw Error("truncated model file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}
std::uint32_t get_u32(std::istream& in) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) throw Error("truncated model file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void NGramLM::write(std::ostream& out) const {
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(order_));
  put_f64(out, alpha_);
  put_u64(out, vocab_->hash());
  put_u32(out, static_cast<std::uint32_t>(tables_.size()));
  for (const auto& [ctx, tab] : tables_) {
    put_u32(out, static_cast<std::uint32_t>(ctx.str().size()));
    out.write(ctx.str().data(), static_cast<std::streamsize>(ctx.str().size()));
    // Sorted so identical models serialize to identical bytes.
    std::vector<const HistoryTable::value_type*> entries;
    entries.reserve(tab.size());
    for (const auto& e : tab) entries.push_back(&e);
    std::sort(entries.begin(), entries.end(), [](auto* a, auto* b) { return a->first < b->first; });
    put_u64(out, entries.size());
    for (const auto* e : entries) {
      put_u32(out, static_cast<std::uint32_t>(e->first.size()));
      for (auto id : e->first) put_u32(out, id);
      put_u32(out, static_cast<std::uint32_t>(e->second.next.size()));
      for (const auto& [o, c] : e->second.next) {
        put_u32(out, o);
        put_u64(out, c);
      }
    }
  }
}

void NGramLM::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model file " + path.string());
  write(out);
}

NGramLM NGramLM::read(std::istream& in, std::shared_ptr<const Vocabulary> vocab) {
  if (!vocab) throw Error("loading a model requires its vocabulary");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw Error("not an n-gram model file (bad magic)");
  const auto version = get_u32(in);
  if (version != kFormatVersion) throw Error("unsupported model format version " + std::to_string(version));
  const auto order = static_cast<int>(get_u32(in));
  const double alpha = get_f64(in);
  const auto hash = get_u64(in);
  if (hash != vocab->hash())
    throw Error("model vocabulary hash " + format_hash(hash) + " does not match " + format_hash(vocab->hash()));
  const std::size_t outcomes = vocab->outcome_count();
  const auto n_ctx = get_u32(in);
  std::map<ContextKey, HistoryTable> tables;
  for (std::uint32_t c = 0; c < n_ctx; ++c) {
    std::string key(get_u32(in), '\0');
    if (!in.read(key.data(), static_cast<std::streamsize>(key.size()))) throw Error("truncated model file");
    auto& tab = tables[ContextKey(key)];
    const auto n_hist = get_u64(in);
    for (std::uint64_t h = 0; h < n_hist; ++h) {
      TokenSeq hist(get_u32(in));
      if (hist.size() >= static_cast<std::size_t>(std::max(order, 1))) throw Error("corrupt model: history too long");
      for (auto& id : hist) {
        id = get_u32(in);
        if (id >= vocab->size()) throw Error("corrupt model: token id out of range");
      }
      Continuations cont;
      const auto n_next = get_u32(in);
      for (std::uint32_t k = 0; k < n_next; ++k) {
        const auto o = get_u32(in);
        const auto cnt = get_u64(in);
        if (o >= outcomes) throw Error("corrupt model: outcome out of range");
        cont.next.emplace_back(o, cnt);
        cont.total += cnt;
      }
      tab.emplace(std::move(hist), std::move(cont));
    }
  }
  return NGramLM(std::move(vocab), order, alpha, std::move(tables));
}

NGramLM NGramLM::load(const std::filesystem::path& path, std::shared_ptr<const Vocabulary> vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model file " + path.string());
  return read(in, std::move(vocab));
}

}  // namespace esd
