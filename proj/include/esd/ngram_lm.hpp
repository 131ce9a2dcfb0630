#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <unordered_map>
#include <vector>

#include "esd/lm.hpp"

namespace esd {

/// Per-context add-alpha n-gram model with history backoff.
///
/// For every context, counts are collected over BOS-padded, EOS-terminated
/// records for all history lengths 0..order-1. A query uses the longest
/// suffix of the padded prefix whose count is non-zero and returns
///   log (c(h, w) + alpha) / (c(h) + alpha * K),   K = vocab.outcome_count().
class NGramLM final : public ConditionalLM {
public:
  struct Continuations {
    std::uint64_t total = 0;
    // (outcome index, count), sorted by outcome index.
    std::vector<std::pair<std::uint32_t, std::uint64_t>> next;
  };

  struct HistoryHash {
    std::size_t operator()(const TokenSeq& h) const noexcept;
  };

  using HistoryTable = std::unordered_map<TokenSeq, Continuations, HistoryHash>;

  NGramLM(std::shared_ptr<const Vocabulary> vocab, int order, double alpha,
          std::map<ContextKey, HistoryTable> tables);

  const Vocabulary& vocab() const override { return *vocab_; }
  const std::shared_ptr<const Vocabulary>& vocab_ptr() const noexcept { return vocab_; }
  bool has_context(const ContextKey& context) const override { return tables_.contains(context); }
  NextTokenDistribution next_token_logprobs(const ContextKey& context,
                                            std::span<const TokenId> prefix) const override;

  int order() const noexcept { return order_; }
  double alpha() const noexcept { return alpha_; }
  std::vector<ContextKey> contexts() const override;
  /// c(history, outcome) and c(history) for one context; 0 when unseen.
  std::uint64_t count(const ContextKey& context, std::span<const TokenId> history, TokenId outcome) const;
  std::uint64_t history_count(const ContextKey& context, std::span<const TokenId> history) const;

  /// Binary format: magic "ESDNGRAM", u32 version, u32 order, f64 alpha,
  /// u64 vocab hash, then per-context count tables (little endian).
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static NGramLM read(std::istream& in, std::shared_ptr<const Vocabulary> vocab);
  static NGramLM load(const std::filesystem::path& path, std::shared_ptr<const Vocabulary> vocab);

  static constexpr std::uint32_t kFormatVersion = 1;

private:
  const HistoryTable& table(const ContextKey& context) const;

  std::shared_ptr<const Vocabulary> vocab_;
  int order_;
  double alpha_;
  std::map<ContextKey, HistoryTable> tables_;
};

NGramLM train_ngram(const Corpus& corpus, int order = 3, double alpha = 0.1);

}  // namespace esd
