#pragma once

// Conditional language-model interface shared by the emitter and suppressor.

#include <memory>
#include <span>
#include <vector>

#include "esd/corpus.hpp"
#include "esd/random.hpp"

namespace esd {

/// Natural-log probabilities over the outcome space (EOS followed by every
/// word, see Vocabulary). Entry i belongs to Vocabulary::outcome_token(i).
class NextTokenDistribution {
public:
  NextTokenDistribution() = default;
  explicit NextTokenDistribution(std::vector<double> logprobs) : logprobs_(std::move(logprobs)) {}

  std::size_t size() const noexcept { return logprobs_.size(); }
  std::span<const double> values() const noexcept { return logprobs_; }
  double operator[](std::size_t outcome) const noexcept { return logprobs_[outcome]; }
  /// Throws for BOS/UNK, which are never outcomes.
  double logprob(TokenId id) const;

  /// |sum(exp) - 1|; the invariant is that this stays below 1e-9.
  double normalization_error() const;
  bool all_finite() const;

private:
  std::vector<double> logprobs_;
};

/// p(next | prefix, context). Implementations are immutable once built.
class ConditionalLM {
public:
  virtual ~ConditionalLM() = default;

  virtual const Vocabulary& vocab() const = 0;
  virtual bool has_context(const ContextKey& context) const = 0;
  /// Sorted list of the contexts this model answers for.
  virtual std::vector<ContextKey> contexts() const = 0;
  /// `prefix` holds generated words only (no BOS). Throws UnknownContextError.
  virtual NextTokenDistribution next_token_logprobs(const ContextKey& context,
                                                    std::span<const TokenId> prefix) const = 0;
  /// False when queries must not be issued concurrently (remote sessions).
  virtual bool concurrent_queries() const { return true; }
};

/// Sum of per-token log-probs plus the final EOS factor. Tokens must be words.
double sequence_logprob(const ConditionalLM& lm, const ContextKey& context, std::span<const TokenId> tokens);

/// Ancestral sampling until EOS or `max_len` words. EOS may be drawn first,
/// giving an empty sequence.
TokenSeq sample_sequence(const ConditionalLM& lm, const ContextKey& context, std::size_t max_len, Rng& rng);

/// Index drawn from a log-probability vector.
std::size_t sample_outcome(std::span<const double> logprobs, Rng& rng);

void require_context(const ConditionalLM& lm, const ContextKey& context);

}  // namespace esd
