#include "esd/lm.hpp"

#include <cmath>

#include "esd/error.hpp"

namespace esd {

double NextTokenDistribution::logprob(TokenId id) const {
  if (id < Vocabulary::kEos) throw Error("BOS/UNK are not next-token outcomes");
  const auto i = Vocabulary::outcome_index(id);
  if (i >= logprobs_.size()) throw Error("token id " + std::to_string(id) + " outside the distribution");
  return logprobs_[i];
}

double NextTokenDistribution::normalization_error() const {
  double sum = 0.0;
  for (double lp : logprobs_) sum += std::exp(lp);
  return std::abs(sum - 1.0);
}

bool NextTokenDistribution::all_finite() const {
  for (double lp : logprobs_)
    if (!std::isfinite(lp)) return false;
  return true;
}

void require_context(const ConditionalLM& lm, const ContextKey& context) {
  if (!lm.has_context(context)) throw UnknownContextError(context.str());
}

double sequence_logprob(const ConditionalLM& lm, const ContextKey& context, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw Error("sequence_logprob needs at least one token");
  require_context(lm, context);
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (!Vocabulary::is_word(tokens[t])) throw Error("sequence contains a non-word token id " + std::to_string(tokens[t]));
    total += lm.next_token_logprobs(context, tokens.first(t)).logprob(tokens[t]);
  }
  total += lm.next_token_logprobs(context, tokens).logprob(Vocabulary::kEos);
  return total;
}

std::size_t sample_outcome(std::span<const double> logprobs, Rng& rng) {
  const double u = uniform01(rng);
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    const double p = std::exp(logprobs[i]);
    if (p > 0.0) last_positive = i;
    cumulative += p;
    if (u < cumulative) return i;
  }
  return last_positive;
}

TokenSeq sample_sequence(const ConditionalLM& lm, const ContextKey& context, std::size_t max_len, Rng& rng) {
  if (max_len == 0) throw Error("max_len must be at least 1");
  require_context(lm, context);
  TokenSeq out;
  while (out.size() < max_len) {
    const auto dist = lm.next_token_logprobs(context, out);
    const TokenId next = Vocabulary::outcome_token(sample_outcome(dist.values(), rng));
    if (next == Vocabulary::kEos) break;
    out.push_back(next);
  }
  return out;
}

}  // namespace esd
