#pragma once

// Discriminativeness scorers, the sample-and-rerank reasoning speaker, and a
// model-based two-alternative forced choice (2AFC) judge.

#include <functional>
#include <map>
#include <span>
#include <vector>

#include "esd/lm.hpp"

namespace esd {

/// log p(s | target) - log p(s | distractor) under one generative model.
double introspector_score(const ConditionalLM& lm, std::span<const TokenId> tokens, const ContextKey& target,
                          const ContextKey& distractor);

struct RerankedSample {
  TokenSeq tokens;
  double speaker_lp = 0.0;
  double listener_score = 0.0;
  double combined = 0.0;  // lambda * speaker_lp + (1 - lambda) * listener_score
};

using ListenerFn = std::function<double(std::span<const TokenId>)>;

/// Draws `n_samples` sentences from lm(target), drops empties and duplicates,
/// scores each as lambda * log p + (1 - lambda) * listener and sorts best
/// first (ties by token order, so the result does not depend on draw order).
std::vector<RerankedSample> rs_rerank(const ConditionalLM& lm, const ContextKey& target, const ListenerFn& listener,
                                      std::size_t n_samples, double lambda, std::size_t max_len, Rng& rng);

/// Bag-of-words naive Bayes classifier over contexts with add-alpha unigram
/// tables (words only) and a uniform prior.
class NaiveBayesListener {
public:
  NaiveBayesListener(std::size_t word_count, double alpha, std::map<ContextKey, std::vector<std::uint64_t>> counts);

  bool has_context(const ContextKey& c) const { return log_probs_.contains(c); }
  /// log p(word | context); throws UnknownContextError.
  double word_logprob(const ContextKey& c, TokenId word) const;
  double alpha() const noexcept { return alpha_; }

private:
  std::size_t word_count_;
  double alpha_;
  std::map<ContextKey, std::vector<double>> log_probs_;
};

NaiveBayesListener train_nb_listener(const Corpus& corpus, double alpha = 1.0);

/// log p(target | s) - log p(distractor | s); the prior cancels.
double nb_score(const NaiveBayesListener& listener, std::span<const TokenId> tokens, const ContextKey& target,
                const ContextKey& distractor);

enum class Choice { a, b, tie };

struct TwoAfcResult {
  Choice choice = Choice::tie;
  double margin = 0.0;  // |log p(s|a) - log p(s|b)|

  /// 1 when `a` is the correct answer and chosen, 0.5 for a tie.
  double credit_for_a() const { return choice == Choice::a ? 1.0 : choice == Choice::tie ? 0.5 : 0.0; }
};

/// Picks the context under which `eval_lm` finds the sentence more likely.
/// `eval_lm` must be a held-out model, never the decoder's own.
TwoAfcResult two_afc(const ConditionalLM& eval_lm, std::span<const TokenId> tokens, const ContextKey& a,
                     const ContextKey& b);

}  // namespace esd
