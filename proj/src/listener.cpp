#include "esd/listener.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "esd/decode.hpp"
#include "esd/error.hpp"

namespace esd {

double introspector_score(const ConditionalLM& lm, std::span<const TokenId> tokens, const ContextKey& target,
                          const ContextKey& distractor) {
  require_context(lm, target);
  require_context(lm, distractor);
  if (target == distractor) return 0.0;
  return sequence_logprob(lm, target, tokens) - sequence_logprob(lm, distractor, tokens);
}

std::vector<RerankedSample> rs_rerank(const ConditionalLM& lm, const ContextKey& target, const ListenerFn& listener,
                                      std::size_t n_samples, double lambda, std::size_t max_len, Rng& rng) {
  if (n_samples < 1) throw Error("rs_rerank needs at least one sample");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("lambda must lie in [0, 1]");
  std::set<TokenSeq> drawn;
  for (std::size_t i = 0; i < n_samples; ++i) {
    auto s = sample_sequence(lm, target, max_len, rng);
    if (!s.empty()) drawn.insert(std::move(s));
  }
  std::vector<RerankedSample> out;
  out.reserve(drawn.size());
  for (const auto& s : drawn) {
    RerankedSample r;
    r.tokens = s;
    r.speaker_lp = sequence_logprob(lm, target, s);
    r.listener_score = listener(s);
    r.combined = lambda * r.speaker_lp + (1.0 - lambda) * r.listener_score;
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const RerankedSample& a, const RerankedSample& b) {
    return ranks_before(a.combined, a.tokens, b.combined, b.tokens);
  });
  return out;
}

NaiveBayesListener::NaiveBayesListener(std::size_t word_count, double alpha,
                                       std::map<ContextKey, std::vector<std::uint64_t>> counts)
    : word_count_(word_count), alpha_(alpha) {
  if (!(alpha_ > 0.0)) throw Error("listener alpha must be > 0");
  for (auto& [ctx, c] : counts) {
    if (c.size() != word_count_) throw Error("listener count table has the wrong size");
    double total = 0.0;
    for (auto n : c) total += static_cast<double>(n);
    const double log_denom = std::log(total + alpha_ * static_cast<double>(word_count_));
    std::vector<double> lp(word_count_);
    for (std::size_t w = 0; w < word_count_; ++w) lp[w] = std::log(static_cast<double>(c[w]) + alpha_) - log_denom;
    log_probs_.emplace(ctx, std::move(lp));
  }
}

double NaiveBayesListener::word_logprob(const ContextKey& c, TokenId word) const {
  auto it = log_probs_.find(c);
  if (it == log_probs_.end()) throw UnknownContextError(c.str());
  if (!Vocabulary::is_word(word) || word - Vocabulary::kFirstWord >= word_count_)
    throw Error("listener scores words only");
  return it->second[word - Vocabulary::kFirstWord];
}

NaiveBayesListener train_nb_listener(const Corpus& corpus, double alpha) {
  if (corpus.empty()) throw Error("cannot train a listener on an empty corpus");
  const std::size_t words = corpus.vocab().word_count();
  std::map<ContextKey, std::vector<std::uint64_t>> counts;
  for (const auto& r : corpus.records()) {
    auto& c = counts.try_emplace(r.context, words, 0).first->second;
    for (auto id : r.tokens)
      if (Vocabulary::is_word(id)) ++c[id - Vocabulary::kFirstWord];
  }
  return NaiveBayesListener(words, alpha, std::move(counts));
}

double nb_score(const NaiveBayesListener& listener, std::span<const TokenId> tokens, const ContextKey& target,
                const ContextKey& distractor) {
  if (!listener.has_context(target)) throw UnknownContextError(target.str());
  if (!listener.has_context(distractor)) throw UnknownContextError(distractor.str());
  double score = 0.0;
  for (auto id : tokens) {
    if (id == Vocabulary::kUnk) continue;
    score += listener.word_logprob(target, id) - listener.word_logprob(distractor, id);
  }
  return score;
}

TwoAfcResult two_afc(const ConditionalLM& eval_lm, std::span<const TokenId> tokens, const ContextKey& a,
                     const ContextKey& b) {
  require_context(eval_lm, a);
  require_context(eval_lm, b);
  if (a == b || tokens.empty()) return {Choice::tie, 0.0};
  const double la = sequence_logprob(eval_lm, a, tokens);
  const double lb = sequence_logprob(eval_lm, b, tokens);
  if (la == lb) return {Choice::tie, 0.0};
  return {la > lb ? Choice::a : Choice::b, std::abs(la - lb)};
}

}  // namespace esd
