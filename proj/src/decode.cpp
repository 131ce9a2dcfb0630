#include "esd/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <omp.h>

#include "esd/error.hpp"

namespace esd {

void DecodeParams::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("lambda must lie in [0, 1]");
  if (beam_width < 1) throw Error("beam_width must be >= 1");
  if (max_len < 1) throw Error("max_len must be >= 1");
}

const BeamHypothesis& DecodeResult::best() const {
  if (hypotheses.empty()) throw Error("decode produced no hypotheses");
  return hypotheses.front();
}

double es_token_score(double emitter_lp, double suppressor_lp, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("lambda must lie in [0, 1]");
  if (!std::isfinite(emitter_lp) || !std::isfinite(suppressor_lp)) throw Error("log-probabilities must be finite");
  return emitter_lp - (1.0 - lambda) * suppressor_lp;
}

bool ranks_before(double score_a, std::span<const TokenId> a, double score_b, std::span<const TokenId> b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

namespace kernels {

void StepScorer::expand_one(const BeamHypothesis& hyp, std::uint32_t parent, std::vector<Candidate>& out) const {
  const auto emit = emitter->next_token_logprobs(*target, hyp.tokens);
  NextTokenDistribution supp_storage;
  const NextTokenDistribution* supp = &emit;
  if (suppressor != nullptr) {
    supp_storage = suppressor->next_token_logprobs(*distractor, hyp.tokens);
    supp = &supp_storage;
  }
  if (emit.size() != supp->size()) throw Error("emitter and suppressor distributions differ in size");

  // EOS is outcome 0: not allowed before the first word, mandatory at max_len.
  const std::size_t first = hyp.tokens.empty() ? 1 : 0;
  const std::size_t last = hyp.tokens.size() >= max_len ? 1 : emit.size();
  for (std::size_t k = first; k < last; ++k) {
    Candidate c;
    c.parent = parent;
    c.token = Vocabulary::outcome_token(k);
    c.emitter_lp = hyp.emitter_lp + emit[k];
    c.suppressor_lp = hyp.suppressor_lp + (*supp)[k];
    c.score = hyp.es_score + (suppressor != nullptr ? es_token_score(emit[k], (*supp)[k], lambda) : emit[k]);
    out.push_back(c);
  }
}

std::vector<Candidate> expand_serial(const StepScorer& scorer, std::span<const BeamHypothesis> active) {
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < active.size(); ++i) scorer.expand_one(active[i], static_cast<std::uint32_t>(i), out);
  return out;
}

std::vector<Candidate> expand_openmp(const StepScorer& scorer, std::span<const BeamHypothesis> active) {
  const auto n = static_cast<std::ptrdiff_t>(active.size());
  std::vector<std::vector<Candidate>> blocks(active.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      scorer.expand_one(active[static_cast<std::size_t>(i)], static_cast<std::uint32_t>(i),
                        blocks[static_cast<std::size_t>(i)]);
    } catch (...) {
#pragma omp critical(esd_expand_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<Candidate> out;
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.size();
  out.reserve(total);
  for (auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace kernels

namespace {

// parent tokens followed by the candidate token; EOS (id 2) sorts before words.
bool candidate_before(const kernels::Candidate& a, const kernels::Candidate& b,
                      std::span<const BeamHypothesis> active) {
  if (a.score != b.score) return a.score > b.score;
  const auto& ta = active[a.parent].tokens;
  const auto& tb = active[b.parent].tokens;
  const std::size_t la = ta.size() + 1;
  const std::size_t lb = tb.size() + 1;
  for (std::size_t i = 0; i < std::min(la, lb); ++i) {
    const TokenId x = i < ta.size() ? ta[i] : a.token;
    const TokenId y = i < tb.size() ? tb[i] : b.token;
    if (x != y) return x < y;
  }
  return la < lb;
}

double ranking_key(const BeamHypothesis& h, bool normalize) {
  return normalize ? h.es_score / static_cast<double>(h.tokens.size() + 1) : h.es_score;
}

DecodeResult run_beam(const kernels::StepScorer& scorer, const DecodeParams& params) {
  params.validate();
  const bool parallel = params.kernel == Kernel::openmp && scorer.emitter->concurrent_queries() &&
                        (scorer.suppressor == nullptr || scorer.suppressor->concurrent_queries());

  std::vector<BeamHypothesis> active(1);
  std::vector<BeamHypothesis> finished;
  while (!active.empty()) {
    auto cands = parallel ? kernels::expand_openmp(scorer, active) : kernels::expand_serial(scorer, active);
    const std::size_t keep = std::min(params.beam_width, cands.size());
    std::vector<std::size_t> order(cands.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) { return candidate_before(cands[a], cands[b], active); });

    std::vector<BeamHypothesis> next;
    next.reserve(keep);
    for (std::size_t r = 0; r < keep; ++r) {
      const auto& c = cands[order[r]];
      BeamHypothesis h;
      h.tokens = active[c.parent].tokens;
      h.emitter_lp = c.emitter_lp;
      h.suppressor_lp = c.suppressor_lp;
      h.es_score = c.score;
      if (c.token == Vocabulary::kEos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
  }

  std::sort(finished.begin(), finished.end(), [&](const BeamHypothesis& a, const BeamHypothesis& b) {
    return ranks_before(ranking_key(a, params.length_normalize), a.tokens, ranking_key(b, params.length_normalize),
                        b.tokens);
  });
  if (finished.size() > params.beam_width) finished.resize(params.beam_width);
  return DecodeResult{params.lambda, std::move(finished)};
}

}  // namespace

DecodeResult beam_search(const ConditionalLM& lm, const ContextKey& context, const DecodeParams& params) {
  require_context(lm, context);
  kernels::StepScorer scorer{&lm, &context, nullptr, nullptr, 1.0, params.max_len};
  auto p = params;
  p.lambda = 1.0;
  return run_beam(scorer, p);
}

DecodeResult es_beam_search(const ConditionalLM& emitter, const ContextKey& target, const ConditionalLM& suppressor,
                            const ContextKey& distractor, const DecodeParams& params) {
  params.validate();
  if (emitter.vocab().hash() != suppressor.vocab().hash() || emitter.vocab() != suppressor.vocab())
    throw Error("emitter and suppressor must share one vocabulary");
  require_context(emitter, target);
  require_context(suppressor, distractor);
  kernels::StepScorer scorer{&emitter, &target, &suppressor, &distractor, params.lambda, params.max_len};
  return run_beam(scorer, params);
}

double es_objective(const ConditionalLM& emitter, const ContextKey& target, const ConditionalLM& suppressor,
                    const ContextKey& distractor, std::span<const TokenId> tokens, double lambda) {
  double total = 0.0;
  for (std::size_t t = 0; t <= tokens.size(); ++t) {
    const TokenId w = t < tokens.size() ? tokens[t] : Vocabulary::kEos;
    const auto prefix = tokens.first(t);
    total += es_token_score(emitter.next_token_logprobs(target, prefix).logprob(w),
                            suppressor.next_token_logprobs(distractor, prefix).logprob(w), lambda);
  }
  return total;
}

}  // namespace esd
