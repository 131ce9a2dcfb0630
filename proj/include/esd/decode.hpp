#pragma once

// Vanilla and emitter-suppressor beam search.
//
// The emitter is p(. | prefix, target) and the suppressor p(. | prefix,
// distractor); both see the same prefix. A candidate extension with token w
// scores
//     log p_emit(w) - (1 - lambda) * log p_supp(w)
// which is the per-token form of lambda * log p(s|t) + (1 - lambda) *
// log[p(s|t) / p(s|d)]. Scores accumulate over the sentence including the
// final EOS factor.

#include <cstdint>
#include <span>
#include <vector>

#include "esd/kernel.hpp"
#include "esd/lm.hpp"

namespace esd {

struct DecodeParams {
  double lambda = 1.0;
  std::size_t beam_width = 10;
  /// Maximum number of words; EOS is forced after this many.
  std::size_t max_len = 20;
  /// Rank finished hypotheses by score / (words + 1) instead of raw score.
  bool length_normalize = false;
  Kernel kernel = Kernel::serial;

  void validate() const;
};

struct BeamHypothesis {
  TokenSeq tokens;  // words only, EOS not stored
  double emitter_lp = 0.0;
  double suppressor_lp = 0.0;
  double es_score = 0.0;
  bool finished = false;

  friend bool operator==(const BeamHypothesis&, const BeamHypothesis&) = default;
};

struct DecodeResult {
  double lambda = 1.0;
  std::vector<BeamHypothesis> hypotheses;  // best first

  const BeamHypothesis& best() const;
};

/// emitter_lp - (1 - lambda) * suppressor_lp. Throws when lambda is outside
/// [0, 1] or an input is not finite.
double es_token_score(double emitter_lp, double suppressor_lp, double lambda);

/// Deterministic ranking: higher score first, then lexicographically smaller
/// token sequence (a proper prefix sorts first, i.e. shorter first).
bool ranks_before(double score_a, std::span<const TokenId> a, double score_b, std::span<const TokenId> b);

/// Plain log-probability beam search. suppressor_lp mirrors emitter_lp
/// (emitter and suppressor are the same model and context).
DecodeResult beam_search(const ConditionalLM& lm, const ContextKey& context, const DecodeParams& params);

/// Emitter-suppressor beam search. Both models must share one vocabulary.
DecodeResult es_beam_search(const ConditionalLM& emitter, const ContextKey& target, const ConditionalLM& suppressor,
                            const ContextKey& distractor, const DecodeParams& params);

/// Recomputes the accumulated ES objective of a finished sentence token by
/// token through both models.
double es_objective(const ConditionalLM& emitter, const ContextKey& target, const ConditionalLM& suppressor,
                    const ContextKey& distractor, std::span<const TokenId> tokens, double lambda);

namespace kernels {

struct Candidate {
  std::uint32_t parent = 0;
  TokenId token = 0;  // kEos for a terminating extension
  double emitter_lp = 0.0;
  double suppressor_lp = 0.0;
  double score = 0.0;
};

/// One beam step's scoring problem. `suppressor == nullptr` is vanilla search.
struct StepScorer {
  const ConditionalLM* emitter = nullptr;
  const ContextKey* target = nullptr;
  const ConditionalLM* suppressor = nullptr;
  const ContextKey* distractor = nullptr;
  double lambda = 1.0;
  std::size_t max_len = 20;

  void expand_one(const BeamHypothesis& hyp, std::uint32_t parent, std::vector<Candidate>& out) const;
};

/// Reference implementation: candidates for every active hypothesis in order.
std::vector<Candidate> expand_serial(const StepScorer& scorer, std::span<const BeamHypothesis> active);
/// OpenMP over active hypotheses; same output as expand_serial.
std::vector<Candidate> expand_openmp(const StepScorer& scorer, std::span<const BeamHypothesis> active);

}  // namespace kernels
}  // namespace esd
