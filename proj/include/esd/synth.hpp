#pragma once

// Synthetic attribute worlds: every context owns a set of shared attributes
// (common to all contexts) and distinctive ones; captions mention a random
// subset of them, so a plain speaker learns to describe shared features.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "esd/corpus.hpp"
#include "esd/random.hpp"

namespace esd {

struct GrammarParams {
  double shared_mention = 0.9;
  double distinct_mention = 0.5;
  /// Captions mentioning fewer (or more, when max_mentions > 0) attributes are redrawn.
  std::size_t min_mentions = 1;
  std::size_t max_mentions = 0;
  std::vector<std::string> openers = {"this bird is", "the bird is", "a bird that is"};
  std::string conjunction = "and";

  void validate() const;
};

struct ContextAttributes {
  ContextKey key;
  std::vector<std::string> shared;
  std::vector<std::string> distinct;

  /// Mention order used by captions and references: distinctive, then shared.
  std::vector<std::string> ordered() const;
};

struct AttributeWorld {
  std::uint64_t seed = 0;
  GrammarParams grammar;
  std::vector<std::string> shared_inventory;
  std::vector<std::string> distinct_inventory;
  std::vector<ContextAttributes> contexts;

  const ContextAttributes& context(const ContextKey& key) const;
  std::vector<ContextKey> keys() const;
  /// Attributes of `target` absent from `distractor`.
  std::vector<std::string> distinctive(const ContextKey& target, const ContextKey& distractor) const;
  /// Every word any caption or reference can contain, for vocabulary building.
  std::vector<std::string> lexicon() const;

  /// Pretty-printed JSON document.
  std::string to_json() const;
  static AttributeWorld from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static AttributeWorld load(const std::filesystem::path& path);
};

/// Size of the built-in shared and distinctive attribute pools.
std::size_t shared_pool_size();
std::size_t distinct_pool_size();

/// Contexts are named "A", "B", ...; at most 26.
AttributeWorld gen_world(std::size_t n_contexts, std::size_t n_shared, std::size_t n_distinct, std::uint64_t seed,
                         const GrammarParams& grammar = {});

/// One caption as a plain string.
std::string gen_caption(const AttributeWorld& world, const ContextAttributes& context, Rng& rng);

/// `captions_per_context` captions per context, contexts in key order. The
/// vocabulary is the world lexicon.
Corpus gen_corpus(const AttributeWorld& world, std::size_t captions_per_context, std::uint64_t seed);

struct GroundTruthJustification {
  ContextKey target;
  ContextKey distractor;
  std::vector<std::string> references;
};

/// `n_refs` references that each mention every attribute of target missing
/// from distractor, cycling through the openers.
GroundTruthJustification gen_justification_refs(const AttributeWorld& world, const ContextKey& target,
                                                const ContextKey& distractor, std::size_t n_refs = 5);

}  // namespace esd
