#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "esd/error.hpp"
#include "esd/lm.hpp"
#include "esd/ngram_lm.hpp"
#include "test_support.hpp"

using namespace esd;

namespace {

// Independent count-based reference for add-alpha backoff.
double oracle_logprob(const Corpus& corpus, const ContextKey& ctx, int order, double alpha,
                      const TokenSeq& prefix, TokenId next) {
  const std::size_t n = static_cast<std::size_t>(order - 1);
  std::vector<TokenSeq> padded;
  for (const auto& r : corpus.records()) {
    if (r.context != ctx) continue;
    TokenSeq s(n, Vocabulary::kBos);
    s.insert(s.end(), r.tokens.begin(), r.tokens.end());
    s.push_back(Vocabulary::kEos);
    padded.push_back(std::move(s));
  }
  TokenSeq hist(n, Vocabulary::kBos);
  hist.insert(hist.end(), prefix.begin(), prefix.end());
  hist.erase(hist.begin(), hist.end() - static_cast<std::ptrdiff_t>(n));

  const double k_outcomes = static_cast<double>(corpus.vocab().outcome_count());
  for (std::size_t k = n + 1; k-- > 0;) {
    const TokenSeq suffix(hist.end() - static_cast<std::ptrdiff_t>(k), hist.end());
    double h_count = 0, hw_count = 0;
    for (const auto& s : padded)
      for (std::size_t i = n; i < s.size(); ++i) {
        if (!std::equal(suffix.begin(), suffix.end(), s.begin() + static_cast<std::ptrdiff_t>(i - k))) continue;
        h_count += 1;
        if (s[i] == next) hw_count += 1;
      }
    if (h_count > 0) return std::log((hw_count + alpha) / (h_count + alpha * k_outcomes));
  }
  return std::nan("");
}

}  // namespace

TEST_CASE("toy bigram probabilities") {
  const auto loaded = test::corpus_from({{"c", "a b"}});
  const auto lm = train_ngram(loaded.corpus, 2, 1.0);
  const ContextKey c("c");
  const TokenId a = loaded.vocab->id("a"), b = loaded.vocab->id("b");
  CHECK(std::exp(lm.next_token_logprobs(c, {}).logprob(a)) == doctest::Approx(0.5).epsilon(1e-12));
  const TokenSeq pb{a, b};
  CHECK(std::exp(lm.next_token_logprobs(c, pb).logprob(Vocabulary::kEos)) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sequence_logprob(lm, c, pb) == doctest::Approx(std::log(0.125)).epsilon(1e-12));
  CHECK(sequence_logprob(lm, c, pb) == doctest::Approx(-2.0794).epsilon(1e-4));
  CHECK(lm.count(c, TokenSeq{Vocabulary::kBos}, a) == 1);
  CHECK(lm.history_count(c, TokenSeq{}) == 3);
}

TEST_CASE("probabilities match a counting oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 6; ++trial) {
    const auto loaded = test::random_corpus(rng, 2, 4, 6, 4);
    const int order = 1 + static_cast<int>(uniform_index(rng, 4));
    const double alpha = trial % 2 ? 0.1 : 0.7;
    const auto lm = train_ngram(loaded.corpus, order, alpha);
    for (const auto& ctx : loaded.corpus.contexts()) {
      test::enumerate_sequences(*loaded.vocab, 3, [&](const TokenSeq& prefix) {
        const auto dist = lm.next_token_logprobs(ctx, prefix);
        for (std::size_t o = 0; o < dist.size(); ++o) {
          const TokenId w = Vocabulary::outcome_token(o);
          CHECK(dist[o] == doctest::Approx(oracle_logprob(loaded.corpus, ctx, order, alpha, prefix, w)).epsilon(1e-12));
        }
      });
    }
  }
}

TEST_CASE("every distribution is normalized and finite") {
  Rng rng(3);
  const auto loaded = test::random_corpus(rng, 3, 5, 8, 5);
  for (int order : {1, 2, 3, 5}) {
    const auto lm = train_ngram(loaded.corpus, order, 0.05);
    for (const auto& ctx : loaded.corpus.contexts())
      test::enumerate_sequences(*loaded.vocab, 3, [&](const TokenSeq& prefix) {
        const auto d = lm.next_token_logprobs(ctx, prefix);
        CHECK(d.size() == loaded.vocab->outcome_count());
        CHECK(d.all_finite());
        CHECK(d.normalization_error() < 1e-9);
      });
  }
}

TEST_CASE("only the last order-1 tokens matter") {
  Rng rng(8);
  const auto loaded = test::random_corpus(rng, 2, 4, 10, 5);
  const auto lm = train_ngram(loaded.corpus, 3, 0.1);
  const ContextKey c("c0");
  const TokenId w0 = loaded.vocab->id("w0"), w1 = loaded.vocab->id("w1"), w2 = loaded.vocab->id("w2");
  const TokenSeq long_prefix{w2, w0, w2, w0, w1};
  const TokenSeq short_prefix{w1, w0, w1};
  const auto a = lm.next_token_logprobs(c, long_prefix);
  const auto b = lm.next_token_logprobs(c, short_prefix);
  for (std::size_t o = 0; o < a.size(); ++o) CHECK(a[o] == b[o]);
}

TEST_CASE("duplicating the corpus with doubled alpha leaves probabilities unchanged") {
  Rng rng(21);
  const auto loaded = test::random_corpus(rng, 2, 4, 5, 4);
  std::vector<Record> twice(loaded.corpus.records().begin(), loaded.corpus.records().end());
  twice.insert(twice.end(), loaded.corpus.records().begin(), loaded.corpus.records().end());
  const Corpus doubled(loaded.vocab, twice);
  const auto lm1 = train_ngram(loaded.corpus, 2, 0.2);
  const auto lm2 = train_ngram(doubled, 2, 0.4);
  for (const auto& ctx : loaded.corpus.contexts())
    test::enumerate_sequences(*loaded.vocab, 2, [&](const TokenSeq& prefix) {
      const auto a = lm1.next_token_logprobs(ctx, prefix);
      const auto b = lm2.next_token_logprobs(ctx, prefix);
      for (std::size_t o = 0; o < a.size(); ++o) CHECK(a[o] == doctest::Approx(b[o]).epsilon(1e-12));
    });
}

TEST_CASE("binary model round trip") {
  Rng rng(4);
  const auto loaded = test::random_corpus(rng, 3, 5, 6, 4);
  const auto lm = train_ngram(loaded.corpus, 3, 0.1);
  test::TempDir dir;
  lm.save(dir / "m.bin");
  const auto back = NGramLM::load(dir / "m.bin", loaded.vocab);
  CHECK(back.order() == 3);
  CHECK(back.alpha() == 0.1);
  CHECK(back.contexts() == lm.contexts());
  for (const auto& ctx : lm.contexts())
    test::enumerate_sequences(*loaded.vocab, 2, [&](const TokenSeq& prefix) {
      const auto a = lm.next_token_logprobs(ctx, prefix);
      const auto b = back.next_token_logprobs(ctx, prefix);
      for (std::size_t o = 0; o < a.size(); ++o) CHECK(a[o] == b[o]);
    });

  auto other = std::make_shared<const Vocabulary>(Vocabulary::from_words({"x", "y"}));
  CHECK_THROWS_AS(NGramLM::load(dir / "m.bin", other), Error);

  std::stringstream garbage("NOTAMODEL");
  CHECK_THROWS_AS(NGramLM::read(garbage, loaded.vocab), Error);
}

TEST_CASE("sampling frequency matches the model") {
  const auto loaded = test::corpus_from({{"c", "a b"}});
  const auto lm = train_ngram(loaded.corpus, 2, 1.0);
  Rng rng(99);
  const int n = 10000;
  int first_a = 0;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_sequence(lm, ContextKey("c"), 10, rng);
    if (!s.empty() && s[0] == loaded.vocab->id("a")) ++first_a;
  }
  CHECK(static_cast<double>(first_a) / n == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("sampling respects max_len") {
  const auto loaded = test::corpus_from({{"c", "a a a a a a a a"}});
  const auto lm = train_ngram(loaded.corpus, 2, 0.01);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) CHECK(sample_sequence(lm, ContextKey("c"), 3, rng).size() <= 3);
  CHECK_THROWS_AS(sample_sequence(lm, ContextKey("c"), 0, rng), Error);
}

TEST_CASE("unknown contexts and bad arguments throw") {
  const auto loaded = test::corpus_from({{"c", "a b"}});
  const auto lm = train_ngram(loaded.corpus, 2, 1.0);
  CHECK_THROWS_AS(lm.next_token_logprobs(ContextKey("nope"), {}), UnknownContextError);
  CHECK_THROWS_AS(train_ngram(loaded.corpus, 0, 1.0), Error);
  CHECK_THROWS_AS(train_ngram(loaded.corpus, 2, 0.0), Error);
  const auto d = lm.next_token_logprobs(ContextKey("c"), {});
  CHECK_THROWS_AS(d.logprob(Vocabulary::kBos), Error);
  const TokenSeq empty;
  CHECK_THROWS_AS(sequence_logprob(lm, ContextKey("c"), empty), Error);
}
