#include <doctest.h>

#include <cmath>
#include <limits>

#include "esd/decode.hpp"
#include "esd/error.hpp"
#include "esd/ngram_lm.hpp"
#include "test_support.hpp"

using namespace esd;

namespace {

struct Best {
  TokenSeq tokens;
  double score = -std::numeric_limits<double>::infinity();
};

double oracle_objective(const ConditionalLM& lm, const ContextKey& t, const ContextKey& d, const TokenSeq& s,
                        double lambda) {
  double total = 0.0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    const TokenSeq prefix(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(i));
    const TokenId w = i < s.size() ? s[i] : Vocabulary::kEos;
    const auto oi = Vocabulary::outcome_index(w);
    total += lm.next_token_logprobs(t, prefix)[oi] - (1.0 - lambda) * lm.next_token_logprobs(d, prefix)[oi];
  }
  return total;
}

Best brute_force(const ConditionalLM& lm, const ContextKey& t, const ContextKey& d, double lambda, std::size_t max_len) {
  Best best;
  test::enumerate_sequences(lm.vocab(), max_len, [&](const TokenSeq& s) {
    const double v = oracle_objective(lm, t, d, s, lambda);
    if (v > best.score || (v == best.score && s < best.tokens)) best = {s, v};
  });
  return best;
}

}  // namespace

TEST_CASE("token score examples") {
  CHECK(es_token_score(-1.0, -2.0, 1.0) == -1.0);
  CHECK(es_token_score(-1.0, -2.0, 0.0) == 1.0);
  CHECK(es_token_score(-1.0, -3.0, 0.5) == doctest::Approx(0.5));
  CHECK_THROWS_AS(es_token_score(-1.0, -1.0, 1.5), Error);
  CHECK_THROWS_AS(es_token_score(-1.0, -1.0, -0.1), Error);
  CHECK_THROWS_AS(es_token_score(-INFINITY, -1.0, 0.5), Error);
}

TEST_CASE("ranking is by score then token order") {
  const TokenSeq a{3, 4}, b{3, 5}, ab{3};
  CHECK(ranks_before(1.0, a, 0.0, b));
  CHECK(ranks_before(0.0, a, 0.0, b));
  CHECK_FALSE(ranks_before(0.0, b, 0.0, a));
  CHECK(ranks_before(0.0, ab, 0.0, a));
}

TEST_CASE("exhaustive beam equals brute force") {
  Rng rng(12);
  for (int trial = 0; trial < 8; ++trial) {
    const auto loaded = test::random_corpus(rng, 2, 3, 6, 4);
    const auto lm = train_ngram(loaded.corpus, 2, 0.3);
    for (double lambda : {0.0, 0.3, 0.7, 1.0}) {
      DecodeParams p;
      p.lambda = lambda;
      p.beam_width = 100000;
      p.max_len = 4;
      const auto r = es_beam_search(lm, ContextKey("c0"), lm, ContextKey("c1"), p);
      const auto oracle = brute_force(lm, ContextKey("c0"), ContextKey("c1"), lambda, p.max_len);
      CHECK(r.best().tokens == oracle.tokens);
      CHECK(r.best().es_score == doctest::Approx(oracle.score).epsilon(1e-9));
    }
  }
}

TEST_CASE("lambda one reproduces plain beam search") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto loaded = test::random_corpus(rng, 3, 6, 8, 6);
    const auto lm = train_ngram(loaded.corpus, 3, 0.1);
    DecodeParams p;
    p.lambda = 1.0;
    p.beam_width = 1 + uniform_index(rng, 8);
    p.max_len = 8;
    const auto plain = beam_search(lm, ContextKey("c0"), p);
    const auto es = es_beam_search(lm, ContextKey("c0"), lm, ContextKey("c2"), p);
    REQUIRE(plain.hypotheses.size() == es.hypotheses.size());
    for (std::size_t i = 0; i < plain.hypotheses.size(); ++i) {
      CHECK(plain.hypotheses[i].tokens == es.hypotheses[i].tokens);
      CHECK(plain.hypotheses[i].es_score == es.hypotheses[i].es_score);
    }
  }
}

TEST_CASE("same target and distractor gives the greedy-equivalent argmax") {
  // With t == d the objective is lambda * log p(s|t), so the argmax is lambda independent.
  Rng rng(5);
  const auto loaded = test::random_corpus(rng, 2, 4, 6, 4);
  const auto lm = train_ngram(loaded.corpus, 2, 0.2);
  DecodeParams p;
  p.beam_width = 100000;
  p.max_len = 4;
  p.lambda = 1.0;
  const auto ref = es_beam_search(lm, ContextKey("c0"), lm, ContextKey("c0"), p);
  for (double lambda : {0.2, 0.5, 0.9}) {
    p.lambda = lambda;
    const auto r = es_beam_search(lm, ContextKey("c0"), lm, ContextKey("c0"), p);
    CHECK(r.best().tokens == ref.best().tokens);
    CHECK(r.best().es_score == doctest::Approx(lambda * ref.best().es_score).epsilon(1e-9));
  }
}

TEST_CASE("reported scores match a recomputation") {
  Rng rng(77);
  const auto loaded = test::random_corpus(rng, 3, 6, 10, 6);
  const auto lm = train_ngram(loaded.corpus, 3, 0.1);
  for (double lambda : {0.0, 0.25, 0.6, 1.0}) {
    DecodeParams p;
    p.lambda = lambda;
    p.beam_width = 5;
    p.max_len = 7;
    const auto r = es_beam_search(lm, ContextKey("c1"), lm, ContextKey("c2"), p);
    CHECK(r.hypotheses.size() <= 5);
    for (const auto& h : r.hypotheses) {
      CHECK(h.finished);
      CHECK_FALSE(h.tokens.empty());
      CHECK(h.tokens.size() <= 7);
      const double expect = oracle_objective(lm, ContextKey("c1"), ContextKey("c2"), h.tokens, lambda);
      CHECK(h.es_score == doctest::Approx(expect).epsilon(1e-9));
      CHECK(es_objective(lm, ContextKey("c1"), lm, ContextKey("c2"), h.tokens, lambda) ==
            doctest::Approx(expect).epsilon(1e-9));
      CHECK(h.es_score == doctest::Approx(h.emitter_lp - (1 - lambda) * h.suppressor_lp).epsilon(1e-9));
    }
    for (std::size_t i = 1; i < r.hypotheses.size(); ++i)
      CHECK(ranks_before(r.hypotheses[i - 1].es_score, r.hypotheses[i - 1].tokens, r.hypotheses[i].es_score,
                         r.hypotheses[i].tokens));
  }
}

TEST_CASE("serial and OpenMP kernels agree exactly") {
  Rng rng(2);
  const auto loaded = test::random_corpus(rng, 3, 8, 12, 7);
  const auto lm = train_ngram(loaded.corpus, 3, 0.1);
  DecodeParams p;
  p.lambda = 0.4;
  p.beam_width = 12;
  p.max_len = 9;
  const auto serial = es_beam_search(lm, ContextKey("c0"), lm, ContextKey("c1"), p);
  p.kernel = Kernel::openmp;
  const auto omp = es_beam_search(lm, ContextKey("c0"), lm, ContextKey("c1"), p);
  CHECK(serial.hypotheses == omp.hypotheses);

  kernels::StepScorer scorer{&lm, nullptr, &lm, nullptr, 0.4, 9};
  const ContextKey t("c0"), d("c1");
  scorer.target = &t;
  scorer.distractor = &d;
  std::vector<BeamHypothesis> active(3);
  active[1].tokens = {loaded.vocab->id("w1")};
  active[2].tokens = {loaded.vocab->id("w2"), loaded.vocab->id("w3")};
  const auto a = kernels::expand_serial(scorer, active);
  const auto b = kernels::expand_openmp(scorer, active);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].parent == b[i].parent);
    CHECK(a[i].token == b[i].token);
    CHECK(a[i].score == b[i].score);
  }
}

TEST_CASE("eos is forbidden first and forced at max_len") {
  const auto loaded = test::corpus_from({{"c", "x"}, {"c", "x"}});
  const auto lm = train_ngram(loaded.corpus, 2, 0.01);
  DecodeParams p;
  p.beam_width = 3;
  p.max_len = 2;
  for (const auto& h : beam_search(lm, ContextKey("c"), p).hypotheses) {
    CHECK(h.tokens.size() >= 1);
    CHECK(h.tokens.size() <= 2);
  }
}

TEST_CASE("suppression moves the caption onto the distinguishing word") {
  const auto loaded = test::corpus_from({{"red", "bird red"},
                                         {"red", "bird red"},
                                         {"red", "bird"},
                                         {"red", "bird"},
                                         {"red", "bird"},
                                         {"blue", "bird blue"},
                                         {"blue", "bird"},
                                         {"blue", "bird"},
                                         {"blue", "bird"},
                                         {"blue", "bird"}});
  const auto lm = train_ngram(loaded.corpus, 2, 0.1);
  DecodeParams p;
  p.beam_width = 4;
  p.max_len = 3;
  p.lambda = 1.0;
  CHECK(loaded.vocab->decode(es_beam_search(lm, ContextKey("red"), lm, ContextKey("blue"), p).best().tokens) == "bird");
  p.lambda = 0.3;
  const auto words = loaded.vocab->words(es_beam_search(lm, ContextKey("red"), lm, ContextKey("blue"), p).best().tokens);
  REQUIRE(words.size() >= 2);
  CHECK(words[0] == "bird");
  CHECK(words[1] == "red");
}

TEST_CASE("decode argument errors") {
  const auto a = test::corpus_from({{"c", "a b"}, {"d", "b"}});
  const auto b = test::corpus_from({{"c", "a z"}});
  const auto lm_a = train_ngram(a.corpus, 2, 1.0);
  const auto lm_b = train_ngram(b.corpus, 2, 1.0);
  DecodeParams p;
  CHECK_THROWS_AS(es_beam_search(lm_a, ContextKey("c"), lm_b, ContextKey("c"), p), Error);
  CHECK_THROWS_AS(es_beam_search(lm_a, ContextKey("c"), lm_a, ContextKey("zz"), p), UnknownContextError);
  p.lambda = 2.0;
  CHECK_THROWS_AS(es_beam_search(lm_a, ContextKey("c"), lm_a, ContextKey("d"), p), Error);
  p.lambda = 0.5;
  p.beam_width = 0;
  CHECK_THROWS_AS(beam_search(lm_a, ContextKey("c"), p), Error);
  p.beam_width = 2;
  p.max_len = 0;
  CHECK_THROWS_AS(beam_search(lm_a, ContextKey("c"), p), Error);
}
