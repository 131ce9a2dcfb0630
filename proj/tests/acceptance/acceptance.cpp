// Acceptance suite: one PASS/FAIL line per primary criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "esd/decode.hpp"
#include "esd/harness.hpp"
#include "esd/metrics.hpp"
#include "esd/ngram_lm.hpp"
#include "test_support.hpp"

using namespace esd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s %-22s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const ReportRow* find_row(const SweepReport& r, const std::string& method, double lambda, std::size_t samples = 0,
                          const std::string& split = "") {
  for (const auto& x : r.rows)
    if (x.method == method && x.lambda == lambda && (samples == 0 || x.samples == samples) &&
        (split.empty() || x.split == split))
      return &x;
  return nullptr;
}

// ---------------------------------------------------------------------------

Outcome lambda_one_identity() {
  Rng rng(20240601);
  const std::size_t beams[] = {1, 2, 5, 10};
  std::size_t cases = 0, mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const auto data = test::random_corpus(rng, 2 + uniform_index(rng, 3), 3 + uniform_index(rng, 8),
                                          4 + uniform_index(rng, 8), 2 + uniform_index(rng, 6));
    const auto lm = train_ngram(data.corpus, 1 + static_cast<int>(uniform_index(rng, 4)), 0.05 + uniform01(rng));
    const auto ctxs = lm.contexts();
    const auto& t = ctxs[uniform_index(rng, ctxs.size())];
    const auto& d = ctxs[uniform_index(rng, ctxs.size())];
    DecodeParams p;
    p.lambda = 1.0;
    p.beam_width = beams[i % 4];
    p.max_len = 2 + uniform_index(rng, 12);
    const auto plain = beam_search(lm, t, p);
    const auto es = es_beam_search(lm, t, lm, d, p);
    bool same = plain.hypotheses.size() == es.hypotheses.size();
    for (std::size_t k = 0; same && k < plain.hypotheses.size(); ++k)
      same = plain.hypotheses[k].tokens == es.hypotheses[k].tokens &&
             plain.hypotheses[k].es_score == es.hypotheses[k].es_score &&
             plain.hypotheses[k].emitter_lp == es.hypotheses[k].emitter_lp;
    ++cases;
    mismatches += !same;
  }
  return {mismatches == 0, fmt("%zu cases, %zu mismatches", cases, mismatches)};
}

// Exhaustive search sharing next-token queries across prefixes.
struct Exhaustive {
  const ConditionalLM& lm;
  ContextKey t, d;
  double lambda;
  std::size_t max_len;
  double best = -INFINITY;
  TokenSeq best_tokens;

  void run() {
    TokenSeq prefix;
    dfs(prefix, 0.0);
  }
  void dfs(TokenSeq& prefix, double acc) {
    const auto e = lm.next_token_logprobs(t, prefix);
    const auto s = lm.next_token_logprobs(d, prefix);
    auto term = [&](std::size_t o) { return e[o] - (1.0 - lambda) * s[o]; };
    if (!prefix.empty()) {
      const double total = acc + term(0);
      if (total > best || (total == best && prefix < best_tokens)) {
        best = total;
        best_tokens = prefix;
      }
    }
    if (prefix.size() == max_len) return;
    for (std::size_t o = 1; o < e.size(); ++o) {
      prefix.push_back(Vocabulary::outcome_token(o));
      dfs(prefix, acc + term(o));
      prefix.pop_back();
    }
  }
};

Outcome brute_force_optimality() {
  Rng rng(77001);
  const double lambdas[] = {0.0, 0.3, 0.5, 0.7, 1.0};
  std::size_t checks = 0, bad = 0;
  double worst = 0.0;
  for (int w = 0; w < 50; ++w) {
    const std::size_t words = 2 + uniform_index(rng, 5);  // 2..6
    const auto data = test::random_corpus(rng, 2 + uniform_index(rng, 2), words, 3 + uniform_index(rng, 6),
                                          1 + uniform_index(rng, 5));
    const auto lm = train_ngram(data.corpus, 1 + static_cast<int>(uniform_index(rng, 3)), 0.05 + uniform01(rng));
    const std::size_t T = 1 + uniform_index(rng, 5);  // 1..5
    const auto ctxs = lm.contexts();
    for (double lambda : lambdas) {
      Exhaustive ex{lm, ctxs[0], ctxs[1], lambda, T};
      ex.run();
      DecodeParams p;
      p.lambda = lambda;
      p.max_len = T;
      p.beam_width = 1;
      for (std::size_t k = 0; k < T; ++k) p.beam_width *= data.vocab->outcome_count();
      const auto r = es_beam_search(lm, ctxs[0], lm, ctxs[1], p);
      const double diff = std::abs(r.best().es_score - ex.best);
      worst = std::max(worst, diff);
      ++checks;
      if (diff > 1e-9 || r.best().tokens != ex.best_tokens) ++bad;
    }
  }
  return {bad == 0, fmt("%zu (world, lambda) checks, %zu failures, max |diff| %.3g", checks, bad, worst)};
}

struct SweepData {
  ExperimentConfig cfg;
  SweepReport report;
};

const SweepData& default_sweep() {
  static const SweepData data = [] {
    SweepData d;
    d.report = run_sweep(d.cfg);
    return d;
  }();
  return data;
}

Outcome inverted_u() {
  const auto& d = default_sweep();
  const auto* lo = find_row(d.report, "IS", 0.0);
  const auto* hi = find_row(d.report, "IS", 1.0);
  if (!lo || !hi) return {false, "missing IS endpoint rows"};
  const ReportRow* best = nullptr;
  for (double l : d.cfg.lambdas) {
    if (l <= 0.0 || l >= 1.0) continue;
    const auto* r = find_row(d.report, "IS", l);
    if (r && (!best || r->cider_mean > best->cider_mean)) best = r;
  }
  if (!best) return {false, "no interior lambda"};
  const double margin = best->cider_mean - std::max(lo->cider_mean, hi->cider_mean);
  return {margin >= 2.0, fmt("%zu worlds; IS CIDEr-D lambda=0 %.3f, best interior lambda=%.1f %.3f, lambda=1 %.3f; "
                             "margin %.3f (need >= 2)",
                             d.cfg.worlds, lo->cider_mean, best->lambda, best->cider_mean, hi->cider_mean, margin)};
}

Outcome discrimination_gain() {
  ExperimentConfig cfg;
  const auto r = run_discrim_captioning(cfg);
  double is_sum = 0, s_sum = 0;
  std::size_t is_n = 0, s_n = 0;
  for (const auto& it : r.items) {
    if (it.split != "hard" || !it.speaker_identical) continue;
    if (it.method == "IS") is_sum += it.afc, ++is_n;
    if (it.method == "S") s_sum += it.afc, ++s_n;
  }
  const auto* is_easy = find_row(r, "IS", cfg.discrim_lambda, 0, "easy");
  const auto* s_easy = find_row(r, "S", 1.0, 0, "easy");
  if (!is_easy || !s_easy || is_n == 0 || s_n == 0) return {false, "missing rows or no identical-caption hard pairs"};
  const double is_hard = is_sum / is_n, s_hard = s_sum / s_n;
  const bool ok = is_hard >= 0.9 && s_hard == 0.5 && is_easy->afc_mean >= s_easy->afc_mean;
  return {ok, fmt("%zu worlds; hard pairs with identical S captions: %zu, 2AFC IS(lambda=%.1f, beam %zu) %.3f, S %.3f; "
                  "easy 2AFC IS %.3f >= S %.3f",
                  cfg.worlds, is_n, cfg.discrim_lambda, cfg.discrim_beam, is_hard, s_hard, is_easy->afc_mean,
                  s_easy->afc_mean)};
}

Outcome sample_efficiency() {
  ExperimentConfig cfg;
  cfg.methods = {"IS", "RS"};
  const auto r = run_rs_samplesweep(cfg);
  std::vector<const ReportRow*> rs;
  for (auto b : cfg.rs_budgets) rs.push_back(find_row(r, "RS", cfg.rs_lambda, b));
  const auto* is = find_row(r, "IS", cfg.rs_is_lambda);
  if (!is || std::count(rs.begin(), rs.end(), nullptr)) return {false, "missing rows"};
  bool monotone = true;
  for (std::size_t k = 1; k < rs.size(); ++k)
    monotone = monotone && rs[k]->cider_mean >= rs[k - 1]->cider_mean - std::max(rs[k]->cider_sem, rs[k - 1]->cider_sem);
  const bool low = rs.front()->cider_mean < is->cider_mean;
  const bool close = std::abs(rs.back()->cider_mean - is->cider_mean) <= 1.0;
  std::string curve;
  for (std::size_t k = 0; k < rs.size(); ++k)
    curve += fmt("%sRS@%zu %.3f+-%.3f", k ? ", " : "", rs[k]->samples, rs[k]->cider_mean, rs[k]->cider_sem);
  return {monotone && low && close,
          fmt("%zu worlds, lambda %.1f; %s; IS(beam %zu) %.3f", cfg.worlds, cfg.rs_lambda, curve.c_str(),
              cfg.beam_width, is->cider_mean)};
}

Outcome listener_comparison() {
  const auto& d = default_sweep();
  const double l = d.cfg.rs_lambda;
  const auto* rs = find_row(d.report, "RS", l);
  const auto* tl = find_row(d.report, "RS-TL", l);
  const auto* rr = find_row(d.report, "RS-R", l);
  if (!rs || !tl || !rr) return {false, "missing RS rows"};
  const bool ok = std::abs(tl->cider_mean - rs->cider_mean) <= 2.0 && rs->cider_mean > rr->cider_mean &&
                  tl->cider_mean > rr->cider_mean;
  return {ok, fmt("lambda %.1f, %zu samples: introspector %.3f, trained listener %.3f, chance %.3f", l,
                  d.cfg.rs_samples, rs->cider_mean, tl->cider_mean, rr->cider_mean)};
}

Outcome metric_goldens() {
  auto W = [](const char* s) { return tokenize(s); };
  struct Golden {
    std::vector<std::vector<Words>> sets;
    Words candidate;
    double expect;
  };
  const double ln_case = 2.5 * (0.5 + 1.0 / std::sqrt(5.0)) * std::exp(-4.0 / 72.0);
  const std::vector<Golden> goldens = {
      {{{W("a b c d")}, {W("x y z w")}}, W("a b c d"), 10.0},
      {{{W("a b c")}, {W("a b d")}}, W("a b c"), 7.5},
      {{{W("a b c d")}, {W("x y z w")}}, W("x y z w"), 0.0},
      {{{W("a b")}, {W("c d")}}, W("a b a b"), ln_case},
      {{{W("a b"), W("c d")}, {W("e f")}}, W("a b"), 2.5},
  };
  double worst = 0.0;
  for (const auto& g : goldens) {
    const auto idf = compute_idf(g.sets);
    worst = std::max(worst, std::abs(cider_d(g.candidate, g.sets[0], idf).total - g.expect));
  }

  Rng rng(4242);
  std::size_t queries = 0;
  double worst_norm = 0.0;
  bool finite = true;
  for (int c = 0; c < 40; ++c) {
    const auto data = test::random_corpus(rng, 1 + uniform_index(rng, 4), 2 + uniform_index(rng, 20),
                                          1 + uniform_index(rng, 10), 1 + uniform_index(rng, 8));
    const auto lm = train_ngram(data.corpus, 1 + static_cast<int>(uniform_index(rng, 5)), 1e-3 + 2 * uniform01(rng));
    const auto ctxs = lm.contexts();
    for (int q = 0; q < 500; ++q) {
      TokenSeq prefix(uniform_index(rng, 10));
      for (auto& id : prefix) id = static_cast<TokenId>(Vocabulary::kUnk + uniform_index(rng, data.vocab->size() - 1));
      const auto dist = lm.next_token_logprobs(ctxs[uniform_index(rng, ctxs.size())], prefix);
      worst_norm = std::max(worst_norm, dist.normalization_error());
      finite = finite && dist.all_finite();
      ++queries;
    }
  }
  const bool ok = worst <= 1e-6 && worst_norm <= 1e-9 && finite;
  return {ok, fmt("%zu CIDEr-D goldens, max |err| %.2g; %zu fuzzed distributions, max |sum-1| %.2g", goldens.size(),
                  worst, queries, worst_norm)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism() {
  test::TempDir dir;
  auto run = [&](const std::string& name) {
    const std::string cmd = std::string("'") + ESD_CLI_PATH + "' sweep --out '" + (dir / name).string() + "' > /dev/null";
    return std::system(cmd.c_str());
  };
  if (run("a") != 0 || run("b") != 0) return {false, "sweep command failed"};
  const auto a = slurp(dir / "a" / "report.csv");
  const auto b = slurp(dir / "b" / "report.csv");
  const bool ok = !a.empty() && a == b;
  return {ok, fmt("default sweep run twice via the CLI; report.csv %zu bytes, %s", a.size(),
                  ok ? "bitwise identical" : "DIFFERS")};
}

}  // namespace

int main() {
  report("lambda1-identity", lambda_one_identity);
  report("brute-force-optimality", brute_force_optimality);
  report("inverted-u", inverted_u);
  report("discrimination-gain", discrimination_gain);
  report("rs-sample-efficiency", sample_efficiency);
  report("listener-comparison", listener_comparison);
  report("metric-goldens", metric_goldens);
  report("sweep-determinism", cli_determinism);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
