// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "esd/decode.hpp"
#include "esd/harness.hpp"
#include "esd/metrics.hpp"
#include "esd/ngram_lm.hpp"
#include "esd/pairing.hpp"
#include "esd/synth.hpp"

namespace {

using namespace esd;

struct Fixture {
  AttributeWorld world = gen_world(20, 8, 3, 11);
  Corpus corpus = gen_corpus(world, 200, 12);
  NGramLM lm = train_ngram(corpus, 3, 0.1);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_BeamSearch(benchmark::State& state, Kernel kernel) {
  const auto& f = fixture();
  DecodeParams p;
  p.lambda = 0.5;
  p.beam_width = static_cast<std::size_t>(state.range(0));
  p.max_len = 20;
  p.kernel = kernel;
  for (auto _ : state)
    benchmark::DoNotOptimize(es_beam_search(f.lm, ContextKey("A"), f.lm, ContextKey("B"), p));
}
BENCHMARK_CAPTURE(BM_BeamSearch, serial, Kernel::serial)->Arg(10)->Arg(50);
BENCHMARK_CAPTURE(BM_BeamSearch, openmp, Kernel::openmp)->Arg(10)->Arg(50);

void BM_CiderBatch(benchmark::State& state, Kernel kernel) {
  const auto& f = fixture();
  std::vector<Words> candidates;
  std::vector<std::vector<Words>> refs;
  Rng rng(5);
  const auto keys = f.world.keys();
  for (const auto& t : keys)
    for (const auto& d : keys) {
      if (t == d) continue;
      candidates.push_back(tokenize(gen_caption(f.world, f.world.context(t), rng)));
      std::vector<Words> r;
      for (const auto& s : gen_justification_refs(f.world, t, d).references) r.push_back(tokenize(s));
      refs.push_back(std::move(r));
    }
  const auto idf = compute_idf(refs);
  for (auto _ : state) benchmark::DoNotOptimize(cider_d_batch(candidates, refs, idf, kernel));
}
BENCHMARK_CAPTURE(BM_CiderBatch, serial, Kernel::serial);
BENCHMARK_CAPTURE(BM_CiderBatch, openmp, Kernel::openmp);

void BM_EasyPairs(benchmark::State& state, Kernel kernel) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  FeatureTable table(64);
  Rng rng(9);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(64);
    for (auto& x : v) x = standard_normal(rng);
    ids.push_back("img" + std::to_string(i));
    table.add(ids.back(), std::move(v));
  }
  for (auto _ : state) benchmark::DoNotOptimize(easy_pairs(table, ids, Distance::euclidean, kernel));
}
BENCHMARK_CAPTURE(BM_EasyPairs, serial, Kernel::serial)->Arg(2000);
BENCHMARK_CAPTURE(BM_EasyPairs, openmp, Kernel::openmp)->Arg(2000);

void BM_Sweep(benchmark::State& state, Kernel kernel) {
  ExperimentConfig cfg;
  cfg.worlds = 4;
  cfg.methods = {"S", "IS", "RS"};
  cfg.kernel = kernel;
  for (auto _ : state) benchmark::DoNotOptimize(run_sweep(cfg));
}
BENCHMARK_CAPTURE(BM_Sweep, serial, Kernel::serial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Sweep, openmp, Kernel::openmp)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
