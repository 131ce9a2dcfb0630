#include "esd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "esd/diagnostics.hpp"
#include "esd/error.hpp"

namespace esd {
namespace {

constexpr char kSep = '\x1f';

std::string ngram_key(std::span<const std::string> words) {
  std::string key;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) key.push_back(kSep);
    key += words[i];
  }
  return key;
}

using NgramCounts = std::array<std::unordered_map<std::string, double>, CiderConfig::kMaxN>;

NgramCounts count_ngrams(std::span<const std::string> words) {
  NgramCounts counts;
  for (std::size_t n = 1; n <= CiderConfig::kMaxN; ++n)
    for (std::size_t i = 0; i + n <= words.size(); ++i) counts[n - 1][ngram_key(words.subspan(i, n))] += 1.0;
  return counts;
}

struct TfIdfVector {
  std::array<std::unordered_map<std::string, double>, CiderConfig::kMaxN> weights;
  std::array<double, CiderConfig::kMaxN> norm{};
  std::size_t length = 0;
};

}  // namespace

double idf_of_key(const IdfStats& stats, const std::string& key, std::size_t n) {
  const auto& table = stats.df_[n - 1];
  auto it = table.find(key);
  const double df = it == table.end() ? 1.0 : static_cast<double>(std::max<std::size_t>(1, it->second));
  return std::log(static_cast<double>(stats.documents_) / df);
}

namespace {

TfIdfVector to_vector(std::span<const std::string> words, const IdfStats& idf) {
  TfIdfVector v;
  v.length = words.size();
  const auto counts = count_ngrams(words);
  for (std::size_t n = 0; n < CiderConfig::kMaxN; ++n) {
    double sq = 0.0;
    for (const auto& [key, tf] : counts[n]) {
      const double w = tf * idf_of_key(idf, key, n + 1);
      v.weights[n].emplace(key, w);
      sq += w * w;
    }
    v.norm[n] = std::sqrt(sq);
  }
  return v;
}

std::array<double, CiderConfig::kMaxN> similarity(const TfIdfVector& hyp, const TfIdfVector& ref) {
  const double delta = static_cast<double>(hyp.length) - static_cast<double>(ref.length);
  const double penalty = std::exp(-(delta * delta) / (2.0 * CiderConfig::kSigma * CiderConfig::kSigma));
  std::array<double, CiderConfig::kMaxN> val{};
  for (std::size_t n = 0; n < CiderConfig::kMaxN; ++n) {
    // Sorted keys keep the floating-point summation order fixed.
    std::vector<const std::pair<const std::string, double>*> terms;
    for (const auto& kv : hyp.weights[n]) terms.push_back(&kv);
    std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return a->first < b->first; });
    double dot = 0.0;
    for (const auto* kv : terms) {
      auto it = ref.weights[n].find(kv->first);
      if (it == ref.weights[n].end()) continue;
      dot += std::min(kv->second, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) dot /= hyp.norm[n] * ref.norm[n];
    val[n] = dot * penalty;
  }
  return val;
}

}  // namespace

std::size_t IdfStats::df(std::span<const std::string> ngram) const {
  if (ngram.empty() || ngram.size() > CiderConfig::kMaxN) return 0;
  auto it = df_[ngram.size() - 1].find(ngram_key(ngram));
  return it == df_[ngram.size() - 1].end() ? 0 : it->second;
}

double IdfStats::idf(std::span<const std::string> ngram) const {
  if (ngram.empty() || ngram.size() > CiderConfig::kMaxN) throw Error("n-gram order must be 1..4");
  return idf_of_key(*this, ngram_key(ngram), ngram.size());
}

IdfStats compute_idf(std::span<const std::vector<Words>> reference_sets) {
  if (reference_sets.empty()) throw Error("IDF needs at least one reference set");
  IdfStats stats;
  stats.documents_ = reference_sets.size();
  for (const auto& set : reference_sets) {
    if (set.empty()) throw Error("every reference set needs at least one caption");
    std::array<std::set<std::string>, CiderConfig::kMaxN> seen;
    for (const auto& ref : set) {
      const auto counts = count_ngrams(ref);
      for (std::size_t n = 0; n < CiderConfig::kMaxN; ++n)
        for (const auto& [key, _] : counts[n]) seen[n].insert(key);
    }
    for (std::size_t n = 0; n < CiderConfig::kMaxN; ++n)
      for (const auto& key : seen[n]) ++stats.df_[n][key];
  }
  return stats;
}

CiderScore cider_d(std::span<const std::string> candidate, std::span<const Words> references, const IdfStats& idf) {
  CiderScore score;
  if (candidate.empty()) {
    warn("empty candidate scores 0");
    return score;
  }
  if (references.empty()) throw Error("CIDEr-D needs at least one reference");
  const auto hyp = to_vector(candidate, idf);
  for (const auto& ref : references) {
    const auto sim = similarity(hyp, to_vector(ref, idf));
    for (std::size_t n = 0; n < CiderConfig::kMaxN; ++n) score.per_n[n] += sim[n];
  }
  double sum = 0.0;
  for (auto& v : score.per_n) {
    v = v / static_cast<double>(references.size()) * CiderConfig::kScale;
    sum += v;
  }
  score.total = sum / static_cast<double>(CiderConfig::kMaxN);
  return score;
}

std::vector<CiderScore> cider_d_batch(std::span<const Words> candidates, std::span<const std::vector<Words>> references,
                                      const IdfStats& idf, Kernel kernel) {
  if (candidates.size() != references.size()) throw Error("candidate and reference counts differ");
  std::vector<CiderScore> out(candidates.size());
  const auto n = static_cast<std::ptrdiff_t>(candidates.size());
  if (kernel == Kernel::openmp) {
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      out[k] = cider_d(candidates[k], references[k], idf);
    }
  } else {
    for (std::size_t k = 0; k < candidates.size(); ++k) out[k] = cider_d(candidates[k], references[k], idf);
  }
  return out;
}

namespace {

template <typename T>
double set_iou(std::span<const T> a, std::span<const T> b) {
  std::set<T> sa(a.begin(), a.end());
  std::set<T> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& x : sa) inter += sb.count(x);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

double overlap_iou(std::span<const std::string> a, std::span<const std::string> b) {
  return set_iou<std::string>(a, b);
}
double overlap_iou(std::span<const TokenId> a, std::span<const TokenId> b) { return set_iou<TokenId>(a, b); }

}  // namespace esd
