#pragma once

// CIDEr-D for justification scoring and word-set IoU for pairing.

#include <array>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "esd/corpus.hpp"
#include "esd/kernel.hpp"

namespace esd {

using Words = std::vector<std::string>;

/// CIDEr-D constants: n-gram orders 1..4, Gaussian length penalty with
/// sigma 6, scale factor 10, candidate counts clipped by reference counts.
struct CiderConfig {
  static constexpr std::size_t kMaxN = 4;
  static constexpr double kSigma = 6.0;
  static constexpr double kScale = 10.0;
};

/// Document frequencies of 1..4-grams, one document per reference set.
class IdfStats {
public:
  std::size_t documents() const noexcept { return documents_; }
  /// Number of reference sets containing the n-gram (0 if never seen).
  std::size_t df(std::span<const std::string> ngram) const;
  /// ln(N / max(1, df)).
  double idf(std::span<const std::string> ngram) const;

private:
  friend IdfStats compute_idf(std::span<const std::vector<Words>> reference_sets);
  friend double idf_of_key(const IdfStats& stats, const std::string& key, std::size_t n);

  std::size_t documents_ = 0;
  std::array<std::unordered_map<std::string, std::size_t>, CiderConfig::kMaxN> df_;
};

IdfStats compute_idf(std::span<const std::vector<Words>> reference_sets);

struct CiderScore {
  double total = 0.0;
  std::array<double, CiderConfig::kMaxN> per_n{};
};

CiderScore cider_d(std::span<const std::string> candidate, std::span<const Words> references, const IdfStats& idf);

/// Scores candidates[i] against references[i]; the OpenMP kernel matches the
/// serial one bit for bit.
std::vector<CiderScore> cider_d_batch(std::span<const Words> candidates, std::span<const std::vector<Words>> references,
                                      const IdfStats& idf, Kernel kernel = Kernel::serial);

/// |set(a) & set(b)| / |set(a) | set(b)|; 1 when both are empty.
double overlap_iou(std::span<const std::string> a, std::span<const std::string> b);
double overlap_iou(std::span<const TokenId> a, std::span<const TokenId> b);

}  // namespace esd
