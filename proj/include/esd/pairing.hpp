#pragma once

// Target/distractor pair construction: nearest neighbours in a feature space
// ("easy" confusion) re-ranked by the overlap of generated captions ("hard").

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "esd/corpus.hpp"
#include "esd/kernel.hpp"

namespace esd {

/// Item id -> dense vector; all vectors share one dimension.
class FeatureTable {
public:
  explicit FeatureTable(std::size_t dim) : dim_(dim) {}

  void add(std::string id, std::vector<double> values);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool contains(const std::string& id) const { return rows_.contains(id); }
  const std::vector<double>& at(const std::string& id) const;
  /// Ids in sorted order.
  const std::map<std::string, std::vector<double>>& rows() const noexcept { return rows_; }

  /// Header `dim=<D>`, then `<id>\t<v1> ... <vD>` per line.
  static FeatureTable read(std::istream& in);
  static FeatureTable load(const std::filesystem::path& path);
  void write(std::ostream& out) const;

private:
  std::size_t dim_;
  std::map<std::string, std::vector<double>> rows_;
};

enum class PairKind { easy, hard };
enum class Distance { euclidean, cosine };

struct ConfusionPair {
  std::string target;
  std::string distractor;
  /// easy: -distance (euclidean) or cosine similarity; hard: caption IoU.
  double similarity = 0.0;
  PairKind kind = PairKind::easy;
};

/// Nearest neighbour of each source (itself excluded), ties broken by id.
std::vector<ConfusionPair> easy_pairs(const FeatureTable& features, std::span<const std::string> source_ids,
                                      Distance distance = Distance::euclidean, Kernel kernel = Kernel::serial);

using CaptionFn = std::function<TokenSeq(const std::string& id)>;

struct HardPairs {
  std::vector<ConfusionPair> pairs;  // by IoU descending, then (target, distractor)
  std::size_t identical_captions = 0;
  std::map<std::string, TokenSeq> captions;
};

/// Re-ranks the easy pairs of `source_ids` by IoU of the captions that
/// `caption_of` produces for target and distractor; keeps the top `top_k`.
HardPairs hard_pairs(const CaptionFn& caption_of, const FeatureTable& features, std::span<const std::string> source_ids,
                     std::size_t top_k, Distance distance = Distance::euclidean);

}  // namespace esd
