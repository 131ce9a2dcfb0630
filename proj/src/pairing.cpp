#include "esd/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "esd/diagnostics.hpp"
#include "esd/error.hpp"
#include "esd/metrics.hpp"

namespace esd {

void FeatureTable::add(std::string id, std::vector<double> values) {
  if (id.empty()) throw Error("feature id must be non-empty");
  if (values.size() != dim_)
    throw Error("feature '" + id + "' has dimension " + std::to_string(values.size()) + ", expected " +
                std::to_string(dim_));
  for (double v : values)
    if (!std::isfinite(v)) throw Error("feature '" + id + "' has a non-finite entry");
  if (!rows_.emplace(std::move(id), std::move(values)).second) throw Error("duplicate feature id");
}

const std::vector<double>& FeatureTable::at(const std::string& id) const {
  auto it = rows_.find(id);
  if (it == rows_.end()) throw Error("feature id '" + id + "' not found");
  return it->second;
}

FeatureTable FeatureTable::read(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::optional<FeatureTable> table;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!table) {
      if (line.rfind("dim=", 0) != 0) throw ParseError(lineno, "expected header dim=<D>");
      std::size_t dim = 0;
      try {
        dim = std::stoul(line.substr(4));
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad dimension");
      }
      if (dim == 0) throw ParseError(lineno, "dimension must be positive");
      table.emplace(dim);
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(lineno, "expected <id>\\t<values>");
    std::istringstream values(line.substr(tab + 1));
    std::vector<double> v;
    std::string tok;
    while (values >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad number '" + tok + "'");
      }
    }
    try {
      table->add(line.substr(0, tab), std::move(v));
    } catch (const Error& e) {
      throw ParseError(lineno, e.what());
    }
  }
  if (!table) throw Error("feature file is empty");
  return std::move(*table);
}

FeatureTable FeatureTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open feature file " + path.string());
  return read(in);
}

void FeatureTable::write(std::ostream& out) const {
  out << "dim=" << dim_ << '\n';
  auto old = out.precision(17);
  for (const auto& [id, v] : rows_) {
    out << id << '\t';
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
    out << '\n';
  }
  out.precision(old);
}

namespace {

// Larger is closer.
double closeness(const std::vector<double>& a, const std::vector<double>& b, Distance d) {
  if (d == Distance::euclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return -std::sqrt(s);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

ConfusionPair nearest(const FeatureTable& features, const std::string& source, Distance d) {
  const auto& v = features.at(source);
  ConfusionPair best{source, {}, -std::numeric_limits<double>::infinity(), PairKind::easy};
  // rows() is sorted by id, so keeping the first strict maximum breaks ties by id.
  for (const auto& [id, w] : features.rows()) {
    if (id == source) continue;
    const double c = closeness(v, w, d);
    if (best.distractor.empty() || c > best.similarity) {
      best.distractor = id;
      best.similarity = c;
    }
  }
  return best;
}

}  // namespace

std::vector<ConfusionPair> easy_pairs(const FeatureTable& features, std::span<const std::string> source_ids,
                                      Distance distance, Kernel kernel) {
  if (features.size() < 2) throw Error("nearest-neighbour pairing needs at least two items");
  for (const auto& id : source_ids) features.at(id);
  std::vector<ConfusionPair> out(source_ids.size());
  const auto n = static_cast<std::ptrdiff_t>(source_ids.size());
  if (kernel == Kernel::openmp) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i)] = nearest(features, source_ids[static_cast<std::size_t>(i)], distance);
  } else {
    for (std::size_t i = 0; i < source_ids.size(); ++i) out[i] = nearest(features, source_ids[i], distance);
  }
  return out;
}

HardPairs hard_pairs(const CaptionFn& caption_of, const FeatureTable& features, std::span<const std::string> source_ids,
                     std::size_t top_k, Distance distance) {
  auto candidates = easy_pairs(features, source_ids, distance);
  HardPairs result;
  auto caption = [&](const std::string& id) -> const TokenSeq& {
    auto it = result.captions.find(id);
    if (it == result.captions.end()) it = result.captions.emplace(id, caption_of(id)).first;
    return it->second;
  };
  for (auto& p : candidates) {
    p.similarity = overlap_iou(std::span<const TokenId>(caption(p.target)), std::span<const TokenId>(caption(p.distractor)));
    p.kind = PairKind::hard;
  }
  std::sort(candidates.begin(), candidates.end(), [](const ConfusionPair& a, const ConfusionPair& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.target != b.target) return a.target < b.target;
    return a.distractor < b.distractor;
  });
  if (top_k > candidates.size()) {
    warn("top_k " + std::to_string(top_k) + " exceeds the " + std::to_string(candidates.size()) +
         " candidate pairs; returning all");
  } else {
    candidates.resize(top_k);
  }
  for (const auto& p : candidates)
    if (result.captions.at(p.target) == result.captions.at(p.distractor)) ++result.identical_captions;
  result.pairs = std::move(candidates);
  return result;
}

}  // namespace esd
