#include "esd/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>

#include <omp.h>

#include <json.hpp>

#include "esd/decode.hpp"
#include "esd/error.hpp"
#include "esd/listener.hpp"
#include "esd/metrics.hpp"
#include "esd/ngram_lm.hpp"
#include "esd/pairing.hpp"

namespace esd {
namespace {

using json = nlohmann::json;

// Stream tags for derive_seed.
constexpr std::uint64_t kTagWorld = 1;
constexpr std::uint64_t kTagCorpus = 2;
constexpr std::uint64_t kTagSplit = 3;
constexpr std::uint64_t kTagSample = 4;
constexpr std::uint64_t kTagChance = 5;
constexpr std::uint64_t kTagFeatures = 6;
constexpr std::uint64_t kTagImageWorld = 7;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t tokens_hash(std::span<const TokenId> tokens) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto t : tokens) {
    h ^= t;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string pair_key(const std::string& t, const std::string& d) { return t + "|" + d; }

struct Item {
  ContextKey target;
  ContextKey distractor;
  std::vector<Words> references;
  std::string split = "all";
};

// Models and items for one world (or the single file-backed corpus).
struct Group {
  std::size_t index = 0;
  std::shared_ptr<const Vocabulary> vocab;
  std::unique_ptr<NGramLM> speaker;
  std::unique_ptr<NGramLM> evaluator;
  std::unique_ptr<NaiveBayesListener> listener;
  std::vector<Item> items;
  IdfStats idf;
  std::optional<AttributeWorld> world;
  std::map<std::string, TokenSeq> speaker_captions;  // discrim: S caption per context
};

struct Cell {
  std::string method;
  double lambda = 1.0;
  std::size_t beam = 0;
  std::size_t samples = 0;
};

bool is_rs(const std::string& m) { return m == "RS" || m == "RS-TL" || m == "RS-R"; }

std::string method_note(const std::string& m) {
  if (m == "S") return "lambda unused";
  if (m == "blind-IS") return "same decoder as IS: contexts are text-only keys";
  if (m == "RS") return "introspector listener";
  if (m == "RS-TL") return "naive-Bayes listener (analog of a trained listener)";
  if (m == "RS-R") return "chance listener";
  return "";
}

void fit_models(Group& g, const Corpus& corpus, const ExperimentConfig& cfg, std::uint64_t split_seed) {
  auto split = split_corpus(corpus, cfg.split, split_seed);
  const Corpus* held_parts[] = {&split.val, &split.test};
  auto held = merge_corpora(held_parts);
  g.vocab = corpus.vocab_ptr();
  g.speaker = std::make_unique<NGramLM>(train_ngram(split.train, static_cast<int>(cfg.order), cfg.alpha));
  g.evaluator = std::make_unique<NGramLM>(train_ngram(held, static_cast<int>(cfg.order), cfg.alpha));
  g.listener = std::make_unique<NaiveBayesListener>(train_nb_listener(split.train, cfg.listener_alpha));
}

void finish_idf(Group& g) {
  std::vector<std::vector<Words>> docs;
  std::set<std::string> seen;
  for (const auto& it : g.items)
    if (seen.insert(pair_key(it.target.str(), it.distractor.str())).second) docs.push_back(it.references);
  g.idf = compute_idf(docs);
}

std::vector<Words> tokenize_refs(const std::vector<std::string>& refs) {
  std::vector<Words> out;
  for (const auto& r : refs) out.push_back(tokenize(r));
  return out;
}

std::vector<Group> synth_groups(const ExperimentConfig& cfg) {
  GrammarParams grammar;
  grammar.shared_mention = cfg.shared_mention;
  grammar.distinct_mention = cfg.distinct_mention;
  std::vector<Group> groups(cfg.worlds);
  for (std::size_t gi = 0; gi < cfg.worlds; ++gi) {
    auto& g = groups[gi];
    g.index = gi;
    g.world = gen_world(cfg.contexts, cfg.shared, cfg.distinct, derive_seed(cfg.seed, {kTagWorld, gi}), grammar);
    const auto corpus = gen_corpus(*g.world, cfg.captions, derive_seed(cfg.seed, {kTagCorpus, gi}));
    fit_models(g, corpus, cfg, derive_seed(cfg.seed, {kTagSplit, gi}));
    const auto keys = corpus.contexts();
    for (const auto& t : keys)
      for (const auto& d : keys) {
        if (t == d) continue;
        g.items.push_back({t, d, tokenize_refs(gen_justification_refs(*g.world, t, d, cfg.refs).references)});
      }
    finish_idf(g);
  }
  return groups;
}

std::vector<Group> file_groups(const ExperimentConfig& cfg) {
  std::vector<Group> groups(1);
  auto& g = groups[0];
  const auto loaded = load_corpus(cfg.corpus);
  fit_models(g, loaded.corpus, cfg, derive_seed(cfg.seed, {kTagSplit, 0}));
  std::ifstream in(cfg.pairs);
  if (!in) throw Error("cannot open pairs file " + cfg.pairs.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      Item it{ContextKey(j.at("target").get<std::string>()), ContextKey(j.at("distractor").get<std::string>()), {}};
      for (const auto& r : j.at("references")) {
        if (r.is_string()) {
          it.references.push_back(tokenize(r.get<std::string>()));
        } else {
          it.references.push_back(r.get<Words>());
        }
      }
      if (it.references.empty()) throw Error("item has no references");
      require_context(*g.speaker, it.target);
      require_context(*g.speaker, it.distractor);
      g.items.push_back(std::move(it));
    } catch (const json::exception& e) {
      throw ParseError(lineno, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(lineno, e.what());
    }
  }
  if (g.items.empty()) throw Error("pairs file has no items");
  finish_idf(g);
  return groups;
}

std::vector<Group> build_groups(const ExperimentConfig& cfg) {
  return cfg.source == "files" ? file_groups(cfg) : synth_groups(cfg);
}

TokenSeq decode_pair(const Group& g, const Cell& cell, const ContextKey& t, const ContextKey& d,
                     const ExperimentConfig& cfg) {
  DecodeParams p;
  p.beam_width = cell.beam;
  p.max_len = cfg.max_len;
  p.kernel = Kernel::serial;
  if (cell.method == "S") return beam_search(*g.speaker, t, p).best().tokens;
  if (cell.method == "IS" || cell.method == "blind-IS") {
    p.lambda = cell.lambda;
    return es_beam_search(*g.speaker, t, *g.speaker, d, p).best().tokens;
  }
  // Common random numbers: every RS variant and lambda sees the same draws.
  const std::uint64_t stream = derive_seed(cfg.seed, {kTagSample, g.index, fnv1a(pair_key(t.str(), d.str())), cell.samples});
  Rng rng(stream);
  ListenerFn listener;
  if (cell.method == "RS") {
    listener = [&](std::span<const TokenId> s) { return introspector_score(*g.speaker, s, t, d); };
  } else if (cell.method == "RS-TL") {
    listener = [&](std::span<const TokenId> s) { return nb_score(*g.listener, s, t, d); };
  } else if (cell.method == "RS-R") {
    listener = [&](std::span<const TokenId> s) {
      Rng r(derive_seed(stream, {kTagChance, tokens_hash(s)}));
      return uniform01(r);
    };
  } else {
    throw Error("unknown method '" + cell.method + "'");
  }
  const auto ranked = rs_rerank(*g.speaker, t, listener, cell.samples, cell.lambda, cfg.max_len, rng);
  return ranked.empty() ? TokenSeq{} : ranked.front().tokens;
}

struct Task {
  const Group* group;
  ContextKey target;
  ContextKey distractor;
};

// Runs `fn(i)` for i in [0, n), in parallel when asked; the first failure is
// rethrown after the loop.
void parallel_for(std::size_t n, Kernel kernel, const std::function<void(std::size_t)>& fn) {
  if (kernel == Kernel::serial) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex mu;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(mu);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::string describe(const Task& t, const Cell& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", c.lambda);
  return "group " + std::to_string(t.group->index) + " item " + pair_key(t.target.str(), t.distractor.str()) +
         " method " + c.method + " lambda " + buf;
}

// Captions for every task plus, when missing, the swapped pairs the tie rule needs.
std::map<std::pair<std::size_t, std::string>, TokenSeq> decode_tasks(const std::vector<Task>& tasks, const Cell& cell,
                                                                     const ExperimentConfig& cfg) {
  std::vector<Task> all = tasks;
  std::set<std::pair<std::size_t, std::string>> have;
  for (const auto& t : tasks) have.emplace(t.group->index, pair_key(t.target.str(), t.distractor.str()));
  for (const auto& t : tasks)
    if (have.emplace(t.group->index, pair_key(t.distractor.str(), t.target.str())).second)
      all.push_back({t.group, t.distractor, t.target});
  std::vector<TokenSeq> out(all.size());
  parallel_for(all.size(), cfg.kernel, [&](std::size_t i) {
    try {
      out[i] = decode_pair(*all[i].group, cell, all[i].target, all[i].distractor, cfg);
    } catch (const std::exception& e) {
      throw Error(describe(all[i], cell) + ": " + e.what());
    }
  });
  std::map<std::pair<std::size_t, std::string>, TokenSeq> captions;
  for (std::size_t i = 0; i < all.size(); ++i)
    captions.emplace(std::make_pair(all[i].group->index, pair_key(all[i].target.str(), all[i].distractor.str())),
                     std::move(out[i]));
  return captions;
}

std::string experiment_id(const std::string& experiment, std::size_t group) {
  return experiment + "/" + std::to_string(group);
}

// Decodes and scores one cell over `items` (group, item index) and appends
// the row and per-item records.
void run_cell(const std::string& experiment, const Cell& cell, const std::string& split,
              const std::vector<std::pair<const Group*, const Item*>>& items, const ExperimentConfig& cfg,
              SweepReport& report) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<Task> tasks;
  for (const auto& [g, it] : items) tasks.push_back({g, it->target, it->distractor});
  const auto captions = decode_tasks(tasks, cell, cfg);

  std::vector<ItemRecord> records(items.size());
  parallel_for(items.size(), cfg.kernel, [&](std::size_t i) {
    const auto& [g, it] = items[i];
    const auto& t = it->target;
    const auto& d = it->distractor;
    const auto& caption = captions.at({g->index, pair_key(t.str(), d.str())});
    const auto& swapped = captions.at({g->index, pair_key(d.str(), t.str())});
    auto& r = records[i];
    r.experiment = experiment;
    r.method = cell.method;
    r.lambda = cell.lambda;
    r.beam = cell.beam;
    r.samples = cell.samples;
    r.split = split;
    r.group = g->index;
    r.item = pair_key(t.str(), d.str());
    r.target = t.str();
    r.distractor = d.str();
    r.candidate = g->vocab->words(caption);
    r.references = it->references;
    r.cider = r.candidate.empty() ? 0.0 : cider_d(r.candidate, it->references, g->idf).total;
    r.tie_rule = caption == swapped;
    r.afc = r.tie_rule ? 0.5 : two_afc(*g->evaluator, caption, t, d).credit_for_a();
    if (!g->speaker_captions.empty())
      r.speaker_identical = g->speaker_captions.at(t.str()) == g->speaker_captions.at(d.str());
  });

  std::vector<double> cider, afc;
  for (const auto& r : records) {
    cider.push_back(r.cider);
    afc.push_back(r.afc);
  }
  ReportRow row;
  row.experiment = experiment;
  row.method = cell.method;
  row.lambda = cell.lambda;
  row.beam = cell.beam;
  row.samples = cell.samples;
  row.split = split;
  row.items = records.size();
  std::tie(row.cider_mean, row.cider_sem) = mean_sem(cider);
  std::tie(row.afc_mean, row.afc_sem) = mean_sem(afc);
  row.note = method_note(cell.method);
  row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.rows.push_back(std::move(row));
  for (auto& r : records) report.items.push_back(std::move(r));
}

std::vector<std::pair<const Group*, const Item*>> all_items(const std::vector<Group>& groups) {
  std::vector<std::pair<const Group*, const Item*>> out;
  for (const auto& g : groups)
    for (const auto& it : g.items) out.emplace_back(&g, &it);
  return out;
}

void set_threads(const ExperimentConfig& cfg) {
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
}

std::string fmt(double v, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

std::size_t to_size(const ConfigValue& v, const std::string& key) {
  const auto i = v.as_int();
  if (i < 0) throw Error(key + " must be non-negative");
  return static_cast<std::size_t>(i);
}

ConfigValue size_value(std::size_t v) { return {ConfigValue::Scalar(static_cast<std::int64_t>(v))}; }
ConfigValue double_value(double v) { return {ConfigValue::Scalar(v)}; }
ConfigValue string_value(std::string v) { return {ConfigValue::Scalar(std::move(v))}; }

template <typename T, typename F>
ConfigValue list_value(const std::vector<T>& v, F convert) {
  std::vector<ConfigValue::Scalar> out;
  for (const auto& x : v) out.push_back(convert(x));
  return {out};
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const ConfigValue&)> set;
  std::function<ConfigValue(const ExperimentConfig&)> get;
};

#define ESD_SIZE_FIELD(name, member)                                                                      \
  Field {                                                                                                 \
    name, [](ExperimentConfig& c, const ConfigValue& v) { c.member = to_size(v, name); },                 \
        [](const ExperimentConfig& c) { return size_value(c.member); }                                    \
  }
#define ESD_DOUBLE_FIELD(name, member)                                                                    \
  Field {                                                                                                 \
    name, [](ExperimentConfig& c, const ConfigValue& v) { c.member = v.as_double(); },                    \
        [](const ExperimentConfig& c) { return double_value(c.member); }                                  \
  }
#define ESD_PATH_FIELD(name, member)                                                                      \
  Field {                                                                                                 \
    name, [](ExperimentConfig& c, const ConfigValue& v) { c.member = v.as_string(); },                    \
        [](const ExperimentConfig& c) { return string_value(c.member.string()); }                         \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"data.source", [](ExperimentConfig& c, const ConfigValue& v) { c.source = v.as_string(); },
            [](const ExperimentConfig& c) { return string_value(c.source); }},
      ESD_PATH_FIELD("data.corpus", corpus),
      ESD_PATH_FIELD("data.pairs", pairs),
      ESD_SIZE_FIELD("synth.worlds", worlds),
      ESD_SIZE_FIELD("synth.contexts", contexts),
      ESD_SIZE_FIELD("synth.shared", shared),
      ESD_SIZE_FIELD("synth.distinct", distinct),
      ESD_SIZE_FIELD("synth.captions", captions),
      ESD_SIZE_FIELD("synth.refs", refs),
      ESD_DOUBLE_FIELD("synth.shared_mention", shared_mention),
      ESD_DOUBLE_FIELD("synth.distinct_mention", distinct_mention),
      ESD_SIZE_FIELD("lm.order", order),
      ESD_DOUBLE_FIELD("lm.alpha", alpha),
      ESD_DOUBLE_FIELD("listener.alpha", listener_alpha),
      Field{"run.methods", [](ExperimentConfig& c, const ConfigValue& v) { c.methods = v.as_string_list(); },
            [](const ExperimentConfig& c) {
              return list_value(c.methods, [](const std::string& s) { return ConfigValue::Scalar(s); });
            }},
      Field{"run.lambdas", [](ExperimentConfig& c, const ConfigValue& v) { c.lambdas = v.as_double_list(); },
            [](const ExperimentConfig& c) {
              return list_value(c.lambdas, [](double d) { return ConfigValue::Scalar(d); });
            }},
      ESD_SIZE_FIELD("run.beam_width", beam_width),
      ESD_SIZE_FIELD("run.max_len", max_len),
      ESD_SIZE_FIELD("run.rs_samples", rs_samples),
      Field{"run.rs_budgets",
            [](ExperimentConfig& c, const ConfigValue& v) {
              c.rs_budgets.clear();
              for (auto i : v.as_int_list()) {
                if (i < 1) throw Error("run.rs_budgets entries must be >= 1");
                c.rs_budgets.push_back(static_cast<std::size_t>(i));
              }
            },
            [](const ExperimentConfig& c) {
              return list_value(c.rs_budgets,
                                [](std::size_t s) { return ConfigValue::Scalar(static_cast<std::int64_t>(s)); });
            }},
      ESD_DOUBLE_FIELD("run.rs_lambda", rs_lambda),
      ESD_DOUBLE_FIELD("run.rs_is_lambda", rs_is_lambda),
      Field{"run.seed",
            [](ExperimentConfig& c, const ConfigValue& v) { c.seed = static_cast<std::uint64_t>(to_size(v, "run.seed")); },
            [](const ExperimentConfig& c) { return size_value(static_cast<std::size_t>(c.seed)); }},
      Field{"run.split",
            [](ExperimentConfig& c, const ConfigValue& v) {
              const auto f = v.as_double_list();
              if (f.size() != 3) throw Error("run.split needs [train, val, test]");
              c.split = {f[0], f[1], f[2]};
            },
            [](const ExperimentConfig& c) {
              return list_value(std::vector<double>{c.split.train, c.split.val, c.split.test},
                                [](double d) { return ConfigValue::Scalar(d); });
            }},
      Field{"run.kernel",
            [](ExperimentConfig& c, const ConfigValue& v) {
              const auto& k = v.as_string();
              if (k == "serial") {
                c.kernel = Kernel::serial;
              } else if (k == "openmp") {
                c.kernel = Kernel::openmp;
              } else {
                throw Error("run.kernel must be serial or openmp");
              }
            },
            [](const ExperimentConfig& c) { return string_value(c.kernel == Kernel::serial ? "serial" : "openmp"); }},
      Field{"run.threads",
            [](ExperimentConfig& c, const ConfigValue& v) { c.threads = static_cast<int>(to_size(v, "run.threads")); },
            [](const ExperimentConfig& c) { return size_value(static_cast<std::size_t>(c.threads)); }},
      ESD_SIZE_FIELD("discrim.images", images),
      ESD_SIZE_FIELD("discrim.shared", image_shared),
      ESD_SIZE_FIELD("discrim.distinct", image_distinct),
      ESD_SIZE_FIELD("discrim.captions", image_captions),
      ESD_DOUBLE_FIELD("discrim.lambda", discrim_lambda),
      ESD_SIZE_FIELD("discrim.beam", discrim_beam),
      ESD_DOUBLE_FIELD("discrim.noise", feature_noise),
      ESD_SIZE_FIELD("discrim.top_k", hard_top_k),
      ESD_PATH_FIELD("output.dir", out_dir),
  };
  return table;
}

#undef ESD_SIZE_FIELD
#undef ESD_DOUBLE_FIELD
#undef ESD_PATH_FIELD

}  // namespace

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m = {"S", "IS", "blind-IS", "RS", "RS-TL", "RS-R"};
  return m;
}

void ExperimentConfig::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (source != "synth" && source != "files") throw Error("data.source must be synth or files");
  if (source == "files" && (corpus.empty() || pairs.empty()))
    throw Error("data.source = files needs data.corpus and data.pairs");
  if (methods.empty()) throw Error("run.methods needs at least one method");
  for (const auto& m : methods)
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
      throw Error("unknown method '" + m + "'");
  if (lambdas.empty()) throw Error("run.lambdas needs at least one value");
  for (double l : lambdas)
    if (!in_unit(l)) throw Error("run.lambdas must lie in [0, 1]");
  if (!in_unit(rs_lambda) || !in_unit(rs_is_lambda) || !in_unit(discrim_lambda))
    throw Error("lambda settings must lie in [0, 1]");
  if (beam_width < 1 || discrim_beam < 1) throw Error("beam widths must be >= 1");
  if (max_len < 1) throw Error("run.max_len must be >= 1");
  if (rs_samples < 1 || rs_budgets.empty()) throw Error("RS sample counts must be >= 1");
  if (order < 1) throw Error("lm.order must be >= 1");
  if (!(alpha > 0.0) || !(listener_alpha > 0.0)) throw Error("smoothing alphas must be > 0");
  if (worlds < 1) throw Error("synth.worlds must be >= 1");
  if (contexts < 2 || images < 2) throw Error("experiments need at least two contexts");
  if (captions < 3 || image_captions < 3) throw Error("need at least three captions per context to split");
  if (refs < 1) throw Error("synth.refs must be >= 1");
  if (!in_unit(shared_mention) || !in_unit(distinct_mention)) throw Error("mention probabilities must lie in [0, 1]");
  if (!(feature_noise >= 0.0)) throw Error("discrim.noise must be >= 0");
  if (hard_top_k < 1) throw Error("discrim.top_k must be >= 1");
}

ExperimentConfig ExperimentConfig::from_doc(const ConfigDoc& doc) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : doc.values()) {
    auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return key == f.key; });
    if (it == fields().end()) throw Error("unknown config key '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const Error& e) {
      throw Error(key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ConfigDoc ExperimentConfig::to_doc() const {
  ConfigDoc doc;
  for (const auto& f : fields()) doc.set(f.key, f.get(*this));
  return doc;
}

std::pair<double, double> mean_sem(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  if (values.size() < 2) return {mean, 0.0};
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / (n - 1.0)) / std::sqrt(n)};
}

SweepReport run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  set_threads(cfg);
  const auto groups = build_groups(cfg);
  const auto items = all_items(groups);
  SweepReport report;
  for (const auto& m : cfg.methods)
    for (double l : cfg.lambdas)
      run_cell("sweep", {m, l, is_rs(m) ? 0 : cfg.beam_width, is_rs(m) ? cfg.rs_samples : 0}, "all", items, cfg,
               report);
  return report;
}

SweepReport run_rs_samplesweep(const ExperimentConfig& cfg) {
  cfg.validate();
  if (std::find(cfg.methods.begin(), cfg.methods.end(), "RS") == cfg.methods.end())
    throw Error("rs-sweep needs RS in run.methods");
  set_threads(cfg);
  const auto groups = build_groups(cfg);
  const auto items = all_items(groups);
  SweepReport report;
  for (auto budget : cfg.rs_budgets) run_cell("rs-sweep", {"RS", cfg.rs_lambda, 0, budget}, "all", items, cfg, report);
  run_cell("rs-sweep", {"IS", cfg.rs_is_lambda, 10, 0}, "all", items, cfg, report);
  return report;
}

SweepReport run_discrim_captioning(const ExperimentConfig& cfg) {
  cfg.validate();
  set_threads(cfg);
  GrammarParams grammar;
  grammar.shared_mention = cfg.shared_mention;
  grammar.distinct_mention = cfg.distinct_mention;
  std::vector<Group> groups(cfg.worlds);
  std::vector<std::vector<Item>> easy(cfg.worlds), hard(cfg.worlds);
  for (std::size_t gi = 0; gi < cfg.worlds; ++gi) {
    auto& g = groups[gi];
    g.index = gi;
    g.world = gen_world(cfg.images, cfg.image_shared, cfg.image_distinct, derive_seed(cfg.seed, {kTagImageWorld, gi}),
                        grammar);
    const auto corpus = gen_corpus(*g.world, cfg.image_captions, derive_seed(cfg.seed, {kTagCorpus, gi}));
    fit_models(g, corpus, cfg, derive_seed(cfg.seed, {kTagSplit, gi}));

    // Surrogate image features: attribute indicators plus Gaussian noise.
    std::vector<std::string> dims = g.world->shared_inventory;
    dims.insert(dims.end(), g.world->distinct_inventory.begin(), g.world->distinct_inventory.end());
    FeatureTable features(dims.size());
    Rng rng(derive_seed(cfg.seed, {kTagFeatures, gi}));
    std::vector<std::string> ids;
    for (const auto& c : g.world->contexts) {
      const auto attrs = c.ordered();
      std::vector<double> v(dims.size());
      for (std::size_t k = 0; k < dims.size(); ++k) {
        const bool has = std::find(attrs.begin(), attrs.end(), dims[k]) != attrs.end();
        v[k] = (has ? 1.0 : 0.0) + cfg.feature_noise * standard_normal(rng);
      }
      features.add(c.key.str(), std::move(v));
      ids.push_back(c.key.str());
    }

    DecodeParams sp;
    sp.beam_width = cfg.discrim_beam;
    sp.max_len = cfg.max_len;
    for (const auto& id : ids) g.speaker_captions[id] = beam_search(*g.speaker, ContextKey(id), sp).best().tokens;
    auto make_item = [&](const ConfusionPair& p, const char* split) {
      const ContextKey t(p.target), d(p.distractor);
      return Item{t, d, tokenize_refs(gen_justification_refs(*g.world, t, d, cfg.refs).references), split};
    };
    for (const auto& p : easy_pairs(features, ids, Distance::euclidean, cfg.kernel)) easy[gi].push_back(make_item(p, "easy"));
    const auto hp = hard_pairs([&](const std::string& id) { return g.speaker_captions.at(id); }, features, ids,
                               cfg.hard_top_k);
    for (const auto& p : hp.pairs) hard[gi].push_back(make_item(p, "hard"));
    g.items = easy[gi];
    g.items.insert(g.items.end(), hard[gi].begin(), hard[gi].end());
    finish_idf(g);
  }

  SweepReport report;
  const Cell cells[] = {{"S", 1.0, cfg.discrim_beam, 0}, {"IS", cfg.discrim_lambda, cfg.discrim_beam, 0}};
  for (const auto& cell : cells)
    for (const char* split : {"easy", "hard"}) {
      std::vector<std::pair<const Group*, const Item*>> items;
      for (std::size_t gi = 0; gi < groups.size(); ++gi)
        for (const auto& it : std::string(split) == "easy" ? easy[gi] : hard[gi]) items.emplace_back(&groups[gi], &it);
      run_cell("discrim", cell, split, items, cfg, report);
    }
  return report;
}

std::vector<BestLambda> best_lambdas(const SweepReport& report) {
  std::vector<BestLambda> out;
  for (const auto& row : report.rows) {
    if (row.experiment != "sweep") continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const BestLambda& b) { return b.method == row.method; });
    if (it == out.end()) {
      out.push_back({row.method, row.lambda, row.cider_mean});
    } else if (row.cider_mean > it->cider_mean || (row.cider_mean == it->cider_mean && row.lambda > it->lambda)) {
      it->lambda = row.lambda;
      it->cider_mean = row.cider_mean;
    }
  }
  return out;
}

void write_report_csv(const SweepReport& report, std::ostream& out) {
  out << "experiment,method,lambda,beam,samples,split,items,cider_mean,cider_sem,afc_mean,afc_sem,metric,note\n";
  for (const auto& r : report.rows) {
    out << r.experiment << ',' << r.method << ',' << fmt(r.lambda, "%.4f") << ',' << r.beam << ',' << r.samples << ','
        << r.split << ',' << r.items << ',' << fmt(r.cider_mean, "%.6f") << ',' << fmt(r.cider_sem, "%.6f") << ','
        << fmt(r.afc_mean, "%.6f") << ',' << fmt(r.afc_sem, "%.6f") << ",CIDEr-D (unstemmed)," << csv_field(r.note)
        << '\n';
  }
}

void write_timing_csv(const SweepReport& report, std::ostream& out) {
  out << "experiment,method,lambda,beam,samples,split,runtime_s\n";
  for (const auto& r : report.rows)
    out << r.experiment << ',' << r.method << ',' << fmt(r.lambda, "%.4f") << ',' << r.beam << ',' << r.samples << ','
        << r.split << ',' << fmt(r.runtime_s, "%.4f") << '\n';
}

void write_items_jsonl(const SweepReport& report, std::ostream& out) {
  for (const auto& r : report.items) {
    json j;
    j["id"] = r.experiment + "/" + r.method + "/" + fmt(r.lambda, "%.4f") + "/b" + std::to_string(r.beam) + "/n" +
              std::to_string(r.samples) + "/" + r.split + "/" + std::to_string(r.group) + "/" + r.item;
    j["experiment"] = r.experiment;
    j["method"] = r.method;
    j["lambda"] = r.lambda;
    j["beam"] = r.beam;
    j["samples"] = r.samples;
    j["split"] = r.split;
    j["idf_group"] = experiment_id(r.experiment, r.group);
    j["item"] = r.item;
    j["target"] = r.target;
    j["distractor"] = r.distractor;
    j["candidate"] = r.candidate;
    j["references"] = r.references;
    j["cider"] = r.cider;
    j["afc"] = r.afc;
    j["tie_rule"] = r.tie_rule;
    if (r.experiment == "discrim") j["speaker_identical"] = r.speaker_identical;
    out << j.dump() << '\n';
  }
}

void write_best_lambda_csv(const std::vector<BestLambda>& best, std::ostream& out) {
  out << "method,best_lambda,cider_mean\n";
  for (const auto& b : best) out << b.method << ',' << fmt(b.lambda, "%.4f") << ',' << fmt(b.cider_mean, "%.6f") << '\n';
}

void write_report_bundle(const SweepReport& report, const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw Error("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("report.csv");
    write_report_csv(report, f);
  }
  {
    auto f = open("items.jsonl");
    write_items_jsonl(report, f);
  }
  {
    auto f = open("timing.csv");
    write_timing_csv(report, f);
  }
  {
    auto f = open("config.lock");
    f << config.to_doc().render();
  }
  const auto best = best_lambdas(report);
  if (!best.empty()) {
    auto f = open("best_lambda.csv");
    write_best_lambda_csv(best, f);
  }
}

std::vector<EvalRow> evaluate_jsonl(std::istream& in) {
  struct Line {
    std::string id;
    Words candidate;
    std::vector<Words> references;
    std::string group;
    std::string doc;
    double stored;
  };
  auto as_words = [](const json& v) { return v.is_string() ? tokenize(v.get<std::string>()) : v.get<Words>(); };
  std::vector<Line> lines;
  std::string text;
  std::size_t lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty()) continue;
    try {
      const auto j = json::parse(text);
      Line l;
      l.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                              : std::to_string(lineno);
      l.candidate = as_words(j.at("candidate"));
      for (const auto& r : j.at("references")) l.references.push_back(as_words(r));
      if (l.references.empty()) throw Error("item has no references");
      l.group = j.contains("idf_group")
                                    ? (j["idf_group"].is_string() ? j["idf_group"].get<std::string>() : j["idf_group"].dump())
                                    : "";
      l.doc = j.contains("item") ? "i" + (j["item"].is_string() ? j["item"].get<std::string>() : j["item"].dump())
                                 : "l" + std::to_string(lineno);
      l.stored = j.contains("cider") ? j["cider"].get<double>() : std::numeric_limits<double>::quiet_NaN();
      lines.push_back(std::move(l));
    } catch (const json::exception& e) {
      throw ParseError(lineno, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(lineno, e.what());
    }
  }
  if (lines.empty()) throw Error("evaluation file has no items");
  // One IDF table per idf_group; lines without an item id form their own documents.
  std::map<std::string, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < lines.size(); ++i) by_group[lines[i].group].push_back(i);
  std::vector<EvalRow> rows(lines.size());
  for (const auto& [group, idx] : by_group) {
    std::vector<std::vector<Words>> docs;
    std::set<std::string> seen;
    for (auto i : idx)
      if (seen.insert(lines[i].doc).second) docs.push_back(lines[i].references);
    const auto idf = compute_idf(docs);
    for (auto i : idx) {
      const auto s = lines[i].candidate.empty() ? CiderScore{} : cider_d(lines[i].candidate, lines[i].references, idf);
      rows[i] = {lines[i].id, s.total, lines[i].stored, s.per_n};
    }
  }
  return rows;
}

void write_eval_csv(const std::vector<EvalRow>& rows, std::ostream& out) {
  out << "id,cider,cider_1,cider_2,cider_3,cider_4\n";
  std::vector<double> totals;
  for (const auto& r : rows) {
    out << csv_field(r.id) << ',' << fmt(r.cider, "%.6f");
    for (double v : r.per_n) out << ',' << fmt(v, "%.6f");
    out << '\n';
    totals.push_back(r.cider);
  }
  const auto [mean, sem] = mean_sem(totals);
  out << "mean," << fmt(mean, "%.6f") << ",,,,\n";
  out << "sem," << fmt(sem, "%.6f") << ",,,,\n";
}

}  // namespace esd
