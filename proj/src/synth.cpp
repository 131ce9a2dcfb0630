#include "esd/synth.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "esd/error.hpp"

namespace esd {
namespace {

using json = nlohmann::json;

constexpr std::array<const char*, 16> kSharedPool = {
    "small", "brown", "pointed", "short", "round", "grey", "long", "white",
    "dark",  "plain", "tiny",    "large", "slim",  "black", "pale", "curved",
};

constexpr std::array<const char*, 64> kDistinctPool = {
    "crimson", "azure",   "golden",  "striped", "spotted", "crested", "hooked",  "webbed",
    "banded",  "speckled", "scarlet", "olive",   "violet",  "amber",   "ivory",   "copper",
    "silver",  "teal",    "maroon",  "ochre",   "rusty",   "mottled", "barred",  "tufted",
    "forked",  "fanned",  "ringed",  "masked",  "hooded",  "capped",  "streaked", "glossy",
    "fluffy",  "shaggy",  "bristly", "plumed",  "lobed",   "notched", "scaly",   "downy",
    "cobalt",  "saffron", "jade",    "indigo",  "lilac",   "coral",   "beige",   "tawny",
    "sooty",   "flecked", "dappled", "zoned",   "bibbed",  "collared", "wattled", "horned",
    "ruffed",  "spurred", "lanky",   "stout",   "glowing", "frosted", "sandy",   "mossy",
};

void append_words(std::vector<std::string>& out, const std::string& phrase) {
  for (auto& w : tokenize(phrase)) out.push_back(std::move(w));
}

std::string join(const std::vector<std::string>& words, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

std::string phrase(const std::string& opener, const std::vector<std::string>& attrs, const std::string& conjunction) {
  return opener + " " + join(attrs, " " + conjunction + " ");
}

}  // namespace

void GrammarParams::validate() const {
  if (!(shared_mention >= 0.0 && shared_mention <= 1.0) || !(distinct_mention >= 0.0 && distinct_mention <= 1.0))
    throw Error("mention probabilities must lie in [0, 1]");
  if (max_mentions != 0 && max_mentions < min_mentions) throw Error("max_mentions is below min_mentions");
  if (openers.empty()) throw Error("grammar needs at least one opener");
  for (const auto& o : openers)
    if (tokenize(o).empty()) throw Error("empty opener");
  if (tokenize(conjunction).size() != 1) throw Error("conjunction must be a single word");
}

std::vector<std::string> ContextAttributes::ordered() const {
  std::vector<std::string> out = distinct;
  out.insert(out.end(), shared.begin(), shared.end());
  return out;
}

const ContextAttributes& AttributeWorld::context(const ContextKey& key) const {
  for (const auto& c : contexts)
    if (c.key == key) return c;
  throw UnknownContextError(key.str());
}

std::vector<ContextKey> AttributeWorld::keys() const {
  std::vector<ContextKey> out;
  for (const auto& c : contexts) out.push_back(c.key);
  return out;
}

std::vector<std::string> AttributeWorld::distinctive(const ContextKey& target, const ContextKey& distractor) const {
  const auto& t = context(target);
  const auto& d = context(distractor);
  const auto other = d.ordered();
  std::vector<std::string> out;
  for (const auto& a : t.ordered())
    if (std::find(other.begin(), other.end(), a) == other.end()) out.push_back(a);
  return out;
}

std::vector<std::string> AttributeWorld::lexicon() const {
  std::vector<std::string> words;
  for (const auto& o : grammar.openers) append_words(words, o);
  append_words(words, grammar.conjunction);
  for (const auto& c : contexts) {
    for (const auto& a : c.shared) append_words(words, a);
    for (const auto& a : c.distinct) append_words(words, a);
  }
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  return words;
}

std::string AttributeWorld::to_json() const {
  json j;
  j["seed"] = seed;
  j["grammar"] = {{"shared_mention", grammar.shared_mention},
                  {"distinct_mention", grammar.distinct_mention},
                  {"min_mentions", grammar.min_mentions},
                  {"max_mentions", grammar.max_mentions},
                  {"openers", grammar.openers},
                  {"conjunction", grammar.conjunction}};
  j["shared_inventory"] = shared_inventory;
  j["distinct_inventory"] = distinct_inventory;
  j["contexts"] = json::array();
  for (const auto& c : contexts)
    j["contexts"].push_back({{"key", c.key.str()}, {"shared", c.shared}, {"distinct", c.distinct}});
  return j.dump(2);
}

AttributeWorld AttributeWorld::from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    AttributeWorld w;
    w.seed = j.at("seed").get<std::uint64_t>();
    const auto& g = j.at("grammar");
    w.grammar.shared_mention = g.at("shared_mention").get<double>();
    w.grammar.distinct_mention = g.at("distinct_mention").get<double>();
    w.grammar.min_mentions = g.at("min_mentions").get<std::size_t>();
    w.grammar.max_mentions = g.at("max_mentions").get<std::size_t>();
    w.grammar.openers = g.at("openers").get<std::vector<std::string>>();
    w.grammar.conjunction = g.at("conjunction").get<std::string>();
    w.grammar.validate();
    w.shared_inventory = j.at("shared_inventory").get<std::vector<std::string>>();
    w.distinct_inventory = j.at("distinct_inventory").get<std::vector<std::string>>();
    for (const auto& c : j.at("contexts"))
      w.contexts.push_back({ContextKey(c.at("key").get<std::string>()), c.at("shared").get<std::vector<std::string>>(),
                            c.at("distinct").get<std::vector<std::string>>()});
    if (w.contexts.empty()) throw Error("world has no contexts");
    return w;
  } catch (const json::exception& e) {
    throw Error(std::string("bad world file: ") + e.what());
  }
}

void AttributeWorld::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json() << '\n';
}

AttributeWorld AttributeWorld::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open world file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::size_t shared_pool_size() { return kSharedPool.size(); }
std::size_t distinct_pool_size() { return kDistinctPool.size(); }

AttributeWorld gen_world(std::size_t n_contexts, std::size_t n_shared, std::size_t n_distinct, std::uint64_t seed,
                         const GrammarParams& grammar) {
  grammar.validate();
  if (n_distinct < 1) throw Error("every context needs at least one distinctive attribute");
  if (n_contexts < 1 || n_contexts > 26) throw Error("context count must be 1..26");
  if (n_shared > kSharedPool.size()) throw Error("shared attribute inventory exhausted");
  if (n_contexts * n_distinct > kDistinctPool.size()) throw Error("distinctive attribute inventory exhausted");

  Rng rng(derive_seed(seed, {0x776f726cULL}));
  std::vector<std::string> shared(kSharedPool.begin(), kSharedPool.end());
  std::vector<std::string> distinct(kDistinctPool.begin(), kDistinctPool.end());
  portable_shuffle(shared, rng);
  portable_shuffle(distinct, rng);
  shared.resize(n_shared);
  distinct.resize(n_contexts * n_distinct);

  AttributeWorld w;
  w.seed = seed;
  w.grammar = grammar;
  w.shared_inventory = shared;
  w.distinct_inventory = distinct;
  for (std::size_t c = 0; c < n_contexts; ++c) {
    ContextAttributes ctx{ContextKey(std::string(1, static_cast<char>('A' + c))), shared, {}};
    ctx.distinct.assign(distinct.begin() + static_cast<std::ptrdiff_t>(c * n_distinct),
                        distinct.begin() + static_cast<std::ptrdiff_t>((c + 1) * n_distinct));
    w.contexts.push_back(std::move(ctx));
  }
  return w;
}

std::string gen_caption(const AttributeWorld& world, const ContextAttributes& context, Rng& rng) {
  const auto& g = world.grammar;
  const std::size_t total = context.shared.size() + context.distinct.size();
  const std::size_t lo = g.min_mentions;
  const std::size_t hi = g.max_mentions == 0 ? total : std::min(g.max_mentions, total);
  if (lo > hi) throw Error("grammar bounds cannot be met by context " + context.key.str());
  const auto order = context.ordered();
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const auto& opener = g.openers[uniform_index(rng, g.openers.size())];
    std::vector<std::string> mentioned;
    for (const auto& a : order) {
      const bool is_shared = std::find(context.shared.begin(), context.shared.end(), a) != context.shared.end();
      if (uniform01(rng) < (is_shared ? g.shared_mention : g.distinct_mention)) mentioned.push_back(a);
    }
    if (mentioned.size() < lo || mentioned.size() > hi) continue;
    return phrase(opener, mentioned, g.conjunction);
  }
  throw Error("mention bounds are practically unreachable with these probabilities");
}

Corpus gen_corpus(const AttributeWorld& world, std::size_t captions_per_context, std::uint64_t seed) {
  if (captions_per_context < 1) throw Error("captions_per_context must be >= 1");
  auto vocab = std::make_shared<const Vocabulary>(Vocabulary::from_words(world.lexicon()));
  std::vector<const ContextAttributes*> ordered;
  for (const auto& c : world.contexts) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->key < b->key; });
  std::vector<Record> records;
  for (std::size_t ci = 0; ci < ordered.size(); ++ci) {
    Rng rng(derive_seed(seed, {0x636f7270ULL, ci}));
    for (std::size_t i = 0; i < captions_per_context; ++i)
      records.push_back({ordered[ci]->key, vocab->encode(tokenize(gen_caption(world, *ordered[ci], rng)))});
  }
  return Corpus(vocab, std::move(records));
}

GroundTruthJustification gen_justification_refs(const AttributeWorld& world, const ContextKey& target,
                                                const ContextKey& distractor, std::size_t n_refs) {
  if (n_refs < 1) throw Error("need at least one reference");
  const auto attrs = world.distinctive(target, distractor);
  if (attrs.empty()) throw Error("'" + target.str() + "' has no attribute distinguishing it from '" +
                                 distractor.str() + "'");
  GroundTruthJustification out{target, distractor, {}};
  for (std::size_t i = 0; i < n_refs; ++i)
    out.references.push_back(phrase(world.grammar.openers[i % world.grammar.openers.size()], attrs,
                                    world.grammar.conjunction));
  return out;
}

}  // namespace esd
