// esd: command-line front end for training, decoding, pairing and experiments.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "esd/config.hpp"
#include "esd/decode.hpp"
#include "esd/error.hpp"
#include "esd/external_lm.hpp"
#include "esd/harness.hpp"
#include "esd/metrics.hpp"
#include "esd/ngram_lm.hpp"
#include "esd/pairing.hpp"
#include "esd/synth.hpp"

namespace {

using namespace esd;

struct ModelOptions {
  std::string model;
  std::string vocab;
  std::string external;
  std::string connect;

  void add_to(CLI::App* app) {
    app->add_option("--model", model, "n-gram model file written by `esd train`");
    app->add_option("--vocab", vocab, "vocabulary file (default: <model>.vocab)");
    app->add_option("--external", external, "command speaking the line protocol on stdin/stdout");
    app->add_option("--connect", connect, "host:port of a protocol server");
  }

  std::shared_ptr<const Vocabulary> load_vocab() const {
    std::string path = vocab;
    if (path.empty()) {
      if (model.empty()) throw Error("--vocab is required without --model");
      path = model + ".vocab";
    }
    return std::make_shared<const Vocabulary>(Vocabulary::load(path));
  }

  std::unique_ptr<ConditionalLM> open() const {
    const int sources = !model.empty() + !external.empty() + !connect.empty();
    if (sources != 1) throw Error("give exactly one of --model, --external, --connect");
    auto v = load_vocab();
    if (!model.empty()) return std::make_unique<NGramLM>(NGramLM::load(model, v));
    if (!external.empty()) return std::make_unique<ExternalLM>(v, std::make_unique<ProcessChannel>(external));
    const auto colon = connect.rfind(':');
    if (colon == std::string::npos) throw Error("--connect expects host:port");
    const auto port = std::stoul(connect.substr(colon + 1));
    if (port == 0 || port > 65535) throw Error("bad port");
    return std::make_unique<ExternalLM>(
        v, std::make_unique<TcpChannel>(connect.substr(0, colon), static_cast<std::uint16_t>(port)));
  }
};

struct DecodeOptions {
  std::size_t beam = 10;
  std::size_t max_len = 20;
  std::size_t nbest = 1;
  bool length_normalize = false;
  bool openmp = false;

  void add_to(CLI::App* app) {
    app->add_option("--beam", beam, "beam width")->check(CLI::PositiveNumber);
    app->add_option("--max-len", max_len, "maximum words")->check(CLI::PositiveNumber);
    app->add_option("--nbest", nbest, "hypotheses to print")->check(CLI::PositiveNumber);
    app->add_flag("--length-normalize", length_normalize, "rank by score / (words + 1)");
    app->add_flag("--openmp", openmp, "parallel candidate expansion");
  }

  DecodeParams params(double lambda) const {
    DecodeParams p;
    p.lambda = lambda;
    p.beam_width = beam;
    p.max_len = max_len;
    p.length_normalize = length_normalize;
    p.kernel = openmp ? Kernel::openmp : Kernel::serial;
    return p;
  }
};

void print_hypotheses(const DecodeResult& r, const Vocabulary& vocab, std::size_t nbest) {
  for (std::size_t i = 0; i < std::min(nbest, r.hypotheses.size()); ++i) {
    const auto& h = r.hypotheses[i];
    if (nbest == 1) {
      std::cout << vocab.decode(h.tokens) << '\n';
    } else {
      std::printf("%.6f\t%.6f\t%.6f\t%s\n", h.es_score, h.emitter_lp, h.suppressor_lp, vocab.decode(h.tokens).c_str());
    }
  }
}

struct ExperimentOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "TOML-style experiment file");
    app->add_option("--set", overrides, "override, e.g. run.seed=7")->take_all();
    app->add_option("--out", out, "output directory (overrides output.dir)");
  }

  ExperimentConfig resolve() const {
    ConfigDoc doc = config.empty() ? ConfigDoc{} : ConfigDoc::load(config);
    for (const auto& o : overrides) doc.apply_override(o);
    if (!out.empty()) doc.set("output.dir", ConfigValue{ConfigValue::Scalar(out)});
    return ExperimentConfig::from_doc(doc);
  }
};

void emit(const SweepReport& report, const ExperimentConfig& cfg) {
  write_report_bundle(report, cfg, cfg.out_dir);
  write_report_csv(report, std::cout);
}

std::vector<std::string> read_ids(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ids.push_back(line);
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emitter-suppressor decoding toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic attribute world");
  std::size_t s_contexts = 4, s_shared = 2, s_distinct = 2, s_captions = 60, s_refs = 5;
  std::uint64_t s_seed = 1;
  double s_shared_p = 0.9, s_distinct_p = 0.5, s_noise = 0.1;
  std::string s_out = "world";
  synth->add_option("--contexts", s_contexts, "number of contexts (<= 26)");
  synth->add_option("--shared", s_shared, "shared attributes per world");
  synth->add_option("--distinct", s_distinct, "distinctive attributes per context");
  synth->add_option("--captions", s_captions, "captions per context");
  synth->add_option("--refs", s_refs, "references per pair");
  synth->add_option("--seed", s_seed, "seed");
  synth->add_option("--shared-mention", s_shared_p, "mention probability of shared attributes");
  synth->add_option("--distinct-mention", s_distinct_p, "mention probability of distinctive attributes");
  synth->add_option("--noise", s_noise, "feature noise std");
  synth->add_option("--out", s_out, "output directory");

  // train
  auto* train = app.add_subcommand("train", "train an add-alpha n-gram model");
  std::string t_corpus, t_out = "model.bin";
  int t_order = 3;
  double t_alpha = 0.1;
  train->add_option("--corpus", t_corpus, "<context>\\t<caption> file")->required();
  train->add_option("--order", t_order, "n-gram order")->check(CLI::PositiveNumber);
  train->add_option("--alpha", t_alpha, "add-alpha smoothing");
  train->add_option("--out", t_out, "model file; the vocabulary goes to <out>.vocab");

  // generate
  auto* generate = app.add_subcommand("generate", "beam-search a caption for one context");
  ModelOptions g_model;
  DecodeOptions g_decode;
  std::string g_context;
  g_model.add_to(generate);
  g_decode.add_to(generate);
  generate->add_option("--context", g_context, "context key")->required();

  // justify
  auto* justify = app.add_subcommand("justify", "emitter-suppressor decoding for a target/distractor pair");
  ModelOptions j_model;
  DecodeOptions j_decode;
  std::string j_target, j_distractor;
  double j_lambda = 0.5;
  j_model.add_to(justify);
  j_decode.add_to(justify);
  justify->add_option("--target", j_target, "target context")->required();
  justify->add_option("--distractor", j_distractor, "distractor context")->required();
  justify->add_option("--lambda", j_lambda, "weight of the speaker term")->check(CLI::Range(0.0, 1.0));

  // pair
  auto* pair = app.add_subcommand("pair", "build easy (feature) or hard (caption overlap) pairs");
  std::string p_features, p_sources, p_distance = "euclidean";
  bool p_hard = false;
  std::size_t p_top_k = 1000;
  ModelOptions p_model;
  DecodeOptions p_decode;
  pair->add_option("--features", p_features, "feature file (dim=<D> header)")->required();
  pair->add_option("--sources", p_sources, "file with one source id per line (default: all ids)");
  pair->add_option("--distance", p_distance, "euclidean or cosine")->check(CLI::IsMember({"euclidean", "cosine"}));
  pair->add_flag("--hard", p_hard, "re-rank by overlap of generated captions");
  pair->add_option("--top-k", p_top_k, "pairs kept with --hard");
  p_model.add_to(pair);
  p_decode.add_to(pair);

  // sweep / rs-sweep / discrim
  auto* sweep = app.add_subcommand("sweep", "lambda sweep over decoding methods");
  auto* rs_sweep = app.add_subcommand("rs-sweep", "reasoning-speaker sample-budget sweep");
  auto* discrim = app.add_subcommand("discrim", "easy/hard pair discrimination experiment");
  ExperimentOptions e_sweep, e_rs, e_discrim;
  e_sweep.add_to(sweep);
  e_rs.add_to(rs_sweep);
  e_discrim.add_to(discrim);

  // eval
  auto* eval = app.add_subcommand("eval", "recompute CIDEr-D from a JSONL file");
  std::string v_items, v_out;
  eval->add_option("--items", v_items, "JSONL with candidate and references")->required();
  eval->add_option("--out", v_out, "CSV output (default: stdout)");

  // serve
  auto* serve = app.add_subcommand("serve", "answer the external-model protocol");
  std::string sv_model, sv_vocab;
  int sv_port = -1;
  std::size_t sv_sessions = 0;
  serve->add_option("--model", sv_model, "n-gram model file")->required();
  serve->add_option("--vocab", sv_vocab, "vocabulary file (default: <model>.vocab)");
  serve->add_option("--port", sv_port, "TCP port on 127.0.0.1 (default: stdin/stdout)");
  serve->add_option("--sessions", sv_sessions, "stop after this many TCP sessions (0: never)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      GrammarParams grammar;
      grammar.shared_mention = s_shared_p;
      grammar.distinct_mention = s_distinct_p;
      const auto world = gen_world(s_contexts, s_shared, s_distinct, s_seed, grammar);
      const auto corpus = gen_corpus(world, s_captions, derive_seed(s_seed, {2}));
      std::filesystem::create_directories(s_out);
      const std::filesystem::path dir(s_out);
      world.save(dir / "world.json");
      save_corpus(corpus, dir / "corpus.tsv");
      std::ofstream pairs(dir / "pairs.jsonl");
      for (const auto& t : world.keys())
        for (const auto& d : world.keys()) {
          if (t == d) continue;
          const auto refs = gen_justification_refs(world, t, d, s_refs);
          pairs << nlohmann::json{{"target", t.str()}, {"distractor", d.str()}, {"references", refs.references}}.dump()
                << '\n';
        }
      std::vector<std::string> dims = world.shared_inventory;
      dims.insert(dims.end(), world.distinct_inventory.begin(), world.distinct_inventory.end());
      FeatureTable features(dims.size());
      Rng rng(derive_seed(s_seed, {6}));
      for (const auto& c : world.contexts) {
        const auto attrs = c.ordered();
        std::vector<double> v;
        for (const auto& dim : dims)
          v.push_back((std::find(attrs.begin(), attrs.end(), dim) != attrs.end() ? 1.0 : 0.0) +
                      s_noise * standard_normal(rng));
        features.add(c.key.str(), std::move(v));
      }
      std::ofstream feat(dir / "features.tsv");
      features.write(feat);
      std::cout << "wrote " << (dir / "world.json").string() << ", corpus.tsv, pairs.jsonl, features.tsv\n";
    } else if (*train) {
      const auto loaded = load_corpus(t_corpus);
      const auto lm = train_ngram(loaded.corpus, t_order, t_alpha);
      lm.save(t_out);
      loaded.vocab->save(t_out + ".vocab");
      std::cout << "trained order-" << t_order << " model on " << loaded.corpus.size() << " records, "
                << loaded.corpus.contexts().size() << " contexts, vocabulary hash " << format_hash(loaded.vocab->hash())
                << '\n';
    } else if (*generate) {
      const auto lm = g_model.open();
      const auto r = beam_search(*lm, ContextKey(g_context), g_decode.params(1.0));
      print_hypotheses(r, lm->vocab(), g_decode.nbest);
    } else if (*justify) {
      const auto lm = j_model.open();
      const auto r =
          es_beam_search(*lm, ContextKey(j_target), *lm, ContextKey(j_distractor), j_decode.params(j_lambda));
      print_hypotheses(r, lm->vocab(), j_decode.nbest);
    } else if (*pair) {
      const auto features = FeatureTable::load(p_features);
      std::vector<std::string> sources;
      if (p_sources.empty()) {
        for (const auto& [id, _] : features.rows()) sources.push_back(id);
      } else {
        sources = read_ids(p_sources);
      }
      const auto distance = p_distance == "cosine" ? Distance::cosine : Distance::euclidean;
      std::vector<ConfusionPair> pairs;
      if (p_hard) {
        const auto lm = p_model.open();
        const auto params = p_decode.params(1.0);
        const auto hp = hard_pairs(
            [&](const std::string& id) { return beam_search(*lm, ContextKey(id), params).best().tokens; }, features,
            sources, p_top_k, distance);
        std::cerr << hp.identical_captions << " of " << hp.pairs.size() << " pairs have identical captions\n";
        pairs = hp.pairs;
      } else {
        pairs = easy_pairs(features, sources, distance, Kernel::openmp);
      }
      std::cout << "target,distractor,similarity,kind\n";
      for (const auto& p : pairs)
        std::printf("%s,%s,%.6f,%s\n", p.target.c_str(), p.distractor.c_str(), p.similarity,
                    p.kind == PairKind::easy ? "easy" : "hard");
    } else if (*sweep) {
      const auto cfg = e_sweep.resolve();
      emit(run_sweep(cfg), cfg);
    } else if (*rs_sweep) {
      const auto cfg = e_rs.resolve();
      emit(run_rs_samplesweep(cfg), cfg);
    } else if (*discrim) {
      const auto cfg = e_discrim.resolve();
      emit(run_discrim_captioning(cfg), cfg);
    } else if (*eval) {
      std::ifstream in(v_items);
      if (!in) throw Error("cannot open " + v_items);
      const auto rows = evaluate_jsonl(in);
      if (v_out.empty()) {
        write_eval_csv(rows, std::cout);
      } else {
        std::ofstream out(v_out);
        write_eval_csv(rows, out);
      }
    } else if (*serve) {
      auto vocab = std::make_shared<const Vocabulary>(Vocabulary::load(sv_vocab.empty() ? sv_model + ".vocab" : sv_vocab));
      const auto lm = NGramLM::load(sv_model, vocab);
      if (sv_port < 0) {
        ModelServer server(lm);
        StreamChannel channel(std::cin, std::cout);
        server.serve(channel);
      } else {
        serve_tcp(lm, static_cast<std::uint16_t>(sv_port), sv_sessions, [](std::uint16_t port) {
          std::cout << "listening on 127.0.0.1:" << port << std::endl;
        });
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "esd: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
