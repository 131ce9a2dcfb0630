#pragma once

// Experiment harness: lambda sweeps over decoding methods, the reasoning
// speaker sample-budget sweep and the easy/hard discrimination experiment.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "esd/config.hpp"
#include "esd/corpus.hpp"
#include "esd/kernel.hpp"
#include "esd/synth.hpp"

namespace esd {

/// Method names accepted in `run.methods`.
///   S         plain beam search (lambda unused)
///   IS        emitter-suppressor beam search
///   blind-IS  IS on the context-key-only speaker; structurally the same as IS here
///   RS        sample + rerank with the introspector as listener
///   RS-TL     sample + rerank with the naive-Bayes trained listener
///   RS-R      sample + rerank with a random (chance) listener
const std::vector<std::string>& known_methods();

struct ExperimentConfig {
  // [data]
  std::string source = "synth";  // "synth" or "files"
  std::filesystem::path corpus;  // files: `<context>\t<caption>` TSV
  std::filesystem::path pairs;   // files: JSONL {"target", "distractor", "references": [...]}

  // [synth]
  std::size_t worlds = 20;
  std::size_t contexts = 4;
  std::size_t shared = 2;
  std::size_t distinct = 2;
  std::size_t captions = 60;
  std::size_t refs = 5;
  double shared_mention = 0.9;
  double distinct_mention = 0.5;

  // [lm]
  std::size_t order = 3;
  double alpha = 0.1;

  // [listener]
  double listener_alpha = 1.0;

  // [run]
  std::vector<std::string> methods = {"S", "IS", "blind-IS", "RS", "RS-TL", "RS-R"};
  std::vector<double> lambdas = {0.0, 0.3, 0.5, 0.7, 1.0};
  std::size_t beam_width = 10;
  std::size_t max_len = 16;
  std::size_t rs_samples = 100;
  std::vector<std::size_t> rs_budgets = {10, 50, 100};
  double rs_lambda = 0.7;
  double rs_is_lambda = 0.7;
  std::uint64_t seed = 1;
  SplitFractions split;
  Kernel kernel = Kernel::openmp;
  int threads = 0;  // 0: OpenMP default

  // [discrim]
  std::size_t images = 12;
  std::size_t image_shared = 2;
  std::size_t image_distinct = 1;
  std::size_t image_captions = 40;
  double discrim_lambda = 0.3;
  std::size_t discrim_beam = 2;
  double feature_noise = 0.1;
  std::size_t hard_top_k = 6;

  // [output]
  std::filesystem::path out_dir = "out";

  void validate() const;
  /// Unknown keys are an error.
  static ExperimentConfig from_doc(const ConfigDoc& doc);
  ConfigDoc to_doc() const;
};

struct ReportRow {
  std::string experiment;  // sweep, rs-sweep, discrim
  std::string method;
  double lambda = 1.0;
  std::size_t beam = 0;
  std::size_t samples = 0;
  std::string split;  // "all", "easy", "hard"
  std::size_t items = 0;
  double cider_mean = 0.0;
  double cider_sem = 0.0;
  double afc_mean = 0.0;
  double afc_sem = 0.0;
  std::string note;
  double runtime_s = 0.0;  // timing.csv only
};

struct ItemRecord {
  std::string experiment;
  std::string method;
  double lambda = 1.0;
  std::size_t beam = 0;
  std::size_t samples = 0;
  std::string split;
  std::size_t group = 0;
  std::string item;  // stable id of the (target, distractor) pair within its group
  std::string target;
  std::string distractor;
  std::vector<std::string> candidate;
  std::vector<std::vector<std::string>> references;
  double cider = 0.0;
  double afc = 0.0;
  bool tie_rule = false;         // caption equal to the swapped pair's caption
  bool speaker_identical = false;  // discrim: S captions of target and distractor coincide
};

struct SweepReport {
  std::vector<ReportRow> rows;
  std::vector<ItemRecord> items;
};

struct BestLambda {
  std::string method;
  double lambda = 1.0;
  double cider_mean = 0.0;
};

SweepReport run_sweep(const ExperimentConfig& config);
SweepReport run_rs_samplesweep(const ExperimentConfig& config);
SweepReport run_discrim_captioning(const ExperimentConfig& config);

/// Per method, the lambda with the highest mean CIDEr-D (ties: larger lambda).
std::vector<BestLambda> best_lambdas(const SweepReport& report);

/// Mean and standard error of the mean (sample std / sqrt(n); 0 when n < 2).
std::pair<double, double> mean_sem(const std::vector<double>& values);

void write_report_csv(const SweepReport& report, std::ostream& out);
void write_timing_csv(const SweepReport& report, std::ostream& out);
void write_items_jsonl(const SweepReport& report, std::ostream& out);
void write_best_lambda_csv(const std::vector<BestLambda>& best, std::ostream& out);
/// report.csv, items.jsonl, timing.csv, best_lambda.csv and config.lock under `dir`.
void write_report_bundle(const SweepReport& report, const ExperimentConfig& config, const std::filesystem::path& dir);

struct EvalRow {
  std::string id;
  double cider = 0.0;
  double stored = 0.0;  // NaN when the file carried no score
  std::array<double, 4> per_n{};
};

/// Recomputes CIDEr-D for a JSONL file with `candidate` and `references`
/// (token lists or strings). IDF documents are the distinct
/// (`idf_group`, `item`) reference sets, or every line when `item` is absent.
std::vector<EvalRow> evaluate_jsonl(std::istream& in);
void write_eval_csv(const std::vector<EvalRow>& rows, std::ostream& out);

}  // namespace esd
