#pragma once

#include "capgen/corpus.hpp"
#include "capgen/decode.hpp"
#include "capgen/matchers.hpp"
#include "capgen/metrics.hpp"
#include "capgen/models.hpp"
#include "capgen/scenegraph.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace capgen {

// One line of a hypotheses file:
//   {"id": str, "captions": [{"tokens": [str...], "logprob": number}...]}
struct HypothesisSet {
  std::string id;
  std::vector<Caption> captions;
  std::vector<double> log_probs;
};

std::vector<HypothesisSet> parse_hypotheses(std::istream& in);
std::vector<HypothesisSet> load_hypotheses(const std::string& path);
void write_hypotheses(std::ostream& out, std::span<const HypothesisSet> sets);

// Decodes every record. Length-aware checkpoints need either
// desired_length > 0 or a predictor; fixlen uses config.target_length.
std::vector<HypothesisSet> decode_corpus(const TinyLM& model, const Vocabulary& vocab,
                                         std::span<const CorpusRecord> records, const DecodeConfig& config,
                                         int desired_length = 0, const LengthPredictor* predictor = nullptr);

struct EvalOptions {
  // AllSPICE needs reference tuples on every record and a lexicon to
  // extract candidate tuples.
  bool allspice = false;
  const Lexicon* lexicon = nullptr;
  SynonymTable synonyms;

  // Discrimination accuracy: distractors[i] is the corpus index of record
  // i's distractor.
  const RetrievalScorer* scorer = nullptr;
  const Vocabulary* scorer_vocab = nullptr;
  std::vector<std::size_t> distractors;

  std::vector<Caption> training_captions;  // enables novel_rate
  WordSet bad_endings = default_bad_endings();
};

// Per-image columns: cider, bleu4 (first caption), and for sets of more
// than one caption oracle_/avg_ CIDEr and BLEU, mbleu, self_cider; div1,
// div2 always; allspice and acc when requested. Hypotheses and corpus must
// contain the same ids; otherwise DataError lists the missing ones.
SetMetricsReport evaluate_sets(std::span<const HypothesisSet> hypotheses, std::span<const CorpusRecord> corpus,
                               const EvalOptions& options);

// A grid over one decoding method. Empty axes keep the base config value.
struct SweepSpec {
  DecodeConfig base;
  std::vector<double> temperatures;
  std::vector<int> top_ks;
  std::vector<double> top_ps;
  std::vector<double> diversities;
  bool parallel = true;

  struct Point {
    std::string setting;
    DecodeConfig config;
  };

  // Throws ConfigError for an invalid grid or sample size.
  void validate() const;
  // Row-major over temperature, k, p, diversity.
  std::vector<Point> grid() const;
};

struct SweepRow {
  std::string setting;
  double oracle_cider = 0.0;
  std::optional<double> allspice;
  double self_cider = 0.0;
  double mbleu = 0.0;
  double div1 = 0.0;
  double avg_cider = 0.0;
};

// Every grid point re-seeds from base.seed, so rows do not depend on
// scheduling.
std::vector<SweepRow> run_sweep(const TinyLM& model, const Vocabulary& vocab, std::span<const CorpusRecord> corpus,
                                const SweepSpec& spec, const EvalOptions& options, int desired_length = 0);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

// Exit codes: 0 ok, 1 usage or configuration, 2 data, 3 numeric.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace capgen
