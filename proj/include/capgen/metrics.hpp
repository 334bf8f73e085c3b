#pragma once

#include "capgen/corpus.hpp"

#include <Eigen/Dense>

#include <array>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace capgen {

inline constexpr int kMaxNgram = 4;

// counts[n - 1] maps an n-gram (tokens joined by single spaces) to its count.
struct NgramStats {
  std::array<std::unordered_map<std::string, double>, kMaxNgram> counts;
  int length = 0;  // candidate word count

  static NgramStats of(std::span<const std::string> caption, int max_n = kMaxNgram);
  void add(const NgramStats& other);
};

// Document frequencies over the evaluation reference corpus: each image's
// reference set counts once per distinct n-gram.
class CorpusStats {
 public:
  CorpusStats() = default;
  explicit CorpusStats(std::span<const std::vector<Caption>> reference_sets);

  double document_frequency(const std::string& ngram) const;
  std::size_t documents() const { return documents_; }
  double log_documents() const { return log_documents_; }

 private:
  std::unordered_map<std::string, double> df_;
  std::size_t documents_ = 0;
  double log_documents_ = 0.0;
};

// Geometric mean of clipped n-gram precisions times the brevity penalty
// (closest reference length, ties toward the shorter). Any zero precision,
// including a candidate with no n-grams of some order, yields 0.
double bleu(std::span<const std::string> candidate, std::span<const Caption> references, int max_n = 4);

// Mean BLEU-4 of each caption against the rest of the set.
double mbleu(std::span<const Caption> captions);

// CIDEr-D: TF-IDF n-gram vectors (n = 1..4) compared per reference with
// clipping, a Gaussian length penalty (sigma 6) and x10 scaling. With
// mcider the penalty is dropped and reference counts are pooled into one
// composite reference.
double cider_d(std::span<const std::string> candidate, std::span<const Caption> references, const CorpusStats& stats,
               bool mcider = false);

inline constexpr double kCiderSigma = 6.0;

// Pairwise similarity kernel used by self_cider: mCIDEr of caption i with
// caption j as the only reference, symmetrized.
Eigen::MatrixXd self_cider_kernel(std::span<const Caption> captions, const CorpusStats& stats);
// Normalized spectral entropy of a kernel, in [0, 1].
double self_cider_from_kernel(const Eigen::MatrixXd& kernel);
double self_cider(std::span<const Caption> captions, const CorpusStats& stats);

// Distinct n-grams across the set divided by the total word count.
double divn(std::span<const Caption> captions, int n);
std::size_t vocab_size(std::span<const Caption> outputs);
double novel_rate(std::span<const Caption> outputs, std::span<const Caption> training_captions);

double len_mse(std::span<const int> desired, std::span<const int> actual);
bool has_bad_ending(std::span<const std::string> caption, const WordSet& bad_endings);
double bad_ending_rate(std::span<const Caption> captions, const WordSet& bad_endings = default_bad_endings());

struct OracleAverage {
  double oracle = 0.0;
  double average = 0.0;
};

// Per-group max and mean, then corpus means of each.
OracleAverage aggregate_oracle_average(std::span<const std::vector<double>> groups);

// Named metric columns over images plus corpus-level scalars. NaN marks a
// value that is undefined for an image (e.g. mBLEU of a single caption).
struct SetMetricsReport {
  std::vector<std::string> ids;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // rows[image][column]
  std::vector<double> corpus_row;         // corpus mean of each column
  std::map<std::string, double> summary;  // vocab_size, novel_rate, ...

  void add_column(const std::string& name, const std::vector<double>& values);
  double value(const std::string& id, const std::string& column) const;
  double corpus(const std::string& column) const;
  void write_json(std::ostream& out) const;
  void write_csv(std::ostream& out) const;
};

}  // namespace capgen
