#include "capgen/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>

namespace capgen {

namespace {

std::string join(std::span<const std::string> tokens, std::size_t begin, std::size_t n) {
  std::string out = tokens[begin];
  for (std::size_t i = 1; i < n; ++i) {
    out.push_back(' ');
    out += tokens[begin + i];
  }
  return out;
}

}  // namespace

NgramStats NgramStats::of(std::span<const std::string> caption, int max_n) {
  NgramStats s;
  s.length = static_cast<int>(caption.size());
  for (int n = 1; n <= max_n; ++n)
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= caption.size(); ++i)
      s.counts[n - 1][join(caption, i, static_cast<std::size_t>(n))] += 1.0;
  return s;
}

void NgramStats::add(const NgramStats& other) {
  for (int n = 0; n < kMaxNgram; ++n)
    for (const auto& [g, c] : other.counts[n]) counts[n][g] += c;
  length += other.length;
}

CorpusStats::CorpusStats(std::span<const std::vector<Caption>> reference_sets) : documents_(reference_sets.size()) {
  for (const auto& refs : reference_sets) {
    std::set<std::string> seen;
    for (const auto& r : refs) {
      const NgramStats s = NgramStats::of(r);
      for (const auto& per_n : s.counts)
        for (const auto& [g, _] : per_n) seen.insert(g);
    }
    for (const auto& g : seen) df_[g] += 1.0;
  }
  log_documents_ = documents_ > 0 ? std::log(static_cast<double>(documents_)) : 0.0;
}

double CorpusStats::document_frequency(const std::string& ngram) const {
  auto it = df_.find(ngram);
  return it == df_.end() ? 0.0 : it->second;
}

double bleu(std::span<const std::string> candidate, std::span<const Caption> references, int max_n) {
  if (references.empty()) throw std::invalid_argument("bleu: empty reference list");
  if (candidate.empty()) throw std::invalid_argument("bleu: empty candidate");
  const NgramStats cand = NgramStats::of(candidate, max_n);
  std::vector<NgramStats> refs;
  for (const auto& r : references) refs.push_back(NgramStats::of(r, max_n));
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const double total = static_cast<double>(candidate.size()) - n + 1;
    if (total <= 0) return 0.0;
    double matched = 0.0;
    for (const auto& [g, c] : cand.counts[n - 1]) {
      double best = 0.0;
      for (const auto& r : refs) {
        auto it = r.counts[n - 1].find(g);
        if (it != r.counts[n - 1].end()) best = std::max(best, it->second);
      }
      matched += std::min(c, best);
    }
    if (matched == 0.0) return 0.0;
    log_sum += std::log(matched / total);
  }
  const double c = static_cast<double>(candidate.size());
  double closest = static_cast<double>(references[0].size());
  for (const auto& r : references) {
    const double len = static_cast<double>(r.size());
    if (std::abs(len - c) < std::abs(closest - c) || (std::abs(len - c) == std::abs(closest - c) && len < closest))
      closest = len;
  }
  const double bp = c > closest ? 1.0 : std::exp(1.0 - closest / c);
  return bp * std::exp(log_sum / max_n);
}

double mbleu(std::span<const Caption> captions) {
  if (captions.size() < 2) throw std::invalid_argument("mbleu: need at least two captions");
  double total = 0.0;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    std::vector<Caption> rest;
    for (std::size_t j = 0; j < captions.size(); ++j)
      if (j != i) rest.push_back(captions[j]);
    total += bleu(captions[i], rest, 4);
  }
  return total / static_cast<double>(captions.size());
}

namespace {

struct TfIdf {
  std::array<std::unordered_map<std::string, double>, kMaxNgram> vec;
  std::array<double, kMaxNgram> norm{};
  int length = 0;
};

TfIdf tfidf(const NgramStats& s, const CorpusStats& stats) {
  TfIdf out;
  out.length = s.length;
  for (int n = 0; n < kMaxNgram; ++n) {
    double sq = 0.0;
    for (const auto& [g, tf] : s.counts[n]) {
      const double idf = stats.log_documents() - std::log(std::max(1.0, stats.document_frequency(g)));
      const double v = tf * idf;
      out.vec[n][g] = v;
      sq += v * v;
    }
    out.norm[n] = std::sqrt(sq);
  }
  return out;
}

// Mean over n of the clipped TF-IDF cosine, times the optional penalty.
double cider_similarity(const TfIdf& hyp, const TfIdf& ref, bool penalty) {
  const double delta = static_cast<double>(hyp.length - ref.length);
  const double factor = penalty ? std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma)) : 1.0;
  double total = 0.0;
  for (int n = 0; n < kMaxNgram; ++n) {
    double val = 0.0;
    for (const auto& [g, v] : hyp.vec[n]) {
      auto it = ref.vec[n].find(g);
      if (it != ref.vec[n].end()) val += std::min(v, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
    total += val * factor;
  }
  return total / kMaxNgram;
}

}  // namespace

double cider_d(std::span<const std::string> candidate, std::span<const Caption> references, const CorpusStats& stats,
               bool mcider) {
  if (references.empty()) throw std::invalid_argument("cider_d: empty reference list");
  const TfIdf hyp = tfidf(NgramStats::of(candidate), stats);
  if (mcider) {
    NgramStats pooled;
    for (const auto& r : references) pooled.add(NgramStats::of(r));
    return 10.0 * cider_similarity(hyp, tfidf(pooled, stats), false);
  }
  double total = 0.0;
  for (const auto& r : references) total += cider_similarity(hyp, tfidf(NgramStats::of(r), stats), true);
  return 10.0 * total / static_cast<double>(references.size());
}

Eigen::MatrixXd self_cider_kernel(std::span<const Caption> captions, const CorpusStats& stats) {
  const auto m = static_cast<Eigen::Index>(captions.size());
  Eigen::MatrixXd k(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      k(i, j) = cider_d(captions[static_cast<std::size_t>(i)], std::span<const Caption>(&captions[static_cast<std::size_t>(j)], 1),
                        stats, true);
  return (k + k.transpose()) / 2.0;
}

double self_cider_from_kernel(const Eigen::MatrixXd& kernel) {
  const Eigen::Index m = kernel.rows();
  if (m < 2 || kernel.cols() != m) throw std::invalid_argument("self_cider: need a square kernel over >= 2 captions");
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(kernel).singularValues();
  const double top = s.maxCoeff();
  if (!(top > 0.0)) throw std::domain_error("self_cider: degenerate all-zero kernel");
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    if (s[i] > 1e-12 * top) total += s[i];
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(s[i] > 1e-12 * top)) continue;
    const double p = s[i] / total;
    entropy -= p * std::log(p);
  }
  return std::clamp(entropy / std::log(static_cast<double>(m)), 0.0, 1.0);
}

double self_cider(std::span<const Caption> captions, const CorpusStats& stats) {
  if (captions.size() < 2) throw std::invalid_argument("self_cider: need at least two captions");
  return self_cider_from_kernel(self_cider_kernel(captions, stats));
}

double divn(std::span<const Caption> captions, int n) {
  if (n < 1) throw std::invalid_argument("divn: n must be >= 1");
  std::set<std::string> distinct;
  double words = 0.0;
  for (const auto& c : captions) {
    words += static_cast<double>(c.size());
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= c.size(); ++i)
      distinct.insert(join(c, i, static_cast<std::size_t>(n)));
  }
  return words > 0 ? static_cast<double>(distinct.size()) / words : 0.0;
}

std::size_t vocab_size(std::span<const Caption> outputs) {
  std::set<std::string> words;
  for (const auto& c : outputs) words.insert(c.begin(), c.end());
  return words.size();
}

double novel_rate(std::span<const Caption> outputs, std::span<const Caption> training_captions) {
  if (outputs.empty()) throw std::invalid_argument("novel_rate: no outputs");
  const std::set<Caption> seen(training_captions.begin(), training_captions.end());
  std::size_t novel = 0;
  for (const auto& c : outputs)
    if (!seen.count(c)) ++novel;
  return static_cast<double>(novel) / static_cast<double>(outputs.size());
}

double len_mse(std::span<const int> desired, std::span<const int> actual) {
  if (desired.size() != actual.size()) throw std::invalid_argument("len_mse: desired and actual lengths differ in count");
  if (desired.empty()) throw std::invalid_argument("len_mse: no lengths");
  double total = 0.0;
  for (std::size_t i = 0; i < desired.size(); ++i) {
    const double d = static_cast<double>(desired[i] - actual[i]);
    total += d * d;
  }
  return total / static_cast<double>(desired.size());
}

bool has_bad_ending(std::span<const std::string> caption, const WordSet& bad_endings) {
  return !caption.empty() && bad_endings.count(caption.back()) > 0;
}

double bad_ending_rate(std::span<const Caption> captions, const WordSet& bad_endings) {
  if (captions.empty()) throw std::invalid_argument("bad_ending_rate: no captions");
  std::size_t bad = 0;
  for (const auto& c : captions)
    if (has_bad_ending(c, bad_endings)) ++bad;
  return static_cast<double>(bad) / static_cast<double>(captions.size());
}

OracleAverage aggregate_oracle_average(std::span<const std::vector<double>> groups) {
  if (groups.empty()) throw std::invalid_argument("aggregate_oracle_average: no groups");
  OracleAverage out;
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("aggregate_oracle_average: empty group");
    double sum = 0.0;
    for (double v : g) sum += v;
    out.oracle += *std::max_element(g.begin(), g.end());
    out.average += sum / static_cast<double>(g.size());
  }
  out.oracle /= static_cast<double>(groups.size());
  out.average /= static_cast<double>(groups.size());
  return out;
}

void SetMetricsReport::add_column(const std::string& name, const std::vector<double>& values) {
  if (values.size() != ids.size()) throw std::invalid_argument("SetMetricsReport: column length mismatch");
  if (rows.empty()) rows.resize(ids.size());
  columns.push_back(name);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    rows[i].push_back(values[i]);
    if (!std::isnan(values[i])) {
      sum += values[i];
      ++n;
    }
  }
  corpus_row.push_back(n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN());
}

double SetMetricsReport::value(const std::string& id, const std::string& column) const {
  auto c = std::find(columns.begin(), columns.end(), column);
  auto r = std::find(ids.begin(), ids.end(), id);
  if (c == columns.end() || r == ids.end()) throw std::out_of_range("SetMetricsReport: unknown id or column");
  return rows[static_cast<std::size_t>(r - ids.begin())][static_cast<std::size_t>(c - columns.begin())];
}

double SetMetricsReport::corpus(const std::string& column) const {
  auto c = std::find(columns.begin(), columns.end(), column);
  if (c == columns.end()) throw std::out_of_range("SetMetricsReport: unknown column '" + column + "'");
  return corpus_row[static_cast<std::size_t>(c - columns.begin())];
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

void csv_number(std::ostream& out, double v) {
  if (!std::isfinite(v)) return;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  out << buf;
}

}  // namespace

void SetMetricsReport::write_json(std::ostream& out) const {
  nlohmann::json j;
  j["per_image"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    nlohmann::json row;
    row["id"] = ids[i];
    for (std::size_t c = 0; c < columns.size(); ++c) row[columns[c]] = number_or_null(rows[i][c]);
    j["per_image"].push_back(row);
  }
  nlohmann::json corpus_json;
  for (std::size_t c = 0; c < columns.size(); ++c) corpus_json[columns[c]] = number_or_null(corpus_row[c]);
  for (const auto& [k, v] : summary) corpus_json[k] = number_or_null(v);
  j["corpus"] = corpus_json;
  out << j.dump(2) << '\n';
}

void SetMetricsReport::write_csv(std::ostream& out) const {
  out << "id";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i];
    for (double v : rows[i]) {
      out << ',';
      csv_number(out, v);
    }
    out << '\n';
  }
  out << "corpus";
  for (double v : corpus_row) {
    out << ',';
    csv_number(out, v);
  }
  out << '\n';
  for (const auto& [k, v] : summary) {
    out << "# " << k << '=';
    csv_number(out, v);
    out << '\n';
  }
}

}  // namespace capgen
