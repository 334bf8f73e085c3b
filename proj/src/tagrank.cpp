#include "capgen/tagrank.hpp"

#include "capgen/errors.hpp"
#include "capgen/numeric.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace capgen {

std::vector<TagRecord> tag_records(std::span<const CorpusRecord> corpus, const Vocabulary& tag_vocab,
                                   const WordSet& stopwords, const SynonymTable& synonyms) {
  std::vector<TagRecord> out;
  for (const auto& r : corpus) {
    TagRecord t{r.id, r.context, r.captions, {}};
    std::set<std::string> seen;
    for (const auto& c : r.captions)
      for (const auto& tag : extract_tag_sequence(c, tag_vocab, stopwords, synonyms))
        if (seen.insert(tag).second) t.tags.push_back(tag);
    out.push_back(std::move(t));
  }
  return out;
}

TagEncoder::TagEncoder(const Vocabulary& tag_vocab, int dim, std::uint64_t seed)
    : vocab_(tag_vocab), embed_(Eigen::MatrixXd::Zero(dim, static_cast<Eigen::Index>(tag_vocab.size()))) {
  init_uniform({{"tag_embed", &embed_}}, seed, 0.5);
}

Eigen::VectorXd TagEncoder::encode(std::span<const std::string> tags) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(embed_.rows());
  if (tags.empty()) return out;
  for (const auto& t : tags) out += embed_.col(vocab_.id(t));
  return out / static_cast<double>(tags.size());
}

void TagEncoder::backprop(std::span<const std::string> tags, const Eigen::VectorXd& d_encoding,
                          Eigen::MatrixXd& grad) const {
  if (tags.empty()) return;
  const double w = 1.0 / static_cast<double>(tags.size());
  for (const auto& t : tags) grad.col(vocab_.id(t)) += w * d_encoding;
}

Tag2CapScorer::Tag2CapScorer(const Vocabulary& caption_vocab, const Vocabulary& tag_vocab, int tag_dim, int embed,
                             int hidden, std::uint64_t seed)
    : caption_vocab_(caption_vocab), encoder_(tag_vocab, tag_dim, seed ^ 0x7a9ULL) {
  TinyLMDims dims;
  dims.vocab = static_cast<int>(caption_vocab.size());
  dims.embed = embed;
  dims.hidden = hidden;
  dims.context = tag_dim;
  model_ = TinyLM(dims, seed);
}

double Tag2CapScorer::caption_loss(std::span<const std::string> tags, const Caption& caption, TinyLMParams* lm_grad,
                                   Eigen::MatrixXd* tag_grad) const {
  const std::vector<TokenId> targets = caption_vocab_.encode(caption);
  const TinyLMTrace trace = model_.forward(encoder_.encode(tags), model_.teacher_inputs(targets));
  double loss = 0.0;
  std::vector<Eigen::VectorXd> dlogits;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    loss -= log_softmax(trace.logits[j])[targets[j]];
    if (lm_grad || tag_grad) {
      Eigen::VectorXd d = softmax(trace.logits[j]);
      d[targets[j]] -= 1.0;
      dlogits.push_back(std::move(d));
    }
  }
  if (lm_grad || tag_grad) {
    TinyLMParams scratch;
    TinyLMParams& g = lm_grad ? *lm_grad : (scratch = TinyLMParams::zeros(model_.dims()));
    const Eigen::VectorXd dctx = model_.backward(trace, dlogits, g);
    if (tag_grad) encoder_.backprop(tags, dctx, *tag_grad);
  }
  return loss;
}

double Tag2CapScorer::reconstruction_loss(const TagRecord& record, std::span<const std::string> tags) const {
  if (record.captions.empty()) throw DataError("tag2cap: record '" + record.id + "' has no captions");
  double total = 0.0;
  for (const auto& c : record.captions) total += caption_loss(tags, c, nullptr, nullptr);
  return total / static_cast<double>(record.captions.size());
}

Tag2FeatScorer::Tag2FeatScorer(const Vocabulary& tag_vocab, int tag_dim, int context_dim, std::uint64_t seed)
    : encoder_(tag_vocab, tag_dim, seed), projection_(Eigen::MatrixXd::Zero(context_dim, tag_dim)) {
  init_uniform({{"projection", &projection_}}, seed ^ 0xfea7ULL, 0.5);
}

double Tag2FeatScorer::loss(std::span<const std::string> tags, const Eigen::VectorXd& context, GradList* grads) const {
  if (context.size() != projection_.rows()) throw DataError("tag2feat: context dimension mismatch");
  const Eigen::VectorXd enc = encoder_.encode(tags);
  const Eigen::VectorXd est = projection_ * enc;
  const double value = 1.0 - cosine(est, context);
  if (grads) {
    const Eigen::VectorXd d_est = cosine_grad_a(est, context, -1.0);
    (*grads)[1].noalias() += d_est * enc.transpose();
    encoder_.backprop(tags, projection_.transpose() * d_est, (*grads)[0]);
  }
  return value;
}

RankedTags rank_tags_greedy(const TagRecord& record, std::span<const std::string> tags, const UtilityScorer& scorer) {
  if (tags.empty()) throw std::invalid_argument("rank_tags_greedy: no tags to rank");
  std::vector<std::string> remaining(tags.begin(), tags.end());
  std::sort(remaining.begin(), remaining.end());
  remaining.erase(std::unique(remaining.begin(), remaining.end()), remaining.end());
  RankedTags out;
  std::vector<std::string> selected;
  while (!remaining.empty()) {
    std::size_t best = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < remaining.size(); ++j) {
      std::vector<std::string> trial = selected;
      trial.push_back(remaining[j]);
      const double loss = scorer.reconstruction_loss(record, trial);
      if (std::isnan(loss)) throw NumericError("tag scorer returned NaN on record '" + record.id + "'");
      if (j == 0 || loss < best_loss) {
        best = j;
        best_loss = loss;
      }
    }
    selected.push_back(remaining[best]);
    out.tags.push_back(remaining[best]);
    out.losses.push_back(best_loss);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return out;
}

std::vector<std::string> sample_tag_subset(std::span<const std::string> tags, Rng& rng) {
  std::vector<std::string> pool(tags.begin(), tags.end());
  const std::size_t size = rng.below(pool.size() + 1);
  for (std::size_t i = 0; i < size; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(size);
  return pool;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

TrainingLog train_tag2cap(Tag2CapScorer& scorer, std::span<const TagRecord> records, const TrainConfig& config,
                          const SubsetSampler& sampler) {
  config.validate();
  struct Pair {
    std::size_t record;
    std::size_t caption;
  };
  std::vector<Pair> pairs;
  for (std::size_t r = 0; r < records.size(); ++r)
    for (std::size_t c = 0; c < records[r].captions.size(); ++c) pairs.push_back({r, c});
  if (pairs.empty()) throw DataError("tag2cap: no captions to train on");
  Rng rng(config.seed);
  TrainingLog log;
  const auto start = Clock::now();
  ParamList params = scorer.model().params().refs();
  params.push_back({"tag_embed", &scorer.encoder().embeddings()});
  const std::size_t batch = config.batch_size <= 0 ? pairs.size() : static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled_indices(pairs.size(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t end = std::min(order.size(), b + batch);
      TinyLMParams lm_grad = TinyLMParams::zeros(scorer.model().dims());
      Eigen::MatrixXd tag_grad = Eigen::MatrixXd::Zero(scorer.encoder().embeddings().rows(),
                                                       scorer.encoder().embeddings().cols());
      for (std::size_t i = b; i < end; ++i) {
        const Pair& p = pairs[order[i]];
        const TagRecord& r = records[p.record];
        const std::vector<std::string> subset = sampler(r.tags, rng);
        const double loss = scorer.caption_loss(subset, r.captions[p.caption], &lm_grad, &tag_grad);
        if (!std::isfinite(loss)) throw NumericError("tag2cap: non-finite loss on record '" + r.id + "'");
        total += loss;
      }
      GradList grads = lm_grad.to_list();
      grads.push_back(tag_grad);
      scale(grads, 1.0 / static_cast<double>(end - b));
      sgd_step(params, grads, config.learning_rate);
    }
    log.rows.push_back({epoch + 1, total / static_cast<double>(pairs.size()), 0.0, elapsed_ms(start)});
  }
  return log;
}

TrainingLog train_tag2feat(Tag2FeatScorer& scorer, std::span<const TagRecord> records, const TrainConfig& config,
                           const SubsetSampler& sampler) {
  config.validate();
  if (records.empty()) throw DataError("tag2feat: no records to train on");
  Rng rng(config.seed);
  TrainingLog log;
  const auto start = Clock::now();
  const ParamList params = scorer.refs();
  const std::size_t batch = config.batch_size <= 0 ? records.size() : static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled_indices(records.size(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t end = std::min(order.size(), b + batch);
      GradList grads = zeros_like(params);
      for (std::size_t i = b; i < end; ++i) {
        const TagRecord& r = records[order[i]];
        const std::vector<std::string> subset = sampler(r.tags, rng);
        total += scorer.loss(subset, r.context, &grads);
      }
      scale(grads, 1.0 / static_cast<double>(end - b));
      if (!all_finite(grads)) throw NumericError("tag2feat: non-finite gradient");
      sgd_step(params, grads, config.learning_rate);
    }
    log.rows.push_back({epoch + 1, total / static_cast<double>(records.size()), 0.0, elapsed_ms(start)});
  }
  return log;
}

TagStatistics::TagStatistics(std::span<const TagRecord> training, const SynonymTable& synonyms)
    : synonyms_(synonyms) {
  for (const auto& r : training) {
    for (const auto& c : r.captions) {
      captions_ += 1.0;
      std::set<std::string> seen;
      for (const auto& tok : c) {
        const std::string& t = synonyms_.canonical(tok);
        frequency_[t] += 1.0;
        seen.insert(t);
      }
      for (const auto& t : seen) df_[t] += 1.0;
    }
  }
}

double TagStatistics::frequency(const std::string& tag) const {
  auto it = frequency_.find(synonyms_.canonical(tag));
  return it == frequency_.end() ? 0.0 : it->second;
}

double TagStatistics::document_frequency(const std::string& tag) const {
  auto it = df_.find(synonyms_.canonical(tag));
  return it == df_.end() ? 0.0 : it->second;
}

double TagStatistics::idf(const std::string& tag) const {
  return std::log(std::max(captions_, 1.0) / std::max(document_frequency(tag), 1.0));
}

double caption_tf(const TagRecord& record, const std::string& tag, const SynonymTable& synonyms) {
  const std::string& target = synonyms.canonical(tag);
  double count = 0.0;
  for (const auto& c : record.captions)
    for (const auto& tok : c)
      if (synonyms.canonical(tok) == target) {
        count += 1.0;
        break;
      }
  return count;
}

RankedTags rank_by_score(std::span<const std::string> tags, const std::function<double(const std::string&)>& score) {
  std::vector<std::pair<double, std::string>> scored;
  std::set<std::string> seen;
  for (const auto& t : tags)
    if (seen.insert(t).second) scored.emplace_back(score(t), t);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  RankedTags out;
  for (const auto& [s, t] : scored) {
    out.tags.push_back(t);
    out.losses.push_back(-s);
  }
  return out;
}

RankedTags tf_rank(const TagRecord& record, std::span<const std::string> tags, const SynonymTable& synonyms) {
  return rank_by_score(tags, [&](const std::string& t) { return caption_tf(record, t, synonyms); });
}

RankedTags tfidf_rank(const TagRecord& record, std::span<const std::string> tags, const TagStatistics& stats,
                      const SynonymTable& synonyms) {
  return rank_by_score(tags, [&](const std::string& t) { return caption_tf(record, t, synonyms) * stats.idf(t); });
}

RankedTags tagorder_rank(const TagRecord& record, std::span<const std::string> tags, const SynonymTable& synonyms) {
  std::map<std::string, double> position;
  double pos = 0.0;
  for (const auto& c : record.captions)
    for (const auto& tok : c) {
      position.emplace(synonyms.canonical(tok), pos);
      pos += 1.0;
    }
  return rank_by_score(tags, [&](const std::string& t) {
    auto it = position.find(synonyms.canonical(t));
    return it == position.end() ? -std::numeric_limits<double>::infinity() : -it->second;
  });
}

RankedTags freq_rank(const TagRecord&, std::span<const std::string> tags, const TagStatistics& stats) {
  return rank_by_score(tags, [&](const std::string& t) { return stats.frequency(t); });
}

CombinedScorer::CombinedScorer(std::vector<WeightedScorer> parts) : parts_(std::move(parts)) {
  if (parts_.empty()) throw ConfigError("weights: combined ranker needs at least one scorer");
  for (const auto& p : parts_) {
    if (!p.scorer) throw ConfigError("weights: missing scorer");
    if (!std::isfinite(p.weight)) throw ConfigError("weights: must be finite");
  }
}

double CombinedScorer::reconstruction_loss(const TagRecord& record, std::span<const std::string> tags) const {
  double total = 0.0;
  for (const auto& p : parts_)
    if (p.weight != 0.0) total += p.weight * p.scorer->reconstruction_loss(record, tags);
  return total;
}

CombinedScorer combine_rankers(std::vector<WeightedScorer> parts) { return CombinedScorer(std::move(parts)); }

double set_recall_at_k(std::span<const std::string> predicted, std::span<const std::string> reference, int k,
                       const SynonymTable& synonyms) {
  if (k < 1) throw std::invalid_argument("set_recall_at_k: k must be >= 1");
  if (reference.empty()) throw std::invalid_argument("set_recall_at_k: empty reference");
  std::set<std::string> pred;
  for (std::size_t i = 0; i < predicted.size() && i < static_cast<std::size_t>(k); ++i)
    pred.insert(synonyms.canonical(predicted[i]));
  std::set<std::string> ref;
  for (std::size_t i = 0; i < reference.size() && i < static_cast<std::size_t>(k); ++i)
    ref.insert(synonyms.canonical(reference[i]));
  std::size_t hit = 0;
  for (const auto& r : ref)
    if (pred.count(r)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(ref.size());
}

std::vector<WeightedSequence> annotation_sequences(const TagAnnotation& annotation) {
  std::vector<WeightedSequence> out;
  double total = 0.0;
  for (const auto& [t1, m1] : annotation.round1) {
    if (m1 <= 0) continue;
    auto r2 = annotation.round2.find(t1);
    if (r2 == annotation.round2.end()) continue;
    for (const auto& [t2, m2] : r2->second) {
      if (m2 <= 0 || t2 == t1) continue;
      auto r3 = annotation.round3.find(TagAnnotation::key(t1, t2));
      if (r3 == annotation.round3.end()) continue;
      for (const auto& [t3, m3] : r3->second) {
        if (m3 <= 0 || t3 == t1 || t3 == t2) continue;
        const double w = static_cast<double>(m1) * m2 * m3;
        out.push_back({{t1, t2, t3}, w});
        total += w;
      }
    }
  }
  if (out.empty()) throw DataError("annotation '" + annotation.id + "' has no complete tag sequence");
  for (auto& s : out) s.weight /= total;
  return out;
}

double weighted_set_recall(std::span<const std::string> predicted, const TagAnnotation& annotation, int k,
                           const SynonymTable& synonyms) {
  double total = 0.0;
  for (const auto& s : annotation_sequences(annotation))
    total += s.weight * set_recall_at_k(predicted, s.tags, k, synonyms);
  return total;
}

PseudoTagCorpus build_pseudo_tag_corpus(std::span<const TagRecord> records, const TagRanker& ranker) {
  PseudoTagCorpus out;
  for (const auto& r : records) {
    if (r.tags.empty()) {
      ++out.skipped;
      continue;
    }
    CorpusRecord c;
    c.id = r.id;
    c.context = r.context;
    c.captions.push_back(ranker(r).tags);
    out.records.push_back(std::move(c));
  }
  return out;
}

}  // namespace capgen
