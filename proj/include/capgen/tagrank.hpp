#pragma once

#include "capgen/corpus.hpp"
#include "capgen/models.hpp"
#include "capgen/params.hpp"
#include "capgen/train.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace capgen {

// An image with its captions and the candidate tags extracted from them.
struct TagRecord {
  std::string id;
  Eigen::VectorXd context;
  std::vector<Caption> captions;
  std::vector<std::string> tags;  // candidate set, order of first appearance
};

// Candidate tags of each record: the union of tags extracted from all of
// its captions (the 5-caption regime). Pass one caption per record for the
// 1-caption regime.
std::vector<TagRecord> tag_records(std::span<const CorpusRecord> corpus, const Vocabulary& tag_vocab,
                                   const WordSet& stopwords, const SynonymTable& synonyms = {});

class UtilityScorer {
 public:
  virtual ~UtilityScorer() = default;
  // Lower is better.
  virtual double reconstruction_loss(const TagRecord& record, std::span<const std::string> tags) const = 0;
};

class FunctionScorer : public UtilityScorer {
 public:
  using Fn = std::function<double(const TagRecord&, std::span<const std::string>)>;
  explicit FunctionScorer(Fn fn) : fn_(std::move(fn)) {}
  double reconstruction_loss(const TagRecord& record, std::span<const std::string> tags) const override {
    return fn_(record, tags);
  }

 private:
  Fn fn_;
};

// Embedding table for tags, indexed by tag-vocabulary id.
class TagEncoder {
 public:
  TagEncoder() = default;
  TagEncoder(const Vocabulary& tag_vocab, int dim, std::uint64_t seed);

  // Mean of the tag embeddings; the zero vector for an empty set.
  Eigen::VectorXd encode(std::span<const std::string> tags) const;
  // Adds d(loss)/d(embeddings) for an upstream gradient on encode(tags).
  void backprop(std::span<const std::string> tags, const Eigen::VectorXd& d_encoding, Eigen::MatrixXd& grad) const;

  const Vocabulary& vocab() const { return vocab_; }
  Eigen::MatrixXd& embeddings() { return embed_; }
  const Eigen::MatrixXd& embeddings() const { return embed_; }
  int dim() const { return static_cast<int>(embed_.rows()); }

 private:
  Vocabulary vocab_;
  Eigen::MatrixXd embed_;  // dim x vocab
};

// -log P(caption | tag set) under a TinyLM whose context is the mean tag
// embedding; averaged over the record's captions.
class Tag2CapScorer : public UtilityScorer {
 public:
  Tag2CapScorer() = default;
  Tag2CapScorer(const Vocabulary& caption_vocab, const Vocabulary& tag_vocab, int tag_dim, int embed, int hidden,
                std::uint64_t seed);

  double reconstruction_loss(const TagRecord& record, std::span<const std::string> tags) const override;
  // Loss of one caption with gradients for the language model and the tag
  // embeddings.
  double caption_loss(std::span<const std::string> tags, const Caption& caption, TinyLMParams* lm_grad,
                      Eigen::MatrixXd* tag_grad) const;

  TinyLM& model() { return model_; }
  const TinyLM& model() const { return model_; }
  TagEncoder& encoder() { return encoder_; }
  const TagEncoder& encoder() const { return encoder_; }
  const Vocabulary& caption_vocab() const { return caption_vocab_; }

 private:
  Vocabulary caption_vocab_;
  TagEncoder encoder_;
  TinyLM model_;
};

// 1 - cos(F enc(T), context).
class Tag2FeatScorer : public UtilityScorer {
 public:
  Tag2FeatScorer() = default;
  Tag2FeatScorer(const Vocabulary& tag_vocab, int tag_dim, int context_dim, std::uint64_t seed);

  double reconstruction_loss(const TagRecord& record, std::span<const std::string> tags) const override {
    return loss(tags, record.context, nullptr);
  }
  // grads aligns with refs(): [tag embeddings, projection].
  double loss(std::span<const std::string> tags, const Eigen::VectorXd& context, GradList* grads) const;

  ParamList refs() { return {{"tag_embed", &encoder_.embeddings()}, {"projection", &projection_}}; }
  TagEncoder& encoder() { return encoder_; }
  const TagEncoder& encoder() const { return encoder_; }
  Eigen::MatrixXd& projection() { return projection_; }
  const Eigen::MatrixXd& projection() const { return projection_; }

 private:
  TagEncoder encoder_;
  Eigen::MatrixXd projection_;  // context x tag_dim
};

struct RankedTags {
  std::vector<std::string> tags;
  std::vector<double> losses;  // per-step loss (negated score for baselines)
};

// t_k = argmin over remaining j of L({t_j} u selected); ties lexicographic.
RankedTags rank_tags_greedy(const TagRecord& record, std::span<const std::string> tags, const UtilityScorer& scorer);

// Draws a size uniformly from 0..|tags| and then that many distinct tags.
std::vector<std::string> sample_tag_subset(std::span<const std::string> tags, Rng& rng);

// The sampler can be replaced, e.g. by one returning the full set.
using SubsetSampler = std::function<std::vector<std::string>(std::span<const std::string>, Rng&)>;

TrainingLog train_tag2cap(Tag2CapScorer& scorer, std::span<const TagRecord> records, const TrainConfig& config,
                          const SubsetSampler& sampler = sample_tag_subset);
TrainingLog train_tag2feat(Tag2FeatScorer& scorer, std::span<const TagRecord> records, const TrainConfig& config,
                           const SubsetSampler& sampler = sample_tag_subset);

// Training-caption statistics for the frequency baselines.
class TagStatistics {
 public:
  TagStatistics() = default;
  TagStatistics(std::span<const TagRecord> training, const SynonymTable& synonyms = {});

  double frequency(const std::string& tag) const;          // total occurrences
  double document_frequency(const std::string& tag) const;  // captions containing the tag
  double captions() const { return captions_; }
  // log(N / df); tags never seen get df = 1.
  double idf(const std::string& tag) const;

 private:
  std::map<std::string, double> frequency_;
  std::map<std::string, double> df_;
  double captions_ = 0.0;
  SynonymTable synonyms_;
};

// Number of the record's captions mentioning the tag.
double caption_tf(const TagRecord& record, const std::string& tag, const SynonymTable& synonyms = {});

RankedTags tf_rank(const TagRecord& record, std::span<const std::string> tags, const SynonymTable& synonyms = {});
RankedTags tfidf_rank(const TagRecord& record, std::span<const std::string> tags, const TagStatistics& stats,
                      const SynonymTable& synonyms = {});
// Order of first appearance in the record's single caption.
RankedTags tagorder_rank(const TagRecord& record, std::span<const std::string> tags,
                         const SynonymTable& synonyms = {});
RankedTags freq_rank(const TagRecord& record, std::span<const std::string> tags, const TagStatistics& stats);

// Scores each tag independently (higher is better) and sorts, ties
// lexicographic. Equivalent to greedy ranking under -sum of scores.
RankedTags rank_by_score(std::span<const std::string> tags, const std::function<double(const std::string&)>& score);

struct WeightedScorer {
  const UtilityScorer* scorer;
  double weight;
};

// L(T) = sum_i w_i L_i(T).
class CombinedScorer : public UtilityScorer {
 public:
  explicit CombinedScorer(std::vector<WeightedScorer> parts);
  double reconstruction_loss(const TagRecord& record, std::span<const std::string> tags) const override;

 private:
  std::vector<WeightedScorer> parts_;
};

CombinedScorer combine_rankers(std::vector<WeightedScorer> parts);

// |top-k(pred) n top-min(k, m)(ref)| / min(k, m), on canonical forms.
double set_recall_at_k(std::span<const std::string> predicted, std::span<const std::string> reference, int k,
                       const SynonymTable& synonyms = {});

struct WeightedSequence {
  std::vector<std::string> tags;  // t1, t2, t3
  double weight = 0.0;
};

// Every (t1, t2, t3) with non-zero counts, weighted by M1 * M2 * M3 and
// normalized to sum 1. Throws DataError when there is none.
std::vector<WeightedSequence> annotation_sequences(const TagAnnotation& annotation);
double weighted_set_recall(std::span<const std::string> predicted, const TagAnnotation& annotation, int k,
                           const SynonymTable& synonyms = {});

using TagRanker = std::function<RankedTags(const TagRecord&)>;

struct PseudoTagCorpus {
  std::vector<CorpusRecord> records;  // one caption per record: the ranked tags
  std::size_t skipped = 0;            // records without candidate tags
};

PseudoTagCorpus build_pseudo_tag_corpus(std::span<const TagRecord> records, const TagRanker& ranker);

}  // namespace capgen
