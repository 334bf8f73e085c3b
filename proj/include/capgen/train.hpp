#pragma once

#include "capgen/corpus.hpp"
#include "capgen/matchers.hpp"
#include "capgen/metrics.hpp"
#include "capgen/models.hpp"
#include "capgen/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace capgen {

// One teacher-forced target: targets end with eos. In marker mode the
// first target is the length marker.
struct SequenceExample {
  std::string id;
  Eigen::VectorXd context;
  std::vector<TokenId> targets;
  int length = 0;  // body length, used by length-aware models
};

std::vector<SequenceExample> caption_examples(std::span<const CorpusRecord> corpus, const Vocabulary& vocab,
                                              LengthMode mode = LengthMode::kNone);

// A referring expression for one region, with every region of its image.
struct RefExpExample {
  std::string id;
  Eigen::VectorXd context;  // generator context for the target region
  Eigen::MatrixXd regions;  // comprehension inputs, one column per region
  int target = 0;
  std::vector<TokenId> targets;
};

std::vector<RefExpExample> refexp_examples(std::span<const RegionRecord> images, const Vocabulary& vocab);

enum class RewardKind { kCider, kCiderMinusDisc, kLoglikMinusDisc };

std::string to_string(RewardKind kind);
RewardKind reward_kind_from_string(const std::string& name);

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 10;
  int batch_size = 0;  // 0: full batch
  double label_smoothing = 0.0;

  // Scheduled sampling: q rises by ss_rate per epoch up to ss_cap.
  double ss_rate = 0.0;
  double ss_cap = 0.0;

  // Modified scheduled sampling: eps_i = max(mss_floor, mss_offset - mss_slope * i).
  double mss_floor = 0.0;
  double mss_offset = 1.0;
  double mss_slope = 0.0;

  // Stochastic mixed sampling.
  double smixec_p = 0.5;
  int smixec_period = 1;
  int smixec_max_length = kMaxCaptionLength;

  double lambda = 1.0;
  RewardKind reward = RewardKind::kCider;
  ComprehensionLoss comprehension_loss = ComprehensionLoss::kSoftmax;
  int max_length = kMaxCaptionLength;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct LogRow {
  int iteration = 0;
  double loss = 0.0;      // loss, or mean sampled reward for policy gradient
  double baseline = 0.0;  // mean greedy reward; 0 when not applicable
  double ms = 0.0;
};

struct TrainingLog {
  std::vector<LogRow> rows;

  double first_loss() const { return rows.empty() ? 0.0 : rows.front().loss; }
  double last_loss() const { return rows.empty() ? 0.0 : rows.back().loss; }
  void write_csv(std::ostream& out) const;
};

// Summed (label-smoothed) cross-entropy of one example. The smoothed target
// puts 1 - eps on the gold token and spreads eps over the other unmasked
// tokens. `inputs` overrides teacher forcing when non-empty.
double sequence_loss(const TinyLM& model, const SequenceExample& example, double label_smoothing,
                     TinyLMParams* grad, std::span<const TokenId> inputs = {});

// Mean per-example loss over a set, no gradients.
double mean_sequence_loss(const TinyLM& model, std::span<const SequenceExample> examples,
                          double label_smoothing = 0.0);

TrainingLog mle_train(TinyLM& model, std::span<const SequenceExample> examples, const TrainConfig& config);
// Per step after the first, the fed token is the model's own sample with
// probability q_e = min(ss_cap, ss_rate * e) at epoch e.
TrainingLog scheduled_sampling_mle(TinyLM& model, std::span<const SequenceExample> examples,
                                   const TrainConfig& config);

struct CompoundLoss {
  double total = 0.0;
  double generation = 0.0;
  double comprehension = 0.0;
};

// L_G + lambda * L_C, with L_C evaluated on the generator's posteriors under
// the gold prefix. Gradients go to the generator only.
CompoundLoss compound_loss_step(const TinyLM& generator, const ComprehensionModel& comprehension,
                                const RefExpExample& example, double lambda, ComprehensionLoss kind,
                                TinyLMParams* grad);

// Comprehension loss on the soft query built from the first `columns`
// posteriors of `trace`; adds weight * d(L_C)/d(logits) into dlogits.
double soft_comprehension_loss(const ComprehensionModel& comprehension, const RefExpExample& example,
                               const TinyLMTrace& trace, std::size_t columns, ComprehensionLoss kind, double weight,
                               std::vector<Eigen::VectorXd>* dlogits);

// Per-example SGD on the compound loss with config.lambda.
TrainingLog compound_train(TinyLM& generator, const ComprehensionModel& comprehension,
                           std::span<const RefExpExample> examples, const TrainConfig& config);

double mss_epsilon(const TrainConfig& config, int iteration);
int smixec_base_steps(const TrainConfig& config, int iteration);

TrainingLog mss_train(TinyLM& generator, const ComprehensionModel& comprehension,
                      std::span<const RefExpExample> examples, const TrainConfig& config);
TrainingLog smixec_train(TinyLM& generator, const ComprehensionModel& comprehension,
                         std::span<const RefExpExample> examples, const TrainConfig& config);

// Reward of a token sequence (ending with eos) for record `index`.
using RewardFn = std::function<double(std::span<const TokenId> tokens, std::size_t index)>;

// CIDEr-D against the record's references, optionally minus lambda times
// the contrastive loss against the other records of its batch, where
// batches are aligned blocks of `batch` consecutive records.
// kLoglikMinusDisc yields only the -lambda * L_CON part; scst_train adds
// the likelihood gradient itself.
class CaptionReward {
 public:
  CaptionReward(std::span<const CorpusRecord> corpus, const Vocabulary& vocab, RewardKind kind, double lambda,
                const RetrievalScorer* scorer = nullptr, int batch = 4, double margin = 0.2);

  double operator()(std::span<const TokenId> tokens, std::size_t index) const;
  double cider(std::span<const TokenId> tokens, std::size_t index) const;
  double contrastive(std::span<const TokenId> tokens, std::size_t index) const;
  RewardFn fn() const;
  const CorpusStats& stats() const { return stats_; }

 private:
  RewardKind kind_;
  double lambda_;
  const Vocabulary* vocab_;
  const RetrievalScorer* scorer_;
  std::size_t batch_;
  double margin_;
  std::vector<std::vector<Caption>> references_;
  std::vector<Eigen::VectorXd> contexts_;
  std::vector<std::vector<TokenId>> gold_;
  CorpusStats stats_;
};

// A free-running sample whose log-probability excludes a forced
// end-of-sequence at max_length, so sample probabilities sum to 1.
struct PolicySample {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  TinyLMTrace trace;
};

PolicySample sample_policy(const TinyLM& model, const Eigen::VectorXd& context, int max_length, Rng& rng);
// Adds scale * d log P(sample) / d params into grad.
void accumulate_log_prob_grad(const TinyLM& model, const PolicySample& sample, int max_length, double scale,
                              TinyLMParams& grad);

// One-sample estimate of d E[R] / d params (flattened): (R(s) - b) grad log P(s)
// with b the greedy reward when use_baseline, else 0.
Eigen::VectorXd scst_gradient_estimate(const TinyLM& model, const Eigen::VectorXd& context, std::size_t index,
                                       const RewardFn& reward, int max_length, bool use_baseline, Rng& rng);

// d E[R] / d params by enumerating every terminating sequence. With
// subtract_mean the weights are R - E[R], otherwise raw R; both are exact.
Eigen::VectorXd exact_policy_gradient(const TinyLM& model, const Eigen::VectorXd& context, std::size_t index,
                                      const RewardFn& reward, int max_length, bool subtract_mean = true);

// Self-critical training: sample, greedy baseline, (R - b) grad log P.
// Throws NumericError on a non-finite reward.
TrainingLog scst_train(TinyLM& model, std::span<const CorpusRecord> corpus, const Vocabulary& vocab,
                       const RewardFn& reward, const TrainConfig& config);

TrainingLog train_retrieval_scorer(RetrievalScorer& scorer, std::span<const CorpusRecord> corpus,
                                   const Vocabulary& vocab, const TrainConfig& config, double margin = 0.2);
TrainingLog train_comprehension(ComprehensionModel& model, std::span<const RefExpExample> examples,
                                const TrainConfig& config);

// Fisher-Yates with the portable generator.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace capgen
