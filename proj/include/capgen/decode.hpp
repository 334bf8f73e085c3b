#pragma once

#include "capgen/models.hpp"
#include "capgen/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace capgen {

enum class DecodeMethod { kGreedy, kSample, kTopK, kTopP, kBeam, kDiverseBeam, kFixLen };

std::string to_string(DecodeMethod method);
DecodeMethod decode_method_from_string(const std::string& name);

struct DecodeConfig {
  DecodeMethod method = DecodeMethod::kGreedy;
  double temperature = 1.0;
  int top_k = 0;        // 0: no top-k filter
  double top_p = 1.0;   // 1: no nucleus filter
  int beam_size = 1;
  int groups = 1;
  double diversity = 0.0;
  int target_length = 0;
  int samples = 1;
  std::uint64_t seed = 0;
  int max_length = kMaxCaptionLength;

  static DecodeConfig greedy();
  static DecodeConfig sample(int n, double temperature = 1.0);
  static DecodeConfig top_k_sampling(int n, int k, double temperature = 1.0);
  static DecodeConfig top_p_sampling(int n, double p, double temperature = 1.0);
  static DecodeConfig beam(int beam_size, double temperature = 1.0);
  static DecodeConfig diverse_beam(int beam_size, int groups, double diversity, double temperature = 1.0);
  static DecodeConfig fixlen(int target_length, int beam_size, double temperature = 1.0);

  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // ends with eos
  double log_prob = 0.0;        // under the generating model at temperature 1
  double score = 0.0;           // search objective (tempered, penalized)
  std::optional<double> rerank;
  int group = 0;

  int body_length() const { return static_cast<int>(tokens.size()) - 1; }
};

// softmax(logits / temperature)
Eigen::VectorXd apply_temperature(const Eigen::VectorXd& logits, double temperature);
// Both filters order tokens by probability, ties toward the lower id, and
// renormalize the kept set. Keeping the whole support returns the input.
Eigen::VectorXd filter_top_k(const Eigen::VectorXd& dist, int k);
Eigen::VectorXd filter_top_p(const Eigen::VectorXd& dist, double p);
// Size of the set filter_top_p keeps.
int top_p_kept_count(const Eigen::VectorXd& dist, double p);

std::vector<Hypothesis> decode(const ConditionalModel& model, const Eigen::VectorXd& context,
                               const DecodeConfig& config, Rng& rng);

Hypothesis greedy_decode(const ConditionalModel& model, const Eigen::VectorXd& context,
                         int max_length = kMaxCaptionLength);

// Stepwise log-probabilities are tempered before scoring and pruning.
std::vector<Hypothesis> beam_search(const ConditionalModel& model, const Eigen::VectorXd& context,
                                    int beam_size, double temperature = 1.0,
                                    int max_length = kMaxCaptionLength);

// Groups of beam_size / groups beams; group g's candidates lose
// diversity * (times the token was chosen at this step by groups < g).
std::vector<Hypothesis> diverse_beam_search(const ConditionalModel& model, const Eigen::VectorXd& context,
                                            int groups, double diversity, int beam_size,
                                            double temperature = 1.0, int max_length = kMaxCaptionLength);

// Beam search whose body length is exactly target_length: end-of-sequence
// is unavailable before the target and forced right after it, scored with
// the model's end-of-sequence log-probability.
Hypothesis fixlen_decode(const ConditionalModel& model, const Eigen::VectorXd& context, int target_length,
                         int beam_size, double temperature = 1.0);

// log P_C(target | candidates, hypothesis) for one sampled hypothesis.
using RerankScorer = std::function<double(const Hypothesis&)>;

// Score = log_prob / T + gamma * scorer(h), T = number of scored tokens
// (body plus end-of-sequence). Ties go to the higher log_prob.
double rerank_score(double log_prob, int scored_tokens, double gamma, double comprehension_log_prob);
Hypothesis sample_and_rerank(const ConditionalModel& generator, const Eigen::VectorXd& context, int n,
                             const RerankScorer& scorer, double gamma, Rng& rng,
                             int max_length = kMaxCaptionLength);

}  // namespace capgen
