#pragma once

#include "capgen/corpus.hpp"
#include "capgen/params.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace capgen {

// l = [x_tl/W, y_tl/H, x_br/W, y_br/H, w*h/(W*H)].
Eigen::VectorXd location_feature(const Box& box, double width, double height);

// Image-caption similarity s(I, c) = cos(W_I phi(I), W_c psi(c)) with
// psi(c) the mean of the caption's token embeddings.
class RetrievalScorer {
 public:
  RetrievalScorer() = default;
  RetrievalScorer(int vocab_size, int embed_dim, int context_dim, int joint_dim, std::uint64_t seed);

  Eigen::VectorXd image_embedding(const Eigen::VectorXd& context) const;
  Eigen::VectorXd text_features(std::span<const TokenId> caption) const;  // psi(c)
  Eigen::VectorXd text_embedding(std::span<const TokenId> caption) const;
  double similarity(const Eigen::VectorXd& context, std::span<const TokenId> caption) const;

  ParamList refs() { return {{"text_embed", &text_embed_}, {"text_proj", &text_proj_}, {"image_proj", &image_proj_}}; }
  int vocab_size() const { return static_cast<int>(text_embed_.cols()); }
  int context_dim() const { return static_cast<int>(image_proj_.cols()); }
  int joint_dim() const { return static_cast<int>(image_proj_.rows()); }
  int embed_dim() const { return static_cast<int>(text_embed_.rows()); }
  std::uint64_t seed() const { return seed_; }

  // Add d(loss)/d(params) given the upstream gradient on an embedding.
  void backprop_image(const Eigen::VectorXd& context, const Eigen::VectorXd& d_image, GradList& grads) const;
  void backprop_text(std::span<const TokenId> caption, const Eigen::VectorXd& d_text, GradList& grads) const;

 private:
  Eigen::MatrixXd text_embed_;  // embed x vocab
  Eigen::MatrixXd text_proj_;   // joint x embed
  Eigen::MatrixXd image_proj_;  // joint x context
  std::uint64_t seed_ = 0;
};

// Mean over pairs of the two hardest in-batch hinge terms
//   max_c' [margin + s(I, c') - s(I, c)]_+ + max_I' [margin + s(I', c) - s(I, c)]_+.
// Caption i belongs to context i. A batch of one has no negatives and costs 0.
double contrastive_loss(const RetrievalScorer& scorer, std::span<const Eigen::VectorXd> contexts,
                        std::span<const std::vector<TokenId>> captions, double margin = 0.2,
                        GradList* grads = nullptr);

// Contrastive loss of one (context, caption) pair against explicit negatives.
double pair_contrastive_loss(const RetrievalScorer& scorer, const Eigen::VectorXd& context,
                             std::span<const TokenId> caption, std::span<const Eigen::VectorXd> negative_contexts,
                             std::span<const std::vector<TokenId>> negative_captions, double margin = 0.2);

struct DiscriminationItem {
  Eigen::VectorXd target;
  Eigen::VectorXd distractor;
  std::vector<TokenId> caption;
};

// Fraction of items with s(target, caption) > s(distractor, caption).
double discrimination_accuracy(std::span<const DiscriminationItem> items, const RetrievalScorer& scorer);

struct RecallAtK {
  double caption_retrieval = 0.0;  // image -> caption
  double image_retrieval = 0.0;    // caption -> image
};

// Caption i is the only ground truth for context i; score ties rank by id.
RecallAtK retrieval_recall_at_k(std::span<const Eigen::VectorXd> contexts,
                                std::span<const std::vector<TokenId>> captions, std::span<const std::string> ids,
                                const RetrievalScorer& scorer, int k);

enum class ComprehensionLoss { kLogistic, kSoftmax };

std::string to_string(ComprehensionLoss kind);
ComprehensionLoss comprehension_loss_from_string(const std::string& name);

// Region v = W_v [o, g, l] + b_v, query h_q = mean_t E q_t, similarity v^T h_q.
// Queries are either token ids or a column-stochastic soft matrix
// (vocab x T) whose column t is a distribution over word t.
class ComprehensionModel {
 public:
  ComprehensionModel() = default;
  ComprehensionModel(int vocab_size, int region_dim, int embed_dim, std::uint64_t seed);

  Eigen::VectorXd query_vector(std::span<const TokenId> tokens) const;
  Eigen::VectorXd query_vector(const Eigen::MatrixXd& soft_query) const;
  // One similarity per column of region_inputs.
  Eigen::VectorXd similarities(const Eigen::MatrixXd& region_inputs, const Eigen::VectorXd& query) const;

  // Loss with optional gradients w.r.t. the model and the soft query.
  double loss(const Eigen::MatrixXd& region_inputs, int target, const Eigen::MatrixXd& soft_query,
              ComprehensionLoss kind, GradList* grads, Eigen::MatrixXd* d_query) const;
  double loss(const Eigen::MatrixXd& region_inputs, int target, std::span<const TokenId> tokens,
              ComprehensionLoss kind, GradList* grads) const;

  // log P_C(target | regions, query) under the softmax form.
  double target_log_prob(const Eigen::MatrixXd& region_inputs, int target, std::span<const TokenId> tokens) const;
  // The target strictly beats every other region.
  bool resolves(const Eigen::MatrixXd& region_inputs, int target, std::span<const TokenId> tokens) const;

  ParamList refs() { return {{"region_proj", &region_proj_}, {"region_bias", &region_bias_}, {"word_embed", &word_embed_}}; }
  int vocab_size() const { return static_cast<int>(word_embed_.cols()); }
  int region_dim() const { return static_cast<int>(region_proj_.cols()); }
  int embed_dim() const { return static_cast<int>(word_embed_.rows()); }
  std::uint64_t seed() const { return seed_; }

 private:
  double loss_from_similarities(const Eigen::VectorXd& sims, int target, ComprehensionLoss kind,
                                Eigen::VectorXd* d_sims) const;

  Eigen::MatrixXd region_proj_;  // embed x region_dim
  Eigen::MatrixXd region_bias_;  // embed x 1
  Eigen::MatrixXd word_embed_;   // embed x vocab
  std::uint64_t seed_ = 0;
};

// Columns [o_i; g; l_i] for every region of an image.
Eigen::MatrixXd region_inputs(const RegionRecord& image);
// Generator context for region i: the same [o_i; g; l_i] vector.
Eigen::VectorXd region_context(const RegionRecord& image, std::size_t region);

double comprehension_logistic_loss(const ComprehensionModel& model, const Eigen::MatrixXd& region_inputs, int target,
                                   std::span<const TokenId> query);
double comprehension_softmax_loss(const ComprehensionModel& model, const Eigen::MatrixXd& region_inputs, int target,
                                  std::span<const TokenId> query);

// Body tokens of a caption: drops a trailing eos and anything after it.
std::vector<TokenId> body_tokens(std::span<const TokenId> tokens);

// Columns sum to 1 within 1e-9 and entries are non-negative.
bool is_soft_query(const Eigen::MatrixXd& soft_query);

}  // namespace capgen
