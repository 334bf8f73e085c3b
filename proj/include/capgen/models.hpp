#pragma once

#include "capgen/corpus.hpp"
#include "capgen/params.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace capgen {

// Recurrent state threaded through ConditionalModel::step. `step` counts
// consumed tokens; `length` is the desired length for length-aware models.
struct ModelState {
  Eigen::VectorXd hidden;
  int step = 0;
  int length = 0;
};

struct StepResult {
  Eigen::VectorXd logits;
  ModelState state;
};

// P(w_t | context, w_<t) as a left-to-right token process. Decoding starts
// from init_state(context) and feeds bos() as the first previous token.
// Masked tokens carry a logit of -inf.
class ConditionalModel {
 public:
  virtual ~ConditionalModel() = default;
  virtual ModelState init_state(const Eigen::VectorXd& context) const = 0;
  virtual StepResult step(const ModelState& state, TokenId prev) const = 0;
  virtual int vocab_size() const = 0;
  virtual TokenId bos() const { return Vocabulary::kBos; }
  virtual TokenId eos() const { return Vocabulary::kEos; }
};

// Sum over tokens of log softmax(logits_t)[w_t]; `tokens` must end with eos.
double sequence_log_prob(const ConditionalModel& model, const Eigen::VectorXd& context,
                         std::span<const TokenId> tokens);

enum class LengthMode { kNone, kLenEmb, kMarker };

std::string to_string(LengthMode mode);
LengthMode length_mode_from_string(const std::string& name);

// Index of the remaining-length embedding at step t >= 1.
inline int lenemb_remaining(int desired_length, int t) {
  return desired_length - t > 0 ? desired_length - t : 0;
}

struct TinyLMDims {
  int vocab = 0;
  int embed = 32;
  int hidden = 64;
  int context = 0;
  int max_length = kMaxCaptionLength;
  LengthMode mode = LengthMode::kNone;
};

struct TinyLMParams {
  Eigen::MatrixXd embed;       // embed x vocab, one column per token
  Eigen::MatrixXd ctx_proj;    // embed x context
  Eigen::MatrixXd recurrent;   // hidden x hidden
  Eigen::MatrixXd input;       // hidden x embed
  Eigen::MatrixXd hidden_bias; // hidden x 1
  Eigen::MatrixXd output;      // vocab x hidden
  Eigen::MatrixXd output_bias; // vocab x 1
  Eigen::MatrixXd len_embed;   // embed x (max_length + 1); empty unless len-emb

  static TinyLMParams zeros(const TinyLMDims& dims);
  ParamList refs();
  GradList to_list() const;
};

// Forward record of one teacher-forced or free-running pass, kept for
// backpropagation through time.
struct TinyLMTrace {
  Eigen::VectorXd context;
  int length = 0;
  std::vector<TokenId> inputs;          // tokens fed after the context step
  std::vector<Eigen::VectorXd> hidden;  // hidden[0]: after context; hidden[j+1]: after inputs[j]
  std::vector<Eigen::VectorXd> logits;  // logits[j] computed from hidden[j+1]
};

// Single-layer tanh recurrent language model conditioned on a context
// vector fed as the first input.
//   x_0 = W_I context, x_t = E_w(w_{t-1}) [+ E_l(max(l - t, 0))]
//   h_t = tanh(A h_{t-1} + B x_t + c), logits_t = U h_t + b
// In marker mode the first step after bos only allows length markers,
// which occupy ids kReserved .. kReserved + max_length - 1.
class TinyLM : public ConditionalModel {
 public:
  TinyLM() = default;
  TinyLM(const TinyLMDims& dims, std::uint64_t seed);

  const TinyLMDims& dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }
  TinyLMParams& params() { return params_; }
  const TinyLMParams& params() const { return params_; }

  ModelState init_state(const Eigen::VectorXd& context) const override { return init_state(context, 0); }
  ModelState init_state(const Eigen::VectorXd& context, int length) const;
  StepResult step(const ModelState& state, TokenId prev) const override;
  int vocab_size() const override { return dims_.vocab; }

  TinyLMTrace begin(const Eigen::VectorXd& context, int length = 0) const;
  const Eigen::VectorXd& advance(TinyLMTrace& trace, TokenId prev) const;
  TinyLMTrace forward(const Eigen::VectorXd& context, std::span<const TokenId> inputs, int length = 0) const;

  // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits[j]) for
  // every traced step and returns d(loss)/d(context).
  Eigen::VectorXd backward(const TinyLMTrace& trace, std::span<const Eigen::VectorXd> dlogits,
                           TinyLMParams& grad) const;

  // Teacher-forcing inputs for a target sequence ending in eos:
  // [bos, w_1, ..., w_T] for targets [w_1, ..., w_T, eos].
  std::vector<TokenId> teacher_inputs(std::span<const TokenId> targets) const;

 private:
  Eigen::VectorXd input_vector(TokenId prev, int t, int length) const;
  void mask(Eigen::VectorXd& logits, int t) const;

  TinyLMDims dims_;
  std::uint64_t seed_ = 0;
  TinyLMParams params_;
};

// Fixes the desired length of a len-emb (or any) TinyLM.
class LengthConditioned : public ConditionalModel {
 public:
  LengthConditioned(const TinyLM& base, int desired_length);
  ModelState init_state(const Eigen::VectorXd& context) const override;
  StepResult step(const ModelState& state, TokenId prev) const override { return base_->step(state, prev); }
  int vocab_size() const override { return base_->vocab_size(); }

 private:
  const TinyLM* base_;
  int length_;
};

// Marker-mode view: the first step consumes bos and then the marker for
// the desired length, so decoding starts directly at the caption body.
class MarkerConditioned : public ConditionalModel {
 public:
  MarkerConditioned(const TinyLM& base, int desired_length);
  ModelState init_state(const Eigen::VectorXd& context) const override;
  StepResult step(const ModelState& state, TokenId prev) const override;
  int vocab_size() const override { return base_->vocab_size(); }
  TokenId marker() const { return marker_; }

 private:
  const TinyLM* base_;
  TokenId marker_;
};

MarkerConditioned marker_wrap(const TinyLM& model, int desired_length);

// Linear classifier from context to lengths 1..max_length.
class LengthPredictor {
 public:
  struct Prediction {
    Eigen::VectorXd distribution;  // index i holds P(length = i + 1)
    int length = 1;                // argmax, ties toward shorter
  };

  LengthPredictor() = default;
  LengthPredictor(int context_dim, int max_length, std::uint64_t seed);

  Prediction predict(const Eigen::VectorXd& context) const;
  // Cross-entropy for a reference length; accumulates into grads when given.
  double loss(const Eigen::VectorXd& context, int length, GradList* grads) const;
  double train(std::span<const CorpusRecord> corpus, int epochs, double learning_rate);

  int max_length() const { return static_cast<int>(bias_.rows()); }
  int context_dim() const { return static_cast<int>(weight_.cols()); }
  ParamList refs() { return {{"weight", &weight_}, {"bias", &bias_}}; }
  Eigen::MatrixXd& weight() { return weight_; }
  Eigen::MatrixXd& bias() { return bias_; }

 private:
  Eigen::MatrixXd weight_;  // max_length x context
  Eigen::MatrixXd bias_;    // max_length x 1
};

LengthPredictor::Prediction predict_length(const LengthPredictor& predictor, const Eigen::VectorXd& context);

void init_uniform(const ParamList& params, std::uint64_t seed, double range = 0.1);

}  // namespace capgen
