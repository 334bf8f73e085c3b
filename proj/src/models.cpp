#include "capgen/models.hpp"

#include "capgen/errors.hpp"
#include "capgen/numeric.hpp"
#include "capgen/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace capgen {

double sequence_log_prob(const ConditionalModel& model, const Eigen::VectorXd& context,
                         std::span<const TokenId> tokens) {
  if (tokens.empty() || tokens.back() != model.eos())
    throw std::invalid_argument("sequence_log_prob: tokens must end with end-of-sequence");
  ModelState state = model.init_state(context);
  TokenId prev = model.bos();
  double total = 0.0;
  for (TokenId w : tokens) {
    if (w < 0 || w >= model.vocab_size())
      throw std::out_of_range("sequence_log_prob: token id " + std::to_string(w) + " out of range");
    StepResult r = model.step(state, prev);
    total += log_softmax(r.logits)[w];
    state = std::move(r.state);
    prev = w;
  }
  return total;
}

std::string to_string(LengthMode mode) {
  switch (mode) {
    case LengthMode::kNone: return "none";
    case LengthMode::kLenEmb: return "len-emb";
    case LengthMode::kMarker: return "marker";
  }
  return "none";
}

LengthMode length_mode_from_string(const std::string& name) {
  if (name == "none") return LengthMode::kNone;
  if (name == "len-emb") return LengthMode::kLenEmb;
  if (name == "marker") return LengthMode::kMarker;
  throw ConfigError("mode: unknown length mode '" + name + "'");
}

void init_uniform(const ParamList& params, std::uint64_t seed, double range) {
  Rng rng(seed);
  for (const auto& p : params)
    for (Eigen::Index i = 0; i < p.value->size(); ++i) p.value->data()[i] = rng.uniform(-range, range);
}

TinyLMParams TinyLMParams::zeros(const TinyLMDims& d) {
  TinyLMParams p;
  p.embed = Eigen::MatrixXd::Zero(d.embed, d.vocab);
  p.ctx_proj = Eigen::MatrixXd::Zero(d.embed, d.context);
  p.recurrent = Eigen::MatrixXd::Zero(d.hidden, d.hidden);
  p.input = Eigen::MatrixXd::Zero(d.hidden, d.embed);
  p.hidden_bias = Eigen::MatrixXd::Zero(d.hidden, 1);
  p.output = Eigen::MatrixXd::Zero(d.vocab, d.hidden);
  p.output_bias = Eigen::MatrixXd::Zero(d.vocab, 1);
  if (d.mode == LengthMode::kLenEmb) p.len_embed = Eigen::MatrixXd::Zero(d.embed, d.max_length + 1);
  return p;
}

ParamList TinyLMParams::refs() {
  ParamList list = {{"embed", &embed},   {"ctx_proj", &ctx_proj}, {"recurrent", &recurrent},
                    {"input", &input},   {"hidden_bias", &hidden_bias},
                    {"output", &output}, {"output_bias", &output_bias}};
  if (len_embed.size() > 0) list.push_back({"len_embed", &len_embed});
  return list;
}

GradList TinyLMParams::to_list() const {
  GradList list = {embed, ctx_proj, recurrent, input, hidden_bias, output, output_bias};
  if (len_embed.size() > 0) list.push_back(len_embed);
  return list;
}

TinyLM::TinyLM(const TinyLMDims& dims, std::uint64_t seed) : dims_(dims), seed_(seed) {
  if (dims.vocab < Vocabulary::kReserved || dims.embed < 1 || dims.hidden < 1 || dims.context < 0)
    throw std::invalid_argument("TinyLM: invalid dimensions");
  if (dims.mode == LengthMode::kMarker && dims.vocab < Vocabulary::kReserved + dims.max_length)
    throw std::invalid_argument("TinyLM: marker mode needs a length-marker block in the vocabulary");
  params_ = TinyLMParams::zeros(dims);
  init_uniform(params_.refs(), seed);
}

Eigen::VectorXd TinyLM::input_vector(TokenId prev, int t, int length) const {
  if (prev < 0 || prev >= dims_.vocab)
    throw std::out_of_range("TinyLM: token id " + std::to_string(prev) + " out of range");
  Eigen::VectorXd x = params_.embed.col(prev);
  if (dims_.mode == LengthMode::kLenEmb) {
    const int index = std::min(lenemb_remaining(length, t), dims_.max_length);
    x += params_.len_embed.col(index);
  }
  return x;
}

void TinyLM::mask(Eigen::VectorXd& logits, int t) const {
  if (dims_.mode != LengthMode::kMarker || t != 1) return;
  for (int i = 0; i < dims_.vocab; ++i)
    if (i < Vocabulary::kReserved || i >= Vocabulary::kReserved + dims_.max_length) logits[i] = kNegInf;
}

ModelState TinyLM::init_state(const Eigen::VectorXd& context, int length) const {
  if (context.size() != dims_.context)
    throw std::invalid_argument("TinyLM: context dimension " + std::to_string(context.size()) +
                                ", expected " + std::to_string(dims_.context));
  ModelState s;
  s.hidden = (params_.input * (params_.ctx_proj * context) + params_.hidden_bias).array().tanh().matrix();
  s.step = 0;
  s.length = length;
  return s;
}

StepResult TinyLM::step(const ModelState& state, TokenId prev) const {
  const int t = state.step + 1;
  const Eigen::VectorXd x = input_vector(prev, t, state.length);
  StepResult r;
  r.state.hidden =
      (params_.recurrent * state.hidden + params_.input * x + params_.hidden_bias).array().tanh().matrix();
  r.state.step = t;
  r.state.length = state.length;
  r.logits = params_.output * r.state.hidden + params_.output_bias;
  mask(r.logits, t);
  return r;
}

TinyLMTrace TinyLM::begin(const Eigen::VectorXd& context, int length) const {
  TinyLMTrace trace;
  trace.context = context;
  trace.length = length;
  trace.hidden.push_back(init_state(context, length).hidden);
  return trace;
}

const Eigen::VectorXd& TinyLM::advance(TinyLMTrace& trace, TokenId prev) const {
  ModelState s{trace.hidden.back(), static_cast<int>(trace.inputs.size()), trace.length};
  StepResult r = step(s, prev);
  trace.inputs.push_back(prev);
  trace.hidden.push_back(std::move(r.state.hidden));
  trace.logits.push_back(std::move(r.logits));
  return trace.logits.back();
}

TinyLMTrace TinyLM::forward(const Eigen::VectorXd& context, std::span<const TokenId> inputs, int length) const {
  TinyLMTrace trace = begin(context, length);
  for (TokenId u : inputs) advance(trace, u);
  return trace;
}

std::vector<TokenId> TinyLM::teacher_inputs(std::span<const TokenId> targets) const {
  std::vector<TokenId> inputs;
  inputs.reserve(targets.size());
  inputs.push_back(bos());
  for (std::size_t i = 0; i + 1 < targets.size(); ++i) inputs.push_back(targets[i]);
  return inputs;
}

Eigen::VectorXd TinyLM::backward(const TinyLMTrace& trace, std::span<const Eigen::VectorXd> dlogits,
                                 TinyLMParams& grad) const {
  const std::size_t steps = trace.inputs.size();
  if (dlogits.size() != steps) throw std::invalid_argument("TinyLM::backward: one logit gradient per step");
  Eigen::VectorXd dh = Eigen::VectorXd::Zero(dims_.hidden);
  for (std::size_t j = steps; j-- > 0;) {
    const Eigen::VectorXd& h = trace.hidden[j + 1];
    const Eigen::VectorXd& h_prev = trace.hidden[j];
    const Eigen::VectorXd& dl = dlogits[j];
    grad.output.noalias() += dl * h.transpose();
    grad.output_bias += dl;
    dh.noalias() += params_.output.transpose() * dl;

    const Eigen::VectorXd dz = (dh.array() * (1.0 - h.array().square())).matrix();
    const int t = static_cast<int>(j) + 1;
    const TokenId u = trace.inputs[j];
    const Eigen::VectorXd x = input_vector(u, t, trace.length);
    grad.recurrent.noalias() += dz * h_prev.transpose();
    grad.input.noalias() += dz * x.transpose();
    grad.hidden_bias += dz;
    const Eigen::VectorXd dx = params_.input.transpose() * dz;
    grad.embed.col(u) += dx;
    if (dims_.mode == LengthMode::kLenEmb)
      grad.len_embed.col(std::min(lenemb_remaining(trace.length, t), dims_.max_length)) += dx;
    dh = params_.recurrent.transpose() * dz;
  }
  // Context step: h_0 = 0 so the recurrent term vanishes.
  const Eigen::VectorXd& h1 = trace.hidden[0];
  const Eigen::VectorXd dz = (dh.array() * (1.0 - h1.array().square())).matrix();
  const Eigen::VectorXd x0 = params_.ctx_proj * trace.context;
  grad.input.noalias() += dz * x0.transpose();
  grad.hidden_bias += dz;
  const Eigen::VectorXd dx0 = params_.input.transpose() * dz;
  grad.ctx_proj.noalias() += dx0 * trace.context.transpose();
  return params_.ctx_proj.transpose() * dx0;
}

LengthConditioned::LengthConditioned(const TinyLM& base, int desired_length)
    : base_(&base), length_(desired_length) {
  if (desired_length < 1 || desired_length > base.dims().max_length)
    throw std::out_of_range("LengthConditioned: desired length outside 1..max_length");
}

ModelState LengthConditioned::init_state(const Eigen::VectorXd& context) const {
  return base_->init_state(context, length_);
}

MarkerConditioned::MarkerConditioned(const TinyLM& base, int desired_length) : base_(&base) {
  if (base.dims().mode != LengthMode::kMarker)
    throw std::invalid_argument("marker_wrap: model is not in marker mode");
  if (desired_length < 1 || desired_length > base.dims().max_length)
    throw std::out_of_range("marker_wrap: length " + std::to_string(desired_length) + " outside the marker block");
  marker_ = Vocabulary::kReserved + desired_length - 1;
}

ModelState MarkerConditioned::init_state(const Eigen::VectorXd& context) const {
  return base_->init_state(context);
}

StepResult MarkerConditioned::step(const ModelState& state, TokenId prev) const {
  if (state.step == 0) {
    StepResult first = base_->step(state, prev);
    return base_->step(first.state, marker_);
  }
  return base_->step(state, prev);
}

MarkerConditioned marker_wrap(const TinyLM& model, int desired_length) {
  return MarkerConditioned(model, desired_length);
}

LengthPredictor::LengthPredictor(int context_dim, int max_length, std::uint64_t seed)
    : weight_(Eigen::MatrixXd::Zero(max_length, context_dim)), bias_(Eigen::MatrixXd::Zero(max_length, 1)) {
  init_uniform(refs(), seed);
}

LengthPredictor::Prediction LengthPredictor::predict(const Eigen::VectorXd& context) const {
  if (context.size() != weight_.cols())
    throw std::invalid_argument("predict_length: context dimension " + std::to_string(context.size()) +
                                ", expected " + std::to_string(weight_.cols()));
  Prediction p;
  p.distribution = softmax(weight_ * context + bias_);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < p.distribution.size(); ++i)
    if (p.distribution[i] > p.distribution[best]) best = i;
  p.length = static_cast<int>(best) + 1;
  return p;
}

double LengthPredictor::loss(const Eigen::VectorXd& context, int length, GradList* grads) const {
  if (length < 1 || length > max_length()) throw std::out_of_range("LengthPredictor: length out of range");
  const Eigen::VectorXd logits = weight_ * context + bias_;
  const Eigen::VectorXd logp = log_softmax(logits);
  if (grads) {
    Eigen::VectorXd d = logp.array().exp().matrix();
    d[length - 1] -= 1.0;
    (*grads)[0].noalias() += d * context.transpose();
    (*grads)[1] += d;
  }
  return -logp[length - 1];
}

double LengthPredictor::train(std::span<const CorpusRecord> corpus, int epochs, double learning_rate) {
  double last = 0.0;
  for (int e = 0; e < epochs; ++e) {
    GradList grads = zeros_like(refs());
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : corpus)
      for (const auto& c : r.captions) {
        const int len = std::clamp(static_cast<int>(c.size()), 1, max_length());
        total += loss(r.context, len, &grads);
        ++n;
      }
    if (n == 0) return 0.0;
    scale(grads, 1.0 / static_cast<double>(n));
    sgd_step(refs(), grads, learning_rate);
    last = total / static_cast<double>(n);
    if (!std::isfinite(last)) throw NumericError("LengthPredictor::train: non-finite loss");
  }
  return last;
}

LengthPredictor::Prediction predict_length(const LengthPredictor& predictor, const Eigen::VectorXd& context) {
  return predictor.predict(context);
}

}  // namespace capgen
