#include "capgen/train.hpp"

#include "capgen/decode.hpp"
#include "capgen/errors.hpp"
#include "capgen/numeric.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace capgen {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void require_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) throw NumericError("non-finite " + what);
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, int batch_size, Rng& rng) {
  const std::vector<std::size_t> order = shuffled_indices(n, rng);
  const std::size_t size = batch_size <= 0 ? std::max<std::size_t>(n, 1) : static_cast<std::size_t>(batch_size);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + size)));
  return out;
}

void apply_update(TinyLM& model, const TinyLMParams& grad, double scale, double learning_rate) {
  GradList list = grad.to_list();
  capgen::scale(list, scale);
  if (!all_finite(list)) throw NumericError("non-finite gradient");
  sgd_step(model.params().refs(), list, learning_rate);
}

// d loss / d logits for a loss on p = softmax(logits) with upstream d loss / d p.
Eigen::VectorXd softmax_backward(const Eigen::VectorXd& p, const Eigen::VectorXd& dp) {
  return (p.array() * (dp.array() - p.dot(dp))).matrix();
}

void require_plain(const TinyLM& model, const char* what) {
  if (model.dims().mode != LengthMode::kNone)
    throw ConfigError(std::string(what) + ": generator must use length mode 'none'");
}

}  // namespace

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<SequenceExample> caption_examples(std::span<const CorpusRecord> corpus, const Vocabulary& vocab,
                                              LengthMode mode) {
  std::vector<SequenceExample> out;
  for (const auto& r : corpus) {
    for (const auto& c : r.captions) {
      SequenceExample e;
      e.id = r.id;
      e.context = r.context;
      e.length = static_cast<int>(c.size());
      std::vector<TokenId> ids = vocab.encode(c);
      if (mode == LengthMode::kMarker) {
        if (e.length < 1 || e.length > vocab.marker_lengths()) continue;
        e.targets.push_back(vocab.marker_id(e.length));
      } else if (mode == LengthMode::kNone) {
        e.length = 0;
      }
      e.targets.insert(e.targets.end(), ids.begin(), ids.end());
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<RefExpExample> refexp_examples(std::span<const RegionRecord> images, const Vocabulary& vocab) {
  std::vector<RefExpExample> out;
  for (const auto& image : images) {
    const Eigen::MatrixXd inputs = region_inputs(image);
    for (std::size_t i = 0; i < image.regions.size(); ++i) {
      for (const auto& expr : image.regions[i].expressions) {
        if (expr.empty()) continue;
        RefExpExample e;
        e.id = image.id + "#" + std::to_string(i);
        e.context = region_context(image, i);
        e.regions = inputs;
        e.target = static_cast<int>(i);
        e.targets = vocab.encode(expr);
        out.push_back(std::move(e));
      }
    }
  }
  return out;
}

std::string to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::kCider: return "cider";
    case RewardKind::kCiderMinusDisc: return "cider-minus-disc";
    case RewardKind::kLoglikMinusDisc: return "loglik-minus-disc";
  }
  return "cider";
}

RewardKind reward_kind_from_string(const std::string& name) {
  if (name == "cider") return RewardKind::kCider;
  if (name == "cider-minus-disc") return RewardKind::kCiderMinusDisc;
  if (name == "loglik-minus-disc") return RewardKind::kLoglikMinusDisc;
  throw ConfigError("reward: unknown reward kind '" + name + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) fail("learning_rate", "must be positive");
  if (epochs < 0) fail("epochs", "must be non-negative");
  if (batch_size < 0) fail("batch_size", "must be non-negative");
  if (!(label_smoothing >= 0 && label_smoothing < 1)) fail("label_smoothing", "must lie in [0, 1)");
  if (!(ss_rate >= 0)) fail("ss_rate", "must be non-negative");
  if (!(ss_cap >= 0 && ss_cap <= 1)) fail("ss_cap", "must lie in [0, 1]");
  if (!(mss_floor >= 0 && mss_floor <= mss_offset)) fail("mss_floor", "must satisfy 0 <= mss_floor <= mss_offset");
  if (!(mss_offset <= 1)) fail("mss_offset", "must be at most 1");
  if (!(mss_slope >= 0)) fail("mss_slope", "must be non-negative");
  if (!(smixec_p >= 0 && smixec_p <= 1)) fail("smixec_p", "must lie in [0, 1]");
  if (smixec_period < 1) fail("smixec_period", "must be at least 1");
  if (smixec_max_length < 1) fail("smixec_max_length", "must be at least 1");
  if (!std::isfinite(lambda) || lambda < 0) fail("lambda", "must be finite and non-negative");
  if (max_length < 1) fail("max_length", "must be at least 1");
}

void TrainingLog::write_csv(std::ostream& out) const {
  out << "iteration,loss,baseline,ms\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.3f\n", r.iteration, r.loss, r.baseline, r.ms);
    out << buf;
  }
}

double sequence_loss(const TinyLM& model, const SequenceExample& example, double label_smoothing,
                     TinyLMParams* grad, std::span<const TokenId> inputs) {
  const std::vector<TokenId> teacher = model.teacher_inputs(example.targets);
  if (inputs.empty()) inputs = teacher;
  if (inputs.size() != example.targets.size())
    throw std::invalid_argument("sequence_loss: one input per target");
  const TinyLMTrace trace = model.forward(example.context, inputs, example.length);
  double loss = 0.0;
  std::vector<Eigen::VectorXd> dlogits;
  if (grad) dlogits.reserve(inputs.size());
  for (std::size_t j = 0; j < example.targets.size(); ++j) {
    const Eigen::VectorXd& logits = trace.logits[j];
    const TokenId y = example.targets[j];
    const Eigen::VectorXd logp = log_softmax(logits);
    if (!std::isfinite(logp[y])) throw NumericError("sequence_loss: target token is masked or non-finite");
    int open = 0;
    for (Eigen::Index v = 0; v < logits.size(); ++v)
      if (std::isfinite(logits[v])) ++open;
    Eigen::VectorXd target = Eigen::VectorXd::Zero(logits.size());
    if (label_smoothing > 0 && open > 1) {
      const double spread = label_smoothing / (open - 1);
      for (Eigen::Index v = 0; v < logits.size(); ++v)
        if (std::isfinite(logits[v])) target[v] = spread;
      target[y] = 1.0 - label_smoothing;
    } else {
      target[y] = 1.0;
    }
    for (Eigen::Index v = 0; v < logits.size(); ++v)
      if (target[v] > 0) loss -= target[v] * logp[v];
    if (grad) dlogits.push_back(softmax(logits) - target);
  }
  if (grad) model.backward(trace, dlogits, *grad);
  return loss;
}

double mean_sequence_loss(const TinyLM& model, std::span<const SequenceExample> examples, double label_smoothing) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& e : examples) total += sequence_loss(model, e, label_smoothing, nullptr);
  return total / static_cast<double>(examples.size());
}

namespace {

TrainingLog mle_loop(TinyLM& model, std::span<const SequenceExample> examples, const TrainConfig& config,
                     bool scheduled) {
  config.validate();
  if (examples.empty()) throw DataError("training set is empty");
  Rng order_rng(config.seed);
  Rng sample_rng(config.seed ^ 0x5ca1ab1eULL);
  TrainingLog log;
  const auto start = Clock::now();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double q = scheduled ? std::min(config.ss_cap, config.ss_rate * epoch) : 0.0;
    double total = 0.0;
    for (const auto& batch : batches(examples.size(), config.batch_size, order_rng)) {
      TinyLMParams grad = TinyLMParams::zeros(model.dims());
      for (std::size_t idx : batch) {
        const SequenceExample& e = examples[idx];
        std::vector<TokenId> inputs = model.teacher_inputs(e.targets);
        if (q > 0) {
          // Mixed inputs are drawn from a free-running pass that feeds back
          // whichever token was chosen.
          TinyLMTrace trace = model.begin(e.context, e.length);
          model.advance(trace, inputs[0]);
          for (std::size_t j = 1; j < inputs.size(); ++j) {
            if (sample_rng.bernoulli(q)) {
              const Eigen::VectorXd p = softmax(trace.logits[j - 1]);
              inputs[j] = sample_rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
            }
            model.advance(trace, inputs[j]);
          }
        }
        const double loss = sequence_loss(model, e, config.label_smoothing, &grad, inputs);
        if (!std::isfinite(loss))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on example '" + e.id + "'");
        total += loss;
      }
      apply_update(model, grad, 1.0 / static_cast<double>(batch.size()), config.learning_rate);
    }
    log.rows.push_back({epoch + 1, total / static_cast<double>(examples.size()), 0.0, elapsed_ms(start)});
  }
  return log;
}

}  // namespace

TrainingLog mle_train(TinyLM& model, std::span<const SequenceExample> examples, const TrainConfig& config) {
  return mle_loop(model, examples, config, false);
}

TrainingLog scheduled_sampling_mle(TinyLM& model, std::span<const SequenceExample> examples,
                                   const TrainConfig& config) {
  return mle_loop(model, examples, config, true);
}

double soft_comprehension_loss(const ComprehensionModel& comprehension, const RefExpExample& example,
                               const TinyLMTrace& trace, std::size_t columns, ComprehensionLoss kind, double weight,
                               std::vector<Eigen::VectorXd>* dlogits) {
  if (columns == 0) return 0.0;
  if (columns > trace.logits.size()) throw std::invalid_argument("soft_comprehension_loss: too many columns");
  Eigen::MatrixXd query(trace.logits.front().size(), static_cast<Eigen::Index>(columns));
  std::vector<Eigen::VectorXd> probs;
  for (std::size_t j = 0; j < columns; ++j) {
    probs.push_back(softmax(trace.logits[j]));
    query.col(static_cast<Eigen::Index>(j)) = probs.back();
  }
  Eigen::MatrixXd d_query;
  const double value =
      comprehension.loss(example.regions, example.target, query, kind, nullptr, dlogits ? &d_query : nullptr);
  if (dlogits && weight != 0.0)
    for (std::size_t j = 0; j < columns; ++j)
      (*dlogits)[j] += weight * softmax_backward(probs[j], d_query.col(static_cast<Eigen::Index>(j)));
  return value;
}

CompoundLoss compound_loss_step(const TinyLM& generator, const ComprehensionModel& comprehension,
                                const RefExpExample& example, double lambda, ComprehensionLoss kind,
                                TinyLMParams* grad) {
  require_plain(generator, "compound_loss_step");
  if (example.regions.cols() == 0) throw DataError("compound_loss_step: example '" + example.id + "' has no regions");
  const std::vector<TokenId> inputs = generator.teacher_inputs(example.targets);
  const TinyLMTrace trace = generator.forward(example.context, inputs);
  CompoundLoss out;
  std::vector<Eigen::VectorXd> dlogits;
  for (std::size_t j = 0; j < example.targets.size(); ++j) {
    const Eigen::VectorXd logp = log_softmax(trace.logits[j]);
    out.generation -= logp[example.targets[j]];
    if (grad) {
      Eigen::VectorXd d = softmax(trace.logits[j]);
      d[example.targets[j]] -= 1.0;
      dlogits.push_back(std::move(d));
    }
  }
  const std::size_t body = example.targets.size() - 1;
  if (lambda != 0.0)
    out.comprehension =
        soft_comprehension_loss(comprehension, example, trace, body, kind, lambda, grad ? &dlogits : nullptr);
  out.total = out.generation + lambda * out.comprehension;
  if (grad) generator.backward(trace, dlogits, *grad);
  return out;
}

double mss_epsilon(const TrainConfig& config, int iteration) {
  return std::max(config.mss_floor, config.mss_offset - config.mss_slope * iteration);
}

int smixec_base_steps(const TrainConfig& config, int iteration) {
  const int decay = (iteration + config.smixec_period - 1) / config.smixec_period;
  return std::max(0, config.smixec_max_length - decay);
}

namespace {

// Free-running continuation of `trace` until eos or `max_body` body tokens.
// Returns the number of body tokens appended.
std::size_t sample_continuation(const TinyLM& model, TinyLMTrace& trace, std::vector<TokenId>& body,
                                std::size_t max_body, Rng& rng) {
  std::size_t added = 0;
  while (body.size() < max_body) {
    const Eigen::VectorXd p = softmax(trace.logits.back());
    const TokenId w = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
    if (w == model.eos()) break;
    body.push_back(w);
    ++added;
    model.advance(trace, w);
  }
  return added;
}

template <typename Step>
TrainingLog iteration_loop(TinyLM& generator, std::span<const RefExpExample> examples, const TrainConfig& config,
                           Step step) {
  config.validate();
  require_plain(generator, "training-by-proxy");
  if (examples.empty()) throw DataError("training set is empty");
  Rng rng(config.seed);
  TrainingLog log;
  const auto start = Clock::now();
  int iteration = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t idx : shuffled_indices(examples.size(), rng)) {
      ++iteration;
      TinyLMParams grad = TinyLMParams::zeros(generator.dims());
      const double loss = step(examples[idx], iteration, rng, grad);
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss at iteration " + std::to_string(iteration) + " on example '" +
                           examples[idx].id + "'");
      total += loss;
      apply_update(generator, grad, 1.0, config.learning_rate);
    }
    log.rows.push_back({epoch + 1, total / static_cast<double>(examples.size()), 0.0, elapsed_ms(start)});
  }
  return log;
}

}  // namespace

TrainingLog compound_train(TinyLM& generator, const ComprehensionModel& comprehension,
                           std::span<const RefExpExample> examples, const TrainConfig& config) {
  return iteration_loop(generator, examples, config, [&](const RefExpExample& e, int, Rng&, TinyLMParams& grad) {
    return compound_loss_step(generator, comprehension, e, config.lambda, config.comprehension_loss, &grad).total;
  });
}

TrainingLog mss_train(TinyLM& generator, const ComprehensionModel& comprehension,
                      std::span<const RefExpExample> examples, const TrainConfig& config) {
  return iteration_loop(generator, examples, config,
                        [&](const RefExpExample& e, int i, Rng& rng, TinyLMParams& grad) -> double {
                          if (rng.bernoulli(mss_epsilon(config, i)))
                            return compound_loss_step(generator, comprehension, e, 0.0, config.comprehension_loss,
                                                      &grad)
                                .generation;
                          TinyLMTrace trace = generator.begin(e.context);
                          generator.advance(trace, generator.bos());
                          std::vector<TokenId> body;
                          sample_continuation(generator, trace, body, static_cast<std::size_t>(config.max_length), rng);
                          if (body.empty()) return 0.0;
                          std::vector<Eigen::VectorXd> dlogits(trace.logits.size(),
                                                               Eigen::VectorXd::Zero(generator.vocab_size()));
                          const double loss = soft_comprehension_loss(comprehension, e, trace, body.size(),
                                                                      config.comprehension_loss, 1.0, &dlogits);
                          generator.backward(trace, dlogits, grad);
                          return loss;
                        });
}

TrainingLog smixec_train(TinyLM& generator, const ComprehensionModel& comprehension,
                         std::span<const RefExpExample> examples, const TrainConfig& config) {
  const auto cap = static_cast<std::uint64_t>(config.smixec_max_length);
  return iteration_loop(
      generator, examples, config, [&](const RefExpExample& e, int i, Rng& rng, TinyLMParams& grad) -> double {
        const int base = smixec_base_steps(config, i);
        const int delta = static_cast<int>(rng.geometric(config.smixec_p, cap));
        const auto gold_steps = static_cast<std::size_t>(std::min(config.smixec_max_length, base + delta));
        const auto max_body = static_cast<std::size_t>(config.smixec_max_length);

        TinyLMTrace trace = generator.begin(e.context);
        generator.advance(trace, generator.bos());
        std::vector<Eigen::VectorXd> dlogits;
        std::vector<TokenId> body;
        double loss = 0.0;
        bool ended = false;
        for (std::size_t j = 0; j < gold_steps && j < e.targets.size(); ++j) {
          const TokenId y = e.targets[j];
          loss -= log_softmax(trace.logits[j])[y];
          Eigen::VectorXd d = softmax(trace.logits[j]);
          d[y] -= 1.0;
          dlogits.push_back(std::move(d));
          if (y == generator.eos()) {
            ended = true;
            break;
          }
          if (body.size() >= max_body) break;
          body.push_back(y);
          generator.advance(trace, y);
        }
        if (!ended) sample_continuation(generator, trace, body, max_body, rng);
        dlogits.resize(trace.logits.size(), Eigen::VectorXd::Zero(generator.vocab_size()));
        loss += config.lambda * soft_comprehension_loss(comprehension, e, trace, body.size(),
                                                        config.comprehension_loss, config.lambda, &dlogits);
        generator.backward(trace, dlogits, grad);
        return loss;
      });
}

CaptionReward::CaptionReward(std::span<const CorpusRecord> corpus, const Vocabulary& vocab, RewardKind kind,
                             double lambda, const RetrievalScorer* scorer, int batch, double margin)
    : kind_(kind), lambda_(lambda), vocab_(&vocab), scorer_(scorer), margin_(margin) {
  if (kind != RewardKind::kCider && !scorer) throw ConfigError("reward: discriminative rewards need a retrieval scorer");
  for (const auto& r : corpus) {
    references_.push_back(r.captions);
    contexts_.push_back(r.context);
    gold_.push_back(r.captions.empty() ? std::vector<TokenId>{Vocabulary::kEos} : vocab.encode(r.captions.front()));
  }
  stats_ = CorpusStats(references_);
  if (batch < 1) throw ConfigError("batch_size: must be at least 1");
  batch_ = static_cast<std::size_t>(batch);
}

double CaptionReward::cider(std::span<const TokenId> tokens, std::size_t index) const {
  const Caption words = vocab_->decode(tokens);
  return cider_d(words, references_.at(index), stats_);
}

double CaptionReward::contrastive(std::span<const TokenId> tokens, std::size_t index) const {
  if (!scorer_) throw ConfigError("reward: no retrieval scorer");
  std::vector<Eigen::VectorXd> neg_contexts;
  std::vector<std::vector<TokenId>> neg_captions;
  const std::size_t begin = index / batch_ * batch_;
  for (std::size_t j = begin; j < std::min(begin + batch_, contexts_.size()); ++j) {
    if (j == index) continue;
    neg_contexts.push_back(contexts_[j]);
    neg_captions.push_back(gold_[j]);
  }
  return pair_contrastive_loss(*scorer_, contexts_.at(index), tokens, neg_contexts, neg_captions, margin_);
}

double CaptionReward::operator()(std::span<const TokenId> tokens, std::size_t index) const {
  switch (kind_) {
    case RewardKind::kCider: return cider(tokens, index);
    case RewardKind::kCiderMinusDisc: return cider(tokens, index) - lambda_ * contrastive(tokens, index);
    case RewardKind::kLoglikMinusDisc: return -lambda_ * contrastive(tokens, index);
  }
  return 0.0;
}

RewardFn CaptionReward::fn() const {
  return [this](std::span<const TokenId> tokens, std::size_t index) { return (*this)(tokens, index); };
}

PolicySample sample_policy(const TinyLM& model, const Eigen::VectorXd& context, int max_length, Rng& rng) {
  PolicySample s;
  s.trace = model.begin(context);
  model.advance(s.trace, model.bos());
  for (;;) {
    if (static_cast<int>(s.tokens.size()) >= max_length) {
      s.tokens.push_back(model.eos());
      break;
    }
    const Eigen::VectorXd& logits = s.trace.logits.back();
    const Eigen::VectorXd p = softmax(logits);
    const TokenId w = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
    s.tokens.push_back(w);
    s.log_prob += log_softmax(logits)[w];
    if (w == model.eos()) break;
    model.advance(s.trace, w);
  }
  return s;
}

void accumulate_log_prob_grad(const TinyLM& model, const PolicySample& sample, int max_length, double scale,
                              TinyLMParams& grad) {
  const std::size_t steps = sample.trace.logits.size();
  const bool forced = static_cast<int>(sample.tokens.size()) > max_length;
  std::vector<Eigen::VectorXd> dlogits;
  dlogits.reserve(steps);
  for (std::size_t j = 0; j < steps; ++j) {
    if (forced && j + 1 == sample.tokens.size()) {
      dlogits.push_back(Eigen::VectorXd::Zero(model.vocab_size()));
      continue;
    }
    // d log p(w) / d logits = onehot(w) - softmax.
    Eigen::VectorXd d = -softmax(sample.trace.logits[j]);
    d[sample.tokens[j]] += 1.0;
    dlogits.push_back(scale * d);
  }
  model.backward(sample.trace, dlogits, grad);
}

Eigen::VectorXd scst_gradient_estimate(const TinyLM& model, const Eigen::VectorXd& context, std::size_t index,
                                       const RewardFn& reward, int max_length, bool use_baseline, Rng& rng) {
  const PolicySample s = sample_policy(model, context, max_length, rng);
  double weight = reward(s.tokens, index);
  if (use_baseline) weight -= reward(greedy_decode(model, context, max_length).tokens, index);
  TinyLMParams grad = TinyLMParams::zeros(model.dims());
  if (weight != 0.0) accumulate_log_prob_grad(model, s, max_length, weight, grad);
  return flatten(grad.to_list());
}

Eigen::VectorXd exact_policy_gradient(const TinyLM& model, const Eigen::VectorXd& context, std::size_t index,
                                      const RewardFn& reward, int max_length, bool subtract_mean) {
  const double branches = static_cast<double>(model.vocab_size() - 1);
  double count = 0.0;
  for (int l = 0; l <= max_length; ++l) count += std::pow(branches, l);
  if (count > 1e6) throw std::length_error("exact_policy_gradient: search space exceeds 1e6 sequences");

  struct Leaf {
    PolicySample sample;
    double prob;
    double reward;
  };
  std::vector<Leaf> leaves;
  // Depth-first enumeration sharing prefixes through copies of the trace.
  std::function<void(PolicySample&)> expand = [&](PolicySample& prefix) {
    const Eigen::VectorXd logp = log_softmax(prefix.trace.logits.back());
    if (static_cast<int>(prefix.tokens.size()) >= max_length) {
      PolicySample leaf = prefix;
      leaf.tokens.push_back(model.eos());
      const double r = reward(leaf.tokens, index);
      leaves.push_back({std::move(leaf), std::exp(prefix.log_prob), r});
      return;
    }
    for (TokenId w = 0; w < model.vocab_size(); ++w) {
      PolicySample next = prefix;
      next.tokens.push_back(w);
      next.log_prob += logp[w];
      if (w == model.eos()) {
        const double r = reward(next.tokens, index);
        const double p = std::exp(next.log_prob);
        leaves.push_back({std::move(next), p, r});
        continue;
      }
      model.advance(next.trace, w);
      expand(next);
    }
  };
  PolicySample root;
  root.trace = model.begin(context);
  model.advance(root.trace, model.bos());
  expand(root);

  double mean = 0.0;
  for (const auto& l : leaves) {
    require_finite(l.reward, "reward");
    mean += l.prob * l.reward;
  }
  TinyLMParams grad = TinyLMParams::zeros(model.dims());
  for (const auto& l : leaves) {
    const double w = l.prob * (subtract_mean ? l.reward - mean : l.reward);
    if (w != 0.0) accumulate_log_prob_grad(model, l.sample, max_length, w, grad);
  }
  return flatten(grad.to_list());
}

TrainingLog scst_train(TinyLM& model, std::span<const CorpusRecord> corpus, const Vocabulary& vocab,
                       const RewardFn& reward, const TrainConfig& config) {
  config.validate();
  require_plain(model, "scst_train");
  if (corpus.empty()) throw DataError("training set is empty");
  Rng rng(config.seed);
  TrainingLog log;
  const auto start = Clock::now();
  const bool with_mle = config.reward == RewardKind::kLoglikMinusDisc;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double sampled_total = 0.0;
    double greedy_total = 0.0;
    for (const auto& batch : batches(corpus.size(), config.batch_size, rng)) {
      TinyLMParams grad = TinyLMParams::zeros(model.dims());
      for (std::size_t idx : batch) {
        const CorpusRecord& r = corpus[idx];
        const PolicySample s = sample_policy(model, r.context, config.max_length, rng);
        const Hypothesis g = greedy_decode(model, r.context, config.max_length);
        const double rs = reward(s.tokens, idx);
        const double rg = reward(g.tokens, idx);
        require_finite(rs, "reward for record '" + r.id + "'");
        require_finite(rg, "baseline reward for record '" + r.id + "'");
        sampled_total += rs;
        greedy_total += rg;
        // The loss is -(R - b) log P, so its gradient is the negated score.
        if (rs != rg) accumulate_log_prob_grad(model, s, config.max_length, -(rs - rg), grad);
        if (with_mle && !r.captions.empty()) {
          const std::size_t c = rng.below(r.captions.size());
          SequenceExample e{r.id, r.context, vocab.encode(r.captions[c]), 0};
          sequence_loss(model, e, config.label_smoothing, &grad);
        }
      }
      apply_update(model, grad, 1.0 / static_cast<double>(batch.size()), config.learning_rate);
    }
    const auto n = static_cast<double>(corpus.size());
    log.rows.push_back({epoch + 1, sampled_total / n, greedy_total / n, elapsed_ms(start)});
  }
  return log;
}

TrainingLog train_retrieval_scorer(RetrievalScorer& scorer, std::span<const CorpusRecord> corpus,
                                   const Vocabulary& vocab, const TrainConfig& config, double margin) {
  config.validate();
  if (corpus.size() < 2) throw DataError("retrieval training needs at least two records");
  Rng rng(config.seed);
  TrainingLog log;
  const auto start = Clock::now();
  const ParamList params = scorer.refs();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch : batches(corpus.size(), config.batch_size, rng)) {
      if (batch.size() < 2) continue;
      std::vector<Eigen::VectorXd> contexts;
      std::vector<std::vector<TokenId>> captions;
      for (std::size_t idx : batch) {
        const CorpusRecord& r = corpus[idx];
        if (r.captions.empty()) continue;
        contexts.push_back(r.context);
        captions.push_back(vocab.encode(r.captions[rng.below(r.captions.size())]));
      }
      GradList grads = zeros_like(params);
      const double loss = contrastive_loss(scorer, contexts, captions, margin, &grads);
      require_finite(loss, "contrastive loss");
      total += loss;
      ++count;
      if (!all_finite(grads)) throw NumericError("non-finite gradient");
      sgd_step(params, grads, config.learning_rate);
    }
    log.rows.push_back({epoch + 1, count ? total / static_cast<double>(count) : 0.0, 0.0, elapsed_ms(start)});
  }
  return log;
}

TrainingLog train_comprehension(ComprehensionModel& model, std::span<const RefExpExample> examples,
                                const TrainConfig& config) {
  config.validate();
  if (examples.empty()) throw DataError("training set is empty");
  Rng rng(config.seed);
  TrainingLog log;
  const auto start = Clock::now();
  const ParamList params = model.refs();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& batch : batches(examples.size(), config.batch_size, rng)) {
      GradList grads = zeros_like(params);
      for (std::size_t idx : batch) {
        const RefExpExample& e = examples[idx];
        const std::vector<TokenId> body = body_tokens(e.targets);
        const double loss = model.loss(e.regions, e.target, body, config.comprehension_loss, &grads);
        require_finite(loss, "comprehension loss on '" + e.id + "'");
        total += loss;
      }
      scale(grads, 1.0 / static_cast<double>(batch.size()));
      if (!all_finite(grads)) throw NumericError("non-finite gradient");
      sgd_step(params, grads, config.learning_rate);
    }
    log.rows.push_back({epoch + 1, total / static_cast<double>(examples.size()), 0.0, elapsed_ms(start)});
  }
  return log;
}

}  // namespace capgen
