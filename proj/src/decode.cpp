#include "capgen/decode.hpp"

#include "capgen/errors.hpp"
#include "capgen/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace capgen {

std::string to_string(DecodeMethod method) {
  switch (method) {
    case DecodeMethod::kGreedy: return "greedy";
    case DecodeMethod::kSample: return "sample";
    case DecodeMethod::kTopK: return "top-k";
    case DecodeMethod::kTopP: return "top-p";
    case DecodeMethod::kBeam: return "beam";
    case DecodeMethod::kDiverseBeam: return "diverse-beam";
    case DecodeMethod::kFixLen: return "fixlen";
  }
  return "greedy";
}

DecodeMethod decode_method_from_string(const std::string& name) {
  for (auto m : {DecodeMethod::kGreedy, DecodeMethod::kSample, DecodeMethod::kTopK, DecodeMethod::kTopP,
                 DecodeMethod::kBeam, DecodeMethod::kDiverseBeam, DecodeMethod::kFixLen})
    if (to_string(m) == name) return m;
  throw ConfigError("method: unknown decoding method '" + name + "'");
}

DecodeConfig DecodeConfig::greedy() { return {}; }

DecodeConfig DecodeConfig::sample(int n, double temperature) {
  DecodeConfig c;
  c.method = DecodeMethod::kSample;
  c.samples = n;
  c.temperature = temperature;
  c.validate();
  return c;
}

DecodeConfig DecodeConfig::top_k_sampling(int n, int k, double temperature) {
  DecodeConfig c = sample(n, temperature);
  c.method = DecodeMethod::kTopK;
  c.top_k = k;
  c.validate();
  return c;
}

DecodeConfig DecodeConfig::top_p_sampling(int n, double p, double temperature) {
  DecodeConfig c = sample(n, temperature);
  c.method = DecodeMethod::kTopP;
  c.top_p = p;
  c.validate();
  return c;
}

DecodeConfig DecodeConfig::beam(int beam_size, double temperature) {
  DecodeConfig c;
  c.method = DecodeMethod::kBeam;
  c.beam_size = beam_size;
  c.temperature = temperature;
  c.validate();
  return c;
}

DecodeConfig DecodeConfig::diverse_beam(int beam_size, int groups, double diversity, double temperature) {
  DecodeConfig c = beam(beam_size, temperature);
  c.method = DecodeMethod::kDiverseBeam;
  c.groups = groups;
  c.diversity = diversity;
  c.validate();
  return c;
}

DecodeConfig DecodeConfig::fixlen(int target_length, int beam_size, double temperature) {
  DecodeConfig c = beam(beam_size, temperature);
  c.method = DecodeMethod::kFixLen;
  c.target_length = target_length;
  c.validate();
  return c;
}

void DecodeConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature: must be > 0");
  if (max_length < 1) throw ConfigError("max_length: must be >= 1");
  switch (method) {
    case DecodeMethod::kGreedy: break;
    case DecodeMethod::kTopK:
      if (top_k < 1) throw ConfigError("top_k: must be >= 1");
      [[fallthrough]];
    case DecodeMethod::kTopP:
    case DecodeMethod::kSample:
      if (samples < 1) throw ConfigError("samples: must be >= 1");
      if (top_k < 0) throw ConfigError("top_k: must be >= 0");
      if (!(top_p >= 0.0 && top_p <= 1.0)) throw ConfigError("top_p: must lie in [0, 1]");
      break;
    case DecodeMethod::kDiverseBeam:
      if (groups < 1) throw ConfigError("dbs_groups: must be >= 1");
      if (!(diversity >= 0.0)) throw ConfigError("dbs_lambda: must be >= 0");
      if (beam_size % groups != 0) throw ConfigError("dbs_groups: must divide beam_size");
      [[fallthrough]];
    case DecodeMethod::kBeam:
      if (beam_size < 1) throw ConfigError("beam_size: must be >= 1");
      break;
    case DecodeMethod::kFixLen:
      if (beam_size < 1) throw ConfigError("beam_size: must be >= 1");
      if (target_length < 1 || target_length > max_length)
        throw ConfigError("length: target length must lie in 1..max_length");
      break;
  }
}

Eigen::VectorXd apply_temperature(const Eigen::VectorXd& logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("apply_temperature: temperature must be > 0");
  if (temperature == 1.0) return softmax(logits);
  return softmax((logits / temperature).eval());
}

namespace {

std::vector<int> probability_order(const Eigen::VectorXd& dist) {
  std::vector<int> order(static_cast<std::size_t>(dist.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] > dist[b]; });
  return order;
}

Eigen::VectorXd keep_prefix(const Eigen::VectorXd& dist, const std::vector<int>& order, std::size_t keep) {
  bool whole_support = true;
  for (std::size_t i = keep; i < order.size(); ++i)
    if (dist[order[i]] > 0.0) whole_support = false;
  if (whole_support) return dist;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dist.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mass += dist[order[i]];
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = dist[order[i]] / mass;
  return out;
}

}  // namespace

Eigen::VectorXd filter_top_k(const Eigen::VectorXd& dist, int k) {
  if (k < 1) throw std::invalid_argument("filter_top_k: k must be >= 1");
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), static_cast<std::size_t>(dist.size()));
  return keep_prefix(dist, probability_order(dist), keep);
}

int top_p_kept_count(const Eigen::VectorXd& dist, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("filter_top_p: p must lie in [0, 1]");
  const auto order = probability_order(dist);
  if (p >= 1.0) return static_cast<int>(order.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    mass += dist[order[i]];
    if (mass >= p) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(order.size());
}

Eigen::VectorXd filter_top_p(const Eigen::VectorXd& dist, double p) {
  const int keep = top_p_kept_count(dist, p);
  if (keep == dist.size()) return dist;
  return keep_prefix(dist, probability_order(dist), static_cast<std::size_t>(keep));
}

namespace {

int argmax_lowest(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

Hypothesis sample_one(const ConditionalModel& model, const Eigen::VectorXd& context, const DecodeConfig& config,
                      Rng& rng) {
  Hypothesis h;
  ModelState state = model.init_state(context);
  TokenId prev = model.bos();
  for (;;) {
    StepResult r = model.step(state, prev);
    const Eigen::VectorXd logp = log_softmax(r.logits);
    TokenId w;
    if (static_cast<int>(h.tokens.size()) >= config.max_length) {
      w = model.eos();
    } else {
      Eigen::VectorXd dist = apply_temperature(r.logits, config.temperature);
      if (config.top_k > 0) dist = filter_top_k(dist, config.top_k);
      if (config.top_p < 1.0) dist = filter_top_p(dist, config.top_p);
      w = rng.categorical(std::span<const double>(dist.data(), static_cast<std::size_t>(dist.size())));
    }
    h.tokens.push_back(w);
    h.log_prob += logp[w];
    if (w == model.eos()) break;
    state = std::move(r.state);
    prev = w;
  }
  h.score = h.log_prob;
  return h;
}

// Which tokens a beam may append given its current body length.
struct LengthRule {
  int min_body = 0;  // end-of-sequence unavailable below this body length
  int max_body = kMaxCaptionLength;  // end-of-sequence forced at this body length
};

struct Beam {
  std::vector<TokenId> tokens;  // body so far
  ModelState state;
  double score = 0.0;
  double log_prob = 0.0;
};

struct Candidate {
  double score;
  double step_logp;
  int beam;
  TokenId token;
};

class BeamGroup {
 public:
  BeamGroup(const ConditionalModel& model, const Eigen::VectorXd& context, int width, double temperature,
            LengthRule rule)
      : model_(&model), width_(width), temperature_(temperature), rule_(rule) {
    Beam b;
    b.state = model.init_state(context);
    live_.push_back(std::move(b));
  }

  bool done() const { return live_.empty(); }

  // Advances one step; `penalty[w]` is subtracted from every candidate
  // ending in w. Returns the tokens chosen at this step.
  std::vector<TokenId> advance(const Eigen::VectorXd* penalty) {
    std::vector<Candidate> cands;
    std::vector<StepResult> results;
    std::vector<Eigen::VectorXd> logps;
    results.reserve(live_.size());
    for (std::size_t b = 0; b < live_.size(); ++b) {
      const Beam& beam = live_[b];
      const TokenId prev = beam.tokens.empty() ? model_->bos() : beam.tokens.back();
      results.push_back(model_->step(beam.state, prev));
      const Eigen::VectorXd& logits = results.back().logits;
      logps.push_back(log_softmax(logits));
      const Eigen::VectorXd scored = temperature_ == 1.0 ? logps.back() : log_softmax((logits / temperature_).eval());
      const int body = static_cast<int>(beam.tokens.size());
      for (TokenId w = 0; w < static_cast<TokenId>(scored.size()); ++w) {
        const bool is_eos = w == model_->eos();
        if (body >= rule_.max_body && !is_eos) continue;
        if (body < rule_.min_body && is_eos) continue;
        if (!std::isfinite(scored[w])) continue;
        double s = beam.score + scored[w];
        if (penalty) s -= (*penalty)[w];
        cands.push_back({s, scored[w], static_cast<int>(b), w});
      }
    }
    const std::size_t need = static_cast<std::size_t>(width_) - finished_.size();
    const std::size_t take = std::min(need, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.step_logp != b.step_logp) return a.step_logp > b.step_logp;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });
    std::vector<Beam> next;
    std::vector<TokenId> chosen;
    for (std::size_t i = 0; i < take; ++i) {
      const Candidate& c = cands[i];
      const Beam& parent = live_[static_cast<std::size_t>(c.beam)];
      chosen.push_back(c.token);
      Hypothesis h;
      Beam child;
      child.tokens = parent.tokens;
      child.tokens.push_back(c.token);
      child.score = c.score;
      child.log_prob = parent.log_prob + logps[static_cast<std::size_t>(c.beam)][c.token];
      if (c.token == model_->eos()) {
        h.tokens = std::move(child.tokens);
        h.log_prob = child.log_prob;
        h.score = child.score;
        finished_.push_back(std::move(h));
      } else {
        child.state = results[static_cast<std::size_t>(c.beam)].state;
        next.push_back(std::move(child));
      }
    }
    live_ = std::move(next);
    return chosen;
  }

  std::vector<Hypothesis> results(int group) {
    std::stable_sort(finished_.begin(), finished_.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
    for (auto& h : finished_) h.group = group;
    return finished_;
  }

 private:
  const ConditionalModel* model_;
  int width_;
  double temperature_;
  LengthRule rule_;
  std::vector<Beam> live_;
  std::vector<Hypothesis> finished_;
};

}  // namespace

Hypothesis greedy_decode(const ConditionalModel& model, const Eigen::VectorXd& context, int max_length) {
  Hypothesis h;
  ModelState state = model.init_state(context);
  TokenId prev = model.bos();
  for (;;) {
    StepResult r = model.step(state, prev);
    const Eigen::VectorXd logp = log_softmax(r.logits);
    const TokenId w = static_cast<int>(h.tokens.size()) >= max_length ? model.eos() : argmax_lowest(logp);
    h.tokens.push_back(w);
    h.log_prob += logp[w];
    if (w == model.eos()) break;
    state = std::move(r.state);
    prev = w;
  }
  h.score = h.log_prob;
  return h;
}

std::vector<Hypothesis> beam_search(const ConditionalModel& model, const Eigen::VectorXd& context, int beam_size,
                                    double temperature, int max_length) {
  if (beam_size < 1) throw std::invalid_argument("beam_search: beam size must be >= 1");
  BeamGroup group(model, context, beam_size, temperature, {0, max_length});
  while (!group.done()) group.advance(nullptr);
  return group.results(0);
}

std::vector<Hypothesis> diverse_beam_search(const ConditionalModel& model, const Eigen::VectorXd& context,
                                            int groups, double diversity, int beam_size, double temperature,
                                            int max_length) {
  if (groups < 1 || beam_size < 1 || beam_size % groups != 0)
    throw std::invalid_argument("diverse_beam_search: group count must divide the beam size");
  const int width = beam_size / groups;
  std::vector<BeamGroup> all;
  for (int g = 0; g < groups; ++g) all.emplace_back(model, context, width, temperature, LengthRule{0, max_length});
  auto busy = [&] { return std::any_of(all.begin(), all.end(), [](const BeamGroup& b) { return !b.done(); }); };
  while (busy()) {
    Eigen::VectorXd penalty = Eigen::VectorXd::Zero(model.vocab_size());
    for (auto& group : all) {
      if (group.done()) continue;
      for (TokenId w : group.advance(diversity > 0.0 ? &penalty : nullptr)) penalty[w] += diversity;
    }
  }
  std::vector<Hypothesis> out;
  for (int g = 0; g < groups; ++g) {
    auto r = all[static_cast<std::size_t>(g)].results(g);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

Hypothesis fixlen_decode(const ConditionalModel& model, const Eigen::VectorXd& context, int target_length,
                         int beam_size, double temperature) {
  if (target_length < 1) throw std::invalid_argument("fixlen_decode: target length must be >= 1");
  BeamGroup group(model, context, beam_size, temperature, {target_length, target_length});
  while (!group.done()) group.advance(nullptr);
  return group.results(0).front();
}

std::vector<Hypothesis> decode(const ConditionalModel& model, const Eigen::VectorXd& context,
                               const DecodeConfig& config, Rng& rng) {
  config.validate();
  switch (config.method) {
    case DecodeMethod::kGreedy: return {greedy_decode(model, context, config.max_length)};
    case DecodeMethod::kSample:
    case DecodeMethod::kTopK:
    case DecodeMethod::kTopP: {
      std::vector<Hypothesis> out;
      for (int i = 0; i < config.samples; ++i) out.push_back(sample_one(model, context, config, rng));
      return out;
    }
    case DecodeMethod::kBeam:
      return beam_search(model, context, config.beam_size, config.temperature, config.max_length);
    case DecodeMethod::kDiverseBeam:
      return diverse_beam_search(model, context, config.groups, config.diversity, config.beam_size,
                                 config.temperature, config.max_length);
    case DecodeMethod::kFixLen:
      return {fixlen_decode(model, context, config.target_length, config.beam_size, config.temperature)};
  }
  return {};
}

double rerank_score(double log_prob, int scored_tokens, double gamma, double comprehension_log_prob) {
  if (scored_tokens < 1) throw std::invalid_argument("rerank_score: need at least one scored token");
  return log_prob / scored_tokens + gamma * comprehension_log_prob;
}

Hypothesis sample_and_rerank(const ConditionalModel& generator, const Eigen::VectorXd& context, int n,
                             const RerankScorer& scorer, double gamma, Rng& rng, int max_length) {
  if (n < 1) throw std::invalid_argument("sample_and_rerank: n must be >= 1");
  DecodeConfig config = DecodeConfig::sample(n);
  config.max_length = max_length;
  auto samples = decode(generator, context, config, rng);
  std::size_t best = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& h = samples[i];
    h.rerank = rerank_score(h.log_prob, static_cast<int>(h.tokens.size()), gamma, gamma == 0.0 ? 0.0 : scorer(h));
    if (i == 0) continue;
    const auto& b = samples[best];
    if (*h.rerank > *b.rerank || (*h.rerank == *b.rerank && h.log_prob > b.log_prob)) best = i;
  }
  return samples[best];
}

}  // namespace capgen
