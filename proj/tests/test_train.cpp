#include "capgen/train.hpp"
#include "capgen/decode.hpp"
#include "capgen/errors.hpp"
#include "capgen/toy.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

using namespace capgen;

namespace {

std::vector<SequenceExample> random_examples(Rng& rng, int n, int vocab, int context, int max_len = 4) {
  std::vector<SequenceExample> ex;
  for (int i = 0; i < n; ++i) {
    SequenceExample e;
    e.id = std::to_string(i);
    e.context = test::random_vector(rng, context);
    const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len)));
    for (int t = 0; t < len; ++t)
      e.targets.push_back(Vocabulary::kReserved + static_cast<TokenId>(rng.below(vocab - Vocabulary::kReserved)));
    e.targets.push_back(Vocabulary::kEos);
    ex.push_back(e);
  }
  return ex;
}

RefExpExample random_refexp(Rng& rng, int vocab, int context, int regions) {
  RefExpExample e;
  e.id = "r";
  e.context = test::random_vector(rng, context);
  e.regions = Eigen::MatrixXd::Random(3, regions);
  e.target = static_cast<int>(rng.below(static_cast<std::uint64_t>(regions)));
  for (int t = 0; t < 3; ++t)
    e.targets.push_back(Vocabulary::kReserved + static_cast<TokenId>(rng.below(vocab - Vocabulary::kReserved)));
  e.targets.push_back(Vocabulary::kEos);
  return e;
}

LossFn tinylm_loss(const TinyLM& m, std::function<double(TinyLMParams*)> f) {
  return [&m, f](GradList* grads) {
    TinyLMParams g = TinyLMParams::zeros(m.dims());
    const double v = f(grads ? &g : nullptr);
    if (grads) add_scaled(*grads, g.to_list(), 1.0);
    return v;
  };
}

// E[R] by stepping the model directly: sequences stop at eos or are cut at
// max_length with the cut carrying the remaining mass.
double expected_reward(const TinyLM& m, const Eigen::VectorXd& ctx, const RewardFn& reward, int max_length) {
  std::function<double(const ModelState&, TokenId, std::vector<TokenId>&, double)> walk =
      [&](const ModelState& s, TokenId prev, std::vector<TokenId>& prefix, double prob) {
        if (static_cast<int>(prefix.size()) == max_length) {
          prefix.push_back(Vocabulary::kEos);
          const double r = prob * reward(prefix, 0);
          prefix.pop_back();
          return r;
        }
        const StepResult r = m.step(s, prev);
        const Eigen::VectorXd p = softmax(r.logits);
        double total = 0.0;
        for (TokenId w = 0; w < m.vocab_size(); ++w) {
          prefix.push_back(w);
          total += w == Vocabulary::kEos ? prob * p[w] * reward(prefix, 0) : walk(r.state, w, prefix, prob * p[w]);
          prefix.pop_back();
        }
        return total;
      };
  std::vector<TokenId> prefix;
  return walk(m.init_state(ctx), Vocabulary::kBos, prefix, 1.0);
}

double toy_reward(std::span<const TokenId> tokens, std::size_t) {
  double r = 0.0;
  for (TokenId t : tokens) r += (t == 2) - 0.3 * (t == 3);
  return r + 0.1 * static_cast<double>(tokens.size());
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("label-smoothed loss of a uniform model is T log V") {
  TinyLM m = test::random_lm(9, 3, 4, 2, 50);
  for (auto& p : m.params().refs()) p.value->setZero();
  SequenceExample e{"x", Eigen::VectorXd::Ones(2), {4, 5, 6, Vocabulary::kEos}, 0};
  for (double eps : {0.0, 0.1, 0.5})
    CHECK(sequence_loss(m, e, eps, nullptr) == doctest::Approx(4 * std::log(9.0)).epsilon(1e-12));
}

TEST_CASE("label smoothing by hand at one step") {
  TinyLM m = test::random_lm(6, 3, 4, 2, 51, 1.0);
  SequenceExample e{"x", Eigen::VectorXd::Constant(2, 0.4), {Vocabulary::kEos}, 0};
  const StepResult r = m.step(m.init_state(e.context), Vocabulary::kBos);
  const Eigen::VectorXd logp = log_softmax(r.logits);
  const double eps = 0.2;
  double expected = -(1 - eps) * logp[Vocabulary::kEos];
  for (int v = 0; v < 6; ++v)
    if (v != Vocabulary::kEos) expected -= eps / 5 * logp[v];
  CHECK(sequence_loss(m, e, eps, nullptr) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("gradient check on label-smoothed MLE") {
  Rng rng(52);
  TinyLM m = test::random_lm(10, 5, 6, 3, 52);
  const auto ex = random_examples(rng, 3, 10, 3);
  const auto res = gradient_check(m.params().refs(), tinylm_loss(m, [&](TinyLMParams* g) {
                                    double t = 0;
                                    for (const auto& e : ex) t += sequence_loss(m, e, 0.1, g);
                                    return t;
                                  }));
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("gradient check for a len-emb model") {
  Rng rng(53);
  TinyLM m = test::random_lm(10, 4, 5, 3, 53, 0.5, LengthMode::kLenEmb, 6);
  auto ex = random_examples(rng, 3, 10, 3);
  for (auto& e : ex) e.length = static_cast<int>(e.targets.size()) - 1;
  const auto res = gradient_check(m.params().refs(), tinylm_loss(m, [&](TinyLMParams* g) {
                                    double t = 0;
                                    for (const auto& e : ex) t += sequence_loss(m, e, 0.0, g);
                                    return t;
                                  }));
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("MLE training lowers the loss and is deterministic") {
  Rng rng(54);
  const auto ex = random_examples(rng, 12, 10, 3);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.5;
  cfg.seed = 3;
  TinyLM a = test::random_lm(10, 6, 8, 3, 54, 0.1);
  TinyLM b = a;
  const double before = mean_sequence_loss(a, ex);
  const TrainingLog log = mle_train(a, ex, cfg);
  mle_train(b, ex, cfg);
  CHECK(log.rows.size() == 30);
  CHECK(mean_sequence_loss(a, ex) < before);
  CHECK(log.last_loss() < log.first_loss());
  CHECK(a.params().embed == b.params().embed);
  CHECK(a.params().output == b.params().output);
}

TEST_CASE("scheduled sampling with rate zero is MLE") {
  Rng rng(55);
  const auto ex = random_examples(rng, 8, 10, 3);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 3;
  TinyLM a = test::random_lm(10, 4, 5, 3, 55);
  TinyLM b = a;
  mle_train(a, ex, cfg);
  scheduled_sampling_mle(b, ex, cfg);
  CHECK(a.params().recurrent == b.params().recurrent);

  TinyLM c = test::random_lm(10, 4, 5, 3, 55);
  cfg.ss_rate = 0.25;
  cfg.ss_cap = 0.5;
  const auto log = scheduled_sampling_mle(c, ex, cfg);
  CHECK(log.rows.size() == 5);
  CHECK(c.params().recurrent != a.params().recurrent);
}

TEST_CASE("compound loss with lambda zero is the generation loss") {
  Rng rng(56);
  TinyLM g = test::random_lm(9, 4, 5, 3, 56);
  ComprehensionModel c(9, 3, 4, 56);
  const RefExpExample e = random_refexp(rng, 9, 3, 3);
  const CompoundLoss l = compound_loss_step(g, c, e, 0.0, ComprehensionLoss::kSoftmax, nullptr);
  const SequenceExample s{"r", e.context, e.targets, 0};
  CHECK(l.generation == doctest::Approx(sequence_loss(g, s, 0.0, nullptr)).epsilon(1e-12));
  CHECK(l.total == l.generation);

  const CompoundLoss l2 = compound_loss_step(g, c, e, 0.7, ComprehensionLoss::kSoftmax, nullptr);
  CHECK(l2.total == doctest::Approx(l2.generation + 0.7 * l2.comprehension).epsilon(1e-12));
  CHECK(l2.comprehension > 0.0);
}

TEST_CASE("gradient check on the compound loss") {
  Rng rng(57);
  TinyLM g = test::random_lm(9, 4, 5, 3, 57);
  ComprehensionModel c(9, 3, 4, 57);
  const RefExpExample e = random_refexp(rng, 9, 3, 3);
  for (auto kind : {ComprehensionLoss::kSoftmax, ComprehensionLoss::kLogistic}) {
    const auto res = gradient_check(
        g.params().refs(), tinylm_loss(g, [&](TinyLMParams* gr) { return compound_loss_step(g, c, e, 2.0, kind, gr).total; }));
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("trainers by proxy refuse length-aware generators") {
  Rng rng(58);
  TinyLM g = test::random_lm(9, 4, 5, 3, 58, 0.5, LengthMode::kLenEmb, 5);
  ComprehensionModel c(9, 3, 4, 58);
  const std::vector<RefExpExample> ex = {random_refexp(rng, 9, 3, 2)};
  CHECK_THROWS_AS(compound_train(g, c, ex, TrainConfig{}), ConfigError);
  CHECK_THROWS_AS(mss_train(g, c, ex, TrainConfig{}), ConfigError);
}

TEST_CASE("sampling schedules") {
  TrainConfig cfg;
  cfg.mss_floor = 0.3;
  cfg.mss_offset = 1.0;
  cfg.mss_slope = 0.1;
  CHECK(mss_epsilon(cfg, 0) == 1.0);
  CHECK(mss_epsilon(cfg, 3) == doctest::Approx(0.7));
  CHECK(mss_epsilon(cfg, 100) == 0.3);

  cfg.smixec_max_length = 10;
  cfg.smixec_period = 3;
  CHECK(smixec_base_steps(cfg, 0) == 10);
  CHECK(smixec_base_steps(cfg, 1) == 9);
  CHECK(smixec_base_steps(cfg, 3) == 9);
  CHECK(smixec_base_steps(cfg, 4) == 8);
  CHECK(smixec_base_steps(cfg, 1000) == 0);
}

TEST_CASE("proxy trainers run and stay finite") {
  Rng rng(59);
  TinyLM g = test::random_lm(9, 4, 5, 3, 59);
  ComprehensionModel c(9, 3, 4, 59);
  std::vector<RefExpExample> ex;
  for (int i = 0; i < 6; ++i) ex.push_back(random_refexp(rng, 9, 3, 3));
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.05;
  cfg.mss_floor = 0.3;
  cfg.mss_slope = 0.05;
  cfg.smixec_max_length = 5;
  for (auto* train : {&compound_train, &mss_train, &smixec_train}) {
    TinyLM m = g;
    const auto log = (*train)(m, c, ex, cfg);
    CHECK(log.rows.size() == 3);
    for (const auto& r : log.rows) CHECK(std::isfinite(r.loss));
    CHECK(all_finite(m.params().to_list()));
  }
}

TEST_CASE("exact policy gradient matches finite differences of the expected reward") {
  TinyLM m = test::random_lm(4, 2, 2, 2, 60, 1.0);
  const Eigen::VectorXd ctx = Eigen::Vector2d(0.5, -1.0);
  const int max_len = 3;
  const Eigen::VectorXd exact = exact_policy_gradient(m, ctx, 0, toy_reward, max_len, false);
  const Eigen::VectorXd centered = exact_policy_gradient(m, ctx, 0, toy_reward, max_len, true);
  CHECK((exact - centered).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::VectorXd numeric(exact.size());
  Eigen::Index k = 0;
  const double h = 1e-6;
  for (auto& p : m.params().refs())
    for (Eigen::Index i = 0; i < p.value->size(); ++i, ++k) {
      const double keep = (*p.value)(i);
      (*p.value)(i) = keep + h;
      const double up = expected_reward(m, ctx, toy_reward, max_len);
      (*p.value)(i) = keep - h;
      const double down = expected_reward(m, ctx, toy_reward, max_len);
      (*p.value)(i) = keep;
      numeric[k] = (up - down) / (2 * h);
    }
  REQUIRE(k == exact.size());
  CHECK((exact - numeric).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("constant reward has zero policy gradient") {
  TinyLM m = test::random_lm(4, 2, 2, 2, 61, 1.0);
  const Eigen::VectorXd ctx = Eigen::Vector2d(0.1, 0.2);
  const RewardFn constant = [](std::span<const TokenId>, std::size_t) { return 2.5; };
  CHECK(exact_policy_gradient(m, ctx, 0, constant, 3).cwiseAbs().maxCoeff() < 1e-12);
  Rng rng(1);
  for (int i = 0; i < 10; ++i)
    CHECK(scst_gradient_estimate(m, ctx, 0, constant, 3, true, rng).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("policy samples exclude the forced eos from their probability") {
  TinyLM m = test::random_lm(5, 2, 3, 2, 62, 1.0);
  Rng rng(62);
  for (int i = 0; i < 50; ++i) {
    const PolicySample s = sample_policy(m, Eigen::Vector2d(0.3, 0.3), 2, rng);
    CHECK(s.tokens.back() == Vocabulary::kEos);
    CHECK(s.tokens.size() <= 3);
    const double full = sequence_log_prob(m, Eigen::Vector2d(0.3, 0.3), s.tokens);
    if (s.tokens.size() < 3 || s.tokens[1] == Vocabulary::kEos)
      CHECK(s.log_prob == doctest::Approx(full).epsilon(1e-12));
    else
      CHECK(s.log_prob > full);
  }
}

TEST_CASE("caption reward on the toy corpus") {
  ToyConfig tc;
  tc.images = 8;
  const ToyCorpus toy = generate_toy_corpus(tc);
  std::vector<Caption> caps;
  for (const auto& r : toy.records)
    for (const auto& c : r.captions) caps.push_back(c);
  const Vocabulary v = build_vocab_from_tokens(caps, 200);
  const CaptionReward cider(toy.records, v, RewardKind::kCider, 1.0);
  const auto own = v.encode(toy.records[0].captions[0]);
  const auto other = v.encode(Caption{"zzz"});
  CHECK(cider(own, 0) > cider(other, 0));
  CHECK(cider(own, 0) == cider.cider(own, 0));
  CHECK_THROWS_AS(CaptionReward(toy.records, v, RewardKind::kCiderMinusDisc, 1.0), ConfigError);

  RetrievalScorer s(static_cast<int>(v.size()), 4, static_cast<int>(toy.records[0].context.size()), 4, 63);
  const CaptionReward disc(toy.records, v, RewardKind::kCiderMinusDisc, 2.0, &s, 2);
  CHECK(disc(own, 0) == doctest::Approx(cider.cider(own, 0) - 2.0 * disc.contrastive(own, 0)).epsilon(1e-12));
  const CaptionReward ll(toy.records, v, RewardKind::kLoglikMinusDisc, 2.0, &s, 2);
  CHECK(ll(own, 0) == doctest::Approx(-2.0 * disc.contrastive(own, 0)).epsilon(1e-12));

  // Batches are aligned pairs, so record 0 is only contrasted with record 1.
  const std::vector<Eigen::VectorXd> nc = {toy.records[1].context};
  const std::vector<std::vector<TokenId>> ncap = {v.encode(toy.records[1].captions[0])};
  CHECK(disc.contrastive(own, 0) ==
        doctest::Approx(pair_contrastive_loss(s, toy.records[0].context, own, nc, ncap, 0.2)).epsilon(1e-12));
}

TEST_CASE("SCST improves mean reward on a small problem and rejects NaN rewards") {
  Rng rng(64);
  std::vector<CorpusRecord> corpus;
  for (int i = 0; i < 4; ++i) {
    CorpusRecord r;
    r.id = std::to_string(i);
    r.context = test::random_vector(rng, 2);
    r.captions = {{"a"}};
    corpus.push_back(r);
  }
  const Vocabulary v({"a", "b"}, 0);
  TinyLM m = test::random_lm(6, 3, 4, 2, 64, 0.3);
  const RewardFn reward = [](std::span<const TokenId> t, std::size_t) {
    double r = 0;
    for (TokenId w : t) r += w == 4 ? 1.0 : (w == Vocabulary::kEos ? 0.0 : -1.0);
    return r;
  };
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.learning_rate = 0.1;
  cfg.max_length = 3;
  const auto log = scst_train(m, corpus, v, reward, cfg);
  double early = 0, late = 0;
  for (int i = 0; i < 10; ++i) {
    early += log.rows[static_cast<std::size_t>(i)].loss;
    late += log.rows[log.rows.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  CHECK(late > early);

  const RewardFn bad = [](std::span<const TokenId>, std::size_t) { return std::nan(""); };
  CHECK_THROWS_AS(scst_train(m, corpus, v, bad, cfg), NumericError);
}

TEST_CASE("retrieval and comprehension trainers lower their loss") {
  ToyConfig tc;
  tc.images = 20;
  const ToyCorpus toy = generate_toy_corpus(tc);
  std::vector<Caption> caps;
  for (const auto& r : toy.records)
    for (const auto& c : r.captions) caps.push_back(c);
  const Vocabulary v = build_vocab_from_tokens(caps, 200);
  RetrievalScorer s(static_cast<int>(v.size()), 8, static_cast<int>(toy.records[0].context.size()), 8, 65);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.5;
  const auto log = train_retrieval_scorer(s, toy.records, v, cfg);
  CHECK(log.last_loss() < log.first_loss());

  ToyRegionConfig rc;
  rc.images = 20;
  const auto regions = generate_toy_regions(rc);
  std::vector<Caption> rcaps;
  for (const auto& img : regions)
    for (const auto& r : img.regions)
      for (const auto& e : r.expressions) rcaps.push_back(e);
  const Vocabulary rv = build_vocab_from_tokens(rcaps, 200);
  const auto ex = refexp_examples(regions, rv);
  ComprehensionModel c(static_cast<int>(rv.size()), static_cast<int>(ex[0].regions.rows()), 8, 66);
  const auto clog = train_comprehension(c, ex, cfg);
  CHECK(clog.last_loss() < clog.first_loss());
}

TEST_CASE("shuffled indices are permutations") {
  Rng rng(67);
  for (std::size_t n : {0u, 1u, 7u, 50u}) {
    auto p = shuffled_indices(n, rng);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < n; ++i) CHECK(p[i] == i);
  }
}

TEST_CASE("config validation and names") {
  TrainConfig c;
  c.label_smoothing = 1.0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("label_smoothing", 0) == 0);
  }
  for (auto k : {RewardKind::kCider, RewardKind::kCiderMinusDisc, RewardKind::kLoglikMinusDisc})
    CHECK(reward_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(reward_kind_from_string("bleu"), ConfigError);
  CHECK_THROWS_AS(mle_train(*std::make_unique<TinyLM>(test::random_lm(6, 2, 2, 1, 1)), {}, TrainConfig{}), DataError);
}

TEST_CASE("training log csv") {
  TrainingLog log;
  log.rows.push_back({1, 2.5, 0.0, 3.0});
  std::ostringstream out;
  log.write_csv(out);
  CHECK(out.str().rfind("iteration,loss,baseline,ms\n", 0) == 0);
}

}  // TEST_SUITE
