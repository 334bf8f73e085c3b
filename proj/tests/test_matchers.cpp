#include "capgen/matchers.hpp"
#include "capgen/errors.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace capgen;

namespace {

std::vector<TokenId> random_caption(Rng& rng, int vocab, int max_len = 5) {
  std::vector<TokenId> c;
  const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len)));
  for (int i = 0; i < len; ++i) c.push_back(Vocabulary::kReserved + static_cast<TokenId>(rng.below(vocab - Vocabulary::kReserved)));
  c.push_back(Vocabulary::kEos);
  return c;
}

// Literal transcription of the contrastive objective for cross-checking.
double contrastive_oracle(const RetrievalScorer& s, const std::vector<Eigen::VectorXd>& ctx,
                          const std::vector<std::vector<TokenId>>& cap, double margin) {
  const std::size_t n = ctx.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = s.similarity(ctx[i], cap[i]);
    double a = -1e300, b = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      a = std::max(a, margin + s.similarity(ctx[i], cap[j]) - pos);
      b = std::max(b, margin + s.similarity(ctx[j], cap[i]) - pos);
    }
    total += std::max(0.0, a) + std::max(0.0, b);
  }
  return total / static_cast<double>(n);
}

Eigen::MatrixXd random_stochastic(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd q(rows, cols);
  for (int t = 0; t < cols; ++t) {
    Eigen::VectorXd c = test::random_vector(rng, rows, 2.0);
    q.col(t) = softmax(c);
  }
  return q;
}

}  // namespace

TEST_SUITE("matchers") {

TEST_CASE("location feature") {
  const Eigen::VectorXd l = location_feature(Box{10, 20, 60, 70}, 100, 200);
  CHECK(l[0] == doctest::Approx(0.1));
  CHECK(l[1] == doctest::Approx(0.1));
  CHECK(l[2] == doctest::Approx(0.6));
  CHECK(l[3] == doctest::Approx(0.35));
  CHECK(l[4] == doctest::Approx(2500.0 / 20000.0));
  CHECK_THROWS(location_feature(Box{10, 20, 5, 70}, 100, 200));
  CHECK_THROWS(location_feature(Box{10, 20, 160, 70}, 100, 200));
}

TEST_CASE("similarity is a cosine in [-1, 1] and ignores eos") {
  Rng rng(40);
  RetrievalScorer s(12, 5, 4, 6, 40);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd ctx = test::random_vector(rng, 4);
    auto cap = random_caption(rng, 12);
    const double v = s.similarity(ctx, cap);
    CHECK(v <= 1.0 + 1e-12);
    CHECK(v >= -1.0 - 1e-12);
    cap.pop_back();
    CHECK(s.similarity(ctx, cap) == v);
  }
}

TEST_CASE("contrastive loss matches the literal objective") {
  Rng rng(41);
  RetrievalScorer s(12, 5, 4, 6, 41);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(5));
    std::vector<Eigen::VectorXd> ctx;
    std::vector<std::vector<TokenId>> cap;
    for (int i = 0; i < n; ++i) {
      ctx.push_back(test::random_vector(rng, 4));
      cap.push_back(random_caption(rng, 12));
    }
    const double margin = rng.uniform(0.0, 0.5);
    CHECK(contrastive_loss(s, ctx, cap, margin) == doctest::Approx(contrastive_oracle(s, ctx, cap, margin)).epsilon(1e-12));
    CHECK(contrastive_loss(s, ctx, cap, margin) >= 0.0);
  }
}

TEST_CASE("contrastive loss of a single pair is zero") {
  RetrievalScorer s(8, 3, 2, 3, 42);
  const std::vector<Eigen::VectorXd> ctx = {Eigen::VectorXd::Ones(2)};
  const std::vector<std::vector<TokenId>> cap = {{5, Vocabulary::kEos}};
  CHECK(contrastive_loss(s, ctx, cap) == 0.0);
}

TEST_CASE("pair contrastive loss against in-batch negatives") {
  Rng rng(43);
  RetrievalScorer s(12, 5, 4, 6, 43);
  std::vector<Eigen::VectorXd> ctx;
  std::vector<std::vector<TokenId>> cap;
  for (int i = 0; i < 4; ++i) {
    ctx.push_back(test::random_vector(rng, 4));
    cap.push_back(random_caption(rng, 12));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<Eigen::VectorXd> nc;
    std::vector<std::vector<TokenId>> ncap;
    for (std::size_t j = 0; j < 4; ++j)
      if (j != i) {
        nc.push_back(ctx[j]);
        ncap.push_back(cap[j]);
      }
    sum += pair_contrastive_loss(s, ctx[i], cap[i], nc, ncap, 0.2);
  }
  CHECK(sum / 4 == doctest::Approx(contrastive_loss(s, ctx, cap, 0.2)).epsilon(1e-12));
}

TEST_CASE("gradient check on the contrastive loss") {
  Rng rng(44);
  RetrievalScorer s(10, 4, 3, 5, 44);
  std::vector<Eigen::VectorXd> ctx;
  std::vector<std::vector<TokenId>> cap;
  for (int i = 0; i < 4; ++i) {
    ctx.push_back(test::random_vector(rng, 3));
    cap.push_back(random_caption(rng, 10));
  }
  GradientCheckOptions opt;
  opt.kink_threshold = 1e-3;
  const auto res = gradient_check(s.refs(), [&](GradList* g) { return contrastive_loss(s, ctx, cap, 0.5, g); }, opt);
  CHECK(res.max_rel_error < 1e-4);
  CHECK(res.checked > 0);
}

TEST_CASE("discrimination accuracy and recall") {
  RetrievalScorer s(6, 2, 2, 2, 45);
  auto r = s.refs();
  r[0].value->setZero();
  (*r[0].value)(0, 4) = 1.0;
  (*r[0].value)(1, 5) = 1.0;
  r[1].value->setIdentity();
  r[2].value->setIdentity();
  const Eigen::VectorXd a = Eigen::Vector2d(1, 0), b = Eigen::Vector2d(0, 1);
  const std::vector<TokenId> ca = {4, Vocabulary::kEos}, cb = {5, Vocabulary::kEos};
  const std::vector<DiscriminationItem> items = {{a, b, ca}, {b, a, cb}, {a, b, cb}};
  CHECK(discrimination_accuracy(items, s) == doctest::Approx(2.0 / 3));

  const std::vector<Eigen::VectorXd> ctx = {a, b};
  const std::vector<std::vector<TokenId>> caps = {ca, cb};
  const std::vector<std::string> ids = {"a", "b"};
  const auto rec = retrieval_recall_at_k(ctx, caps, ids, s, 1);
  CHECK(rec.caption_retrieval == 1.0);
  CHECK(rec.image_retrieval == 1.0);
  const std::vector<std::vector<TokenId>> swapped = {cb, ca};
  CHECK(retrieval_recall_at_k(ctx, swapped, ids, s, 1).caption_retrieval == 0.0);
  CHECK(retrieval_recall_at_k(ctx, swapped, ids, s, 2).caption_retrieval == 1.0);
}

TEST_CASE("comprehension losses by hand") {
  ComprehensionModel m(6, 2, 2, 46);
  auto r = m.refs();
  r[0].value->setIdentity();
  r[1].value->setZero();
  r[2].value->setZero();
  (*r[2].value)(0, 4) = 1.0;
  Eigen::MatrixXd regions(2, 2);
  regions << 2, 0,
             0, 1;
  const std::vector<TokenId> q = {4, Vocabulary::kEos};
  // sims = (2, 0)
  CHECK(comprehension_softmax_loss(m, regions, 0, q) == doctest::Approx(std::log1p(std::exp(-2.0))));
  CHECK(comprehension_logistic_loss(m, regions, 0, q) ==
        doctest::Approx(std::log1p(std::exp(-2.0)) + std::log(2.0)));
  CHECK(m.target_log_prob(regions, 1, q) == doctest::Approx(-2.0 - std::log1p(std::exp(-2.0))));
  CHECK(m.resolves(regions, 0, q));
  CHECK_FALSE(m.resolves(regions, 1, q));
}

TEST_CASE("one-hot soft query equals the hard query") {
  Rng rng(47);
  ComprehensionModel m(9, 3, 4, 47);
  const Eigen::MatrixXd regions = Eigen::MatrixXd::Random(3, 4);
  const std::vector<TokenId> q = {5, 7, 4, Vocabulary::kEos};
  Eigen::MatrixXd oh = Eigen::MatrixXd::Zero(9, 3);
  oh(5, 0) = oh(7, 1) = oh(4, 2) = 1.0;
  CHECK(is_soft_query(oh));
  for (auto kind : {ComprehensionLoss::kSoftmax, ComprehensionLoss::kLogistic})
    CHECK(m.loss(regions, 2, oh, kind, nullptr, nullptr) == doctest::Approx(m.loss(regions, 2, q, kind, nullptr)).epsilon(1e-12));
}

TEST_CASE("gradient check on comprehension losses, model and soft query") {
  Rng rng(48);
  ComprehensionModel m(8, 3, 4, 48);
  const Eigen::MatrixXd regions = Eigen::MatrixXd::Random(3, 3);
  Eigen::MatrixXd q = random_stochastic(rng, 8, 3);
  for (auto kind : {ComprehensionLoss::kSoftmax, ComprehensionLoss::kLogistic}) {
    const auto res = gradient_check(m.refs(), [&](GradList* g) { return m.loss(regions, 1, q, kind, g, nullptr); });
    CHECK(res.max_rel_error < 1e-5);

    Eigen::MatrixXd dq;
    m.loss(regions, 1, q, kind, nullptr, &dq);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      const double keep = q(i);
      q(i) = keep + h;
      const double up = m.loss(regions, 1, q, kind, nullptr, nullptr);
      q(i) = keep - h;
      const double down = m.loss(regions, 1, q, kind, nullptr, nullptr);
      q(i) = keep;
      CHECK(dq(i) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("soft query validation") {
  Eigen::MatrixXd q(2, 1);
  q << 0.5, 0.4;
  CHECK_FALSE(is_soft_query(q));
  q << 1.2, -0.2;
  CHECK_FALSE(is_soft_query(q));
  CHECK(comprehension_loss_from_string("logistic") == ComprehensionLoss::kLogistic);
  CHECK_THROWS_AS(comprehension_loss_from_string("hinge"), ConfigError);
}

TEST_CASE("region inputs stack region, image and location features") {
  RegionRecord img;
  img.id = "i";
  img.image_feature = Eigen::Vector2d(0.5, -0.5);
  img.width = 10;
  img.height = 10;
  Region a;
  a.box = Box{0, 0, 5, 5};
  a.feature = Eigen::Vector3d(1, 2, 3);
  img.regions = {a, a};
  img.regions[1].box = Box{5, 5, 10, 10};
  const Eigen::MatrixXd in = region_inputs(img);
  CHECK(in.rows() == 10);
  CHECK(in.cols() == 2);
  CHECK(in(3, 0) == 0.5);
  CHECK(in(5, 1) == 0.5);
  CHECK(in(9, 1) == doctest::Approx(0.25));
  CHECK(region_context(img, 1) == in.col(1));
  RegionRecord empty;
  CHECK_THROWS_AS(region_inputs(empty), DataError);
}

TEST_CASE("body tokens") {
  const std::vector<TokenId> t = {Vocabulary::kBos, 5, 6, Vocabulary::kEos, 7};
  CHECK(body_tokens(t) == std::vector<TokenId>{5, 6});
}

}  // TEST_SUITE
