#include "capgen/tagrank.hpp"
#include "capgen/errors.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace capgen;

namespace {

TagRecord record(std::vector<std::string> captions, std::vector<std::string> tags) {
  TagRecord r;
  r.id = "r";
  r.context = Eigen::VectorXd::Ones(3);
  for (const auto& c : captions) r.captions.push_back(tokenize(c));
  r.tags = std::move(tags);
  return r;
}

// Loss = sum of per-tag costs plus a pairwise interaction, so greedy order
// depends on what has already been chosen.
struct RandomSetLoss {
  std::map<std::string, double> cost;
  std::map<std::pair<std::string, std::string>, double> pair;
  double operator()(std::span<const std::string> tags) const {
    double l = 0;
    for (std::size_t i = 0; i < tags.size(); ++i) {
      l += cost.at(tags[i]);
      for (std::size_t j = 0; j < i; ++j) l += pair.at(std::minmax(tags[i], tags[j]));
    }
    return l;
  }
};

}  // namespace

TEST_SUITE("tagrank") {

TEST_CASE("SetRecall worked example") {
  const std::vector<std::string> gt = {"cat", "bed", "pillow"};
  const std::vector<std::string> pred = {"bed", "cat", "sleep", "wall", "pillow"};
  const double expected[] = {0.0, 1.0, 2.0 / 3, 2.0 / 3, 1.0};
  for (int k = 1; k <= 5; ++k) CHECK(set_recall_at_k(pred, gt, k) == expected[k - 1]);
  CHECK_THROWS(set_recall_at_k(pred, gt, 0));
  CHECK_THROWS(set_recall_at_k(pred, std::vector<std::string>{}, 1));
}

TEST_CASE("SetRecall uses canonical forms and stays in [0, 1]") {
  SynonymTable syn;
  const std::vector<std::string> m = {"kitty"};
  syn.add("cat", m);
  const std::vector<std::string> gt = {"cat"}, pred = {"kitty"};
  CHECK(set_recall_at_k(pred, gt, 1, syn) == 1.0);
  Rng rng(90);
  const std::vector<std::string> pool = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = sample_tag_subset(pool, rng), r = sample_tag_subset(pool, rng);
    if (r.empty()) continue;
    const double v = set_recall_at_k(p, r, 1 + static_cast<int>(rng.below(5)));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("weighted SetRecall with one sequence equals plain SetRecall") {
  TagAnnotation a;
  a.id = "x";
  a.round1 = {{"cat", 10}};
  a.round2["cat"] = {{"bed", 10}};
  a.round3[TagAnnotation::key("cat", "bed")] = {{"pillow", 10}};
  const auto seqs = annotation_sequences(a);
  REQUIRE(seqs.size() == 1);
  CHECK(seqs[0].weight == 1.0);
  const std::vector<std::string> pred = {"bed", "cat", "sleep", "wall", "pillow"};
  for (int k = 1; k <= 5; ++k) CHECK(weighted_set_recall(pred, a, k) == set_recall_at_k(pred, seqs[0].tags, k));
}

TEST_CASE("annotation weights are count products, normalized") {
  TagAnnotation a;
  a.id = "x";
  a.round1 = {{"cat", 3}, {"dog", 1}};
  a.round2["cat"] = {{"bed", 2}};
  a.round2["dog"] = {{"ball", 1}};
  a.round3[TagAnnotation::key("cat", "bed")] = {{"pillow", 1}, {"sheet", 1}};
  a.round3[TagAnnotation::key("dog", "ball")] = {{"grass", 4}};
  const auto seqs = annotation_sequences(a);
  REQUIRE(seqs.size() == 3);
  double total = 0;
  std::map<std::string, double> w;
  for (const auto& s : seqs) {
    total += s.weight;
    w[s.tags[2]] = s.weight;
  }
  CHECK(total == doctest::Approx(1.0));
  CHECK(w["pillow"] == doctest::Approx(6.0 / 16));
  CHECK(w["grass"] == doctest::Approx(4.0 / 16));
  TagAnnotation empty;
  empty.round1 = {{"cat", 1}};
  CHECK_THROWS_AS(annotation_sequences(empty), DataError);
}

TEST_CASE("frequency baselines") {
  const TagRecord r = record({"a dog on grass", "dog and ball", "a brown dog on a ball"}, {"dog", "grass", "ball", "brown"});
  CHECK(caption_tf(r, "dog") == 3);
  CHECK(caption_tf(r, "ball") == 2);
  CHECK(tf_rank(r, r.tags).tags == std::vector<std::string>{"dog", "ball", "brown", "grass"});
  CHECK(tf_rank(r, r.tags).losses == std::vector<double>{-3, -2, -1, -1});

  const TagRecord single = record({"grass under a brown dog"}, {"dog", "grass", "brown"});
  CHECK(tagorder_rank(single, single.tags).tags == std::vector<std::string>{"grass", "brown", "dog"});

  const std::vector<TagRecord> training = {record({"dog dog", "cat"}, {}), record({"dog", "bird"}, {})};
  const TagStatistics stats(training);
  CHECK(stats.captions() == 4);
  CHECK(stats.frequency("dog") == 3);
  CHECK(stats.document_frequency("dog") == 2);
  CHECK(stats.idf("dog") == doctest::Approx(std::log(2.0)));
  CHECK(stats.idf("never") == doctest::Approx(std::log(4.0)));
  CHECK(freq_rank(r, r.tags, stats).tags.front() == "dog");
  // tf x idf: dog 3 ln2, ball/grass/brown unseen get tf x ln4
  const auto tfidf = tfidf_rank(r, r.tags, stats);
  CHECK(tfidf.tags == std::vector<std::string>{"ball", "dog", "brown", "grass"});
}

TEST_CASE("greedy ranking equals the brute-force oracle") {
  Rng rng(91);
  const std::vector<std::string> pool = {"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> tags(pool.begin(), pool.begin() + 1 + static_cast<std::ptrdiff_t>(rng.below(6)));
    RandomSetLoss loss;
    for (const auto& t : pool) loss.cost[t] = static_cast<double>(rng.below(4));
    for (const auto& a : pool)
      for (const auto& b : pool) loss.pair[std::minmax(a, b)] = static_cast<double>(rng.below(3)) - 1.0;
    const FunctionScorer scorer([&](const TagRecord&, std::span<const std::string> t) { return loss(t); });
    const TagRecord r = record({"x"}, tags);
    const RankedTags got = rank_tags_greedy(r, tags, scorer);
    const auto want = oracle::greedy_rank(tags, [&](const std::vector<std::string>& t) { return loss(t); });
    CHECK(got.tags == want);
    for (std::size_t k = 0; k < got.tags.size(); ++k) {
      const std::vector<std::string> prefix(got.tags.begin(), got.tags.begin() + static_cast<std::ptrdiff_t>(k) + 1);
      CHECK(got.losses[k] == loss(prefix));
    }
  }
}

TEST_CASE("ties go to the lexicographically smaller tag") {
  const FunctionScorer flat([](const TagRecord&, std::span<const std::string>) { return 1.0; });
  const std::vector<std::string> tags = {"zebra", "apple", "mango"};
  CHECK(rank_tags_greedy(record({"x"}, tags), tags, flat).tags == std::vector<std::string>{"apple", "mango", "zebra"});
  CHECK_THROWS(rank_tags_greedy(record({"x"}, {}), std::vector<std::string>{}, flat));
}

TEST_CASE("score sorting is greedy ranking under negative summed score") {
  Rng rng(92);
  const std::vector<std::string> tags = {"a", "b", "c", "d", "e"};
  std::map<std::string, double> s;
  for (const auto& t : tags) s[t] = static_cast<double>(rng.below(3));
  const auto sorted = rank_by_score(tags, [&](const std::string& t) { return s[t]; });
  const FunctionScorer neg([&](const TagRecord&, std::span<const std::string> t) {
    double v = 0;
    for (const auto& x : t) v -= s[x];
    return v;
  });
  CHECK(rank_tags_greedy(record({"x"}, tags), tags, neg).tags == sorted.tags);
}

TEST_CASE("combined ranking is invariant to positive weight scaling") {
  Rng rng(93);
  const std::vector<std::string> tags = {"a", "b", "c", "d"};
  RandomSetLoss l1, l2;
  for (auto* l : {&l1, &l2}) {
    for (const auto& t : tags) l->cost[t] = rng.uniform(0, 2);
    for (const auto& a : tags)
      for (const auto& b : tags) l->pair[std::minmax(a, b)] = rng.uniform(-1, 1);
  }
  const FunctionScorer s1([&](const TagRecord&, std::span<const std::string> t) { return l1(t); });
  const FunctionScorer s2([&](const TagRecord&, std::span<const std::string> t) { return l2(t); });
  const TagRecord r = record({"x"}, tags);
  const auto base = rank_tags_greedy(r, tags, combine_rankers({{&s1, 1.0}, {&s2, 0.5}}));
  for (double c : {0.25, 3.0, 8.0})
    CHECK(rank_tags_greedy(r, tags, combine_rankers({{&s1, c}, {&s2, 0.5 * c}})).tags == base.tags);
  CHECK(combine_rankers({{&s1, 2.0}}).reconstruction_loss(r, tags) == doctest::Approx(2 * l1(tags)));
  CHECK_THROWS_AS(combine_rankers({}), ConfigError);
}

TEST_CASE("tag encoder averages embeddings") {
  const Vocabulary tv({"cat", "dog"}, 0);
  TagEncoder e(tv, 3, 94);
  const std::vector<std::string> both = {"cat", "dog"};
  CHECK((e.encode(both) - (e.embeddings().col(tv.id("cat")) + e.embeddings().col(tv.id("dog"))) / 2).norm() < 1e-15);
  CHECK(e.encode(std::vector<std::string>{}).isZero());
}

TEST_CASE("gradient check on the tag2feat loss") {
  const Vocabulary tv({"a", "b", "c", "d"}, 0);
  Tag2FeatScorer s(tv, 3, 5, 95);
  Rng rng(95);
  const Eigen::VectorXd ctx = test::random_vector(rng, 5);
  const std::vector<std::string> tags = {"a", "c", "d"};
  const auto res = gradient_check(s.refs(), [&](GradList* g) { return s.loss(tags, ctx, g); });
  CHECK(res.max_rel_error < 1e-4);
  CHECK(s.loss(tags, ctx, nullptr) >= 0.0);
  CHECK(s.loss(tags, ctx, nullptr) <= 2.0);
}

TEST_CASE("gradient check on the tag2cap loss") {
  const Vocabulary cv({"a", "cat", "dog", "sits"}, 0);
  const Vocabulary tv({"cat", "dog", "sits"}, 0);
  Tag2CapScorer s(cv, tv, 3, 4, 5, 96);
  init_uniform(s.model().params().refs(), 96, 0.5);
  const std::vector<std::string> tags = {"cat", "sits"};
  const Caption cap = tokenize("a cat sits");
  ParamList params = s.model().params().refs();
  params.push_back({"tag_embed", &s.encoder().embeddings()});
  const auto res = gradient_check(params, [&](GradList* g) {
    TinyLMParams lm = TinyLMParams::zeros(s.model().dims());
    Eigen::MatrixXd tg = Eigen::MatrixXd::Zero(s.encoder().embeddings().rows(), s.encoder().embeddings().cols());
    const double v = s.caption_loss(tags, cap, g ? &lm : nullptr, g ? &tg : nullptr);
    if (g) {
      GradList l = lm.to_list();
      l.push_back(tg);
      add_scaled(*g, l, 1.0);
    }
    return v;
  });
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("tag scorers learn") {
  const Vocabulary cv({"a", "cat", "dog", "sits", "runs"}, 0);
  const Vocabulary tv({"cat", "dog", "sits", "runs"}, 0);
  std::vector<TagRecord> recs;
  for (const char* c : {"a cat sits", "a dog runs", "a cat runs", "a dog sits"}) {
    TagRecord r = record({c}, {});
    const Caption words = tokenize(c);
    r.tags = {words[1], words[2]};
    r.context = Eigen::VectorXd::Zero(4);
    r.context[tv.id(words[1]) - Vocabulary::kReserved] = 1.0;
    r.context[tv.id(words[2]) - Vocabulary::kReserved] = 1.0;
    recs.push_back(r);
  }
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 0.5;
  const SubsetSampler full = [](std::span<const std::string> t, Rng&) { return std::vector<std::string>(t.begin(), t.end()); };

  Tag2FeatScorer f(tv, 4, 4, 97);
  const auto flog = train_tag2feat(f, recs, cfg, full);
  CHECK(flog.last_loss() < flog.first_loss());

  Tag2CapScorer c(cv, tv, 4, 8, 8, 98);
  const auto clog = train_tag2cap(c, recs, cfg, full);
  CHECK(clog.last_loss() < clog.first_loss());
  // The right tags explain the caption better than the wrong ones.
  const std::vector<std::string> right = {"cat", "sits"}, wrong = {"dog", "runs"};
  CHECK(c.reconstruction_loss(recs[0], right) < c.reconstruction_loss(recs[0], wrong));
}

TEST_CASE("subset sampler draws distinct tags of every size") {
  Rng rng(99);
  const std::vector<std::string> tags = {"a", "b", "c"};
  std::map<std::size_t, int> sizes;
  for (int i = 0; i < 2000; ++i) {
    auto s = sample_tag_subset(tags, rng);
    sizes[s.size()]++;
    std::sort(s.begin(), s.end());
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  }
  CHECK(sizes.size() == 4);
  for (const auto& [n, count] : sizes) CHECK(std::abs(count - 500) < 100);
}

TEST_CASE("tag records and pseudo-tag corpus") {
  CorpusRecord a;
  a.id = "a";
  a.context = Eigen::VectorXd::Zero(1);
  a.captions = {tokenize("the dog chases a ball"), tokenize("a ball and a dog")};
  CorpusRecord b = a;
  b.id = "b";
  b.captions = {tokenize("the the")};
  const std::vector<CorpusRecord> corpus = {a, b};
  const WordSet stop = {"the", "a", "and"};
  const Vocabulary tv = build_tag_vocab(corpus, stop);
  const auto recs = tag_records(corpus, tv, stop);
  CHECK(recs[0].tags == std::vector<std::string>{"dog", "chases", "ball"});
  CHECK(recs[1].tags.empty());
  const auto pseudo = build_pseudo_tag_corpus(recs, [](const TagRecord& r) { return tf_rank(r, r.tags); });
  CHECK(pseudo.skipped == 1);
  REQUIRE(pseudo.records.size() == 1);
  CHECK(pseudo.records[0].captions[0] == Caption{"ball", "dog", "chases"});
}

}  // TEST_SUITE
