#include "capgen/scenegraph.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <fstream>

using namespace capgen;

namespace {

SceneGraph g(std::initializer_list<Tuple> tuples) {
  const std::vector<Tuple> v(tuples);
  return graph_from_tuples(v);
}

Lexicon toy_lexicon() {
  Lexicon l;
  l.objects = {"man", "horse", "dog", "grass", "hat"};
  l.attributes = {"brown", "big", "red"};
  l.relations = {"on", "riding", "wearing"};
  return l;
}

}  // namespace

TEST_SUITE("scenegraph") {

TEST_CASE("inserting a relation adds its objects") {
  const SceneGraph s = g({{"man", "riding", "horse"}, {"horse", "brown"}});
  CHECK(s.size() == 4);
  CHECK(s.contains({"man"}));
  CHECK(s.contains({"horse"}));
  CHECK_THROWS(g({{}}));
  CHECK_THROWS(g({{"a", "b", "c", "d"}}));
}

TEST_CASE("synonyms canonicalize tuples") {
  SynonymTable syn;
  const std::vector<std::string> members = {"guy", "person"};
  syn.add("man", members);
  const std::vector<Tuple> t = {{"guy", "riding", "horse"}};
  CHECK(graph_from_tuples(t, syn) == g({{"man", "riding", "horse"}}));
}

TEST_CASE("SPICE by hand") {
  const SceneGraph ref = g({{"man", "riding", "horse"}, {"horse", "brown"}});  // 4 tuples
  const SceneGraph cand = g({{"man"}, {"horse", "white"}});                    // man, horse, (horse white)
  // matched: man, horse -> p = 2/3, r = 1/2
  CHECK(spice_f1(cand, ref) == doctest::Approx(2 * (2.0 / 3) * 0.5 / (2.0 / 3 + 0.5)));
  CHECK(spice_f1(ref, ref) == 1.0);
  CHECK(spice_f1(SceneGraph{}, ref) == 0.0);
  CHECK(spice_f1(g({{"cat"}}), ref) == 0.0);
  CHECK_THROWS(spice_f1(cand, SceneGraph{}));
}

TEST_CASE("AllSPICE is SPICE of the union") {
  const std::vector<SceneGraph> refs = {g({{"man", "riding", "horse"}}), g({{"horse", "brown"}})};
  const std::vector<SceneGraph> cands = {g({{"man"}}), g({{"horse", "brown"}})};
  const std::vector<SceneGraph> cand_union = {merge_graphs(cands)};
  CHECK(allspice(cands, refs) == spice_f1(merge_graphs(cands), merge_graphs(refs)));
  CHECK(allspice(cand_union, refs) == allspice(cands, refs));
  CHECK_THROWS(allspice(std::vector<SceneGraph>{}, refs));
  CHECK_THROWS(allspice(cands, std::vector<SceneGraph>{}));
}

TEST_CASE("AllSPICE matches a tuple-set oracle on random graphs") {
  Rng rng(80);
  const std::vector<std::string> objs = {"a", "b", "c"}, rels = {"r", "s"}, attrs = {"x", "y"};
  auto random_graph = [&] {
    std::vector<Tuple> t;
    const int n = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n; ++i) {
      const auto& o = objs[rng.below(3)];
      switch (rng.below(3)) {
        case 0: t.push_back({o}); break;
        case 1: t.push_back({o, attrs[rng.below(2)]}); break;
        default: t.push_back({o, rels[rng.below(2)], objs[rng.below(3)]});
      }
    }
    return graph_from_tuples(t);
  };
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SceneGraph> c, r;
    std::vector<std::set<Tuple>> cs, rs;
    for (int i = 0; i < 1 + static_cast<int>(rng.below(4)); ++i) {
      c.push_back(random_graph());
      cs.push_back(c.back().tuples());
    }
    for (int i = 0; i < 1 + static_cast<int>(rng.below(4)); ++i) {
      r.push_back(random_graph());
      rs.push_back(r.back().tuples());
    }
    CHECK(allspice(c, r) == doctest::Approx(oracle::allspice(cs, rs)).epsilon(1e-15));
  }
}

TEST_CASE("lexicon extraction") {
  const Lexicon lex = toy_lexicon();
  const auto t = lexicon_extract_tuples(tokenize("a big brown horse on the grass"), lex);
  const SceneGraph s = graph_from_tuples(t);
  CHECK(s == g({{"horse", "big"}, {"horse", "brown"}, {"horse", "on", "grass"}}));

  const auto far = lexicon_extract_tuples(tokenize("man with a very old big hat"), lex);
  CHECK(graph_from_tuples(far) == g({{"man"}, {"hat", "big"}}));

  const auto rel = lexicon_extract_tuples(tokenize("man riding a horse wearing a red hat"), lex);
  const SceneGraph rg = graph_from_tuples(rel);
  CHECK(rg.contains({"man", "riding", "horse"}));
  CHECK(rg.contains({"horse", "wearing", "hat"}));
  CHECK(rg.contains({"hat", "red"}));
  CHECK_FALSE(rg.contains({"man", "wearing", "hat"}));
}

TEST_CASE("lexicon files load as word lists") {
  test::TempDir dir("lexicon");
  for (const char* name : {"o.txt", "a.txt", "r.txt"}) {
    std::ofstream out(dir.file(name));
    out << "# comment\n" << (std::string(name) == "o.txt" ? "dog\ncat\n" : "x\n");
  }
  const Lexicon l = load_lexicon(dir.file("o.txt"), dir.file("a.txt"), dir.file("r.txt"));
  CHECK(l.objects == WordSet{"cat", "dog"});
  CHECK(l.attributes == WordSet{"x"});
}

}  // TEST_SUITE
