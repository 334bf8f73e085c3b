#include "capgen/corpus.hpp"
#include "capgen/errors.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <sstream>

using namespace capgen;

TEST_SUITE("corpus") {

TEST_CASE("tokenize lowercases, strips punctuation and splits on whitespace") {
  CHECK(tokenize("A Dog, running!  fast.") == Caption{"a", "dog", "running", "fast"});
  CHECK(tokenize("   ").empty());
  const std::string text = "a man rides a horse";
  const Caption toks = tokenize(text);
  CHECK(detokenize(toks) == text);
}

TEST_CASE("vocabulary reserves four ids and orders by frequency") {
  const std::vector<std::string> caps = {"a b", "a"};
  const Vocabulary v = build_vocab(caps, 8);
  CHECK(v.size() == 6);
  CHECK(v.id("a") == Vocabulary::kReserved);
  CHECK(v.id("b") == Vocabulary::kReserved + 1);
  CHECK(v.token(Vocabulary::kEos) != v.token(Vocabulary::kBos));
}

TEST_CASE("frequency ties break lexicographically") {
  const std::vector<std::string> caps = {"c b"};
  const Vocabulary v = build_vocab(caps, 8);
  CHECK(v.id("b") < v.id("c"));
}

TEST_CASE("max_size keeps the most frequent tokens") {
  const std::vector<std::string> caps = {"x y y z z z"};
  const Vocabulary v = build_vocab(caps, 6);
  CHECK(v.size() == 6);
  CHECK(v.contains("z"));
  CHECK(v.contains("y"));
  CHECK_FALSE(v.contains("x"));
}

TEST_CASE("unknown tokens map to unk and encode appends eos") {
  const std::vector<std::string> caps = {"a"};
  const Vocabulary v = build_vocab(caps, 8);
  const Caption toks = {"a", "z"};
  const auto ids = v.encode(toks);
  CHECK(ids == std::vector<TokenId>{v.id("a"), Vocabulary::kUnk, Vocabulary::kEos});
  CHECK(v.decode(ids) == Caption{"a", v.token(Vocabulary::kUnk)});
}

TEST_CASE("empty caption list is an error") {
  const std::vector<std::string> none;
  CHECK_THROWS_AS(build_vocab(none, 8), std::invalid_argument);
}

TEST_CASE("marker block is contiguous after the reserved ids") {
  const std::vector<Caption> caps = {{"a", "b"}};
  const Vocabulary v = build_vocab_from_tokens(caps, 100, 5);
  CHECK(v.has_markers());
  for (int l = 1; l <= 5; ++l) {
    CHECK(v.marker_id(l) == Vocabulary::kReserved + l - 1);
    CHECK(v.is_marker(v.marker_id(l)));
    CHECK(v.marker_length(v.marker_id(l)) == l);
  }
  CHECK_FALSE(v.is_marker(v.id("a")));
  CHECK(v.id("a") == Vocabulary::kReserved + 5);
  CHECK_THROWS(v.marker_id(6));
}

TEST_CASE("vocabulary ids are a bijection over words") {
  const std::vector<std::string> caps = {"the cat sat on the mat", "a dog ran"};
  const Vocabulary v = build_vocab(caps, 100);
  for (TokenId i = 0; i < static_cast<TokenId>(v.size()); ++i) CHECK(v.id(v.token(i)) == i);
}

TEST_CASE("extract_tags removes stop words") {
  const std::vector<std::string> caps = {"a black cat on a mat"};
  const Vocabulary tv = build_vocab(caps, 100);
  const WordSet stop = {"a", "on"};
  CHECK(extract_tags(tokenize("a black cat on a mat"), tv, stop, {}) == WordSet{"black", "cat", "mat"});
  CHECK(extract_tags(tokenize("the the the"), tv, {"the"}, {}).empty());
}

TEST_CASE("extract_tags canonicalizes synonyms") {
  SynonymTable syn;
  const std::vector<std::string> members = {"bikes", "bicycles"};
  syn.add("bike", members);
  const Vocabulary tv({"bike", "near"}, 0);
  CHECK(extract_tags(tokenize("bikes near bicycles"), tv, {"near"}, syn) == WordSet{"bike"});
  for (const auto& s : {"bikes", "bicycles", "bike"}) {
    const Caption c = {s};
    CHECK(extract_tags(c, tv, {}, syn) == WordSet{"bike"});
  }
}

TEST_CASE("extract_tags is idempotent and order independent") {
  const Vocabulary tv({"cat", "dog", "mat", "red"}, 0);
  const Caption c = {"red", "cat", "dog", "on", "mat", "cat"};
  const WordSet once = extract_tags(c, tv, {"on"}, {});
  const std::vector<std::string> again(once.begin(), once.end());
  CHECK(extract_tags(again, tv, {"on"}, {}) == once);
  Caption reversed = c;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(extract_tags(reversed, tv, {"on"}, {}) == once);
  CHECK(extract_tag_sequence(c, tv, {"on"}, {}) == std::vector<std::string>{"red", "cat", "dog", "mat"});
}

TEST_CASE("synonym member sets must be disjoint") {
  SynonymTable syn;
  const std::vector<std::string> a = {"cats"};
  syn.add("cat", a);
  CHECK(syn.canonical("cats") == "cat");
  CHECK(syn.canonical("cat") == "cat");
  CHECK(syn.canonical("dog") == "dog");
  CHECK_THROWS_AS(syn.add("kitty", a), DataError);
}

TEST_CASE("synonym TSV parsing") {
  std::istringstream in("bike\tbikes,bicycles\nperson\tman,woman\n");
  const SynonymTable syn = parse_synonyms(in);
  CHECK(syn.size() == 2);
  CHECK(syn.canonical("bicycles") == "bike");
  CHECK(syn.canonical("woman") == "person");
}

CorpusRecord record(const std::string& id, std::vector<std::string> captions) {
  CorpusRecord r;
  r.id = id;
  r.context = Eigen::VectorXd::Zero(2);
  for (const auto& c : captions) r.captions.push_back(tokenize(c));
  return r;
}

TEST_CASE("build_tag_vocab keeps the most frequent non-stop words") {
  std::vector<CorpusRecord> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(record("c" + std::to_string(i), {"the cat"}));
  for (int i = 0; i < 5; ++i) corpus.push_back(record("d" + std::to_string(i), {"the dog"}));
  const Vocabulary one = build_tag_vocab(corpus, {"the"}, 1);
  CHECK(one.word_count() == 1);
  CHECK(one.contains("cat"));
  const Vocabulary both = build_tag_vocab(corpus, {"the"}, 10);
  CHECK(both.id("cat") < both.id("dog"));
}

TEST_CASE("build_tag_vocab ties are lexicographic") {
  std::vector<CorpusRecord> corpus = {record("x", {"zebra apple"})};
  const Vocabulary v = build_tag_vocab(corpus, {}, 1);
  CHECK(v.contains("apple"));
  CHECK_FALSE(v.contains("zebra"));
}

TEST_CASE("build_tag_vocab warns when every token is a stop word") {
  test::WarningCapture warnings;
  std::vector<CorpusRecord> corpus = {record("x", {"the a"})};
  const Vocabulary v = build_tag_vocab(corpus, {"the", "a"});
  CHECK(v.word_count() == 0);
  CHECK(warnings.messages.size() == 1);
  CHECK_THROWS(build_tag_vocab(std::vector<CorpusRecord>{}, {}));
}

TEST_CASE("empty corpus file gives an empty list") {
  std::istringstream in("");
  CHECK(parse_corpus(in).empty());
}

TEST_CASE("corpus parsing reports line numbers") {
  std::istringstream in("{\"id\": \"a\", \"context\": [1, 2], \"captions\": [\"x y\"]}\nnot json\n");
  try {
    parse_corpus(in);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("corpus rejects inconsistent context dimensions and records without captions") {
  std::istringstream dims(
      "{\"id\": \"a\", \"context\": [1, 2], \"captions\": [\"x\"]}\n"
      "{\"id\": \"b\", \"context\": [1], \"captions\": [\"x\"]}\n");
  CHECK_THROWS_AS(parse_corpus(dims), DataError);
  std::istringstream none("{\"id\": \"a\", \"context\": [1], \"captions\": []}\n");
  CHECK_THROWS_AS(parse_corpus(none), DataError);
}

TEST_CASE("long captions are truncated with a warning") {
  test::WarningCapture warnings;
  std::string cap;
  for (int i = 0; i < 40; ++i) cap += "w ";
  std::istringstream in("{\"id\": \"a\", \"context\": [0], \"captions\": [\"" + cap + "\"]}\n");
  const auto recs = parse_corpus(in);
  CHECK(recs[0].captions[0].size() == static_cast<std::size_t>(kMaxCaptionLength));
  CHECK_FALSE(warnings.messages.empty());
}

TEST_CASE("corpus round trip preserves records") {
  std::istringstream in(
      "{\"id\": \"a\", \"context\": [0.5, -1.25], \"captions\": [\"black cat\", \"a cat\"], "
      "\"tuples\": [[[\"cat\"], [\"cat\", \"black\"]], [[\"cat\"]]]}\n"
      "{\"id\": \"b\", \"context\": [0.1, 3], \"captions\": [\"dog\"]}\n");
  const auto recs = parse_corpus(in);
  std::ostringstream out;
  write_corpus(out, recs);
  std::istringstream back(out.str());
  const auto again = parse_corpus(back);
  REQUIRE(again.size() == 2);
  CHECK(again[0].captions == recs[0].captions);
  CHECK(again[0].tuples == recs[0].tuples);
  CHECK(again[0].context == recs[0].context);
  CHECK_FALSE(again[1].has_tuples());
  std::ostringstream out2;
  write_corpus(out2, again);
  CHECK(out2.str() == out.str());
}

const char* region_line(double x_br) {
  static std::string s;
  s = "{\"id\": \"r\", \"image_feature\": [1], \"size\": [100, 50], \"regions\": [{\"box\": [10, 5, " +
      std::to_string(x_br) + ", 40], \"feature\": [0.5, 0.5], \"expressions\": [\"the dog\"]}]}\n";
  return s.c_str();
}

TEST_CASE("region boxes must lie inside the image") {
  std::istringstream ok(region_line(90));
  const auto recs = parse_regions(ok);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].regions[0].box.x_br == 90);
  std::istringstream bad(region_line(120));
  try {
    parse_regions(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("x_br") != std::string::npos);
  }
}

TEST_CASE("regions round trip") {
  std::istringstream in(region_line(90));
  const auto recs = parse_regions(in);
  std::ostringstream out;
  write_regions(out, recs);
  std::istringstream back(out.str());
  const auto again = parse_regions(back);
  CHECK(again[0].regions[0].expressions == recs[0].regions[0].expressions);
  CHECK(again[0].width == 100);
  CHECK(again[0].regions[0].feature == recs[0].regions[0].feature);
}

TEST_CASE("tag annotations parse and validate") {
  std::istringstream in(
      "{\"id\": \"img\", \"round1\": {\"cat\": 3, \"bed\": 1}, \"round2\": {\"cat\": {\"bed\": 2}}, "
      "\"round3\": [{\"given\": [\"cat\", \"bed\"], \"counts\": {\"pillow\": 1}}]}\n");
  const auto ann = parse_tag_annotations(in);
  REQUIRE(ann.size() == 1);
  CHECK(ann[0].round1.at("cat") == 3);
  CHECK(ann[0].round2.at("cat").at("bed") == 2);
  CHECK(ann[0].round3.at(TagAnnotation::key("bed", "cat")).at("pillow") == 1);
  std::istringstream zero("{\"id\": \"img\", \"round1\": {\"cat\": 0}}\n");
  CHECK_THROWS_AS(parse_tag_annotations(zero), DataError);
  std::istringstream orphan("{\"id\": \"img\", \"round1\": {\"cat\": 1}, \"round2\": {\"dog\": {\"bed\": 1}}}\n");
  CHECK_THROWS_AS(parse_tag_annotations(orphan), DataError);
}

TEST_CASE("word lists skip comments") {
  std::istringstream in("# stop words\na\nthe\n\nof\n");
  CHECK(parse_word_list(in) == WordSet{"a", "of", "the"});
}

TEST_CASE("bad-ending list") {
  const WordSet expected = {"a", "an", "the", "in", "for", "at", "of", "with", "before",
                            "after", "on", "upon", "near", "to", "is", "are", "am"};
  CHECK(default_bad_endings() == expected);
}

}  // TEST_SUITE
