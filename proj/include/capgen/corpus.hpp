#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace capgen {

using TokenId = int;
using Caption = std::vector<std::string>;  // body tokens, no end marker
using Tuple = std::vector<std::string>;    // scene-graph tuple of arity 1..3
using WordSet = std::set<std::string>;

inline constexpr int kMaxCaptionLength = 28;

// Lowercases, strips ASCII punctuation and splits on whitespace.
Caption tokenize(std::string_view text);
std::string detokenize(std::span<const std::string> tokens);

// Token <-> id bijection. Ids 0..3 are reserved (bos, eos, pad, unk); an
// optional contiguous block of length markers <len1>..<lenN> follows, then
// ordinary words.
class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary() : Vocabulary(std::vector<std::string>{}, 0) {}
  // Words in id order after the reserved and marker blocks.
  Vocabulary(std::vector<std::string> words, int marker_lengths);

  std::size_t size() const { return tokens_.size(); }
  std::size_t word_count() const { return tokens_.size() - first_word_; }
  const std::string& token(TokenId id) const;
  TokenId id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  std::span<const std::string> words() const {
    return std::span<const std::string>(tokens_).subspan(first_word_);
  }

  int marker_lengths() const { return marker_lengths_; }
  bool has_markers() const { return marker_lengths_ > 0; }
  TokenId marker_id(int length) const;
  bool is_marker(TokenId id) const { return id >= kReserved && id < kReserved + marker_lengths_; }
  int marker_length(TokenId id) const;  // requires is_marker(id)

  // Appends kEos. Unknown tokens map to kUnk.
  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  // Stops at kEos; drops bos, pad and marker ids.
  Caption decode(std::span<const TokenId> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  int marker_lengths_ = 0;
  TokenId first_word_ = kReserved;
};

// Keeps the most frequent tokens (ties lexicographic) so that the whole
// vocabulary, reserved and marker ids included, has at most max_size ids.
Vocabulary build_vocab(std::span<const std::string> captions, std::size_t max_size,
                       int marker_lengths = 0);
Vocabulary build_vocab_from_tokens(std::span<const Caption> captions, std::size_t max_size,
                                   int marker_lengths = 0);

// canonical form -> member surface forms; a canonical form is a member of
// its own set and member sets are disjoint.
class SynonymTable {
 public:
  void add(const std::string& canonical, std::span<const std::string> members);
  const std::string& canonical(const std::string& token) const;
  std::size_t size() const { return sets_.size(); }
  const std::map<std::string, WordSet>& sets() const { return sets_; }

 private:
  std::map<std::string, WordSet> sets_;
  std::unordered_map<std::string, std::string> to_canonical_;
};

struct CorpusRecord {
  std::string id;
  Eigen::VectorXd context;
  std::vector<Caption> captions;
  // Per-caption tuples, either empty (absent) or one entry per caption.
  std::vector<std::vector<Tuple>> tuples;

  bool has_tuples() const { return !tuples.empty(); }
};

struct Box {
  double x_tl = 0, y_tl = 0, x_br = 0, y_br = 0;
};

struct Region {
  Box box;
  Eigen::VectorXd feature;
  std::vector<Caption> expressions;
};

// One image of a referring-expression corpus.
struct RegionRecord {
  std::string id;
  Eigen::VectorXd image_feature;
  double width = 0, height = 0;
  std::vector<Region> regions;
};

struct TagAnnotation {
  std::string id;
  std::map<std::string, int> round1;
  std::map<std::string, std::map<std::string, int>> round2;  // keyed by t1
  // Keyed by the conditioning pair, stored sorted.
  std::map<std::pair<std::string, std::string>, std::map<std::string, int>> round3;

  static std::pair<std::string, std::string> key(const std::string& a, const std::string& b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  }
};

// Set of canonical caption tokens that are not stop words and lie in
// tag_vocab's word block.
WordSet extract_tags(std::span<const std::string> caption, const Vocabulary& tag_vocab,
                     const WordSet& stopwords, const SynonymTable& synonyms);
// Same tags in order of first appearance.
std::vector<std::string> extract_tag_sequence(std::span<const std::string> caption,
                                              const Vocabulary& tag_vocab,
                                              const WordSet& stopwords,
                                              const SynonymTable& synonyms);
Vocabulary build_tag_vocab(std::span<const CorpusRecord> corpus, const WordSet& stopwords,
                           std::size_t size = 1000, const SynonymTable& synonyms = {});

// Line-delimited JSON readers/writers. Readers throw DataError with the
// 1-based line number on malformed input.
std::vector<CorpusRecord> load_corpus(const std::string& path);
std::vector<CorpusRecord> parse_corpus(std::istream& in);
void write_corpus(const std::string& path, std::span<const CorpusRecord> records);
void write_corpus(std::ostream& out, std::span<const CorpusRecord> records);

std::vector<RegionRecord> load_regions(const std::string& path);
std::vector<RegionRecord> parse_regions(std::istream& in);
void write_regions(const std::string& path, std::span<const RegionRecord> records);
void write_regions(std::ostream& out, std::span<const RegionRecord> records);

std::vector<TagAnnotation> load_tag_annotations(const std::string& path);
std::vector<TagAnnotation> parse_tag_annotations(std::istream& in);
void write_tag_annotations(std::ostream& out, std::span<const TagAnnotation> records);

SynonymTable load_synonyms(const std::string& path);
SynonymTable parse_synonyms(std::istream& in);
WordSet load_word_list(const std::string& path);
WordSet parse_word_list(std::istream& in);

// Built-in list of words that make a caption ending ungrammatical.
const WordSet& default_bad_endings();

}  // namespace capgen
