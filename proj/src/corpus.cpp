#include "capgen/corpus.hpp"

#include "capgen/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace capgen {

using nlohmann::json;

Caption tokenize(std::string_view text) {
  Caption out;
  std::string current;
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else if (ch < 128 && std::ispunct(ch)) {
      continue;
    } else {
      current.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> words, int marker_lengths)
    : marker_lengths_(marker_lengths) {
  if (marker_lengths < 0) throw std::invalid_argument("Vocabulary: negative marker count");
  tokens_ = {"<bos>", "<eos>", "<pad>", "<unk>"};
  for (int l = 1; l <= marker_lengths; ++l) tokens_.push_back("<len" + std::to_string(l) + ">");
  first_word_ = static_cast<TokenId>(tokens_.size());
  for (auto& w : words) tokens_.push_back(std::move(w));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw std::invalid_argument("Vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("Vocabulary: token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

TokenId Vocabulary::marker_id(int length) const {
  if (length < 1 || length > marker_lengths_)
    throw std::out_of_range("Vocabulary: no length marker for length " + std::to_string(length));
  return kReserved + length - 1;
}

int Vocabulary::marker_length(TokenId id) const {
  if (!is_marker(id)) throw std::out_of_range("Vocabulary: id is not a length marker");
  return id - kReserved + 1;
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size() + 1);
  for (const auto& t : tokens) ids.push_back(id(t));
  ids.push_back(kEos);
  return ids;
}

Caption Vocabulary::decode(std::span<const TokenId> ids) const {
  Caption out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad || is_marker(id)) continue;
    out.push_back(token(id));
  }
  return out;
}

namespace {

std::vector<std::string> most_frequent(const std::map<std::string, std::size_t>& counts,
                                       std::size_t keep) {
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // counts is already lexicographic, so a stable sort keeps the tie rule.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > keep) ranked.resize(keep);
  std::vector<std::string> words;
  words.reserve(ranked.size());
  for (auto& [w, _] : ranked) words.push_back(w);
  return words;
}

}  // namespace

Vocabulary build_vocab_from_tokens(std::span<const Caption> captions, std::size_t max_size,
                                   int marker_lengths) {
  if (captions.empty()) throw std::invalid_argument("build_vocab: empty caption list");
  const std::size_t fixed = Vocabulary::kReserved + static_cast<std::size_t>(marker_lengths);
  if (max_size < fixed) throw std::invalid_argument("build_vocab: max_size too small for reserved ids");
  std::map<std::string, std::size_t> counts;
  for (const auto& c : captions)
    for (const auto& t : c) ++counts[t];
  for (std::size_t i = 0; i < Vocabulary::kReserved; ++i) counts.erase(Vocabulary().token(static_cast<TokenId>(i)));
  return Vocabulary(most_frequent(counts, max_size - fixed), marker_lengths);
}

Vocabulary build_vocab(std::span<const std::string> captions, std::size_t max_size,
                       int marker_lengths) {
  std::vector<Caption> tokenized;
  tokenized.reserve(captions.size());
  for (const auto& c : captions) tokenized.push_back(tokenize(c));
  return build_vocab_from_tokens(tokenized, max_size, marker_lengths);
}

void SynonymTable::add(const std::string& canonical, std::span<const std::string> members) {
  WordSet set(members.begin(), members.end());
  set.insert(canonical);
  for (const auto& m : set) {
    auto it = to_canonical_.find(m);
    if (it != to_canonical_.end() && it->second != canonical)
      throw DataError("synonym '" + m + "' belongs to both '" + it->second + "' and '" + canonical + "'");
  }
  for (const auto& m : set) to_canonical_[m] = canonical;
  sets_[canonical].insert(set.begin(), set.end());
}

const std::string& SynonymTable::canonical(const std::string& token) const {
  auto it = to_canonical_.find(token);
  return it == to_canonical_.end() ? token : it->second;
}

std::vector<std::string> extract_tag_sequence(std::span<const std::string> caption,
                                              const Vocabulary& tag_vocab,
                                              const WordSet& stopwords,
                                              const SynonymTable& synonyms) {
  std::vector<std::string> out;
  WordSet seen;
  for (const auto& raw : caption) {
    if (stopwords.count(raw)) continue;
    const std::string& tag = synonyms.canonical(raw);
    if (stopwords.count(tag) || tag_vocab.id(tag) < Vocabulary::kReserved + tag_vocab.marker_lengths())
      continue;
    if (seen.insert(tag).second) out.push_back(tag);
  }
  return out;
}

WordSet extract_tags(std::span<const std::string> caption, const Vocabulary& tag_vocab,
                     const WordSet& stopwords, const SynonymTable& synonyms) {
  auto seq = extract_tag_sequence(caption, tag_vocab, stopwords, synonyms);
  return WordSet(seq.begin(), seq.end());
}

Vocabulary build_tag_vocab(std::span<const CorpusRecord> corpus, const WordSet& stopwords,
                           std::size_t size, const SynonymTable& synonyms) {
  if (corpus.empty()) throw std::invalid_argument("build_tag_vocab: corpus is empty");
  std::map<std::string, std::size_t> counts;
  for (const auto& r : corpus)
    for (const auto& c : r.captions)
      for (const auto& raw : c) {
        if (stopwords.count(raw)) continue;
        const std::string& tag = synonyms.canonical(raw);
        if (!stopwords.count(tag)) ++counts[tag];
      }
  if (counts.empty()) warn("build_tag_vocab: every token is a stop word; tag vocabulary is empty");
  return Vocabulary(most_frequent(counts, size), 0);
}

// File formats

namespace {

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": " + what);
}

Eigen::VectorXd to_vector(const json& j, std::size_t line, const char* field) {
  if (!j.is_array()) fail_line(line, std::string("field '") + field + "' must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail_line(line, std::string("field '") + field + "' must contain numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json from_vector(const Eigen::VectorXd& v) {
  json j = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

const json& require(const json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) fail_line(line, std::string("missing field '") + field + "'");
  return *it;
}

Caption load_caption(const json& j, std::size_t line, const std::string& id) {
  if (!j.is_string()) fail_line(line, "captions must be strings");
  Caption c = tokenize(j.get<std::string>());
  if (c.size() > static_cast<std::size_t>(kMaxCaptionLength)) {
    warn("record '" + id + "': caption truncated to " + std::to_string(kMaxCaptionLength) + " tokens");
    c.resize(kMaxCaptionLength);
  }
  return c;
}

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      fail_line(line, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail_line(line, "expected a JSON object");
    try {
      fn(j, line);
    } catch (const json::type_error& e) {
      fail_line(line, std::string("wrong field type: ") + e.what());
    }
  }
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

}  // namespace

std::vector<CorpusRecord> parse_corpus(std::istream& in) {
  std::vector<CorpusRecord> out;
  for_each_line(in, [&](const json& j, std::size_t line) {
    CorpusRecord r;
    r.id = require(j, "id", line).get<std::string>();
    r.context = to_vector(require(j, "context", line), line, "context");
    const json& caps = require(j, "captions", line);
    if (!caps.is_array() || caps.empty()) fail_line(line, "field 'captions' needs at least one caption");
    for (const auto& c : caps) r.captions.push_back(load_caption(c, line, r.id));
    if (auto it = j.find("tuples"); it != j.end() && !it->is_null()) {
      if (!it->is_array() || it->size() != r.captions.size())
        fail_line(line, "field 'tuples' must hold one tuple list per caption");
      for (const auto& per_caption : *it) {
        std::vector<Tuple> tuples;
        for (const auto& t : per_caption) {
          Tuple tuple = t.get<Tuple>();
          if (tuple.empty() || tuple.size() > 3) fail_line(line, "field 'tuples' has a tuple of arity outside 1..3");
          tuples.push_back(std::move(tuple));
        }
        r.tuples.push_back(std::move(tuples));
      }
    }
    if (!out.empty() && out.front().context.size() != r.context.size())
      fail_line(line, "field 'context' has dimension " + std::to_string(r.context.size()) + ", expected " +
                          std::to_string(out.front().context.size()));
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<CorpusRecord> load_corpus(const std::string& path) {
  auto in = open_in(path);
  return parse_corpus(in);
}

void write_corpus(std::ostream& out, std::span<const CorpusRecord> records) {
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["context"] = from_vector(r.context);
    json caps = json::array();
    for (const auto& c : r.captions) caps.push_back(detokenize(c));
    j["captions"] = caps;
    if (r.has_tuples()) j["tuples"] = r.tuples;
    out << j.dump() << '\n';
  }
}

void write_corpus(const std::string& path, std::span<const CorpusRecord> records) {
  auto out = open_out(path);
  write_corpus(out, records);
}

std::vector<RegionRecord> parse_regions(std::istream& in) {
  std::vector<RegionRecord> out;
  Eigen::Index region_dim = -1;
  for_each_line(in, [&](const json& j, std::size_t line) {
    RegionRecord r;
    r.id = require(j, "id", line).get<std::string>();
    r.image_feature = to_vector(require(j, "image_feature", line), line, "image_feature");
    const json& size = require(j, "size", line);
    if (!size.is_array() || size.size() != 2) fail_line(line, "field 'size' must be [W, H]");
    r.width = size[0].get<double>();
    r.height = size[1].get<double>();
    if (!(r.width > 0 && r.height > 0)) fail_line(line, "field 'size' must be positive");
    for (const auto& jr : require(j, "regions", line)) {
      Region reg;
      const json& box = require(jr, "box", line);
      if (!box.is_array() || box.size() != 4) fail_line(line, "field 'box' must be [x1, y1, x2, y2]");
      reg.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
      if (!(reg.box.x_tl >= 0)) fail_line(line, "field 'box' x_tl must be >= 0");
      if (!(reg.box.y_tl >= 0)) fail_line(line, "field 'box' y_tl must be >= 0");
      if (!(reg.box.x_tl < reg.box.x_br)) fail_line(line, "field 'box' needs x_tl < x_br");
      if (!(reg.box.y_tl < reg.box.y_br)) fail_line(line, "field 'box' needs y_tl < y_br");
      if (!(reg.box.x_br <= r.width)) fail_line(line, "field 'box' x_br exceeds image width W");
      if (!(reg.box.y_br <= r.height)) fail_line(line, "field 'box' y_br exceeds image height H");
      reg.feature = to_vector(require(jr, "feature", line), line, "feature");
      if (region_dim < 0) region_dim = reg.feature.size();
      if (reg.feature.size() != region_dim) fail_line(line, "field 'feature' has inconsistent dimension");
      for (const auto& e : require(jr, "expressions", line)) reg.expressions.push_back(load_caption(e, line, r.id));
      r.regions.push_back(std::move(reg));
    }
    if (!out.empty() && out.front().image_feature.size() != r.image_feature.size())
      fail_line(line, "field 'image_feature' has inconsistent dimension");
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<RegionRecord> load_regions(const std::string& path) {
  auto in = open_in(path);
  return parse_regions(in);
}

void write_regions(std::ostream& out, std::span<const RegionRecord> records) {
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["image_feature"] = from_vector(r.image_feature);
    j["size"] = {r.width, r.height};
    json regs = json::array();
    for (const auto& reg : r.regions) {
      json jr;
      jr["box"] = {reg.box.x_tl, reg.box.y_tl, reg.box.x_br, reg.box.y_br};
      jr["feature"] = from_vector(reg.feature);
      json exprs = json::array();
      for (const auto& e : reg.expressions) exprs.push_back(detokenize(e));
      jr["expressions"] = exprs;
      regs.push_back(jr);
    }
    j["regions"] = regs;
    out << j.dump() << '\n';
  }
}

void write_regions(const std::string& path, std::span<const RegionRecord> records) {
  auto out = open_out(path);
  write_regions(out, records);
}

std::vector<TagAnnotation> parse_tag_annotations(std::istream& in) {
  std::vector<TagAnnotation> out;
  for_each_line(in, [&](const json& j, std::size_t line) {
    TagAnnotation a;
    a.id = require(j, "id", line).get<std::string>();
    auto check = [&](int count) {
      if (count < 1) fail_line(line, "annotation counts must be >= 1");
      return count;
    };
    for (const auto& [tag, count] : require(j, "round1", line).items()) a.round1[tag] = check(count.get<int>());
    if (auto it = j.find("round2"); it != j.end()) {
      for (const auto& [given, counts] : it->items()) {
        if (!a.round1.count(given)) fail_line(line, "round2 conditioning tag '" + given + "' is not in round1");
        for (const auto& [tag, count] : counts.items()) a.round2[given][tag] = check(count.get<int>());
      }
    }
    if (auto it = j.find("round3"); it != j.end()) {
      for (const auto& entry : *it) {
        auto given = require(entry, "given", line).get<std::vector<std::string>>();
        if (given.size() != 2 || given[0] == given[1]) fail_line(line, "round3 'given' must be a two-element set");
        auto& slot = a.round3[TagAnnotation::key(given[0], given[1])];
        for (const auto& [tag, count] : require(entry, "counts", line).items()) slot[tag] = check(count.get<int>());
      }
    }
    out.push_back(std::move(a));
  });
  return out;
}

std::vector<TagAnnotation> load_tag_annotations(const std::string& path) {
  auto in = open_in(path);
  return parse_tag_annotations(in);
}

void write_tag_annotations(std::ostream& out, std::span<const TagAnnotation> records) {
  for (const auto& a : records) {
    json j;
    j["id"] = a.id;
    j["round1"] = a.round1;
    j["round2"] = a.round2;
    json r3 = json::array();
    for (const auto& [given, counts] : a.round3)
      r3.push_back({{"given", {given.first, given.second}}, {"counts", counts}});
    j["round3"] = r3;
    out << j.dump() << '\n';
  }
}

SynonymTable parse_synonyms(std::istream& in) {
  SynonymTable table;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty() || text[0] == '#') continue;
    auto tab = text.find('\t');
    if (tab == std::string::npos) fail_line(line, "expected 'canonical<TAB>member1,member2,...'");
    std::string canonical = text.substr(0, tab);
    std::vector<std::string> members;
    std::stringstream rest(text.substr(tab + 1));
    std::string m;
    while (std::getline(rest, m, ','))
      if (!m.empty()) members.push_back(m);
    table.add(canonical, members);
  }
  return table;
}

SynonymTable load_synonyms(const std::string& path) {
  auto in = open_in(path);
  return parse_synonyms(in);
}

WordSet parse_word_list(std::istream& in) {
  WordSet words;
  std::string text;
  while (std::getline(in, text)) {
    auto toks = tokenize(text);
    if (text.find('#') == 0) continue;
    for (auto& t : toks) words.insert(std::move(t));
  }
  return words;
}

WordSet load_word_list(const std::string& path) {
  auto in = open_in(path);
  return parse_word_list(in);
}

const WordSet& default_bad_endings() {
  static const WordSet words = {"a",  "an",   "the",    "in",    "for", "at",   "of", "with", "before",
                                "after", "on", "upon", "near", "to", "is", "are", "am"};
  return words;
}

}  // namespace capgen
