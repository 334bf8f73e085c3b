#pragma once

#include "capgen/corpus.hpp"

#include <set>
#include <span>
#include <string>
#include <vector>

namespace capgen {

// Canonical object (1), attribute (2) and relation (3) tuples. Inserting a
// 2- or 3-tuple also inserts the 1-tuples of its object slots.
class SceneGraph {
 public:
  void insert(Tuple tuple);
  void merge(const SceneGraph& other);

  const std::set<Tuple>& tuples() const { return tuples_; }
  std::size_t size() const { return tuples_.size(); }
  bool empty() const { return tuples_.empty(); }
  bool contains(const Tuple& t) const { return tuples_.count(t) > 0; }
  bool operator==(const SceneGraph& other) const { return tuples_ == other.tuples_; }

 private:
  std::set<Tuple> tuples_;
};

SceneGraph graph_from_tuples(std::span<const Tuple> tuples, const SynonymTable& synonyms = {});
SceneGraph merge_graphs(std::span<const SceneGraph> graphs);

// F1 of exact canonical-tuple matches; an empty candidate scores 0.
double spice_f1(const SceneGraph& candidate, const SceneGraph& reference);
// SPICE of the union of the candidate graphs against the union of the
// reference graphs.
double allspice(std::span<const SceneGraph> candidates, std::span<const SceneGraph> references);

struct Lexicon {
  WordSet objects;
  WordSet attributes;
  WordSet relations;
};

Lexicon load_lexicon(const std::string& objects_path, const std::string& attributes_path,
                     const std::string& relations_path);

// Pattern extraction over canonical tokens:
//  - every lexicon object gives (object);
//  - a run of attributes directly before an object gives (object, attribute);
//  - object, then a relation within 3 tokens, then an object within 3
//    tokens of the relation gives (subject, relation, object).
std::vector<Tuple> lexicon_extract_tuples(std::span<const std::string> caption, const Lexicon& lexicon,
                                          const SynonymTable& synonyms = {});

}  // namespace capgen
