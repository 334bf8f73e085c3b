#include "capgen/scenegraph.hpp"

#include <stdexcept>

namespace capgen {

void SceneGraph::insert(Tuple tuple) {
  if (tuple.empty() || tuple.size() > 3) throw std::invalid_argument("SceneGraph: tuple arity must be 1, 2 or 3");
  tuples_.insert(Tuple{tuple[0]});
  if (tuple.size() == 3) tuples_.insert(Tuple{tuple[2]});
  tuples_.insert(std::move(tuple));
}

void SceneGraph::merge(const SceneGraph& other) { tuples_.insert(other.tuples_.begin(), other.tuples_.end()); }

SceneGraph graph_from_tuples(std::span<const Tuple> tuples, const SynonymTable& synonyms) {
  SceneGraph g;
  for (const auto& t : tuples) {
    Tuple canonical;
    for (const auto& e : t) canonical.push_back(synonyms.canonical(e));
    g.insert(std::move(canonical));
  }
  return g;
}

SceneGraph merge_graphs(std::span<const SceneGraph> graphs) {
  SceneGraph out;
  for (const auto& g : graphs) out.merge(g);
  return out;
}

double spice_f1(const SceneGraph& candidate, const SceneGraph& reference) {
  if (reference.empty()) throw std::invalid_argument("spice_f1: empty reference graph");
  if (candidate.empty()) return 0.0;
  std::size_t matched = 0;
  for (const auto& t : candidate.tuples())
    if (reference.contains(t)) ++matched;
  if (matched == 0) return 0.0;
  const double p = static_cast<double>(matched) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(matched) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

double allspice(std::span<const SceneGraph> candidates, std::span<const SceneGraph> references) {
  if (references.empty()) throw std::invalid_argument("allspice: empty reference list");
  if (candidates.empty()) throw std::invalid_argument("allspice: empty candidate list");
  return spice_f1(merge_graphs(candidates), merge_graphs(references));
}

Lexicon load_lexicon(const std::string& objects_path, const std::string& attributes_path,
                     const std::string& relations_path) {
  return {load_word_list(objects_path), load_word_list(attributes_path), load_word_list(relations_path)};
}

std::vector<Tuple> lexicon_extract_tuples(std::span<const std::string> caption, const Lexicon& lexicon,
                                          const SynonymTable& synonyms) {
  std::vector<std::string> tokens;
  for (const auto& t : caption) tokens.push_back(synonyms.canonical(t));
  const std::size_t n = tokens.size();
  auto is_object = [&](std::size_t i) { return lexicon.objects.count(tokens[i]) > 0; };

  std::vector<Tuple> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_object(i)) continue;
    out.push_back({tokens[i]});
    for (std::size_t j = i; j-- > 0 && lexicon.attributes.count(tokens[j]);) out.push_back({tokens[i], tokens[j]});
    for (std::size_t j = i + 1; j < n && j <= i + 3; ++j) {
      if (!lexicon.relations.count(tokens[j])) continue;
      for (std::size_t k = j + 1; k < n && k <= j + 3; ++k)
        if (is_object(k)) {
          out.push_back({tokens[i], tokens[j], tokens[k]});
          break;
        }
      break;
    }
  }
  return out;
}

}  // namespace capgen
