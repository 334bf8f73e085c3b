#pragma once

#include "capgen/corpus.hpp"
#include "capgen/scenegraph.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace capgen {

// Synthetic captioning corpus from a seeded grammar. Each image has a main
// object with an attribute and pose, a second object in some relation and a
// scene; its context is a noisy one-hot encoding of that content. Captions
// mention a random subset of the content, so lengths vary from 3 to 10.
// Images come in pairs sharing everything but the main attribute; the
// partner of image i is image i ^ 1.
struct ToyConfig {
  int images = 200;
  int captions_per_image = 5;
  double noise = 0.1;
  double attribute_rate = 0.35;  // chance a caption names the main attribute
  std::uint64_t seed = 1;
};

struct ToyCorpus {
  std::vector<CorpusRecord> records;
  Lexicon lexicon;
  WordSet stopwords;
};

ToyCorpus generate_toy_corpus(const ToyConfig& config);
std::size_t toy_partner(std::size_t index);

// Referring-expression images: several regions of the same object type
// that differ in attribute and horizontal position, plus one other object.
// Half of the expressions name only the object type and so are ambiguous.
struct ToyRegionConfig {
  int images = 100;
  int expressions_per_region = 3;
  double noise = 0.05;
  double ambiguous_rate = 0.5;
  std::uint64_t seed = 1;
};

std::vector<RegionRecord> generate_toy_regions(const ToyRegionConfig& config);

// Function words excluded from tags, as shipped in data/stopwords.txt.
const WordSet& toy_stopwords();

}  // namespace capgen
