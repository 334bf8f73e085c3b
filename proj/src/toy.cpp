#include "capgen/toy.hpp"

#include "capgen/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace capgen {

namespace {

const std::vector<std::string> kObjects = {"dog", "cat", "horse", "bird", "car", "bus"};
const std::vector<std::string> kAttributes = {"red", "blue", "green", "white", "black", "brown"};
const std::vector<std::string> kPoses = {"resting", "waiting", "moving"};
const std::vector<std::string> kSecond = {"tree", "bench", "fence", "house", "rock", "truck"};
const std::vector<std::string> kRelations = {"near", "behind", "under", "beside"};
const std::vector<std::string> kScenes = {"field", "street", "beach", "park", "yard"};

double gaussian(Rng& rng) {
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct Content {
  std::size_t object, attribute, pose, second, second_attribute, relation, scene;
};

Eigen::VectorXd encode(const Content& c, double noise, Rng& rng) {
  const std::size_t sizes[] = {kObjects.size(), kAttributes.size(), kPoses.size(), kSecond.size(),
                               kAttributes.size(), kRelations.size(), kScenes.size()};
  const std::size_t values[] = {c.object, c.attribute, c.pose, c.second,
                                c.second_attribute, c.relation, c.scene};
  Eigen::Index dim = 0;
  for (std::size_t s : sizes) dim += static_cast<Eigen::Index>(s);
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = noise * gaussian(rng);
  Eigen::Index offset = 0;
  for (std::size_t b = 0; b < 7; ++b) {
    v[offset + static_cast<Eigen::Index>(values[b])] += 1.0;
    offset += static_cast<Eigen::Index>(sizes[b]);
  }
  return v;
}

Caption describe(const Content& c, double attribute_rate, Rng& rng) {
  for (;;) {
    Caption out = {"a"};
    if (rng.bernoulli(attribute_rate)) out.push_back(kAttributes[c.attribute]);
    out.push_back(kObjects[c.object]);
    if (rng.bernoulli(0.4)) out.push_back(kPoses[c.pose]);
    if (rng.bernoulli(0.6)) {
      out.push_back(kRelations[c.relation]);
      out.push_back("a");
      if (rng.bernoulli(0.3)) out.push_back(kAttributes[c.second_attribute]);
      out.push_back(kSecond[c.second]);
    }
    if (rng.bernoulli(0.5)) {
      out.push_back("in");
      out.push_back("the");
      out.push_back(kScenes[c.scene]);
    }
    if (out.size() >= 3 && out.size() <= 10) return out;
  }
}

WordSet word_set(std::initializer_list<const std::vector<std::string>*> lists) {
  WordSet out;
  for (const auto* l : lists) out.insert(l->begin(), l->end());
  return out;
}

}  // namespace

const WordSet& toy_stopwords() {
  static const WordSet words = {"a",  "an",  "and",  "are",   "at",   "behind", "beside", "in",   "is",
                                "it", "its", "near", "of",    "on",   "some",   "that",   "the",  "there",
                                "this", "to", "two",  "under", "with", "left",   "right",  "middle"};
  return words;
}

std::size_t toy_partner(std::size_t index) { return index ^ 1U; }

ToyCorpus generate_toy_corpus(const ToyConfig& config) {
  if (config.images < 1) throw std::invalid_argument("toygen: images must be at least 1");
  if (config.captions_per_image < 1) throw std::invalid_argument("toygen: captions_per_image must be at least 1");
  Rng rng(config.seed);
  ToyCorpus out;
  out.lexicon.objects = word_set({&kObjects, &kSecond, &kScenes});
  out.lexicon.attributes = word_set({&kAttributes});
  out.lexicon.relations = word_set({&kRelations});
  out.lexicon.relations.insert("in");
  out.stopwords = toy_stopwords();

  Content c{};
  for (int i = 0; i < config.images; ++i) {
    if (i % 2 == 0) {
      c = {rng.below(kObjects.size()), rng.below(kAttributes.size()), rng.below(kPoses.size()),
           rng.below(kSecond.size()),  rng.below(kAttributes.size()), rng.below(kRelations.size()),
           rng.below(kScenes.size())};
    } else {
      c.attribute = (c.attribute + 1 + rng.below(kAttributes.size() - 1)) % kAttributes.size();
    }
    CorpusRecord r;
    r.id = "toy" + std::to_string(i);
    r.context = encode(c, config.noise, rng);
    for (int k = 0; k < config.captions_per_image; ++k) {
      r.captions.push_back(describe(c, config.attribute_rate, rng));
      r.tuples.push_back(lexicon_extract_tuples(r.captions.back(), out.lexicon));
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

std::vector<RegionRecord> generate_toy_regions(const ToyRegionConfig& config) {
  if (config.images < 1) throw std::invalid_argument("toygen: images must be at least 1");
  static const std::vector<std::string> types = {"dog", "cat", "car", "cup"};
  static const std::vector<std::string> colors = {"red", "blue", "green", "white", "black"};
  static const std::vector<std::string> places = {"left", "middle", "right"};
  const double width = 300, height = 200;
  Rng rng(config.seed);
  std::vector<RegionRecord> out;
  for (int i = 0; i < config.images; ++i) {
    RegionRecord image;
    image.id = "ref" + std::to_string(i);
    image.width = width;
    image.height = height;
    image.image_feature = Eigen::VectorXd(3);
    for (Eigen::Index d = 0; d < 3; ++d) image.image_feature[d] = gaussian(rng);

    const std::size_t type = rng.below(types.size());
    std::vector<std::size_t> palette = {0, 1, 2, 3, 4};
    for (std::size_t k = palette.size(); k > 1; --k) std::swap(palette[k - 1], palette[rng.below(k)]);

    auto feature = [&](std::size_t t, std::size_t color) {
      Eigen::VectorXd f(static_cast<Eigen::Index>(types.size() + colors.size()));
      for (Eigen::Index d = 0; d < f.size(); ++d) f[d] = config.noise * gaussian(rng);
      f[static_cast<Eigen::Index>(t)] += 1.0;
      f[static_cast<Eigen::Index>(types.size() + color)] += 1.0;
      return f;
    };
    for (std::size_t p = 0; p < places.size(); ++p) {
      Region region;
      const double x0 = 10 + 95 * static_cast<double>(p) + rng.uniform(0, 5);
      region.box = {x0, 80 + rng.uniform(0, 10), x0 + 85, 190};
      const std::size_t color = palette[p];
      region.feature = feature(type, color);
      for (int e = 0; e < config.expressions_per_region; ++e) {
        const std::string& noun = types[type];
        if (rng.bernoulli(config.ambiguous_rate)) {
          region.expressions.push_back({"the", noun});
          continue;
        }
        const std::string& place = places[p];
        Caption where = p == 1 ? Caption{"in", "the", place} : Caption{"on", "the", place};
        switch (rng.below(3)) {
          case 0: region.expressions.push_back({"the", colors[color], noun}); break;
          case 1: {
            Caption c = {"the", noun};
            c.insert(c.end(), where.begin(), where.end());
            region.expressions.push_back(c);
            break;
          }
          default: {
            Caption c = {"the", colors[color], noun};
            c.insert(c.end(), where.begin(), where.end());
            region.expressions.push_back(c);
          }
        }
      }
      image.regions.push_back(std::move(region));
    }
    Region other;
    const std::size_t other_type = (type + 1 + rng.below(types.size() - 1)) % types.size();
    other.box = {120 + rng.uniform(0, 20), 5, 180, 60 + rng.uniform(0, 10)};
    other.feature = feature(other_type, palette[3]);
    for (int e = 0; e < config.expressions_per_region; ++e) other.expressions.push_back({"the", types[other_type]});
    image.regions.push_back(std::move(other));
    out.push_back(std::move(image));
  }
  return out;
}

}  // namespace capgen
