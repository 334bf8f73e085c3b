#pragma once

// Small, deliberately naive reimplementations used to cross-check the
// library's optimized code paths.

#include "capgen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace capgen::oracle {

using Gram = std::vector<std::string>;
using Counts = std::map<Gram, double>;

inline Counts ngram_counts(const Caption& c, int n) {
  Counts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= c.size(); ++i)
    out[Gram(c.begin() + static_cast<std::ptrdiff_t>(i), c.begin() + static_cast<std::ptrdiff_t>(i) + n)] += 1;
  return out;
}

// CIDEr-D against reference sets `corpus`, scoring `candidate` for image `image`.
inline double cider_d(const Caption& candidate, const std::vector<std::vector<Caption>>& corpus, std::size_t image) {
  const double log_n = std::log(static_cast<double>(corpus.size()));
  auto df = [&](const Gram& g) {
    double d = 0;
    for (const auto& refs : corpus) {
      bool hit = false;
      for (const auto& r : refs) {
        const Counts c = ngram_counts(r, static_cast<int>(g.size()));
        if (c.count(g)) hit = true;
      }
      d += hit;
    }
    return d;
  };
  auto vec = [&](const Caption& c, int n) {
    std::map<Gram, double> v;
    for (const auto& [g, tf] : ngram_counts(c, n)) v[g] = tf * (log_n - std::log(std::max(1.0, df(g))));
    return v;
  };
  auto norm = [](const std::map<Gram, double>& v) {
    double s = 0;
    for (const auto& [g, x] : v) s += x * x;
    return std::sqrt(s);
  };
  const auto& refs = corpus[image];
  double total = 0;
  for (const auto& r : refs) {
    double score = 0;
    for (int n = 1; n <= 4; ++n) {
      const auto h = vec(candidate, n), rv = vec(r, n);
      double val = 0;
      for (const auto& [g, x] : h) {
        auto it = rv.find(g);
        if (it != rv.end()) val += std::min(x, it->second) * it->second;
      }
      const double nh = norm(h), nr = norm(rv);
      if (nh != 0 && nr != 0) val /= nh * nr;
      const double delta = static_cast<double>(candidate.size()) - static_cast<double>(r.size());
      score += val * std::exp(-delta * delta / 72.0);
    }
    total += score / 4;
  }
  return 10.0 * total / static_cast<double>(refs.size());
}

// Tuple-set F1 of the union of candidate tuple sets against the union of references.
inline double allspice(const std::vector<std::set<Tuple>>& candidates, const std::vector<std::set<Tuple>>& refs) {
  std::set<Tuple> c, r;
  for (const auto& s : candidates) c.insert(s.begin(), s.end());
  for (const auto& s : refs) r.insert(s.begin(), s.end());
  double hit = 0;
  for (const auto& t : c) hit += r.count(t);
  if (c.empty() || r.empty() || hit == 0) return 0.0;
  const double p = hit / static_cast<double>(c.size());
  const double rec = hit / static_cast<double>(r.size());
  return 2 * p * rec / (p + rec);
}

// Greedy tag ranking by brute force over every candidate at every step,
// ties broken by the lexicographically smaller tag.
inline std::vector<std::string> greedy_rank(std::vector<std::string> tags,
                                            const std::function<double(const std::vector<std::string>&)>& loss) {
  std::sort(tags.begin(), tags.end());
  std::vector<std::string> chosen;
  while (!tags.empty()) {
    std::size_t best = 0;
    double best_loss = 0;
    for (std::size_t i = 0; i < tags.size(); ++i) {
      std::vector<std::string> trial = chosen;
      trial.push_back(tags[i]);
      const double l = loss(trial);
      if (i == 0 || l < best_loss) {
        best = i;
        best_loss = l;
      }
    }
    chosen.push_back(tags[best]);
    tags.erase(tags.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return chosen;
}

}  // namespace capgen::oracle
