#pragma once

#include "capgen/errors.hpp"
#include "capgen/models.hpp"
#include "capgen/numeric.hpp"
#include "capgen/rng.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace capgen::test {

// Collects warnings for the lifetime of the object.
struct WarningCapture {
  std::vector<std::string> messages;
  WarningCapture() {
    set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_sink(nullptr); }
};

inline Eigen::VectorXd random_vector(Rng& rng, int n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}

inline TinyLM random_lm(int vocab, int embed, int hidden, int context, std::uint64_t seed, double range = 0.5,
                        LengthMode mode = LengthMode::kNone, int max_length = kMaxCaptionLength) {
  TinyLMDims d;
  d.vocab = vocab;
  d.embed = embed;
  d.hidden = hidden;
  d.context = context;
  d.mode = mode;
  d.max_length = max_length;
  TinyLM m(d, seed);
  init_uniform(m.params().refs(), seed * 7919 + 1, range);
  return m;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("capgen_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace capgen::test
