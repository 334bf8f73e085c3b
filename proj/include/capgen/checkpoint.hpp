#pragma once

#include "capgen/corpus.hpp"
#include "capgen/matchers.hpp"
#include "capgen/models.hpp"
#include "capgen/params.hpp"
#include "capgen/tagrank.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace capgen {

// {"version": 1, "mode": str, "dims": {...}, "seed": int,
//  "params": {name: {"shape": [rows, cols], "data": [row-major numbers]}}}
// plus optional "vocab": [token...]. Numbers are written with 17
// significant digits so a reload is bit-exact.
struct Checkpoint {
  int version = 1;
  std::string mode;
  nlohmann::json dims = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::map<std::string, Eigen::MatrixXd> params;
  std::vector<std::string> vocab;  // word block only; reserved ids implied
  int marker_lengths = 0;

  void store(const ParamList& list);
  // Copies into `list`; every block must be present with matching shape.
  void restore(const ParamList& list) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint to_checkpoint(const TinyLM& model, const Vocabulary& vocab);
TinyLM tinylm_from_checkpoint(const Checkpoint& ckpt);
Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt);

Checkpoint to_checkpoint(const LengthPredictor& predictor);
LengthPredictor length_predictor_from_checkpoint(const Checkpoint& ckpt);

Checkpoint to_checkpoint(const RetrievalScorer& scorer, const Vocabulary& vocab);
RetrievalScorer retrieval_from_checkpoint(const Checkpoint& ckpt);

Checkpoint to_checkpoint(const ComprehensionModel& model, const Vocabulary& vocab);
ComprehensionModel comprehension_from_checkpoint(const Checkpoint& ckpt);

// The caption vocabulary goes in "vocab" and the tag vocabulary in dims.
Checkpoint to_checkpoint(const Tag2CapScorer& scorer);
Tag2CapScorer tag2cap_from_checkpoint(const Checkpoint& ckpt);
Checkpoint to_checkpoint(const Tag2FeatScorer& scorer);
Tag2FeatScorer tag2feat_from_checkpoint(const Checkpoint& ckpt);

// Throws DataError unless ckpt.mode is one of the accepted modes.
void require_mode(const Checkpoint& ckpt, std::initializer_list<const char*> modes);

}  // namespace capgen
