#include "capgen/checkpoint.hpp"

#include "capgen/errors.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace capgen {

using nlohmann::json;

void Checkpoint::store(const ParamList& list) {
  for (const auto& p : list) params[p.name] = *p.value;
}

void Checkpoint::restore(const ParamList& list) const {
  for (const auto& p : list) {
    auto it = params.find(p.name);
    if (it == params.end()) throw DataError("checkpoint: missing parameter '" + p.name + "'");
    if (it->second.rows() != p.value->rows() || it->second.cols() != p.value->cols())
      throw DataError("checkpoint: parameter '" + p.name + "' has the wrong shape");
    *p.value = it->second;
  }
}

namespace {

void write_number(std::ostream& out, double v) {
  if (!std::isfinite(v)) throw NumericError("checkpoint: non-finite parameter value");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out << "{\"version\": " << ckpt.version << ", \"mode\": " << json(ckpt.mode).dump()
      << ", \"dims\": " << ckpt.dims.dump() << ", \"seed\": " << ckpt.seed;
  if (!ckpt.vocab.empty() || ckpt.marker_lengths > 0)
    out << ", \"marker_lengths\": " << ckpt.marker_lengths << ", \"vocab\": " << json(ckpt.vocab).dump();
  out << ", \"params\": {";
  bool first = true;
  for (const auto& [name, m] : ckpt.params) {
    if (!first) out << ", ";
    first = false;
    out << json(name).dump() << ": {\"shape\": [" << m.rows() << ", " << m.cols() << "], \"data\": [";
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (r || c) out << ", ";
        write_number(out, m(r, c));
      }
    out << "]}";
  }
  out << "}}\n";
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_checkpoint(out, ckpt);
}

Checkpoint read_checkpoint(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  try {
    Checkpoint c;
    c.version = j.at("version").get<int>();
    if (c.version != 1) throw DataError("checkpoint: unsupported version " + std::to_string(c.version));
    c.mode = j.at("mode").get<std::string>();
    c.dims = j.at("dims");
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("vocab")) c.vocab = j["vocab"].get<std::vector<std::string>>();
    if (j.contains("marker_lengths")) c.marker_lengths = j["marker_lengths"].get<int>();
    for (const auto& [name, block] : j.at("params").items()) {
      const auto shape = block.at("shape").get<std::vector<Eigen::Index>>();
      const auto& data = block.at("data");
      if (shape.size() != 2 || static_cast<Eigen::Index>(data.size()) != shape[0] * shape[1])
        throw DataError("checkpoint: parameter '" + name + "' shape does not match its data");
      Eigen::MatrixXd m(shape[0], shape[1]);
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < shape[0]; ++r)
        for (Eigen::Index col = 0; col < shape[1]; ++col) m(r, col) = data[k++].get<double>();
      c.params[name] = std::move(m);
    }
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_checkpoint(in);
}

Checkpoint to_checkpoint(const TinyLM& model, const Vocabulary& vocab) {
  Checkpoint c;
  const auto& d = model.dims();
  c.mode = to_string(d.mode);
  c.dims = {{"vocab", d.vocab}, {"embed", d.embed}, {"hidden", d.hidden},
            {"context", d.context}, {"max_length", d.max_length}};
  c.seed = model.seed();
  c.vocab.assign(vocab.words().begin(), vocab.words().end());
  c.marker_lengths = vocab.marker_lengths();
  TinyLMParams p = model.params();
  c.store(p.refs());
  return c;
}

TinyLM tinylm_from_checkpoint(const Checkpoint& ckpt) {
  TinyLMDims d;
  try {
    d.mode = length_mode_from_string(ckpt.mode);
    d.vocab = ckpt.dims.at("vocab").get<int>();
    d.embed = ckpt.dims.at("embed").get<int>();
    d.hidden = ckpt.dims.at("hidden").get<int>();
    d.context = ckpt.dims.at("context").get<int>();
    d.max_length = ckpt.dims.at("max_length").get<int>();
  } catch (const std::exception& e) {
    throw DataError(std::string("checkpoint: bad language-model dims: ") + e.what());
  }
  TinyLM model(d, ckpt.seed);
  ckpt.restore(model.params().refs());
  return model;
}

Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt) { return Vocabulary(ckpt.vocab, ckpt.marker_lengths); }

Checkpoint to_checkpoint(const LengthPredictor& predictor) {
  Checkpoint c;
  c.mode = "length-predictor";
  c.dims = {{"context", predictor.context_dim()}, {"max_length", predictor.max_length()}};
  LengthPredictor copy = predictor;
  c.store(copy.refs());
  return c;
}

LengthPredictor length_predictor_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.mode != "length-predictor") throw DataError("checkpoint: not a length predictor");
  LengthPredictor p(ckpt.dims.at("context").get<int>(), ckpt.dims.at("max_length").get<int>(), ckpt.seed);
  ckpt.restore(p.refs());
  return p;
}

void require_mode(const Checkpoint& ckpt, std::initializer_list<const char*> modes) {
  std::string accepted;
  for (const char* m : modes) {
    if (ckpt.mode == m) return;
    accepted += accepted.empty() ? m : std::string(", ") + m;
  }
  throw DataError("checkpoint: mode '" + ckpt.mode + "' is not one of " + accepted);
}

namespace {

int dim(const Checkpoint& ckpt, const char* key) {
  try {
    return ckpt.dims.at(key).get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: missing dimension '") + key + "'");
  }
}

}  // namespace

Checkpoint to_checkpoint(const RetrievalScorer& scorer, const Vocabulary& vocab) {
  Checkpoint c;
  c.mode = "retrieval";
  c.dims = {{"vocab", scorer.vocab_size()}, {"embed", scorer.embed_dim()}, {"context", scorer.context_dim()},
            {"joint", scorer.joint_dim()}};
  c.seed = scorer.seed();
  c.vocab.assign(vocab.words().begin(), vocab.words().end());
  c.marker_lengths = vocab.marker_lengths();
  RetrievalScorer copy = scorer;
  c.store(copy.refs());
  return c;
}

RetrievalScorer retrieval_from_checkpoint(const Checkpoint& ckpt) {
  require_mode(ckpt, {"retrieval"});
  RetrievalScorer s(dim(ckpt, "vocab"), dim(ckpt, "embed"), dim(ckpt, "context"), dim(ckpt, "joint"), ckpt.seed);
  ckpt.restore(s.refs());
  return s;
}

Checkpoint to_checkpoint(const ComprehensionModel& model, const Vocabulary& vocab) {
  Checkpoint c;
  c.mode = "comprehension";
  c.dims = {{"vocab", model.vocab_size()}, {"region", model.region_dim()}, {"embed", model.embed_dim()}};
  c.seed = model.seed();
  c.vocab.assign(vocab.words().begin(), vocab.words().end());
  c.marker_lengths = vocab.marker_lengths();
  ComprehensionModel copy = model;
  c.store(copy.refs());
  return c;
}

ComprehensionModel comprehension_from_checkpoint(const Checkpoint& ckpt) {
  require_mode(ckpt, {"comprehension"});
  ComprehensionModel m(dim(ckpt, "vocab"), dim(ckpt, "region"), dim(ckpt, "embed"), ckpt.seed);
  ckpt.restore(m.refs());
  return m;
}

Checkpoint to_checkpoint(const Tag2CapScorer& scorer) {
  Checkpoint c = to_checkpoint(scorer.model(), scorer.caption_vocab());
  c.mode = "tag2cap";
  const auto words = scorer.encoder().vocab().words();
  c.dims["tag_vocab"] = std::vector<std::string>(words.begin(), words.end());
  c.params["tag_embed"] = scorer.encoder().embeddings();
  return c;
}

Tag2CapScorer tag2cap_from_checkpoint(const Checkpoint& ckpt) {
  require_mode(ckpt, {"tag2cap"});
  Vocabulary tags;
  try {
    tags = Vocabulary(ckpt.dims.at("tag_vocab").get<std::vector<std::string>>(), 0);
  } catch (const json::exception&) {
    throw DataError("checkpoint: missing tag vocabulary");
  }
  Tag2CapScorer s(vocab_from_checkpoint(ckpt), tags, dim(ckpt, "context"), dim(ckpt, "embed"), dim(ckpt, "hidden"),
                  ckpt.seed);
  ParamList refs = s.model().params().refs();
  refs.push_back({"tag_embed", &s.encoder().embeddings()});
  ckpt.restore(refs);
  return s;
}

Checkpoint to_checkpoint(const Tag2FeatScorer& scorer) {
  Checkpoint c;
  c.mode = "tag2feat";
  c.dims = {{"tag_dim", scorer.encoder().dim()}, {"context", scorer.projection().rows()}};
  const auto words = scorer.encoder().vocab().words();
  c.vocab.assign(words.begin(), words.end());
  Tag2FeatScorer copy = scorer;
  c.store(copy.refs());
  return c;
}

Tag2FeatScorer tag2feat_from_checkpoint(const Checkpoint& ckpt) {
  require_mode(ckpt, {"tag2feat"});
  Tag2FeatScorer s(vocab_from_checkpoint(ckpt), dim(ckpt, "tag_dim"), dim(ckpt, "context"), ckpt.seed);
  ckpt.restore(s.refs());
  return s;
}

}  // namespace capgen
