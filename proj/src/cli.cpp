#include "capgen/cli.hpp"

#include "capgen/checkpoint.hpp"
#include "capgen/errors.hpp"
#include "capgen/tagrank.hpp"
#include "capgen/toy.hpp"
#include "capgen/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace capgen {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string list_ids(const std::vector<std::string>& ids) {
  std::string out;
  const std::size_t shown = std::min<std::size_t>(ids.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > shown) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

double guarded(const std::function<double()>& f) {
  try {
    return f();
  } catch (const std::invalid_argument&) {
    return kNaN;
  } catch (const std::domain_error&) {
    return kNaN;
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

double max_of(const std::vector<double>& v) {
  return v.empty() ? kNaN : *std::max_element(v.begin(), v.end());
}

}  // namespace

std::vector<HypothesisSet> parse_hypotheses(std::istream& in) {
  std::vector<HypothesisSet> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      HypothesisSet h;
      h.id = j.at("id").get<std::string>();
      for (const auto& c : j.at("captions")) {
        h.captions.push_back(c.at("tokens").get<Caption>());
        h.log_probs.push_back(c.contains("logprob") && !c.at("logprob").is_null() ? c.at("logprob").get<double>()
                                                                                : kNaN);
      }
      if (h.captions.empty()) throw DataError("no captions");
      out.push_back(std::move(h));
    } catch (const std::exception& e) {
      throw DataError("hypotheses line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<HypothesisSet> load_hypotheses(const std::string& path) {
  auto in = open_input(path);
  return parse_hypotheses(in);
}

void write_hypotheses(std::ostream& out, std::span<const HypothesisSet> sets) {
  for (const auto& h : sets) {
    std::string line = "{\"id\": " + json(h.id).dump() + ", \"captions\": [";
    for (std::size_t i = 0; i < h.captions.size(); ++i) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", h.log_probs.at(i));
      line += (i ? ", " : "") + std::string("{\"tokens\": ") + json(h.captions[i]).dump() + ", \"logprob\": " +
              (std::isfinite(h.log_probs[i]) ? std::string(buf) : std::string("null")) + "}";
    }
    out << line << "]}\n";
  }
}

std::vector<HypothesisSet> decode_corpus(const TinyLM& model, const Vocabulary& vocab,
                                         std::span<const CorpusRecord> records, const DecodeConfig& config,
                                         int desired_length, const LengthPredictor* predictor) {
  config.validate();
  if (static_cast<std::size_t>(model.vocab_size()) != vocab.size())
    throw DataError("checkpoint: vocabulary size does not match the model");
  const LengthMode mode = model.dims().mode;
  if (mode != LengthMode::kNone && desired_length <= 0 && !predictor)
    throw ConfigError("length: length-aware checkpoints need --length or --length-predictor");
  Rng rng(config.seed);
  std::vector<HypothesisSet> out;
  for (const auto& r : records) {
    if (r.context.size() != model.dims().context)
      throw DataError(r.id + ": context dimension " + std::to_string(r.context.size()) + " does not match the model");
    std::vector<Hypothesis> hyps;
    if (mode == LengthMode::kNone) {
      hyps = decode(model, r.context, config, rng);
    } else {
      int length = desired_length > 0 ? desired_length : predict_length(*predictor, r.context).length;
      length = std::clamp(length, 1, model.dims().max_length);
      if (mode == LengthMode::kLenEmb) {
        hyps = decode(LengthConditioned(model, length), r.context, config, rng);
      } else {
        hyps = decode(marker_wrap(model, length), r.context, config, rng);
      }
    }
    HypothesisSet h;
    h.id = r.id;
    for (const auto& hyp : hyps) {
      h.captions.push_back(vocab.decode(hyp.tokens));
      h.log_probs.push_back(hyp.log_prob);
    }
    out.push_back(std::move(h));
  }
  return out;
}

SetMetricsReport evaluate_sets(std::span<const HypothesisSet> hypotheses, std::span<const CorpusRecord> corpus,
                               const EvalOptions& options) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < hypotheses.size(); ++i)
    if (!by_id.emplace(hypotheses[i].id, i).second) throw DataError("hypotheses: duplicate id '" + hypotheses[i].id + "'");
  std::vector<std::string> missing, extra;
  std::set<std::string> corpus_ids;
  for (const auto& r : corpus) {
    corpus_ids.insert(r.id);
    if (!by_id.count(r.id)) missing.push_back(r.id);
  }
  for (const auto& h : hypotheses)
    if (!corpus_ids.count(h.id)) extra.push_back(h.id);
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "ids do not align";
    if (!missing.empty()) msg += "; missing hypotheses for: " + list_ids(missing);
    if (!extra.empty()) msg += "; not in corpus: " + list_ids(extra);
    throw DataError(msg);
  }
  if (options.allspice) {
    if (!options.lexicon) throw ConfigError("lexicon: AllSPICE needs a lexicon to extract candidate tuples");
    std::vector<std::string> no_tuples;
    for (const auto& r : corpus)
      if (!r.has_tuples()) no_tuples.push_back(r.id);
    if (!no_tuples.empty()) throw DataError("AllSPICE needs reference tuples; missing for: " + list_ids(no_tuples));
  }
  if (options.scorer) {
    if (!options.scorer_vocab) throw ConfigError("scorer: missing scorer vocabulary");
    if (options.distractors.size() != corpus.size())
      throw ConfigError("distractors: need one distractor per record");
  }

  std::vector<std::vector<Caption>> refs;
  for (const auto& r : corpus) refs.push_back(r.captions);
  const CorpusStats stats(refs);

  bool multi = false;
  for (const auto& h : hypotheses) multi = multi || h.captions.size() > 1;

  const std::size_t n = corpus.size();
  std::map<std::string, std::vector<double>> cols;
  std::vector<std::string> order = {"cider", "bleu4"};
  if (multi)
    order.insert(order.end(), {"oracle_cider", "avg_cider", "oracle_bleu4", "avg_bleu4", "mbleu", "self_cider"});
  order.insert(order.end(), {"div1", "div2"});
  if (options.allspice) order.push_back("allspice");
  if (options.scorer) order.push_back("acc");
  for (const auto& c : order) cols[c].assign(n, kNaN);

  SetMetricsReport report;
  std::vector<Caption> all_outputs;
  for (std::size_t i = 0; i < n; ++i) {
    const CorpusRecord& rec = corpus[i];
    const HypothesisSet& h = hypotheses[by_id.at(rec.id)];
    report.ids.push_back(rec.id);
    std::vector<double> ciders, bleus;
    for (const auto& c : h.captions) {
      ciders.push_back(c.empty() ? 0.0 : cider_d(c, rec.captions, stats));
      bleus.push_back(c.empty() ? 0.0 : bleu(c, rec.captions));
      all_outputs.push_back(c);
    }
    cols["cider"][i] = ciders.front();
    cols["bleu4"][i] = bleus.front();
    if (multi) {
      cols["oracle_cider"][i] = max_of(ciders);
      cols["avg_cider"][i] = mean_of(ciders);
      cols["oracle_bleu4"][i] = max_of(bleus);
      cols["avg_bleu4"][i] = mean_of(bleus);
      cols["mbleu"][i] = guarded([&] { return mbleu(h.captions); });
      cols["self_cider"][i] = guarded([&] { return self_cider(h.captions, stats); });
    }
    bool has_words = false;
    for (const auto& c : h.captions) has_words = has_words || !c.empty();
    if (has_words) {
      cols["div1"][i] = divn(h.captions, 1);
      cols["div2"][i] = divn(h.captions, 2);
    }
    if (options.allspice) {
      std::vector<SceneGraph> cand, ref;
      for (const auto& c : h.captions)
        cand.push_back(graph_from_tuples(lexicon_extract_tuples(c, *options.lexicon, options.synonyms),
                                         options.synonyms));
      for (const auto& t : rec.tuples) ref.push_back(graph_from_tuples(t, options.synonyms));
      SceneGraph merged = merge_graphs(ref);
      if (merged.empty()) throw DataError(rec.id + ": reference tuples are empty");
      cols["allspice"][i] = allspice(cand, ref);
    }
    if (options.scorer) {
      const std::size_t d = options.distractors[i];
      if (d >= n || d == i) throw DataError(rec.id + ": invalid distractor");
      std::vector<DiscriminationItem> items;
      for (const auto& c : h.captions) items.push_back({rec.context, corpus[d].context, options.scorer_vocab->encode(c)});
      cols["acc"][i] = discrimination_accuracy(items, *options.scorer);
    }
  }
  for (const auto& c : order) report.add_column(c, cols[c]);
  report.summary["images"] = static_cast<double>(n);
  report.summary["captions"] = static_cast<double>(all_outputs.size());
  report.summary["vocab_size"] = static_cast<double>(vocab_size(all_outputs));
  report.summary["bad_ending_rate"] = bad_ending_rate(all_outputs, options.bad_endings);
  if (!options.training_captions.empty())
    report.summary["novel_rate"] = novel_rate(all_outputs, options.training_captions);
  return report;
}

void SweepSpec::validate() const {
  base.validate();
  if (base.samples < 1) throw ConfigError("samples: must be >= 1");
  for (double t : temperatures)
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("temperatures: every temperature must be > 0");
  for (int k : top_ks)
    if (k < 1) throw ConfigError("top_ks: every k must be >= 1");
  for (double p : top_ps)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("top_ps: every p must lie in [0, 1]");
  for (double d : diversities)
    if (!(d >= 0.0)) throw ConfigError("dbs_lambdas: every lambda must be >= 0");
  for (const auto& p : grid()) p.config.validate();
}

std::vector<SweepSpec::Point> SweepSpec::grid() const {
  auto axis = [](const auto& v, auto fallback) {
    using T = decltype(fallback);
    return v.empty() ? std::vector<T>{fallback} : std::vector<T>(v.begin(), v.end());
  };
  std::vector<Point> out;
  for (double t : axis(temperatures, base.temperature))
    for (int k : axis(top_ks, base.top_k))
      for (double p : axis(top_ps, base.top_p))
        for (double d : axis(diversities, base.diversity)) {
          Point pt;
          pt.config = base;
          pt.config.temperature = t;
          pt.config.top_k = k;
          pt.config.top_p = p;
          pt.config.diversity = d;
          std::string s = to_string(base.method) + " T=" + format_number(t);
          if (!top_ks.empty()) s += " k=" + std::to_string(k);
          if (!top_ps.empty()) s += " p=" + format_number(p);
          if (!diversities.empty()) s += " lambda=" + format_number(d);
          pt.setting = s;
          out.push_back(std::move(pt));
        }
  return out;
}

std::vector<SweepRow> run_sweep(const TinyLM& model, const Vocabulary& vocab, std::span<const CorpusRecord> corpus,
                                const SweepSpec& spec, const EvalOptions& options, int desired_length) {
  spec.validate();
  const auto points = spec.grid();
  auto run_point = [&](const SweepSpec::Point& p) {
    const auto hyps = decode_corpus(model, vocab, corpus, p.config, desired_length);
    const SetMetricsReport report = evaluate_sets(hyps, corpus, options);
    const bool multi = std::find(report.columns.begin(), report.columns.end(), "oracle_cider") != report.columns.end();
    SweepRow row;
    row.setting = p.setting;
    row.oracle_cider = report.corpus(multi ? "oracle_cider" : "cider");
    row.avg_cider = report.corpus(multi ? "avg_cider" : "cider");
    row.self_cider = multi ? report.corpus("self_cider") : kNaN;
    row.mbleu = multi ? report.corpus("mbleu") : kNaN;
    row.div1 = report.corpus("div1");
    if (options.allspice) row.allspice = report.corpus("allspice");
    return row;
  };
  std::vector<SweepRow> rows;
  if (spec.parallel && points.size() > 1) {
    std::vector<std::future<SweepRow>> jobs;
    for (const auto& p : points) jobs.push_back(std::async(std::launch::async, run_point, std::cref(p)));
    for (auto& j : jobs) rows.push_back(j.get());
  } else {
    for (const auto& p : points) rows.push_back(run_point(p));
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "setting,oracle_cider,allspice,self_cider,mbleu,div1,avg_cider\n";
  for (const auto& r : rows) {
    out << r.setting << ',' << format_number(r.oracle_cider) << ','
        << (r.allspice ? format_number(*r.allspice) : std::string()) << ',' << format_number(r.self_cider) << ','
        << format_number(r.mbleu) << ',' << format_number(r.div1) << ',' << format_number(r.avg_cider) << '\n';
  }
}

namespace {

const std::set<std::string> kTrainKeys = {
    "version",      "procedure",   "corpus",        "regions",        "output",     "log",
    "init",         "vocab_from",  "comprehension", "scorer",         "stopwords",  "synonyms",
    "vocab_size",   "embed",       "hidden",        "joint",          "tag_dim",    "tag_vocab_size",
    "length_mode",  "learning_rate", "epochs",      "batch_size",     "label_smoothing", "ss_rate",
    "ss_cap",       "mss_floor",   "mss_offset",    "mss_slope",      "smixec_p",   "smixec_period",
    "smixec_max_length", "lambda", "reward",        "reward_batch",   "margin",     "comprehension_loss",
    "max_length",   "seed",        "subset_sampling"};

class RunConfig {
 public:
  RunConfig(json j, fs::path dir) : j_(std::move(j)), dir_(std::move(dir)) {}

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  std::string str(const std::string& key, const std::string& fallback = "") const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_string()) throw ConfigError(key + ": expected a string");
    return j_.at(key).get<std::string>();
  }

  std::string required_str(const std::string& key) const {
    if (!has(key)) throw ConfigError(key + ": required");
    return str(key);
  }

  std::string path(const std::string& key) const {
    const fs::path p = required_str(key);
    return (p.is_absolute() ? p : dir_ / p).string();
  }

  std::string optional_path(const std::string& key) const { return has(key) ? path(key) : std::string(); }

  double num(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_number()) throw ConfigError(key + ": expected a number");
    return j_.at(key).get<double>();
  }

  int integer(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(key + ": expected an integer");
    return v.get<int>();
  }

  std::uint64_t seed() const {
    if (!has("seed")) return 0;
    const json& v = j_.at("seed");
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("seed: expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

 private:
  json j_;
  fs::path dir_;
};

RunConfig load_run_config(const std::string& path) {
  auto in = open_input(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!kTrainKeys.count(key)) throw ConfigError(key + ": unknown configuration key");
  if (!j.contains("version")) throw ConfigError("version: required");
  if (!j.at("version").is_number_integer() || j.at("version").get<int>() != 1)
    throw ConfigError("version: unsupported configuration version");
  return RunConfig(std::move(j), fs::absolute(path).parent_path());
}

TrainConfig train_config(const RunConfig& c, double default_lr) {
  TrainConfig t;
  t.learning_rate = c.num("learning_rate", default_lr);
  t.epochs = c.integer("epochs", t.epochs);
  t.batch_size = c.integer("batch_size", t.batch_size);
  t.label_smoothing = c.num("label_smoothing", t.label_smoothing);
  t.ss_rate = c.num("ss_rate", t.ss_rate);
  t.ss_cap = c.num("ss_cap", t.ss_cap);
  t.mss_floor = c.num("mss_floor", t.mss_floor);
  t.mss_offset = c.num("mss_offset", t.mss_offset);
  t.mss_slope = c.num("mss_slope", t.mss_slope);
  t.smixec_p = c.num("smixec_p", t.smixec_p);
  t.smixec_period = c.integer("smixec_period", t.smixec_period);
  t.smixec_max_length = c.integer("smixec_max_length", t.smixec_max_length);
  t.lambda = c.num("lambda", t.lambda);
  if (c.has("reward")) t.reward = reward_kind_from_string(c.str("reward"));
  if (c.has("comprehension_loss")) {
    try {
      t.comprehension_loss = comprehension_loss_from_string(c.str("comprehension_loss"));
    } catch (const std::invalid_argument&) {
      throw ConfigError("comprehension_loss: expected 'logistic' or 'softmax'");
    }
  }
  t.max_length = c.integer("max_length", t.max_length);
  t.seed = c.seed();
  t.validate();
  return t;
}

std::vector<Caption> expressions_of(std::span<const RegionRecord> images) {
  std::vector<Caption> out;
  for (const auto& im : images)
    for (const auto& r : im.regions) out.insert(out.end(), r.expressions.begin(), r.expressions.end());
  return out;
}

std::vector<Caption> captions_of(std::span<const CorpusRecord> corpus) {
  std::vector<Caption> out;
  for (const auto& r : corpus) out.insert(out.end(), r.captions.begin(), r.captions.end());
  return out;
}

std::vector<SequenceExample> as_sequences(std::span<const RefExpExample> examples) {
  std::vector<SequenceExample> out;
  for (const auto& e : examples) out.push_back({e.id, e.context, e.targets, 0});
  return out;
}

Vocabulary vocab_for(const RunConfig& c, std::span<const Caption> captions, int markers) {
  if (c.has("vocab_from")) return vocab_from_checkpoint(load_checkpoint(c.path("vocab_from")));
  const int size = c.integer("vocab_size", 1000);
  if (size < Vocabulary::kReserved + markers) throw ConfigError("vocab_size: too small for the reserved ids");
  return build_vocab_from_tokens(captions, static_cast<std::size_t>(size), markers);
}

void require_same_vocab(const Vocabulary& a, const Vocabulary& b, const std::string& key) {
  if (!(a == b)) throw ConfigError(key + ": vocabulary differs from the generator's");
}

struct TrainedGenerator {
  TinyLM model;
  Vocabulary vocab;
};

TrainedGenerator load_generator(const RunConfig& c) {
  const Checkpoint ckpt = load_checkpoint(c.path("init"));
  require_mode(ckpt, {"none", "len-emb", "marker"});
  return {tinylm_from_checkpoint(ckpt), vocab_from_checkpoint(ckpt)};
}

TrainedGenerator new_generator(const RunConfig& c, std::span<const Caption> captions, int context_dim,
                               LengthMode mode, int max_length) {
  const int markers = mode == LengthMode::kMarker ? max_length : 0;
  Vocabulary vocab = vocab_for(c, captions, markers);
  if (vocab.marker_lengths() != markers) throw ConfigError("vocab_from: marker block does not match length_mode");
  TinyLMDims dims;
  dims.vocab = static_cast<int>(vocab.size());
  dims.embed = c.integer("embed", dims.embed);
  dims.hidden = c.integer("hidden", dims.hidden);
  dims.context = context_dim;
  dims.max_length = max_length;
  dims.mode = mode;
  if (dims.embed < 1) throw ConfigError("embed: must be >= 1");
  if (dims.hidden < 1) throw ConfigError("hidden: must be >= 1");
  return {TinyLM(dims, c.seed()), std::move(vocab)};
}

LengthMode length_mode(const RunConfig& c) {
  try {
    return length_mode_from_string(c.str("length_mode", "none"));
  } catch (const std::invalid_argument&) {
    throw ConfigError("length_mode: expected 'none', 'len-emb' or 'marker'");
  }
}

void write_log(const RunConfig& c, const TrainingLog& log) {
  if (!c.has("log")) return;
  auto out = open_output(c.path("log"));
  log.write_csv(out);
}

void save(const RunConfig& c, const Checkpoint& ckpt) { save_checkpoint(c.path("output"), ckpt); }

WordSet stopwords_for(const RunConfig& c) {
  return c.has("stopwords") ? load_word_list(c.path("stopwords")) : toy_stopwords();
}

SynonymTable synonyms_for(const RunConfig& c) {
  return c.has("synonyms") ? load_synonyms(c.path("synonyms")) : SynonymTable{};
}

TrainingLog train_command(const RunConfig& c, std::ostream& out) {
  const std::string procedure = c.required_str("procedure");
  c.required_str("output");
  static const std::set<std::string> known = {"mle",   "ss",        "mss",           "smixec", "compound", "scst",
                                              "retrieval", "comprehension", "length", "tag2cap", "tag2feat"};
  if (!known.count(procedure)) throw ConfigError("procedure: unknown training procedure '" + procedure + "'");
  const TrainConfig cfg = train_config(c, procedure == "scst" ? 0.01 : 0.1);
  TrainingLog log;

  if (procedure == "mle" || procedure == "ss") {
    if (cfg.ss_rate > 0.0 && procedure == "mle") warn("ss_rate is ignored by procedure 'mle'");
    const LengthMode mode = length_mode(c);
    std::vector<SequenceExample> examples;
    TrainedGenerator gen;
    if (c.has("regions")) {
      if (mode != LengthMode::kNone) throw ConfigError("length_mode: region corpora support only 'none'");
      const auto images = load_regions(c.path("regions"));
      if (images.empty()) throw DataError("regions: no records");
      const auto exprs = expressions_of(images);
      gen = c.has("init") ? load_generator(c)
                          : new_generator(c, exprs, static_cast<int>(region_context(images[0], 0).size()), mode,
                                          cfg.max_length);
      examples = as_sequences(refexp_examples(images, gen.vocab));
    } else {
      const auto corpus = load_corpus(c.path("corpus"));
      if (corpus.empty()) throw DataError("corpus: no records");
      gen = c.has("init") ? load_generator(c)
                          : new_generator(c, captions_of(corpus), static_cast<int>(corpus[0].context.size()), mode,
                                          cfg.max_length);
      examples = caption_examples(corpus, gen.vocab, gen.model.dims().mode);
    }
    log = procedure == "mle" ? mle_train(gen.model, examples, cfg) : scheduled_sampling_mle(gen.model, examples, cfg);
    save(c, to_checkpoint(gen.model, gen.vocab));
  } else if (procedure == "mss" || procedure == "smixec" || procedure == "compound") {
    const auto images = load_regions(c.path("regions"));
    if (images.empty()) throw DataError("regions: no records");
    TrainedGenerator gen = c.has("init") ? load_generator(c)
                                         : new_generator(c, expressions_of(images),
                                                         static_cast<int>(region_context(images[0], 0).size()),
                                                         LengthMode::kNone, cfg.max_length);
    const Checkpoint cc = load_checkpoint(c.path("comprehension"));
    const ComprehensionModel comp = comprehension_from_checkpoint(cc);
    require_same_vocab(gen.vocab, vocab_from_checkpoint(cc), "comprehension");
    const auto examples = refexp_examples(images, gen.vocab);
    if (procedure == "mss") log = mss_train(gen.model, comp, examples, cfg);
    else if (procedure == "smixec") log = smixec_train(gen.model, comp, examples, cfg);
    else log = compound_train(gen.model, comp, examples, cfg);
    save(c, to_checkpoint(gen.model, gen.vocab));
  } else if (procedure == "scst") {
    const auto corpus = load_corpus(c.path("corpus"));
    if (corpus.empty()) throw DataError("corpus: no records");
    TrainedGenerator gen = load_generator(c);
    std::optional<RetrievalScorer> scorer;
    if (cfg.reward != RewardKind::kCider) {
      const Checkpoint sc = load_checkpoint(c.path("scorer"));
      scorer = retrieval_from_checkpoint(sc);
      require_same_vocab(gen.vocab, vocab_from_checkpoint(sc), "scorer");
    }
    const CaptionReward reward(corpus, gen.vocab, cfg.reward, cfg.lambda, scorer ? &*scorer : nullptr,
                               c.integer("reward_batch", 4), c.num("margin", 0.2));
    log = scst_train(gen.model, corpus, gen.vocab, reward.fn(), cfg);
    save(c, to_checkpoint(gen.model, gen.vocab));
  } else if (procedure == "retrieval") {
    const auto corpus = load_corpus(c.path("corpus"));
    if (corpus.empty()) throw DataError("corpus: no records");
    const Vocabulary vocab = vocab_for(c, captions_of(corpus), 0);
    RetrievalScorer scorer(static_cast<int>(vocab.size()), c.integer("embed", 32),
                           static_cast<int>(corpus[0].context.size()), c.integer("joint", 32), cfg.seed);
    log = train_retrieval_scorer(scorer, corpus, vocab, cfg, c.num("margin", 0.2));
    save(c, to_checkpoint(scorer, vocab));
  } else if (procedure == "comprehension") {
    const auto images = load_regions(c.path("regions"));
    if (images.empty()) throw DataError("regions: no records");
    const Vocabulary vocab = vocab_for(c, expressions_of(images), 0);
    ComprehensionModel model(static_cast<int>(vocab.size()), static_cast<int>(region_inputs(images[0]).rows()),
                             c.integer("embed", 16), cfg.seed);
    log = train_comprehension(model, refexp_examples(images, vocab), cfg);
    save(c, to_checkpoint(model, vocab));
  } else if (procedure == "length") {
    const auto corpus = load_corpus(c.path("corpus"));
    if (corpus.empty()) throw DataError("corpus: no records");
    LengthPredictor predictor(static_cast<int>(corpus[0].context.size()), cfg.max_length, cfg.seed);
    for (int e = 1; e <= cfg.epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      const double loss = predictor.train(corpus, 1, cfg.learning_rate);
      if (!std::isfinite(loss)) throw NumericError("length: non-finite loss at epoch " + std::to_string(e));
      log.rows.push_back(
          {e, loss, 0.0, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()});
    }
    save(c, to_checkpoint(predictor));
  } else {
    const auto corpus = load_corpus(c.path("corpus"));
    if (corpus.empty()) throw DataError("corpus: no records");
    const WordSet stop = stopwords_for(c);
    const SynonymTable syn = synonyms_for(c);
    const Vocabulary tag_vocab =
        build_tag_vocab(corpus, stop, static_cast<std::size_t>(c.integer("tag_vocab_size", 1000)), syn);
    const auto records = tag_records(corpus, tag_vocab, stop, syn);
    const std::string sampling = c.str("subset_sampling", "random");
    if (sampling != "random" && sampling != "full") throw ConfigError("subset_sampling: expected 'random' or 'full'");
    const SubsetSampler sampler =
        sampling == "full" ? SubsetSampler([](std::span<const std::string> t, Rng&) {
          return std::vector<std::string>(t.begin(), t.end());
        })
                           : SubsetSampler(sample_tag_subset);
    const int tag_dim = c.integer("tag_dim", 16);
    if (procedure == "tag2cap") {
      const Vocabulary vocab = vocab_for(c, captions_of(corpus), 0);
      Tag2CapScorer scorer(vocab, tag_vocab, tag_dim, c.integer("embed", 32), c.integer("hidden", 64), cfg.seed);
      log = train_tag2cap(scorer, records, cfg, sampler);
      save(c, to_checkpoint(scorer));
    } else {
      Tag2FeatScorer scorer(tag_vocab, tag_dim, static_cast<int>(corpus[0].context.size()), cfg.seed);
      log = train_tag2feat(scorer, records, cfg, sampler);
      save(c, to_checkpoint(scorer));
    }
  }
  write_log(c, log);
  out << procedure << ": " << log.rows.size() << " log rows";
  if (!log.rows.empty())
    out << ", first " << format_number(log.first_loss()) << ", last " << format_number(log.last_loss());
  out << "\n";
  return log;
}

struct DecodeFlags {
  std::string method = "greedy";
  double temperature = 1.0;
  int top_k = 0;
  double top_p = 1.0;
  int beam_size = 0;
  int groups = 1;
  double diversity = 0.0;
  int length = 0;
  int samples = 1;
  std::uint64_t seed = 0;
  int max_length = kMaxCaptionLength;

  void add_to(CLI::App& app) {
    app.add_option("--method", method, "greedy, sample, top-k, top-p, beam, diverse-beam or fixlen");
    app.add_option("--temperature", temperature, "softmax temperature");
    app.add_option("--top-k", top_k, "top-k filter size (0 keeps all)");
    app.add_option("--top-p", top_p, "nucleus mass");
    app.add_option("--beam-size", beam_size, "beam width");
    app.add_option("--dbs-groups", groups, "diverse beam search groups");
    app.add_option("--dbs-lambda", diversity, "diverse beam search penalty");
    app.add_option("--length", length, "target length (fixlen, lenemb and marker checkpoints)");
    app.add_option("--samples", samples, "samples per record");
    app.add_option("--seed", seed, "sampling seed");
    app.add_option("--max-length", max_length, "maximum caption length");
  }

  DecodeConfig config() const {
    DecodeConfig d;
    d.method = decode_method_from_string(method);
    d.temperature = temperature;
    d.top_k = top_k;
    d.top_p = top_p;
    d.groups = groups;
    d.diversity = diversity;
    d.samples = samples;
    d.seed = seed;
    d.max_length = max_length;
    d.target_length = length;
    if (beam_size > 0) d.beam_size = beam_size;
    else if (d.method == DecodeMethod::kDiverseBeam) d.beam_size = groups;
    else if (d.method == DecodeMethod::kBeam || d.method == DecodeMethod::kFixLen) d.beam_size = 3;
    if (d.method == DecodeMethod::kTopK && top_k == 0) d.top_k = 3;
    return d;
  }
};

struct LoadedGenerator {
  TinyLM model;
  Vocabulary vocab;
  std::optional<LengthPredictor> predictor;
};

LoadedGenerator load_decoder(const std::string& checkpoint, const std::string& predictor_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  require_mode(ckpt, {"none", "len-emb", "marker"});
  LoadedGenerator g{tinylm_from_checkpoint(ckpt), vocab_from_checkpoint(ckpt), std::nullopt};
  if (!predictor_path.empty()) g.predictor = length_predictor_from_checkpoint(load_checkpoint(predictor_path));
  return g;
}

struct EvalFlags {
  bool allspice = false;
  std::string lexicon_dir;
  std::string synonyms;
  std::string scorer;
  std::string distractors;
  std::string training;
  std::string bad_endings;

  void add_to(CLI::App& app, bool with_acc) {
    app.add_flag("--allspice", allspice, "report AllSPICE (needs reference tuples and --lexicon)");
    app.add_option("--lexicon", lexicon_dir, "directory with objects.txt, attributes.txt and relations.txt");
    app.add_option("--synonyms", synonyms, "synonym table (TSV)");
    if (!with_acc) return;
    app.add_option("--scorer", scorer, "retrieval scorer checkpoint for discrimination accuracy");
    app.add_option("--distractors", distractors, "'partner' (record i ^ 1) or a TSV of id, distractor id");
    app.add_option("--training", training, "training corpus for the novel-sentence rate");
    app.add_option("--bad-endings", bad_endings, "word list overriding the built-in bad endings");
  }
};

struct EvalContext {
  EvalOptions options;
  std::optional<Lexicon> lexicon;
  std::optional<RetrievalScorer> scorer;
  std::optional<Vocabulary> scorer_vocab;
};

std::vector<std::size_t> read_distractors(const std::string& spec, std::span<const CorpusRecord> corpus) {
  std::vector<std::size_t> out(corpus.size());
  if (spec == "partner") {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      out[i] = toy_partner(i);
      if (out[i] >= corpus.size()) throw DataError("distractors: record " + corpus[i].id + " has no partner");
    }
    return out;
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) index[corpus[i].id] = i;
  auto in = open_input(spec);
  std::map<std::string, std::string> pairs;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string a, b;
    if (!(std::getline(fields, a, '\t') && std::getline(fields, b))) continue;
    if (!b.empty() && b.back() == '\r') b.pop_back();
    pairs[a] = b;
  }
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto it = pairs.find(corpus[i].id);
    if (it == pairs.end() || !index.count(it->second)) {
      missing.push_back(corpus[i].id);
      continue;
    }
    out[i] = index.at(it->second);
  }
  if (!missing.empty()) throw DataError("distractors: no valid distractor for: " + list_ids(missing));
  return out;
}

void build_eval_context(const EvalFlags& f, std::span<const CorpusRecord> corpus, EvalContext& ctx) {
  ctx.options.allspice = f.allspice;
  if (!f.synonyms.empty()) ctx.options.synonyms = load_synonyms(f.synonyms);
  if (!f.lexicon_dir.empty()) {
    const fs::path d = f.lexicon_dir;
    ctx.lexicon = load_lexicon((d / "objects.txt").string(), (d / "attributes.txt").string(),
                               (d / "relations.txt").string());
    ctx.options.lexicon = &*ctx.lexicon;
  }
  if (!f.scorer.empty()) {
    if (f.distractors.empty()) throw ConfigError("distractors: --scorer needs a distractor pairing");
    const Checkpoint ckpt = load_checkpoint(f.scorer);
    ctx.scorer = retrieval_from_checkpoint(ckpt);
    ctx.scorer_vocab = vocab_from_checkpoint(ckpt);
    ctx.options.scorer = &*ctx.scorer;
    ctx.options.scorer_vocab = &*ctx.scorer_vocab;
    ctx.options.distractors = read_distractors(f.distractors, corpus);
  }
  if (!f.training.empty()) ctx.options.training_captions = captions_of(load_corpus(f.training));
  if (!f.bad_endings.empty()) ctx.options.bad_endings = load_word_list(f.bad_endings);
}

struct TagArtifacts {
  std::optional<Tag2CapScorer> tag2cap;
  std::optional<Tag2FeatScorer> tag2feat;
  TagStatistics stats;
  SynonymTable synonyms;
};

using ScoreFn = std::function<double(const TagRecord&, const std::string&)>;

ScoreFn baseline_score(const std::string& method, const TagArtifacts& a) {
  if (method == "tf") return [&a](const TagRecord& r, const std::string& t) { return caption_tf(r, t, a.synonyms); };
  if (method == "tfidf")
    return [&a](const TagRecord& r, const std::string& t) { return caption_tf(r, t, a.synonyms) * a.stats.idf(t); };
  if (method == "freq") return [&a](const TagRecord&, const std::string& t) { return a.stats.frequency(t); };
  if (method == "tagorder")
    return [&a](const TagRecord& r, const std::string& t) {
      std::span<const std::string> one(&t, 1);
      return -tagorder_rank(r, one, a.synonyms).losses.front();
    };
  return nullptr;
}

const std::set<std::string> kTagMethods = {"tf", "tfidf", "tagorder", "freq", "tag2cap", "tag2feat", "combined"};

std::map<std::string, double> parse_weights(const std::string& spec) {
  std::map<std::string, double> out;
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("weights: expected name=value, got '" + item + "'");
    const std::string name = item.substr(0, eq);
    if (!kTagMethods.count(name) || name == "combined") throw ConfigError("weights: unknown method '" + name + "'");
    double w = 0.0;
    try {
      std::size_t used = 0;
      w = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("weights: invalid weight for '" + name + "'");
    }
    out[name] = w;
  }
  if (out.empty()) throw ConfigError("weights: --method combined requires --weights");
  return out;
}

void write_ranked(std::ostream& out, const std::string& id, const RankedTags& r) {
  std::string line = "{\"id\": " + json(id).dump() + ", \"tags\": " + json(r.tags).dump() + ", \"losses\": [";
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", r.losses[i]);
    line += (i ? ", " : "") + (std::isfinite(r.losses[i]) ? std::string(buf) : std::string("null"));
  }
  out << line << "]}\n";
}

std::map<std::string, std::vector<std::string>> load_ranked(const std::string& path) {
  auto in = open_input(path);
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out[j.at("id").get<std::string>()] = j.at("tags").get<std::vector<std::string>>();
    } catch (const std::exception& e) {
      throw DataError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_report(const SetMetricsReport& report, const std::string& json_path, const std::string& csv_path) {
  if (!json_path.empty()) {
    auto out = open_output(json_path);
    report.write_json(out);
  }
  if (!csv_path.empty()) {
    auto out = open_output(csv_path);
    report.write_csv(out);
  }
}

void write_word_list(const fs::path& path, const WordSet& words) {
  auto out = open_output(path.string());
  for (const auto& w : words) out << w << '\n';
}

int run(CLI::App& app, int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  app.require_subcommand(1);

  std::string train_config_path;
  auto* train = app.add_subcommand("train", "run a training procedure from a JSON config");
  train->add_option("config", train_config_path, "configuration file")->required();

  std::string ckpt, corpus_path, output, predictor_path;
  DecodeFlags dflags;
  auto* dec = app.add_subcommand("decode", "decode a corpus into a hypotheses file");
  dec->add_option("--checkpoint", ckpt, "generator checkpoint")->required();
  dec->add_option("--corpus", corpus_path, "corpus file")->required();
  dec->add_option("--output", output, "hypotheses file (JSON lines)")->required();
  dec->add_option("--length-predictor", predictor_path, "length predictor checkpoint");
  dflags.add_to(*dec);

  std::string hyp_path, csv_path;
  EvalFlags eflags;
  auto* ev = app.add_subcommand("eval", "evaluate hypotheses against a corpus");
  ev->add_option("--hypotheses", hyp_path, "hypotheses file")->required();
  ev->add_option("--corpus", corpus_path, "reference corpus")->required();
  ev->add_option("--output", output, "JSON report");
  ev->add_option("--csv", csv_path, "CSV report");
  eflags.add_to(*ev, true);

  std::vector<double> temperatures, top_ps, lambdas;
  std::vector<int> top_ks;
  bool serial = false;
  auto* sw = app.add_subcommand("sweep", "diversity-accuracy sweep over a decoding grid");
  sw->add_option("--checkpoint", ckpt, "generator checkpoint")->required();
  sw->add_option("--corpus", corpus_path, "evaluation corpus")->required();
  sw->add_option("--output", output, "CSV output")->required();
  sw->add_option("--temperatures", temperatures, "temperature grid")->delimiter(',');
  sw->add_option("--top-ks", top_ks, "top-k grid")->delimiter(',');
  sw->add_option("--top-ps", top_ps, "top-p grid")->delimiter(',');
  sw->add_option("--dbs-lambdas", lambdas, "diverse beam search penalty grid")->delimiter(',');
  sw->add_flag("--serial", serial, "evaluate grid points one at a time");
  DecodeFlags sflags;
  sflags.method = "sample";
  sflags.add_to(*sw);
  EvalFlags swflags;
  swflags.add_to(*sw, false);

  std::string method, stop_path, syn_path, training_path, tag2cap_path, tag2feat_path, weights;
  int tag_vocab_size = 1000, captions = 0;
  auto* rank = app.add_subcommand("rank-tags", "rank each record's candidate tags");
  rank->add_option("--corpus", corpus_path, "corpus file")->required();
  rank->add_option("--output", output, "ranked tags (JSON lines)")->required();
  rank->add_option("--method", method, "tf, tfidf, tagorder, freq, tag2cap, tag2feat or combined")->required();
  rank->add_option("--stopwords", stop_path, "stop word list (default: built-in list)");
  rank->add_option("--synonyms", syn_path, "synonym table (TSV)");
  rank->add_option("--training", training_path, "training corpus for tag vocabulary and frequency statistics");
  rank->add_option("--tag-vocab-size", tag_vocab_size, "tag vocabulary size");
  rank->add_option("--captions", captions, "use only the first N captions of each record (0: all)");
  rank->add_option("--tag2cap", tag2cap_path, "tag2cap checkpoint");
  rank->add_option("--tag2feat", tag2feat_path, "tag2feat checkpoint");
  rank->add_option("--weights", weights, "combined weights, e.g. tag2cap=1,tfidf=0.5");

  std::vector<std::string> ranked;
  std::string reference, annotations;
  auto* evt = app.add_subcommand("eval-tags", "SetRecall@1..5 of ranked tag files");
  evt->add_option("--ranked", ranked, "name=path of a ranked tags file (repeatable)")->required();
  evt->add_option("--reference", reference, "reference ranking (JSON lines)");
  evt->add_option("--annotations", annotations, "tag annotations for weighted SetRecall");
  evt->add_option("--synonyms", syn_path, "synonym table (TSV)");
  evt->add_option("--output", output, "CSV report")->required();

  std::string out_dir;
  ToyConfig toy;
  ToyRegionConfig toy_regions;
  int test_images = 0;
  auto* gen = app.add_subcommand("toygen", "write the synthetic toy corpus");
  gen->add_option("--output-dir", out_dir, "output directory")->required();
  gen->add_option("--images", toy.images, "training images");
  gen->add_option("--captions", toy.captions_per_image, "captions per image");
  gen->add_option("--noise", toy.noise, "context noise");
  gen->add_option("--seed", toy.seed, "generator seed");
  gen->add_option("--test-images", test_images, "also write a held-out test.jsonl of this size");
  gen->add_option("--region-images", toy_regions.images, "images in regions.jsonl (0: none)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  if (*train) {
    const RunConfig c = load_run_config(train_config_path);
    train_command(c, out);
  } else if (*dec) {
    const LoadedGenerator g = load_decoder(ckpt, predictor_path);
    const auto corpus = load_corpus(corpus_path);
    const auto hyps = decode_corpus(g.model, g.vocab, corpus, dflags.config(), dflags.length,
                                    g.predictor ? &*g.predictor : nullptr);
    auto f = open_output(output);
    write_hypotheses(f, hyps);
  } else if (*ev) {
    if (output.empty() && csv_path.empty()) throw ConfigError("output: give --output and/or --csv");
    const auto corpus = load_corpus(corpus_path);
    const auto hyps = load_hypotheses(hyp_path);
    EvalContext ctx;
    build_eval_context(eflags, corpus, ctx);
    write_report(evaluate_sets(hyps, corpus, ctx.options), output, csv_path);
  } else if (*sw) {
    const LoadedGenerator g = load_decoder(ckpt, "");
    const auto corpus = load_corpus(corpus_path);
    SweepSpec spec;
    spec.base = sflags.config();
    spec.temperatures = temperatures;
    spec.top_ks = top_ks;
    spec.top_ps = top_ps;
    spec.diversities = lambdas;
    spec.parallel = !serial;
    EvalContext ctx;
    build_eval_context(swflags, corpus, ctx);
    const auto rows = run_sweep(g.model, g.vocab, corpus, spec, ctx.options, sflags.length);
    auto f = open_output(output);
    write_sweep_csv(f, rows);
  } else if (*rank) {
    if (!kTagMethods.count(method)) throw ConfigError("method: unknown tag ranking method '" + method + "'");
    std::map<std::string, double> w;
    if (method == "combined") w = parse_weights(weights);
    else w[method] = 1.0;
    if (method != "combined" && !weights.empty()) warn("--weights is ignored unless --method combined");

    TagArtifacts art;
    if (!syn_path.empty()) art.synonyms = load_synonyms(syn_path);
    const WordSet stop = stop_path.empty() ? toy_stopwords() : load_word_list(stop_path);
    if (w.count("tag2cap")) {
      if (tag2cap_path.empty()) throw ConfigError("tag2cap: checkpoint required");
      art.tag2cap = tag2cap_from_checkpoint(load_checkpoint(tag2cap_path));
    }
    if (w.count("tag2feat")) {
      if (tag2feat_path.empty()) throw ConfigError("tag2feat: checkpoint required");
      art.tag2feat = tag2feat_from_checkpoint(load_checkpoint(tag2feat_path));
    }
    auto corpus = load_corpus(corpus_path);
    if (captions > 0)
      for (auto& r : corpus) {
        r.captions.resize(std::min(r.captions.size(), static_cast<std::size_t>(captions)));
        if (r.has_tuples()) r.tuples.resize(r.captions.size());
      }
    const auto training = training_path.empty() ? corpus : load_corpus(training_path);
    Vocabulary tag_vocab;
    if (art.tag2cap) tag_vocab = art.tag2cap->encoder().vocab();
    else if (art.tag2feat) tag_vocab = art.tag2feat->encoder().vocab();
    else tag_vocab = build_tag_vocab(training, stop, static_cast<std::size_t>(tag_vocab_size), art.synonyms);
    const auto records = tag_records(corpus, tag_vocab, stop, art.synonyms);
    art.stats = TagStatistics(tag_records(training, tag_vocab, stop, art.synonyms), art.synonyms);

    std::vector<std::unique_ptr<UtilityScorer>> owned;
    std::vector<WeightedScorer> parts;
    for (const auto& [name, weight] : w) {
      const UtilityScorer* s = nullptr;
      if (name == "tag2cap") s = &*art.tag2cap;
      else if (name == "tag2feat") s = &*art.tag2feat;
      else {
        ScoreFn score = baseline_score(name, art);
        owned.push_back(std::make_unique<FunctionScorer>([score](const TagRecord& r, std::span<const std::string> tags) {
          double sum = 0.0;
          for (const auto& t : tags) sum -= score(r, t);
          return sum;
        }));
        s = owned.back().get();
      }
      parts.push_back({s, weight});
    }
    auto f = open_output(output);
    for (const auto& r : records) {
      RankedTags result;
      if (method == "tf") result = tf_rank(r, r.tags, art.synonyms);
      else if (method == "tfidf") result = tfidf_rank(r, r.tags, art.stats, art.synonyms);
      else if (method == "tagorder") result = tagorder_rank(r, r.tags, art.synonyms);
      else if (method == "freq") result = freq_rank(r, r.tags, art.stats);
      else if (!r.tags.empty()) {
        const CombinedScorer combined(parts);
        result = rank_tags_greedy(r, r.tags, combined);
      }
      write_ranked(f, r.id, result);
    }
  } else if (*evt) {
    if (reference.empty() == annotations.empty())
      throw ConfigError("reference: give exactly one of --reference or --annotations");
    SynonymTable syn;
    if (!syn_path.empty()) syn = load_synonyms(syn_path);
    std::map<std::string, std::vector<std::string>> ref;
    std::map<std::string, TagAnnotation> ann;
    std::vector<std::string> ids;
    if (!reference.empty()) {
      ref = load_ranked(reference);
      for (const auto& [id, tags] : ref) ids.push_back(id);
    } else {
      for (auto& a : load_tag_annotations(annotations)) {
        ids.push_back(a.id);
        ann[a.id] = std::move(a);
      }
    }
    if (ids.empty()) throw DataError("reference: no records");
    auto f = open_output(output);
    f << "method";
    for (int k = 1; k <= 5; ++k) f << ",set_recall@" << k;
    f << '\n';
    for (const auto& spec : ranked) {
      const auto eq = spec.find('=');
      const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
      const auto pred = load_ranked(eq == std::string::npos ? spec : spec.substr(eq + 1));
      std::vector<std::string> missing;
      for (const auto& id : ids)
        if (!pred.count(id)) missing.push_back(id);
      if (!missing.empty()) throw DataError(name + ": no ranking for: " + list_ids(missing));
      f << name;
      for (int k = 1; k <= 5; ++k) {
        double sum = 0.0;
        for (const auto& id : ids) {
          const auto& p = pred.at(id);
          sum += reference.empty() ? weighted_set_recall(p, ann.at(id), k, syn) : set_recall_at_k(p, ref.at(id), k, syn);
        }
        f << ',' << format_number(sum / static_cast<double>(ids.size()));
      }
      f << '\n';
    }
  } else if (*gen) {
    fs::create_directories(out_dir);
    const fs::path d = out_dir;
    const ToyCorpus c = generate_toy_corpus(toy);
    write_corpus((d / "corpus.jsonl").string(), c.records);
    if (test_images > 0) {
      ToyConfig t = toy;
      t.images = test_images;
      t.seed = toy.seed + 1000;
      write_corpus((d / "test.jsonl").string(), generate_toy_corpus(t).records);
    }
    if (toy_regions.images > 0) {
      toy_regions.seed = toy.seed;
      write_regions((d / "regions.jsonl").string(), generate_toy_regions(toy_regions));
    }
    write_word_list(d / "objects.txt", c.lexicon.objects);
    write_word_list(d / "attributes.txt", c.lexicon.attributes);
    write_word_list(d / "relations.txt", c.lexicon.relations);
    write_word_list(d / "stopwords.txt", c.stopwords);
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"capgen: goal-driven caption generation toolkit", "capgen"};
  try {
    return run(app, argc, argv, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace capgen
