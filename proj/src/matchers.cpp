#include "capgen/matchers.hpp"

#include "capgen/errors.hpp"
#include "capgen/models.hpp"
#include "capgen/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace capgen {

Eigen::VectorXd location_feature(const Box& box, double width, double height) {
  if (!(width > 0 && height > 0)) throw std::invalid_argument("location_feature: image size must be positive");
  if (!(box.x_tl < box.x_br && box.y_tl < box.y_br)) throw std::invalid_argument("location_feature: degenerate box");
  if (box.x_tl < 0 || box.y_tl < 0 || box.x_br > width || box.y_br > height)
    throw std::invalid_argument("location_feature: box outside the image");
  Eigen::VectorXd l(5);
  const double w = box.x_br - box.x_tl;
  const double h = box.y_br - box.y_tl;
  l << box.x_tl / width, box.y_tl / height, box.x_br / width, box.y_br / height, (w * h) / (width * height);
  return l;
}

std::vector<TokenId> body_tokens(std::span<const TokenId> tokens) {
  std::vector<TokenId> out;
  for (TokenId t : tokens) {
    if (t == Vocabulary::kEos) break;
    if (t == Vocabulary::kBos || t == Vocabulary::kPad) continue;
    out.push_back(t);
  }
  return out;
}

bool is_soft_query(const Eigen::MatrixXd& q) {
  if ((q.array() < 0.0).any()) return false;
  for (Eigen::Index t = 0; t < q.cols(); ++t)
    if (std::abs(q.col(t).sum() - 1.0) > 1e-9) return false;
  return true;
}

RetrievalScorer::RetrievalScorer(int vocab_size, int embed_dim, int context_dim, int joint_dim, std::uint64_t seed)
    : text_embed_(Eigen::MatrixXd::Zero(embed_dim, vocab_size)),
      text_proj_(Eigen::MatrixXd::Zero(joint_dim, embed_dim)),
      image_proj_(Eigen::MatrixXd::Zero(joint_dim, context_dim)),
      seed_(seed) {
  init_uniform(refs(), seed);
}

Eigen::VectorXd RetrievalScorer::image_embedding(const Eigen::VectorXd& context) const {
  if (context.size() != image_proj_.cols()) throw std::invalid_argument("RetrievalScorer: context dimension mismatch");
  return image_proj_ * context;
}

Eigen::VectorXd RetrievalScorer::text_features(std::span<const TokenId> caption) const {
  const auto body = body_tokens(caption);
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(text_embed_.rows());
  for (TokenId t : body) {
    if (t < 0 || t >= text_embed_.cols()) throw std::out_of_range("RetrievalScorer: token id out of range");
    psi += text_embed_.col(t);
  }
  if (!body.empty()) psi /= static_cast<double>(body.size());
  return psi;
}

Eigen::VectorXd RetrievalScorer::text_embedding(std::span<const TokenId> caption) const {
  return text_proj_ * text_features(caption);
}

double RetrievalScorer::similarity(const Eigen::VectorXd& context, std::span<const TokenId> caption) const {
  return cosine(image_embedding(context), text_embedding(caption));
}

void RetrievalScorer::backprop_image(const Eigen::VectorXd& context, const Eigen::VectorXd& d_image,
                                     GradList& grads) const {
  grads[2].noalias() += d_image * context.transpose();
}

void RetrievalScorer::backprop_text(std::span<const TokenId> caption, const Eigen::VectorXd& d_text,
                                    GradList& grads) const {
  const auto body = body_tokens(caption);
  grads[1].noalias() += d_text * text_features(caption).transpose();
  if (body.empty()) return;
  const Eigen::VectorXd d_psi = text_proj_.transpose() * d_text / static_cast<double>(body.size());
  for (TokenId t : body) grads[0].col(t) += d_psi;
}

double contrastive_loss(const RetrievalScorer& scorer, std::span<const Eigen::VectorXd> contexts,
                        std::span<const std::vector<TokenId>> captions, double margin, GradList* grads) {
  if (contexts.size() != captions.size()) throw std::invalid_argument("contrastive_loss: one caption per context");
  const auto n = static_cast<Eigen::Index>(contexts.size());
  if (n < 2) return 0.0;
  std::vector<Eigen::VectorXd> f, g;
  for (Eigen::Index i = 0; i < n; ++i) {
    f.push_back(scorer.image_embedding(contexts[i]));
    g.push_back(scorer.text_embedding(captions[i]));
  }
  Eigen::MatrixXd s(n, n);  // s(i, j) = s(I_i, c_j)
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) s(i, j) = cosine(f[i], g[j]);

  Eigen::MatrixXd ds = Eigen::MatrixXd::Zero(n, n);
  const double w = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index hard_caption = -1, hard_image = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (hard_caption < 0 || s(i, j) > s(i, hard_caption)) hard_caption = j;
      if (hard_image < 0 || s(j, i) > s(hard_image, i)) hard_image = j;
    }
    const double caption_term = margin + s(i, hard_caption) - s(i, i);
    const double image_term = margin + s(hard_image, i) - s(i, i);
    if (caption_term > 0) {
      total += caption_term;
      ds(i, hard_caption) += w;
      ds(i, i) -= w;
    }
    if (image_term > 0) {
      total += image_term;
      ds(hard_image, i) += w;
      ds(i, i) -= w;
    }
  }
  if (grads) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd df = Eigen::VectorXd::Zero(f[i].size());
      Eigen::VectorXd dg = Eigen::VectorXd::Zero(g[i].size());
      for (Eigen::Index j = 0; j < n; ++j) {
        if (ds(i, j) != 0) df += cosine_grad_a(f[i], g[j], ds(i, j));
        if (ds(j, i) != 0) dg += cosine_grad_a(g[i], f[j], ds(j, i));
      }
      scorer.backprop_image(contexts[i], df, *grads);
      scorer.backprop_text(captions[i], dg, *grads);
    }
  }
  return total * w;
}

double pair_contrastive_loss(const RetrievalScorer& scorer, const Eigen::VectorXd& context,
                             std::span<const TokenId> caption, std::span<const Eigen::VectorXd> negative_contexts,
                             std::span<const std::vector<TokenId>> negative_captions, double margin) {
  const Eigen::VectorXd f = scorer.image_embedding(context);
  const Eigen::VectorXd g = scorer.text_embedding(caption);
  const double pos = cosine(f, g);
  double caption_term = 0.0, image_term = 0.0;
  for (const auto& c : negative_captions)
    caption_term = std::max(caption_term, margin + cosine(f, scorer.text_embedding(c)) - pos);
  for (const auto& ctx : negative_contexts)
    image_term = std::max(image_term, margin + cosine(scorer.image_embedding(ctx), g) - pos);
  return caption_term + image_term;
}

double discrimination_accuracy(std::span<const DiscriminationItem> items, const RetrievalScorer& scorer) {
  if (items.empty()) throw std::invalid_argument("discrimination_accuracy: no items");
  std::size_t correct = 0;
  for (const auto& item : items)
    if (scorer.similarity(item.target, item.caption) > scorer.similarity(item.distractor, item.caption)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

RecallAtK retrieval_recall_at_k(std::span<const Eigen::VectorXd> contexts,
                                std::span<const std::vector<TokenId>> captions, std::span<const std::string> ids,
                                const RetrievalScorer& scorer, int k) {
  const std::size_t n = contexts.size();
  if (captions.size() != n || ids.size() != n) throw std::invalid_argument("retrieval_recall_at_k: size mismatch");
  if (n == 0 || k < 1) throw std::invalid_argument("retrieval_recall_at_k: need records and k >= 1");
  Eigen::MatrixXd s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = scorer.similarity(contexts[i], captions[j]);
  auto rank_of = [&](std::size_t truth, auto score) {
    std::size_t better = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == truth) continue;
      if (score(j) > score(truth) || (score(j) == score(truth) && ids[j] < ids[truth])) ++better;
    }
    return better;
  };
  RecallAtK r;
  for (std::size_t i = 0; i < n; ++i) {
    if (rank_of(i, [&](std::size_t j) { return s(i, j); }) < static_cast<std::size_t>(k)) r.caption_retrieval += 1;
    if (rank_of(i, [&](std::size_t j) { return s(j, i); }) < static_cast<std::size_t>(k)) r.image_retrieval += 1;
  }
  r.caption_retrieval /= static_cast<double>(n);
  r.image_retrieval /= static_cast<double>(n);
  return r;
}

std::string to_string(ComprehensionLoss kind) { return kind == ComprehensionLoss::kLogistic ? "logistic" : "softmax"; }

ComprehensionLoss comprehension_loss_from_string(const std::string& name) {
  if (name == "logistic") return ComprehensionLoss::kLogistic;
  if (name == "softmax") return ComprehensionLoss::kSoftmax;
  throw ConfigError("comprehension_loss: unknown form '" + name + "'");
}

ComprehensionModel::ComprehensionModel(int vocab_size, int region_dim, int embed_dim, std::uint64_t seed)
    : region_proj_(Eigen::MatrixXd::Zero(embed_dim, region_dim)),
      region_bias_(Eigen::MatrixXd::Zero(embed_dim, 1)),
      word_embed_(Eigen::MatrixXd::Zero(embed_dim, vocab_size)),
      seed_(seed) {
  init_uniform(refs(), seed);
}

Eigen::VectorXd ComprehensionModel::query_vector(std::span<const TokenId> tokens) const {
  const auto body = body_tokens(tokens);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(word_embed_.rows());
  for (TokenId t : body) {
    if (t < 0 || t >= word_embed_.cols()) throw std::out_of_range("ComprehensionModel: token id out of range");
    h += word_embed_.col(t);
  }
  if (!body.empty()) h /= static_cast<double>(body.size());
  return h;
}

Eigen::VectorXd ComprehensionModel::query_vector(const Eigen::MatrixXd& soft_query) const {
  if (soft_query.rows() != word_embed_.cols()) throw std::invalid_argument("ComprehensionModel: soft query has wrong vocabulary size");
  Eigen::VectorXd h = Eigen::VectorXd::Zero(word_embed_.rows());
  for (Eigen::Index t = 0; t < soft_query.cols(); ++t) h += word_embed_ * soft_query.col(t);
  if (soft_query.cols() > 0) h /= static_cast<double>(soft_query.cols());
  return h;
}

Eigen::VectorXd ComprehensionModel::similarities(const Eigen::MatrixXd& region_inputs, const Eigen::VectorXd& query) const {
  if (region_inputs.rows() != region_proj_.cols()) throw std::invalid_argument("ComprehensionModel: region feature dimension mismatch");
  const Eigen::MatrixXd v = (region_proj_ * region_inputs).colwise() + region_bias_.col(0);
  return v.transpose() * query;
}

namespace {
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
}  // namespace

double ComprehensionModel::loss_from_similarities(const Eigen::VectorXd& sims, int target, ComprehensionLoss kind,
                                                  Eigen::VectorXd* d_sims) const {
  if (sims.size() < 1) throw std::invalid_argument("comprehension loss: need at least one region");
  if (target < 0 || target >= sims.size()) throw std::out_of_range("comprehension loss: target index out of range");
  double loss = 0.0;
  if (kind == ComprehensionLoss::kLogistic) {
    if (d_sims) d_sims->resize(sims.size());
    for (Eigen::Index i = 0; i < sims.size(); ++i) {
      if (i == target) {
        loss += softplus(-sims[i]);
        if (d_sims) (*d_sims)[i] = sigmoid(sims[i]) - 1.0;
      } else {
        loss += softplus(sims[i]);
        if (d_sims) (*d_sims)[i] = sigmoid(sims[i]);
      }
    }
  } else {
    const Eigen::VectorXd logp = log_softmax(sims);
    loss = -logp[target];
    if (d_sims) {
      *d_sims = logp.array().exp().matrix();
      (*d_sims)[target] -= 1.0;
    }
  }
  return loss;
}

double ComprehensionModel::loss(const Eigen::MatrixXd& region_inputs, int target, const Eigen::MatrixXd& soft_query,
                                ComprehensionLoss kind, GradList* grads, Eigen::MatrixXd* d_query) const {
  const Eigen::VectorXd h = query_vector(soft_query);
  const Eigen::VectorXd sims = similarities(region_inputs, h);
  Eigen::VectorXd ds;
  const double value = loss_from_similarities(sims, target, kind, (grads || d_query) ? &ds : nullptr);
  if (!grads && !d_query) return value;

  const Eigen::MatrixXd v = (region_proj_ * region_inputs).colwise() + region_bias_.col(0);
  const Eigen::VectorXd dh = v * ds;  // sum_i ds_i v_i
  const Eigen::Index steps = soft_query.cols();
  if (grads) {
    const Eigen::MatrixXd dv = h * ds.transpose();  // column i: ds_i h
    (*grads)[0].noalias() += dv * region_inputs.transpose();
    (*grads)[1] += dv.rowwise().sum();
    if (steps > 0) (*grads)[2].noalias() += dh * soft_query.rowwise().sum().transpose() / static_cast<double>(steps);
  }
  if (d_query) {
    d_query->resize(soft_query.rows(), steps);
    if (steps > 0) {
      const Eigen::VectorXd col = word_embed_.transpose() * dh / static_cast<double>(steps);
      for (Eigen::Index t = 0; t < steps; ++t) d_query->col(t) = col;
    }
  }
  return value;
}

double ComprehensionModel::loss(const Eigen::MatrixXd& region_inputs, int target, std::span<const TokenId> tokens,
                                ComprehensionLoss kind, GradList* grads) const {
  const auto body = body_tokens(tokens);
  Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(word_embed_.cols(), static_cast<Eigen::Index>(body.size()));
  for (std::size_t t = 0; t < body.size(); ++t) {
    if (body[t] < 0 || body[t] >= word_embed_.cols()) throw std::out_of_range("ComprehensionModel: token id out of range");
    one_hot(body[t], static_cast<Eigen::Index>(t)) = 1.0;
  }
  if (grads) return loss(region_inputs, target, one_hot, kind, grads, nullptr);
  const Eigen::VectorXd sims = similarities(region_inputs, query_vector(tokens));
  return loss_from_similarities(sims, target, kind, nullptr);
}

double ComprehensionModel::target_log_prob(const Eigen::MatrixXd& region_inputs, int target,
                                           std::span<const TokenId> tokens) const {
  return -loss(region_inputs, target, tokens, ComprehensionLoss::kSoftmax, nullptr);
}

bool ComprehensionModel::resolves(const Eigen::MatrixXd& region_inputs, int target, std::span<const TokenId> tokens) const {
  const Eigen::VectorXd sims = similarities(region_inputs, query_vector(tokens));
  if (target < 0 || target >= sims.size()) throw std::out_of_range("ComprehensionModel: target index out of range");
  for (Eigen::Index i = 0; i < sims.size(); ++i)
    if (i != target && sims[i] >= sims[target]) return false;
  return true;
}

Eigen::VectorXd region_context(const RegionRecord& image, std::size_t region) {
  const Region& r = image.regions.at(region);
  Eigen::VectorXd x(r.feature.size() + image.image_feature.size() + 5);
  x << r.feature, image.image_feature, location_feature(r.box, image.width, image.height);
  return x;
}

Eigen::MatrixXd region_inputs(const RegionRecord& image) {
  if (image.regions.empty()) throw DataError("record '" + image.id + "' has no regions");
  Eigen::MatrixXd m(region_context(image, 0).size(), static_cast<Eigen::Index>(image.regions.size()));
  for (std::size_t i = 0; i < image.regions.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = region_context(image, i);
  return m;
}

double comprehension_logistic_loss(const ComprehensionModel& model, const Eigen::MatrixXd& inputs, int target,
                                   std::span<const TokenId> query) {
  return model.loss(inputs, target, query, ComprehensionLoss::kLogistic, nullptr);
}

double comprehension_softmax_loss(const ComprehensionModel& model, const Eigen::MatrixXd& inputs, int target,
                                  std::span<const TokenId> query) {
  return model.loss(inputs, target, query, ComprehensionLoss::kSoftmax, nullptr);
}

}  // namespace capgen
