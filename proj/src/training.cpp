#include "duple/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <random>

#include <json.hpp>

#include "duple/error.hpp"
#include "duple/evaluation.hpp"
#include "duple/scoring.hpp"

namespace duple {

namespace {

/// -log sigmoid(x)
double neg_log_sigmoid(double x) {
  return std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void warn_zero_norm_once() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    std::clog << "warning: zero-norm attribute vector in alignment loss; cosine taken as 0\n";
  });
}

/// Cosine between a dense prediction and the binary bag-of-words of `item`,
/// plus its gradient with respect to the prediction when `grad` is set.
double bow_cosine(const Eigen::VectorXd& pred, double pred_norm, const AttributeCatalog& cat,
                  Index item, Eigen::VectorXd* grad, double scale) {
  const auto& attrs = cat.item_attributes.at(item);
  if (pred_norm == 0.0 || attrs.empty()) {
    warn_zero_norm_once();
    return 0.0;
  }
  const double t_norm = std::sqrt(double(attrs.size()));
  double dot = 0.0;
  for (Index a : attrs) dot += pred[a];
  const double cos = dot / (pred_norm * t_norm);
  if (grad) {
    const double inv = scale / (pred_norm * t_norm);
    for (Index a : attrs) (*grad)[a] += inv;
    grad->noalias() -= (scale * cos / (pred_norm * pred_norm)) * pred;
  }
  return cos;
}

struct AlignmentTerm {
  double loss;
  double margin;
};

AlignmentTerm alignment_term(const Eigen::VectorXd& pred, const AttributeCatalog& cat,
                             const Triplet& t) {
  const double n = pred.norm();
  const double ci = bow_cosine(pred, n, cat, t.positive, nullptr, 0.0);
  const double cj = bow_cosine(pred, n, cat, t.negative, nullptr, 0.0);
  return {neg_log_sigmoid(ci - cj), ci - cj};
}

void check_catalog(const ModelParams& p, const AttributeCatalog& cat) {
  if (cat.n_attributes() != p.shape().n_attributes || cat.n_items() != p.shape().n_items) {
    throw IntegrityError("attribute catalog (" + std::to_string(cat.n_items()) + " items, " +
                         std::to_string(cat.n_attributes()) +
                         " attributes) does not match the model shape");
  }
}

}  // namespace

std::vector<Triplet> sample_triplet_batch(const SplitDataset& split, Index size,
                                          std::uint64_t seed, std::uint64_t step) {
  const InteractionLog& train = split.train;
  if (train.n_interactions() == 0) throw InputError("training log is empty");
  std::vector<Index> offsets(train.n_users() + 1, 0);
  for (Index u = 0; u < train.n_users(); ++u) {
    offsets[u + 1] = offsets[u] + static_cast<Index>(train.positives(u).size());
  }
  auto saturated = [&](Index u) {
    return static_cast<Index>(split.interacted[u].size()) >= split.n_items();
  };
  Index usable = 0;
  for (Index u = 0; u < train.n_users(); ++u) {
    if (!saturated(u)) usable += offsets[u + 1] - offsets[u];
  }
  if (usable == 0) throw InputError("every user has interacted with every item; no negatives");

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<Index> pick_pair(0, train.n_interactions() - 1);
  std::uniform_int_distribution<Index> pick_item(0, split.n_items() - 1);

  std::vector<Triplet> batch;
  batch.reserve(size);
  while (static_cast<Index>(batch.size()) < size) {
    const Index k = pick_pair(rng);
    const Index u = static_cast<Index>(std::upper_bound(offsets.begin(), offsets.end(), k) -
                                       offsets.begin()) - 1;
    if (saturated(u)) {
      static std::once_flag flag;
      std::call_once(flag, [&] {
        std::clog << "warning: user " << u << " has no non-interacted item; skipped\n";
      });
      continue;
    }
    Triplet t{u, train.positives(u)[k - offsets[u]], 0};
    do {
      t.negative = pick_item(rng);
    } while (split.has_interacted(u, t.negative));
    batch.push_back(t);
  }
  return batch;
}

double attribute_alignment_loss(const ModelParams& p, std::span<const Triplet> batch,
                                const AttributeCatalog& catalog) {
  check_catalog(p, catalog);
  if (batch.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& t : batch) {
    sum += alignment_term(predict_attribute_embedding(p, t.positive), catalog, t).loss;
  }
  return sum / double(batch.size());
}

double ranking_loss(const ModelParams& p, std::span<const Triplet> batch) {
  if (batch.empty()) return 0.0;
  const ScoringContext ctx(p);
  double sum = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& t = batch[k];
    const UserState st = prepare_user(ctx, t.user);
    const double pi = evaluate_pair(ctx, st, embed_item(p, t.positive)).log_fused;
    const double pj = evaluate_pair(ctx, st, embed_item(p, t.negative)).log_fused;
    if (!std::isfinite(pi) || !std::isfinite(pj)) {
      throw NumericalError("non-finite score in triplet " + std::to_string(k));
    }
    sum += neg_log_sigmoid(pi - pj);
  }
  return sum / double(batch.size());
}

LossBreakdown total_loss(const ModelParams& p, std::span<const Triplet> batch,
                         const AttributeCatalog& catalog) {
  LossBreakdown l;
  l.alignment = attribute_alignment_loss(p, batch, catalog);
  l.ranking = ranking_loss(p, batch);
  l.total = l.alignment + l.ranking;
  return l;
}

GradientResult compute_gradient(const ModelParams& p, std::span<const Triplet> batch,
                                const AttributeCatalog& catalog) {
  check_catalog(p, catalog);
  GradientResult res;
  res.grad = Eigen::VectorXd::Zero(p.values().size());
  if (batch.empty()) return res;

  const ScoringContext ctx(p);
  const auto w = p[Tensor::attr_proj];
  const Index d = p.shape().dim;
  const double inv_n = 1.0 / double(batch.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd d_attr = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  UserGrad ug;

  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Triplet& t = batch[k];
    const UserState st = prepare_user(ctx, t.user);
    const EmbeddingTrace ti = embed(p, Tower::item, t.positive);
    const EmbeddingTrace tj = embed(p, Tower::item, t.negative);
    const PairTerms pi = evaluate_pair(ctx, st, ti.out);
    const PairTerms pj = evaluate_pair(ctx, st, tj.out);
    if (!std::isfinite(pi.log_fused) || !std::isfinite(pj.log_fused)) {
      throw NumericalError("non-finite score in triplet " + std::to_string(k) + " (user " +
                           std::to_string(t.user) + ")");
    }

    // ranking term
    const double delta = pi.log_fused - pj.log_fused;
    res.loss.ranking += neg_log_sigmoid(delta);
    const double g = -sigmoid(-delta) * inv_n;
    Eigen::VectorXd d_fi = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd d_fj = Eigen::VectorXd::Zero(d);
    ug.reset(st);
    backward_pair(ctx, st, pi, g, ug, d_fi, h, d_attr);
    backward_pair(ctx, st, pj, -g, ug, d_fj, h, d_attr);
    backward_user(ctx, st, ug, h, res.grad);

    // alignment term
    const Eigen::VectorXd pred = w * ti.out;
    const double norm = pred.norm();
    const double ci = bow_cosine(pred, norm, catalog, t.positive, nullptr, 0.0);
    const double cj = bow_cosine(pred, norm, catalog, t.negative, nullptr, 0.0);
    res.loss.alignment += neg_log_sigmoid(ci - cj);
    const double ga = -sigmoid(-(ci - cj)) * inv_n;
    Eigen::VectorXd d_pred = Eigen::VectorXd::Zero(pred.size());
    bow_cosine(pred, norm, catalog, t.positive, &d_pred, ga);
    bow_cosine(pred, norm, catalog, t.negative, &d_pred, -ga);
    d_attr.noalias() += d_pred * ti.out.transpose();
    d_fi.noalias() += w.transpose() * d_pred;

    backward_embedding(p, Tower::item, ti, d_fi, res.grad);
    backward_embedding(p, Tower::item, tj, d_fj, res.grad);
  }

  auto g_attr = view(res.grad, p.layout()[Tensor::attr_proj]);
  g_attr += d_attr;
  g_attr.noalias() += w * h;

  res.loss.alignment *= inv_n;
  res.loss.ranking *= inv_n;
  res.loss.total = res.loss.alignment + res.loss.ranking;
  return res;
}

std::optional<std::string> first_non_finite_tensor(const ModelParams& p,
                                                   const Eigen::VectorXd& grad) {
  for (const auto& spec : p.layout().specs()) {
    if (!view(grad, spec).allFinite()) return spec.name;
  }
  return std::nullopt;
}

AdamState::AdamState(AdamOptions opts, Index n_params)
    : options(opts),
      first_moment(Eigen::VectorXd::Zero(n_params)),
      second_moment(Eigen::VectorXd::Zero(n_params)) {}

void adam_step(AdamState& s, ModelParams& p, const Eigen::VectorXd& grad) {
  auto& x = p.values();
  if (grad.size() != x.size() || s.first_moment.size() != x.size() ||
      s.second_moment.size() != x.size()) {
    throw UsageError("adam_step: gradient, moments and parameters differ in size");
  }
  const auto& o = s.options;
  ++s.step;
  s.first_moment = o.beta1 * s.first_moment + (1.0 - o.beta1) * grad;
  s.second_moment = o.beta2 * s.second_moment + (1.0 - o.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(o.beta1, double(s.step));
  const double c2 = 1.0 - std::pow(o.beta2, double(s.step));
  x.array() -= o.lr * (s.first_moment.array() / c1) /
               ((s.second_moment.array() / c2).sqrt() + o.eps);
}

double clip_global_norm(Eigen::VectorXd& grad, double max_norm) {
  const double n = grad.norm();
  if (max_norm > 0.0 && n > max_norm) grad *= max_norm / n;
  return n;
}

TrainResult train(const ModelConfig& model, const TrainConfig& config, const SplitDataset& split,
                  const AttributeCatalog& catalog, std::ostream* log) {
  if (config.batch_size <= 0 || config.steps < 0 || config.eval_every <= 0) {
    throw UsageError("batch size and validation cadence must be positive, steps >= 0");
  }
  ModelParams params = ModelParams::random(model, config.seed, config.init);
  check_catalog(params, catalog);
  AdamState adam(AdamOptions{.lr = config.lr}, params.values().size());

  TrainResult res;
  res.params = params;
  res.best_val_mrr = -std::numeric_limits<double>::infinity();
  bool validated = false;
  const auto t0 = std::chrono::steady_clock::now();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (Index step = 1; step <= config.steps; ++step) {
    const auto batch = sample_triplet_batch(split, config.batch_size, config.seed,
                                            static_cast<std::uint64_t>(step));
    GradientResult gr;
    try {
      gr = compute_gradient(params, batch, catalog);
    } catch (const NumericalError& e) {
      res.aborted = true;
      res.abort_reason = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    if (!std::isfinite(gr.loss.total)) {
      res.aborted = true;
      res.abort_reason = "step " + std::to_string(step) + ": non-finite loss";
      break;
    }
    if (auto bad = first_non_finite_tensor(params, gr.grad)) {
      res.aborted = true;
      res.abort_reason = "step " + std::to_string(step) + ": non-finite gradient in " + *bad;
      break;
    }
    clip_global_norm(gr.grad, config.clip_norm);
    adam_step(adam, params, gr.grad);
    res.curve.push_back({step, gr.loss.total, nan, nan});

    if (step % config.eval_every == 0 || step == config.steps) {
      const auto rep = evaluate(params, split, Phase::validation);
      res.curve.back().val_mrr = rep.mrr;
      res.curve.back().val_hr10 = rep.hr_at_k;
      validated = true;
      if (rep.mrr > res.best_val_mrr) {
        res.best_val_mrr = rep.mrr;
        res.best_step = step;
        res.params = params;
      }
    }
    if (log && config.log_every > 0 && (step % config.log_every == 0 || step == config.steps)) {
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
      nlohmann::json j{{"step", step}, {"loss", gr.loss.total}, {"lr", config.lr},
                       {"wall_ms", ms}};
      if (!std::isnan(res.curve.back().val_mrr)) {
        j["val_mrr"] = res.curve.back().val_mrr;
        j["val_hr10"] = res.curve.back().val_hr10;
      }
      *log << j.dump() << "\n";
    }
  }
  if (!validated) {
    res.params = params;
    res.best_val_mrr = nan;
  }
  return res;
}

void write_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(10);
  out << "step,loss,val_mrr,val_hr10\n";
  for (const auto& c : curve) {
    out << c.step << "," << c.loss << ",";
    if (!std::isnan(c.val_mrr)) out << c.val_mrr;
    out << ",";
    if (!std::isnan(c.val_hr10)) out << c.val_hr10;
    out << "\n";
  }
}

}  // namespace duple
