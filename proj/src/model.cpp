#include "duple/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "duple/error.hpp"
#include "duple/scoring.hpp"

namespace duple {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

bool is_bias(Tensor t) {
  switch (t) {
    case Tensor::user_b1:
    case Tensor::user_b2:
    case Tensor::item_b1:
    case Tensor::item_b2:
    case Tensor::mean_b:
    case Tensor::cov_b:
      return true;
    default:
      return false;
  }
}

void check_index(Index idx, Index n, const char* what) {
  if (idx < 0 || idx >= n) {
    throw UsageError(std::string(what) + " index " + std::to_string(idx) + " out of range [0," +
                     std::to_string(n) + ")");
  }
}

/// iden runs the full-variant code with an empty factor and unit jitter.
double effective_jitter(const ModelParams& p) {
  return p.variant() == Variant::iden ? 1.0 : p.jitter();
}

double sum_log_diag(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const auto& l = llt.matrixLLT();
  double s = 0.0;
  for (Index k = 0; k < l.rows(); ++k) s += std::log(l(k, k));
  return 2.0 * s;
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full:
      return "full";
    case Variant::diag:
      return "diag";
    case Variant::iden:
      return "iden";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  if (name == "full") return Variant::full;
  if (name == "diag") return Variant::diag;
  if (name == "iden") return Variant::iden;
  throw UsageError("unknown variant '" + std::string(name) + "' (expected full, diag or iden)");
}

void ModelConfig::validate() const {
  const auto& s = shape;
  if (s.n_users <= 0 || s.n_items <= 0 || s.n_attributes <= 0) {
    throw UsageError("model needs at least one user, item and attribute");
  }
  if (s.raw_dim <= 0 || s.dim <= 0) throw UsageError("embedding dimensions must be positive");
  if (s.rank < 1 || s.rank >= s.dim) {
    throw UsageError("covariance rank D' must satisfy 1 <= D' < D (got D'=" +
                     std::to_string(s.rank) + ", D=" + std::to_string(s.dim) + ")");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0,1]");
  if (!(jitter > 0.0) || !std::isfinite(jitter)) throw UsageError("jitter must be > 0");
}

ParamLayout::ParamLayout(const ModelShape& s) {
  const Index r = s.raw_dim, d = s.dim;
  auto set = [&](Tensor t, const char* name, Index rows, Index cols) {
    specs_[static_cast<int>(t)] = TensorSpec{name, rows, cols, total_};
    total_ += rows * cols;
  };
  set(Tensor::user_table, "user_table", r, s.n_users);
  set(Tensor::item_table, "item_table", r, s.n_items);
  set(Tensor::user_w1, "user_mlp.w1", d, r);
  set(Tensor::user_b1, "user_mlp.b1", d, 1);
  set(Tensor::user_w2, "user_mlp.w2", d, d);
  set(Tensor::user_b2, "user_mlp.b2", d, 1);
  set(Tensor::item_w1, "item_mlp.w1", d, r);
  set(Tensor::item_b1, "item_mlp.b1", d, 1);
  set(Tensor::item_w2, "item_mlp.w2", d, d);
  set(Tensor::item_b2, "item_mlp.b2", d, 1);
  set(Tensor::mean_w, "mean_head.w", d, d);
  set(Tensor::mean_b, "mean_head.b", d, 1);
  // head j occupies rows [j*d, (j+1)*d)
  set(Tensor::cov_w, "cov_heads.w", d * s.rank, d);
  set(Tensor::cov_b, "cov_heads.b", d, s.rank);
  set(Tensor::attr_proj, "attr_proj", s.n_attributes, d);
}

ModelParams::ModelParams(ModelConfig config)
    : config_(std::move(config)), layout_(config_.shape) {
  config_.validate();
  values_ = Eigen::VectorXd::Zero(layout_.total_size());
}

ModelParams ModelParams::random(const ModelConfig& config, std::uint64_t seed,
                                const InitOptions& init) {
  ModelParams p(config);
  std::mt19937_64 rng(seed);
  const double attr_std =
      init.attr_proj_std > 0.0 ? init.attr_proj_std : 1.0 / std::sqrt(double(config.shape.dim));
  for (int k = 0; k < kTensorCount; ++k) {
    const auto t = static_cast<Tensor>(k);
    if (is_bias(t)) continue;
    double std = init.head_std;
    if (t == Tensor::user_table || t == Tensor::item_table) std = init.table_std;
    if (t == Tensor::attr_proj) std = attr_std;
    std::normal_distribution<double> dist(0.0, std);
    auto m = p[t];
    for (Index j = 0; j < m.cols(); ++j) {
      for (Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
    }
  }
  return p;
}

void ModelParams::set_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0,1]");
  config_.lambda = lambda;
}

double fuse(double lambda, double log_general, double log_specific) {
  if (lambda >= 1.0) return log_general;
  if (lambda <= 0.0) return log_specific;
  const double a = std::log(lambda) + log_general;
  const double b = std::log1p(-lambda) + log_specific;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// ---------------------------------------------------------------------------
// Kernels

EmbeddingTrace embed(const ModelParams& p, Tower tower, Index index) {
  const bool user = tower == Tower::user;
  check_index(index, user ? p.shape().n_users : p.shape().n_items, user ? "user" : "item");
  const auto table = p[user ? Tensor::user_table : Tensor::item_table];
  const auto w1 = p[user ? Tensor::user_w1 : Tensor::item_w1];
  const auto b1 = p[user ? Tensor::user_b1 : Tensor::item_b1];
  const auto w2 = p[user ? Tensor::user_w2 : Tensor::item_w2];
  const auto b2 = p[user ? Tensor::user_b2 : Tensor::item_b2];
  EmbeddingTrace t;
  t.index = index;
  t.pre = w1 * table.col(index) + b1.col(0);
  t.hidden = t.pre.cwiseMax(0.0);
  t.out = w2 * t.hidden + b2.col(0);
  return t;
}

void backward_embedding(const ModelParams& p, Tower tower, const EmbeddingTrace& trace,
                        const Eigen::VectorXd& d_out, Eigen::VectorXd& grad) {
  const bool user = tower == Tower::user;
  const auto& layout = p.layout();
  const Tensor table_t = user ? Tensor::user_table : Tensor::item_table;
  const Tensor w1_t = user ? Tensor::user_w1 : Tensor::item_w1;
  const Tensor b1_t = user ? Tensor::user_b1 : Tensor::item_b1;
  const Tensor w2_t = user ? Tensor::user_w2 : Tensor::item_w2;
  const Tensor b2_t = user ? Tensor::user_b2 : Tensor::item_b2;

  view(grad, layout[w2_t]).noalias() += d_out * trace.hidden.transpose();
  view(grad, layout[b2_t]).col(0) += d_out;
  Eigen::VectorXd d_pre = p[w2_t].transpose() * d_out;
  for (Index k = 0; k < d_pre.size(); ++k) {
    if (!(trace.pre[k] > 0.0)) d_pre[k] = 0.0;
  }
  const auto raw = p[table_t].col(trace.index);
  view(grad, layout[w1_t]).noalias() += d_pre * raw.transpose();
  view(grad, layout[b1_t]).col(0) += d_pre;
  view(grad, layout[table_t]).col(trace.index).noalias() += p[w1_t].transpose() * d_pre;
}

ScoringContext::ScoringContext(const ModelParams& p) : params_(&p) {
  const auto w = p[Tensor::attr_proj];
  if (p.variant() == Variant::diag) {
    attr_sq_ = w.array().square().matrix();
  } else {
    attr_gram_ = w.transpose() * w;
  }
}

UserState prepare_user(const ScoringContext& ctx, Index u) {
  const ModelParams& p = ctx.params();
  const Index d = p.shape().dim;
  const Index n_attr = p.shape().n_attributes;
  UserState st;
  st.embedding = embed(p, Tower::user, u);
  const Eigen::VectorXd& f = st.embedding.out;
  st.mean = p[Tensor::mean_w] * f + p[Tensor::mean_b].col(0);

  switch (p.variant()) {
    case Variant::full: {
      const Index r = p.shape().rank;
      Eigen::VectorXd flat = p[Tensor::cov_w] * f;
      st.factor = Eigen::Map<Eigen::MatrixXd>(flat.data(), d, r) + p[Tensor::cov_b];
      break;
    }
    case Variant::diag: {
      const double eps = p.jitter();
      Eigen::VectorXd s = p[Tensor::cov_w].topRows(d) * f + p[Tensor::cov_b].col(0);
      st.general_var = s.array().square() + eps;
      st.spec_var = (ctx.attr_sq() * s.array().square().matrix()).array() + eps;
      st.general_logdet = st.general_var.array().log().sum();
      st.spec_logdet = st.spec_var.array().log().sum();
      st.factor = std::move(s);
      return st;
    }
    case Variant::iden:
      st.factor = Eigen::MatrixXd(d, 0);
      break;
  }

  // full / iden
  const double eps = effective_jitter(p);
  const Index r = st.factor.cols();
  const Eigen::MatrixXd& v = st.factor;
  Eigen::MatrixXd kg = Eigen::MatrixXd::Identity(r, r);
  kg.noalias() += v.transpose() * v / eps;
  st.general_chol.compute(kg);
  st.spec_b = ctx.attr_gram() * v;
  Eigen::MatrixXd ks = Eigen::MatrixXd::Identity(r, r);
  ks.noalias() += v.transpose() * st.spec_b / eps;
  st.spec_chol.compute(ks);
  if (st.general_chol.info() != Eigen::Success || st.spec_chol.info() != Eigen::Success) {
    throw NumericalError("user " + std::to_string(u) + ": capacitance matrix not positive definite");
  }
  st.general_vkinv = st.general_chol.solve(v.transpose()).transpose();
  st.spec_vkinv = st.spec_chol.solve(v.transpose()).transpose();
  st.spec_bkinv = st.spec_chol.solve(st.spec_b.transpose()).transpose();
  st.general_logdet = double(d) * std::log(eps) + sum_log_diag(st.general_chol);
  st.spec_logdet = double(n_attr) * std::log(eps) + sum_log_diag(st.spec_chol);
  return st;
}

PairTerms evaluate_pair(const ScoringContext& ctx, const UserState& user,
                        const Eigen::VectorXd& item_embedding) {
  const ModelParams& p = ctx.params();
  const double d = double(p.shape().dim);
  const double n_attr = double(p.shape().n_attributes);
  PairTerms t;
  t.z = item_embedding - user.mean;
  double q_general = 0.0, q_specific = 0.0;

  if (p.variant() == Variant::diag) {
    t.alpha = t.z.cwiseQuotient(user.general_var);
    q_general = t.z.dot(t.alpha);
    const Eigen::VectorXd zs = p[Tensor::attr_proj] * t.z;
    t.alpha_s = zs.cwiseQuotient(user.spec_var);
    q_specific = zs.dot(t.alpha_s);
  } else {
    const double eps = effective_jitter(p);
    const Eigen::MatrixXd& v = user.factor;
    // general: ridge weights w, residual r = z - V w
    const Eigen::VectorXd w = user.general_chol.solve(v.transpose() * t.z) / eps;
    const Eigen::VectorXd r = t.z - v * w;
    q_general = r.squaredNorm() / eps + w.squaredNorm();
    t.alpha = r / eps;
    // specific, in D-space through M
    const Eigen::VectorXd y = user.spec_chol.solve(user.spec_b.transpose() * t.z) / eps;
    const Eigen::VectorXd e = t.z - v * y;
    const Eigen::VectorXd me = ctx.attr_gram() * e;
    q_specific = std::max(0.0, e.dot(me)) / eps + y.squaredNorm();
    t.beta = e / eps;
    t.m_beta = me / eps;
  }

  t.log_general = -0.5 * (d * kLog2Pi + user.general_logdet + q_general);
  t.log_specific = -0.5 * (n_attr * kLog2Pi + user.spec_logdet + q_specific);
  const double lambda = p.lambda();
  t.log_fused = fuse(lambda, t.log_general, t.log_specific);
  if (lambda >= 1.0) {
    t.w_general = 1.0;
  } else if (lambda <= 0.0) {
    t.w_specific = 1.0;
  } else {
    t.w_general = std::exp(std::log(lambda) + t.log_general - t.log_fused);
    t.w_specific = std::exp(std::log1p(-lambda) + t.log_specific - t.log_fused);
  }
  return t;
}

void UserGrad::reset(const UserState& user) {
  d_mean = Eigen::VectorXd::Zero(user.mean.size());
  d_factor = Eigen::MatrixXd::Zero(user.factor.rows(), user.factor.cols());
  sum_general = 0.0;
  sum_specific = 0.0;
}

void backward_pair(const ScoringContext& ctx, const UserState& user, const PairTerms& pair,
                   double upstream, UserGrad& ug, Eigen::VectorXd& d_item, Eigen::MatrixXd& h,
                   Eigen::MatrixXd& d_attr) {
  const ModelParams& p = ctx.params();
  const double a = upstream * pair.w_general;
  const double b = upstream * pair.w_specific;
  ug.sum_general += a;
  ug.sum_specific += b;

  if (p.variant() == Variant::diag) {
    const auto w = p[Tensor::attr_proj];
    const Eigen::VectorXd& s = user.factor.col(0);
    // general
    d_item.noalias() -= a * pair.alpha;
    ug.d_mean.noalias() += a * pair.alpha;
    ug.d_factor.col(0).array() +=
        a * s.array() * (pair.alpha.array().square() - user.general_var.array().inverse());
    if (b == 0.0) return;
    // specific
    const Eigen::VectorXd dz = -b * (w.transpose() * pair.alpha_s);
    d_item += dz;
    ug.d_mean -= dz;
    const Eigen::VectorXd gamma =
        -0.5 * (user.spec_var.array().inverse() - pair.alpha_s.array().square()).matrix();
    ug.d_factor.col(0).array() +=
        2.0 * b * s.array() * (ctx.attr_sq().transpose() * gamma).array();
    const Eigen::RowVectorXd s2 = s.array().square().matrix().transpose();
    d_attr.noalias() -= b * pair.alpha_s * pair.z.transpose();
    d_attr.array() += 2.0 * b * w.array() * (gamma * s2).array();
    return;
  }

  // full / iden
  const Eigen::MatrixXd& v = user.factor;
  d_item.noalias() -= a * pair.alpha + b * pair.m_beta;
  ug.d_mean.noalias() += a * pair.alpha + b * pair.m_beta;
  if (v.cols() > 0) {
    ug.d_factor.noalias() += a * pair.alpha * (v.transpose() * pair.alpha).transpose();
    ug.d_factor.noalias() += b * pair.m_beta * (v.transpose() * pair.m_beta).transpose();
  }
  if (b != 0.0) {
    Eigen::VectorXd u = -pair.z;
    if (v.cols() > 0) u.noalias() += v * (v.transpose() * pair.m_beta);
    h.noalias() += b * pair.beta * u.transpose();
  }
}

void backward_user(const ScoringContext& ctx, const UserState& user, UserGrad& ug,
                   Eigen::MatrixXd& h, Eigen::VectorXd& grad) {
  const ModelParams& p = ctx.params();
  const auto& layout = p.layout();
  const Index d = p.shape().dim;
  const Eigen::VectorXd& f = user.embedding.out;

  if (p.variant() == Variant::full) {
    const double eps = p.jitter();
    ug.d_factor -= (ug.sum_general / eps) * user.general_vkinv;
    ug.d_factor -= (ug.sum_specific / eps) * user.spec_bkinv;
    if (ug.sum_specific != 0.0) {
      h.noalias() -= (ug.sum_specific / eps) * user.spec_vkinv * user.factor.transpose();
    }
  }

  Eigen::VectorXd d_f = p[Tensor::mean_w].transpose() * ug.d_mean;
  view(grad, layout[Tensor::mean_w]).noalias() += ug.d_mean * f.transpose();
  view(grad, layout[Tensor::mean_b]).col(0) += ug.d_mean;

  if (p.variant() == Variant::full) {
    const Index r = p.shape().rank;
    const Eigen::Map<const Eigen::VectorXd> flat(ug.d_factor.data(), d * r);
    view(grad, layout[Tensor::cov_w]).noalias() += flat * f.transpose();
    view(grad, layout[Tensor::cov_b]) += ug.d_factor;
    d_f.noalias() += p[Tensor::cov_w].transpose() * flat;
  } else if (p.variant() == Variant::diag) {
    const Eigen::VectorXd& ds = ug.d_factor.col(0);
    view(grad, layout[Tensor::cov_w]).topRows(d).noalias() += ds * f.transpose();
    view(grad, layout[Tensor::cov_b]).col(0) += ds;
    d_f.noalias() += p[Tensor::cov_w].topRows(d).transpose() * ds;
  }
  backward_embedding(p, Tower::user, user.embedding, d_f, grad);
}

// ---------------------------------------------------------------------------
// User-facing operations

Eigen::VectorXd embed_user(const ModelParams& p, Index u) {
  return embed(p, Tower::user, u).out;
}

Eigen::VectorXd embed_item(const ModelParams& p, Index i) {
  return embed(p, Tower::item, i).out;
}

LowRankGaussiand general_distribution(const ModelParams& p, Index u) {
  const Index d = p.shape().dim;
  const Eigen::VectorXd f = embed_user(p, u);
  Eigen::VectorXd mu = p[Tensor::mean_w] * f + p[Tensor::mean_b].col(0);
  switch (p.variant()) {
    case Variant::full: {
      Eigen::VectorXd flat = p[Tensor::cov_w] * f;
      Eigen::MatrixXd v =
          Eigen::Map<Eigen::MatrixXd>(flat.data(), d, p.shape().rank) + p[Tensor::cov_b];
      return LowRankGaussiand(std::move(mu), std::move(v), p.jitter());
    }
    case Variant::diag: {
      const Eigen::VectorXd s = p[Tensor::cov_w].topRows(d) * f + p[Tensor::cov_b].col(0);
      return LowRankGaussiand(std::move(mu), Eigen::MatrixXd(s.asDiagonal()), p.jitter());
    }
    case Variant::iden:
      break;
  }
  return LowRankGaussiand(std::move(mu), Eigen::MatrixXd(d, 0), 1.0);
}

Eigen::VectorXd predict_attribute_embedding(const ModelParams& p, Index i) {
  return p[Tensor::attr_proj] * embed_item(p, i);
}

LowRankGaussiand specific_distribution(const ModelParams& p, Index u) {
  const auto g = general_distribution(p, u);
  const auto w = p[Tensor::attr_proj];
  switch (p.variant()) {
    case Variant::full:
      return push_forward(g, w);
    case Variant::diag: {
      const Eigen::VectorXd s2 = g.factor().diagonal().array().square();
      const Eigen::VectorXd scale = (w.array().square().matrix() * s2).cwiseSqrt();
      return LowRankGaussiand(w * g.mean(), Eigen::MatrixXd(scale.asDiagonal()), p.jitter());
    }
    case Variant::iden:
      break;
  }
  return LowRankGaussiand(w * g.mean(), Eigen::MatrixXd(w.rows(), 0), 1.0);
}

Score score(const ModelParams& p, Index u, Index i) {
  const ScoringContext ctx(p);
  const UserState st = prepare_user(ctx, u);
  const PairTerms t = evaluate_pair(ctx, st, embed_item(p, i));
  if (!std::isfinite(t.log_general) || !std::isfinite(t.log_specific) ||
      !std::isfinite(t.log_fused)) {
    throw NumericalError("non-finite score for user " + std::to_string(u) + ", item " +
                         std::to_string(i));
  }
  return {t.log_general, t.log_specific, t.log_fused};
}

}  // namespace duple
