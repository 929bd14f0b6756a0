#pragma once

// Hot-path kernels shared by batch scoring, evaluation and the gradient
// engine.
//
// The specific (attribute-space) density is evaluated without forming any
// |A|-sized object for the full and iden variants: with M = W_t^T W_t,
//   |W_t z|^2            = z^T M z
//   (W_t V)^T (W_t V)    = V^T M V
// so a pair costs O(D^2 D') regardless of the vocabulary size.  Gradients
// with respect to W_t are collected in the D x D accumulator `h` and turned
// into d/dW_t = W_t h once per batch.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "duple/model.hpp"

namespace duple {

enum class Tower { user, item };

struct EmbeddingTrace {
  Index index = 0;
  Eigen::VectorXd pre;
  Eigen::VectorXd hidden;
  Eigen::VectorXd out;
};

EmbeddingTrace embed(const ModelParams& p, Tower tower, Index index);

/// Accumulates d(loss)/d(params) of one embedding into `grad`.
void backward_embedding(const ModelParams& p, Tower tower, const EmbeddingTrace& trace,
                        const Eigen::VectorXd& d_out, Eigen::VectorXd& grad);

/// Per-parameter-set precomputation.
class ScoringContext {
 public:
  explicit ScoringContext(const ModelParams& p);

  const ModelParams& params() const { return *params_; }
  /// W_t^T W_t.
  const Eigen::MatrixXd& attr_gram() const { return attr_gram_; }
  /// W_t .* W_t (diag variant only).
  const Eigen::MatrixXd& attr_sq() const { return attr_sq_; }

 private:
  const ModelParams* params_;
  Eigen::MatrixXd attr_gram_;
  Eigen::MatrixXd attr_sq_;
};

struct UserState {
  EmbeddingTrace embedding;
  Eigen::VectorXd mean;
  /// full: V (D x D'); diag: s as a D x 1 column; iden: empty.
  Eigen::MatrixXd factor;

  // full
  Eigen::LLT<Eigen::MatrixXd> general_chol;
  Eigen::MatrixXd general_vkinv;   // V K_g^{-1}
  Eigen::MatrixXd spec_b;          // M V
  Eigen::LLT<Eigen::MatrixXd> spec_chol;
  Eigen::MatrixXd spec_vkinv;      // V K_s^{-1}
  Eigen::MatrixXd spec_bkinv;      // M V K_s^{-1}
  // diag
  Eigen::VectorXd general_var;     // s^2 + eps
  Eigen::VectorXd spec_var;        // (W.*W) s^2 + eps

  double general_logdet = 0.0;
  double spec_logdet = 0.0;
};

UserState prepare_user(const ScoringContext& ctx, Index u);

struct PairTerms {
  double log_general = 0.0;
  double log_specific = 0.0;
  double log_fused = 0.0;
  /// d log_fused / d log_general and d log_fused / d log_specific.
  double w_general = 0.0;
  double w_specific = 0.0;

  Eigen::VectorXd z;        // f_i - mu
  Eigen::VectorXd alpha;    // Sigma_g^{-1} z
  Eigen::VectorXd beta;     // full: e / eps;  iden: z
  Eigen::VectorXd m_beta;   // M beta
  Eigen::VectorXd alpha_s;  // diag: W z ./ d_s
};

PairTerms evaluate_pair(const ScoringContext& ctx, const UserState& user,
                        const Eigen::VectorXd& item_embedding);

/// Gradient accumulators for one user's distribution parameters.
struct UserGrad {
  Eigen::VectorXd d_mean;
  Eigen::MatrixXd d_factor;
  double sum_general = 0.0;   // sum of upstream weights on log_general
  double sum_specific = 0.0;  // ... on log_specific

  void reset(const UserState& user);
};

/// Accumulates the effect of d(loss)/d(log_fused) = `upstream` for one pair.
/// `d_item` receives d/d(item embedding); `h` and `d_attr` collect the W_t
/// gradient (see header comment).
void backward_pair(const ScoringContext& ctx, const UserState& user, const PairTerms& pair,
                   double upstream, UserGrad& ug, Eigen::VectorXd& d_item, Eigen::MatrixXd& h,
                   Eigen::MatrixXd& d_attr);

/// Finishes the user's distribution gradient: adds user-level terms, then
/// pushes through the mean / covariance heads and the user tower.
void backward_user(const ScoringContext& ctx, const UserState& user, UserGrad& ug,
                   Eigen::MatrixXd& h, Eigen::VectorXd& grad);

}  // namespace duple
