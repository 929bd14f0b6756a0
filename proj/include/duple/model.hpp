#pragma once

// Model parameters and the user-facing scoring operations.
//
// Every tensor lives in one contiguous vector so that optimizers, gradient
// checks and checkpoints can treat the model as a flat array; the named
// accessors hand out Eigen::Map views into it.  Matrices are column-major.
// Embedding tables are stored transposed (one column per user or item) so a
// single embedding is a contiguous column.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "duple/corpus.hpp"
#include "duple/lowrank_gaussian.hpp"

namespace duple {

enum class Variant { full, diag, iden };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct ModelShape {
  Index n_users = 0;
  Index n_items = 0;
  Index n_attributes = 0;
  Index raw_dim = 64;
  Index dim = 64;
  /// D', number of covariance factor columns.
  Index rank = 8;
};

struct ModelConfig {
  ModelShape shape;
  Variant variant = Variant::full;
  /// Weight of the general term in the fused preference.
  double lambda = 0.5;
  double jitter = 1e-3;

  void validate() const;
};

enum class Tensor : int {
  user_table,
  item_table,
  user_w1,
  user_b1,
  user_w2,
  user_b2,
  item_w1,
  item_b1,
  item_w2,
  item_b2,
  mean_w,
  mean_b,
  cov_w,
  cov_b,
  attr_proj,
};
inline constexpr int kTensorCount = 15;

struct TensorSpec {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;
  Index size() const { return rows * cols; }
};

/// Offsets of every tensor inside the flat parameter vector.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const ModelShape& shape);

  const TensorSpec& operator[](Tensor t) const { return specs_[static_cast<int>(t)]; }
  const std::array<TensorSpec, kTensorCount>& specs() const { return specs_; }
  Index total_size() const { return total_; }

 private:
  std::array<TensorSpec, kTensorCount> specs_;
  Index total_ = 0;
};

inline Eigen::Map<Eigen::MatrixXd> view(Eigen::VectorXd& flat, const TensorSpec& s) {
  return {flat.data() + s.offset, s.rows, s.cols};
}
inline Eigen::Map<const Eigen::MatrixXd> view(const Eigen::VectorXd& flat, const TensorSpec& s) {
  return {flat.data() + s.offset, s.rows, s.cols};
}

struct InitOptions {
  double table_std = 0.1;
  double head_std = 0.1;
  /// <= 0 selects 1/sqrt(dim).
  double attr_proj_std = 0.0;
};

class ModelParams {
 public:
  ModelParams() = default;
  /// All-zero parameters.
  explicit ModelParams(ModelConfig config);

  /// Normal initialization of weights and tables, zero biases.
  static ModelParams random(const ModelConfig& config, std::uint64_t seed,
                            const InitOptions& init = {});

  const ModelConfig& config() const { return config_; }
  const ModelShape& shape() const { return config_.shape; }
  Variant variant() const { return config_.variant; }
  double lambda() const { return config_.lambda; }
  double jitter() const { return config_.jitter; }
  void set_lambda(double lambda);

  const ParamLayout& layout() const { return layout_; }
  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  Eigen::Map<Eigen::MatrixXd> operator[](Tensor t) { return view(values_, layout_[t]); }
  Eigen::Map<const Eigen::MatrixXd> operator[](Tensor t) const {
    return view(values_, layout_[t]);
  }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  Eigen::VectorXd values_;
};

/// Log-space preference of one user for one item.
struct Score {
  double log_general = 0.0;
  double log_specific = 0.0;
  double log_fused = 0.0;
};

/// log(lambda * exp(lg) + (1 - lambda) * exp(ls)), exact at lambda in {0, 1}.
double fuse(double lambda, double log_general, double log_specific);

Eigen::VectorXd embed_user(const ModelParams& p, Index u);
Eigen::VectorXd embed_item(const ModelParams& p, Index i);

/// Gaussian over the item embedding space.  full: factor V_u; diag: factor
/// diag(s_u); iden: identity covariance (empty factor, unit jitter).
LowRankGaussiand general_distribution(const ModelParams& p, Index u);

/// W_t f_i.
Eigen::VectorXd predict_attribute_embedding(const ModelParams& p, Index i);

/// Gaussian over attribute space, the image of the general distribution
/// under W_t.  Under diag the covariance keeps only the diagonal of
/// W_t diag(s^2) W_t^T; under iden it is the identity.
LowRankGaussiand specific_distribution(const ModelParams& p, Index u);

Score score(const ModelParams& p, Index u, Index i);

}  // namespace duple
