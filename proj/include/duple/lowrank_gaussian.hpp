#pragma once

// Multivariate Gaussians whose covariance is a low-rank factor plus an
// isotropic jitter,  Sigma = V * V^T + eps * I.
//
// Inverse and determinant go through the D' x D' capacitance matrix
//   K = I + V^T V / eps
// (Woodbury identity and the matrix determinant lemma), so nothing of size
// D x D is ever formed on the hot path.  The dense routines at the bottom of
// this header exist as oracles for tests and for small explanatory exports.

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "duple/error.hpp"

namespace duple {

template <typename Scalar>
class LowRankGaussian {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  LowRankGaussian(Vector mean, Matrix factor, Scalar jitter)
      : mean_(std::move(mean)), factor_(std::move(factor)), jitter_(jitter) {
    if (!(jitter_ > Scalar(0)) || !std::isfinite(static_cast<double>(jitter_))) {
      throw UsageError("LowRankGaussian: jitter must be finite and > 0");
    }
    if (factor_.rows() != mean_.size()) {
      throw UsageError("LowRankGaussian: factor has " +
                       std::to_string(factor_.rows()) + " rows, mean has " +
                       std::to_string(mean_.size()) + " entries");
    }
    if (!mean_.allFinite() || !factor_.allFinite()) {
      throw NumericalError("LowRankGaussian: non-finite mean or factor");
    }
    const Eigen::Index r = factor_.cols();
    gram_ = Matrix::Identity(r, r);
    gram_.noalias() += (factor_.transpose() * factor_) / jitter_;
    chol_.compute(gram_);
    if (chol_.info() != Eigen::Success) {
      throw NumericalError("LowRankGaussian: capacitance matrix is not positive definite");
    }
    const auto& l = chol_.matrixLLT();
    Scalar logdet_k(0);
    for (Eigen::Index k = 0; k < r; ++k) logdet_k += std::log(l(k, k));
    logdet_sigma_ = Scalar(dim()) * std::log(jitter_) + Scalar(2) * logdet_k;
  }

  Eigen::Index dim() const { return mean_.size(); }
  Eigen::Index rank() const { return factor_.cols(); }

  const Vector& mean() const { return mean_; }
  const Matrix& factor() const { return factor_; }
  Scalar jitter() const { return jitter_; }

  /// K = I + V^T V / eps.
  const Matrix& gram() const { return gram_; }
  const Eigen::LLT<Matrix>& cholesky() const { return chol_; }
  /// log det(Sigma) = D log eps + log det K.
  Scalar log_det_covariance() const { return logdet_sigma_; }

  /// Ridge weights w = (V^T V + eps I)^{-1} V^T z.  With them
  ///   z^T Sigma^{-1} z = |z - V w|^2 / eps + |w|^2
  /// which is a sum of squares and never cancels.
  Vector ridge_weights(const Vector& z) const {
    Vector c = factor_.transpose() * z;
    return chol_.solve(c) / jitter_;
  }

  /// Sigma^{-1} z.
  Vector apply_inverse(const Vector& z) const {
    return (z - factor_ * ridge_weights(z)) / jitter_;
  }

  Matrix covariance() const {
    Matrix s = factor_ * factor_.transpose();
    s.diagonal().array() += jitter_;
    return s;
  }

  Vector covariance_diagonal() const {
    return factor_.rowwise().squaredNorm().array() + jitter_;
  }

 private:
  Vector mean_;
  Matrix factor_;
  Scalar jitter_;
  Matrix gram_;
  Eigen::LLT<Matrix> chol_;
  Scalar logdet_sigma_{0};
};

using LowRankGaussiand = LowRankGaussian<double>;

template <typename Scalar>
LowRankGaussian<Scalar> make_lowrank_gaussian(
    typename LowRankGaussian<Scalar>::Vector mean,
    typename LowRankGaussian<Scalar>::Matrix factor, Scalar jitter) {
  return LowRankGaussian<Scalar>(std::move(mean), std::move(factor), jitter);
}

namespace detail {

template <typename Scalar, typename Derived>
void check_point(const LowRankGaussian<Scalar>& g, const Eigen::MatrixBase<Derived>& x) {
  if (x.size() != g.dim()) {
    throw UsageError("Gaussian of dimension " + std::to_string(g.dim()) +
                     " evaluated at a point of dimension " + std::to_string(x.size()));
  }
}

template <typename Scalar>
Scalar log_two_pi() {
  return std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

}  // namespace detail

template <typename Scalar, typename Derived>
Scalar mahalanobis_sq(const LowRankGaussian<Scalar>& g, const Eigen::MatrixBase<Derived>& x) {
  detail::check_point(g, x);
  const typename LowRankGaussian<Scalar>::Vector z = x - g.mean();
  const auto w = g.ridge_weights(z);
  return (z - g.factor() * w).squaredNorm() / g.jitter() + w.squaredNorm();
}

template <typename Scalar, typename Derived>
Scalar log_density(const LowRankGaussian<Scalar>& g, const Eigen::MatrixBase<Derived>& x) {
  const Scalar q = mahalanobis_sq(g, x);
  return Scalar(-0.5) *
         (Scalar(g.dim()) * detail::log_two_pi<Scalar>() + g.log_det_covariance() + q);
}

/// Same quantity as log_density, from an explicitly formed covariance and a
/// dense Cholesky factorization.
template <typename Scalar, typename Derived>
Scalar log_density_dense(const LowRankGaussian<Scalar>& g, const Eigen::MatrixBase<Derived>& x) {
  using Matrix = typename LowRankGaussian<Scalar>::Matrix;
  detail::check_point(g, x);
  const Eigen::LLT<Matrix> llt(g.covariance());
  if (llt.info() != Eigen::Success) {
    throw NumericalError("dense covariance is not positive definite");
  }
  const Matrix& l = llt.matrixLLT();
  Scalar logdet(0);
  for (Eigen::Index k = 0; k < l.rows(); ++k) logdet += Scalar(2) * std::log(l(k, k));
  using Vector = typename LowRankGaussian<Scalar>::Vector;
  const Vector z = x - g.mean();
  const Vector y = llt.matrixL().solve(z);
  return Scalar(-0.5) *
         (Scalar(g.dim()) * detail::log_two_pi<Scalar>() + logdet + y.squaredNorm());
}

/// Image of g under x -> W x.  Mean W mu, factor W V; the jitter of the
/// result is `jitter` (by default the input jitter), not W (eps I) W^T.
template <typename Scalar, typename Derived>
LowRankGaussian<Scalar> push_forward(const LowRankGaussian<Scalar>& g,
                                     const Eigen::MatrixBase<Derived>& w, Scalar jitter) {
  if (w.cols() != g.dim()) {
    throw UsageError("push_forward: map has " + std::to_string(w.cols()) +
                     " columns, distribution has dimension " + std::to_string(g.dim()));
  }
  if (!w.allFinite()) throw NumericalError("push_forward: non-finite map");
  return LowRankGaussian<Scalar>(w * g.mean(), w * g.factor(), jitter);
}

template <typename Scalar, typename Derived>
LowRankGaussian<Scalar> push_forward(const LowRankGaussian<Scalar>& g,
                                     const Eigen::MatrixBase<Derived>& w) {
  return push_forward(g, w, g.jitter());
}

}  // namespace duple
