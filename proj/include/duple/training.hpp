#pragma once

// Objective, gradients, Adam and the mini-batch training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duple/corpus.hpp"
#include "duple/model.hpp"

namespace duple {

/// User u prefers item `positive` (a training positive) to `negative` (never
/// interacted, held-out items included).
struct Triplet {
  Index user = 0;
  Index positive = 0;
  Index negative = 0;
};

/// (user, positive) pairs are drawn uniformly from the training interactions;
/// the negative is redrawn uniformly over all items until it falls outside
/// the user's interactions.  Deterministic in (seed, step).
std::vector<Triplet> sample_triplet_batch(const SplitDataset& split, Index size,
                                          std::uint64_t seed, std::uint64_t step);

struct LossBreakdown {
  double alignment = 0.0;
  double ranking = 0.0;
  double total = 0.0;
};

/// Batch mean of -log sigmoid(cos(t^_i, t_i) - cos(t^_i, t_j)).  A zero-norm
/// vector gives cosine 0.
double attribute_alignment_loss(const ModelParams& p, std::span<const Triplet> batch,
                                const AttributeCatalog& catalog);

/// Batch mean of -log(p_ui / (p_ui + p_uj)), evaluated in log space.
double ranking_loss(const ModelParams& p, std::span<const Triplet> batch);

LossBreakdown total_loss(const ModelParams& p, std::span<const Triplet> batch,
                         const AttributeCatalog& catalog);

struct GradientResult {
  LossBreakdown loss;
  /// Same layout as ModelParams::values().
  Eigen::VectorXd grad;
};

/// Exact gradient of total_loss with respect to every parameter.
GradientResult compute_gradient(const ModelParams& p, std::span<const Triplet> batch,
                                const AttributeCatalog& catalog);

/// Name of the first tensor holding a non-finite gradient entry, if any.
std::optional<std::string> first_non_finite_tensor(const ModelParams& p,
                                                   const Eigen::VectorXd& grad);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;

  AdamState() = default;
  AdamState(AdamOptions opts, Index n_params);
};

/// One bias-corrected Adam update of p.values() in place.
void adam_step(AdamState& state, ModelParams& p, const Eigen::VectorXd& grad);

/// Rescales grad so its Euclidean norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(Eigen::VectorXd& grad, double max_norm);

struct TrainConfig {
  Index batch_size = 256;
  double lr = 1e-4;
  Index steps = 50000;
  std::uint64_t seed = 42;
  /// Validation every this many steps (and after the last one).
  Index eval_every = 1000;
  /// Progress line every this many steps; 0 disables.
  Index log_every = 100;
  /// <= 0 disables clipping.
  double clip_norm = 10.0;
  InitOptions init;
};

struct CurvePoint {
  Index step = 0;
  double loss = 0.0;
  /// NaN on steps without validation.
  double val_mrr = 0.0;
  double val_hr10 = 0.0;
};

struct TrainResult {
  /// Parameters at the best validation MRR (initial parameters when no
  /// validation ran).
  ModelParams params;
  std::vector<CurvePoint> curve;
  Index best_step = 0;
  double best_val_mrr = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

/// Runs config.steps mini-batch Adam steps from a seeded initialization.
/// Progress goes to `log` as one JSON object per line.  A non-finite loss or
/// gradient stops training; the result then carries the best parameters
/// seen so far and aborted = true.
TrainResult train(const ModelConfig& model, const TrainConfig& config, const SplitDataset& split,
                  const AttributeCatalog& catalog, std::ostream* log = nullptr);

void write_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

}  // namespace duple
