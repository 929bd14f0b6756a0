#pragma once

// Central finite-difference check of compute_gradient against total_loss.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "duple/scoring.hpp"
#include "duple/training.hpp"

namespace duple::testing {

struct TensorCheck {
  std::string name;
  Index checked = 0;
  Index skipped = 0;
  /// Coordinates whose stencil crosses a ReLU kink.
  Index kinks = 0;
  double max_rel_err = 0.0;
};

/// Sign pattern of every hidden pre-activation the batch touches.
inline std::vector<bool> relu_pattern(const ModelParams& p, const std::vector<Triplet>& batch) {
  std::vector<bool> out;
  auto push = [&](Tower t, Index idx) {
    const auto tr = embed(p, t, idx);
    for (Index k = 0; k < tr.pre.size(); ++k) out.push_back(tr.pre[k] > 0.0);
  };
  for (const auto& t : batch) {
    push(Tower::user, t.user);
    push(Tower::item, t.positive);
    push(Tower::item, t.negative);
  }
  return out;
}

/// Samples up to `per_tensor` coordinates of every tensor and compares the
/// analytic derivative with a central difference of step h (order 2: two
/// points; order 4: five-point stencil).  Coordinates whose analytic
/// derivative is below `floor` in magnitude, or whose stencil crosses a ReLU
/// kink, are skipped.
inline std::vector<TensorCheck> finite_difference_check(ModelParams p,
                                                        const std::vector<Triplet>& batch,
                                                        const AttributeCatalog& catalog,
                                                        Index per_tensor, double h,
                                                        std::uint64_t seed,
                                                        double floor = 1e-8,
                                                        int order = 4) {
  const GradientResult gr = compute_gradient(p, batch, catalog);
  const auto base = relu_pattern(p, batch);
  std::mt19937_64 rng(seed);
  std::vector<TensorCheck> out;
  for (const auto& spec : p.layout().specs()) {
    TensorCheck tc{spec.name};
    std::vector<Index> coords(spec.size());
    std::iota(coords.begin(), coords.end(), spec.offset);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min<Index>(per_tensor, spec.size()));
    for (Index k : coords) {
      const double analytic = gr.grad[k];
      if (std::abs(analytic) < floor) {
        ++tc.skipped;
        continue;
      }
      const double x = p.values()[k];
      double f[4];
      bool smooth = true;
      const double offsets[4] = {-2.0, -1.0, 1.0, 2.0};
      for (int s = 0; s < 4; ++s) {
        p.values()[k] = x + offsets[s] * h;
        f[s] = total_loss(p, batch, catalog).total;
        smooth = smooth && relu_pattern(p, batch) == base;
      }
      p.values()[k] = x;
      if (!smooth) {
        ++tc.kinks;
        continue;
      }
      const double numeric = order == 4 ? (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)
                                        : (f[2] - f[1]) / (2.0 * h);
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-300});
      tc.max_rel_err = std::max(tc.max_rel_err, rel);
      ++tc.checked;
    }
    out.push_back(tc);
  }
  return out;
}

}  // namespace duple::testing
