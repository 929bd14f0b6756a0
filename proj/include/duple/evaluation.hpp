#pragma once

// Leave-one-out ranking evaluation over frozen candidate lists.

#include <filesystem>
#include <span>
#include <vector>

#include "duple/corpus.hpp"
#include "duple/model.hpp"

namespace duple {

struct UserMetrics {
  Index user = 0;
  /// 1-based rank of the held-out item.
  Index rank = 0;
  double auc = 0.0;
  double mrr = 0.0;
  double hr = 0.0;
  double ndcg = 0.0;
};

struct MetricsReport {
  Phase phase = Phase::test;
  Index k = 10;
  double auc = 0.0;
  double mrr = 0.0;
  double hr_at_k = 0.0;
  double ndcg_at_k = 0.0;
  std::vector<UserMetrics> per_user;
};

/// Items sorted by descending score, ties by ascending item index.
std::vector<Index> rank_by_scores(std::span<const Index> items, std::span<const double> scores);

/// Candidates sorted by descending fused log-preference of user u.
std::vector<Index> rank_candidates(const ModelParams& p, Index u, std::span<const Index> candidates);

/// HR@k, NDCG@k (single relevant item, ideal DCG = 1), reciprocal rank and
/// the fraction of the n_neg negatives ranked below the truth.
UserMetrics metrics_for_user(std::span<const Index> ranked, Index truth, Index n_neg,
                             Index k = 10);

/// Means of the per-user metrics over every user of the split.
MetricsReport evaluate(const ModelParams& p, const SplitDataset& split, Phase phase,
                       Index k = 10);

/// Writes metrics.json and metrics.csv (values x100, two decimals) into dir.
void write_metrics(const std::filesystem::path& dir, const MetricsReport& report);

}  // namespace duple
