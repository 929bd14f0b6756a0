#include "duple/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "duple/error.hpp"
#include "duple/scoring.hpp"

namespace duple {

std::vector<Index> rank_by_scores(std::span<const Index> items, std::span<const double> scores) {
  if (items.size() != scores.size()) throw UsageError("rank_by_scores: size mismatch");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  std::vector<Index> out;
  out.reserve(items.size());
  for (auto k : order) out.push_back(items[k]);
  return out;
}

namespace {

std::vector<double> score_candidates(const ScoringContext& ctx, Index u,
                                     std::span<const Index> candidates,
                                     const std::vector<Eigen::VectorXd>* item_cache) {
  const UserState st = prepare_user(ctx, u);
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (Index i : candidates) {
    const PairTerms t = item_cache ? evaluate_pair(ctx, st, (*item_cache)[i])
                                   : evaluate_pair(ctx, st, embed_item(ctx.params(), i));
    if (!std::isfinite(t.log_fused)) {
      throw NumericalError("non-finite score for user " + std::to_string(u) + ", item " +
                           std::to_string(i));
    }
    scores.push_back(t.log_fused);
  }
  return scores;
}

}  // namespace

std::vector<Index> rank_candidates(const ModelParams& p, Index u,
                                   std::span<const Index> candidates) {
  const ScoringContext ctx(p);
  const auto scores = score_candidates(ctx, u, candidates, nullptr);
  return rank_by_scores(candidates, scores);
}

UserMetrics metrics_for_user(std::span<const Index> ranked, Index truth, Index n_neg, Index k) {
  const auto it = std::find(ranked.begin(), ranked.end(), truth);
  if (it == ranked.end()) {
    throw UsageError("ground-truth item " + std::to_string(truth) + " not in the ranked list");
  }
  if (n_neg <= 0 || static_cast<Index>(ranked.size()) != n_neg + 1) {
    throw UsageError("ranked list must hold the truth plus n_neg negatives");
  }
  UserMetrics m;
  m.rank = static_cast<Index>(it - ranked.begin()) + 1;
  m.mrr = 1.0 / double(m.rank);
  m.hr = m.rank <= k ? 1.0 : 0.0;
  m.ndcg = m.rank <= k ? 1.0 / std::log2(double(m.rank) + 1.0) : 0.0;
  m.auc = double(n_neg + 1 - m.rank) / double(n_neg);
  return m;
}

MetricsReport evaluate(const ModelParams& p, const SplitDataset& split, Phase phase, Index k) {
  MetricsReport rep;
  rep.phase = phase;
  rep.k = k;
  const ScoringContext ctx(p);
  std::vector<Eigen::VectorXd> items(p.shape().n_items);
  for (Index i = 0; i < p.shape().n_items; ++i) items[i] = embed_item(p, i);

  for (Index u = 0; u < split.n_users(); ++u) {
    const auto& cands = split.candidates(phase, u);
    const auto scores = score_candidates(ctx, u, cands, &items);
    const auto ranked = rank_by_scores(cands, scores);
    UserMetrics m =
        metrics_for_user(ranked, split.held_out(phase, u), static_cast<Index>(cands.size()) - 1, k);
    m.user = u;
    rep.per_user.push_back(m);
  }
  // fixed summation order: by user index
  for (const auto& m : rep.per_user) {
    rep.auc += m.auc;
    rep.mrr += m.mrr;
    rep.hr_at_k += m.hr;
    rep.ndcg_at_k += m.ndcg;
  }
  if (!rep.per_user.empty()) {
    const double n = double(rep.per_user.size());
    rep.auc /= n;
    rep.mrr /= n;
    rep.hr_at_k /= n;
    rep.ndcg_at_k /= n;
  }
  return rep;
}

void write_metrics(const std::filesystem::path& dir, const MetricsReport& r) {
  std::filesystem::create_directories(dir);
  const std::string phase(phase_name(r.phase));
  const std::string hr = "hr@" + std::to_string(r.k);
  const std::string ndcg = "ndcg@" + std::to_string(r.k);
  auto pct = [](double v) { return std::round(v * 10000.0) / 100.0; };

  nlohmann::json j;
  j["phase"] = phase;
  j["k"] = r.k;
  j["users"] = r.per_user.size();
  j["metrics"] = {{"auc", pct(r.auc)}, {"mrr", pct(r.mrr)}, {hr, pct(r.hr_at_k)},
                  {ndcg, pct(r.ndcg_at_k)}};
  j["raw"] = {{"auc", r.auc}, {"mrr", r.mrr}, {hr, r.hr_at_k}, {ndcg, r.ndcg_at_k}};
  std::ofstream(dir / "metrics.json") << j.dump(2) << "\n";

  std::ofstream csv(dir / "metrics.csv");
  csv << "phase,metric,value\n";
  char buf[64];
  for (const auto& [name, v] : {std::pair<std::string, double>{"auc", r.auc},
                                {"mrr", r.mrr}, {hr, r.hr_at_k}, {ndcg, r.ndcg_at_k}}) {
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    csv << phase << "," << name << "," << buf << "\n";
  }
  if (!csv) throw InputError("cannot write metrics into " + dir.string());
}

}  // namespace duple
