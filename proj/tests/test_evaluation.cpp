#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "duple/error.hpp"
#include "duple/evaluation.hpp"
#include "duple/scoring.hpp"
#include "support/fixtures.hpp"
#include "support/tempdir.hpp"

using namespace duple;

namespace {

/// Ranked list of 101 items (0 = truth) placing the truth at 1-based rank r.
std::vector<Index> list_with_rank(Index r, Index n = 101) {
  std::vector<Index> out;
  for (Index k = 1; k < n; ++k) out.push_back(k);
  out.insert(out.begin() + (r - 1), 0);
  return out;
}

/// Fraction of negatives scored strictly worse under the tie rule.
double pairwise_auc(const std::vector<Index>& items, const std::vector<double>& scores,
                    Index truth) {
  const auto t = std::find(items.begin(), items.end(), truth) - items.begin();
  Index below = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (items[k] == truth) continue;
    const bool truth_ahead =
        scores[t] > scores[k] || (scores[t] == scores[k] && items[t] < items[k]);
    below += truth_ahead;
  }
  return double(below) / double(items.size() - 1);
}

}  // namespace

TEST_CASE("per-user metric table") {
  struct Row {
    Index rank;
    double hr, ndcg, mrr, auc;
  };
  const Row table[] = {
      {1, 1.0, 1.0, 1.0, 1.0},
      {3, 1.0, 0.5, 1.0 / 3.0, 0.98},
      {10, 1.0, 1.0 / std::log2(11.0), 0.1, 0.91},
      {11, 0.0, 0.0, 1.0 / 11.0, 0.90},
      {101, 0.0, 0.0, 1.0 / 101.0, 0.0},
  };
  for (const auto& row : table) {
    CAPTURE(row.rank);
    const auto m = metrics_for_user(list_with_rank(row.rank), 0, 100, 10);
    CHECK(m.rank == row.rank);
    CHECK(m.hr == row.hr);
    CHECK(m.ndcg == row.ndcg);
    CHECK(m.mrr == row.mrr);
    CHECK(m.auc == doctest::Approx(row.auc).epsilon(1e-15));
  }
}

TEST_CASE("metric errors") {
  const auto ranked = list_with_rank(4);
  CHECK_THROWS_AS(metrics_for_user(ranked, 500, 100), UsageError);
  CHECK_THROWS_AS(metrics_for_user(ranked, 0, 99), UsageError);
  CHECK_THROWS_AS(rank_by_scores(std::vector<Index>{1, 2}, std::vector<double>{0.5}),
                  UsageError);
}

TEST_CASE("metrics are monotone in rank") {
  for (Index r = 1; r < 101; ++r) {
    const auto worse = metrics_for_user(list_with_rank(r + 1), 0, 100);
    const auto better = metrics_for_user(list_with_rank(r), 0, 100);
    CHECK(better.hr >= worse.hr);
    CHECK(better.ndcg >= worse.ndcg);
    CHECK(better.mrr > worse.mrr);
    CHECK(better.auc > worse.auc);
  }
}

TEST_CASE("ranking: strict sort, ties by index, input-order invariance") {
  const std::vector<Index> items{7, 3, 9, 1};
  CHECK(rank_by_scores(items, std::vector<double>{0.1, 0.4, -2.0, 0.3}) ==
        std::vector<Index>{3, 1, 7, 9});
  CHECK(rank_by_scores(items, std::vector<double>{5.0, 5.0, 5.0, 5.0}) ==
        std::vector<Index>{1, 3, 7, 9});

  std::mt19937_64 rng(1);
  std::vector<Index> ids(60);
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<double> scores(60);
  // coarse scores so ties occur
  for (auto& s : scores) s = std::uniform_int_distribution<int>(0, 9)(rng);
  const auto ref = rank_by_scores(ids, scores);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> perm(ids.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Index> pi;
    std::vector<double> ps;
    for (auto k : perm) {
      pi.push_back(ids[k]);
      ps.push_back(scores[k]);
    }
    CHECK(rank_by_scores(pi, ps) == ref);
  }
}

TEST_CASE("rank-based AUC equals pairwise AUC") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Index> items(101);
    std::iota(items.begin(), items.end(), 0);
    std::shuffle(items.begin(), items.end(), rng);
    std::vector<double> scores(101);
    const int levels = trial % 2 ? 5 : 1000000;
    for (auto& s : scores) s = std::uniform_int_distribution<int>(0, levels)(rng);
    const Index truth = items[trial % 101];
    const auto m = metrics_for_user(rank_by_scores(items, scores), truth, 100);
    CHECK(m.auc == pairwise_auc(items, scores, truth));
  }
}

TEST_CASE("rank_candidates sorts by fused score") {
  const Bundle b = testing::make_random_bundle(4, 130, 10, 5, 100, 3);
  ModelConfig c;
  c.shape = {4, 130, 10, 8, 8, 2};
  const ModelParams p = ModelParams::random(c, 4);
  const auto& cands = b.split.candidates(Phase::test, 1);
  const auto ranked = rank_candidates(p, 1, cands);
  CHECK(ranked.size() == cands.size());
  for (std::size_t k = 1; k < ranked.size(); ++k) {
    CHECK(score(p, 1, ranked[k - 1]).log_fused >= score(p, 1, ranked[k]).log_fused);
  }
}

TEST_CASE("single-user report equals that user's metrics") {
  Bundle b = testing::make_random_bundle(3, 130, 10, 5, 100, 5);
  ModelConfig c;
  c.shape = {3, 130, 10, 8, 8, 2};
  const ModelParams p = ModelParams::random(c, 6);
  const auto rep = evaluate(p, b.split, Phase::validation);
  REQUIRE(rep.per_user.size() == 3);
  double mrr = 0.0;
  for (const auto& m : rep.per_user) {
    const auto& cands = b.split.candidates(Phase::validation, m.user);
    const auto direct =
        metrics_for_user(rank_candidates(p, m.user, cands), b.split.validation_item[m.user], 100);
    CHECK(direct.rank == m.rank);
    mrr += direct.mrr;
  }
  CHECK(rep.mrr == doctest::Approx(mrr / 3.0).epsilon(1e-15));
  for (double v : {rep.auc, rep.mrr, rep.hr_at_k, rep.ndcg_at_k}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(evaluate(p, b.split, Phase::validation).mrr == rep.mrr);
}

TEST_CASE("untrained model ranks near uniformly") {
  const Index users = 1500;
  const Bundle b = testing::make_random_bundle(users, 160, 12, 5, 100, 7);
  ModelConfig c;
  c.shape = {users, 160, 12, 16, 16, 4};
  const ModelParams p = ModelParams::random(c, 8);
  const auto rep = evaluate(p, b.split, Phase::test);
  // uniform rank over 101: E[MRR] = H_101 / 101, sd of one user's AUC = 0.29
  double h = 0.0;
  for (int r = 1; r <= 101; ++r) h += 1.0 / r;
  const double expected_mrr = h / 101.0;
  CHECK(expected_mrr == doctest::Approx(0.0514).epsilon(1e-3));
  CHECK(std::abs(rep.auc - 0.5) < 4.0 * 0.29 / std::sqrt(double(users)));
  CHECK(std::abs(rep.mrr - expected_mrr) < 0.01);
}

TEST_CASE("metrics files") {
  testing::TempDir dir;
  MetricsReport r;
  r.phase = Phase::validation;
  r.auc = 0.79071;
  r.mrr = 0.1643;
  r.hr_at_k = 0.38855;
  r.ndcg_at_k = 0.208;
  write_metrics(dir.path(), r);
  std::ifstream in(dir / "metrics.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() ==
        "phase,metric,value\nvalidation,auc,79.07\nvalidation,mrr,16.43\n"
        "validation,hr@10,38.86\nvalidation,ndcg@10,20.80\n");
  CHECK(std::filesystem::exists(dir / "metrics.json"));
}

TEST_CASE("report does not depend on user order") {
  const Index n = 12;
  const Bundle b = testing::make_random_bundle(n, 130, 10, 5, 100, 9);
  ModelConfig c;
  c.shape = {n, 130, 10, 8, 8, 2};
  const ModelParams p = ModelParams::random(c, 10);

  std::vector<Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(11);
  std::shuffle(perm.begin(), perm.end(), rng);
  // user k of the copy is user perm[k] of the original
  SplitDataset s = b.split;
  ModelParams q = p;
  std::vector<std::string> ids;
  std::vector<std::vector<Index>> train;
  for (Index k = 0; k < n; ++k) {
    const Index u = perm[k];
    ids.push_back(b.split.train.user_ids()[u]);
    train.push_back(b.split.train.positives(u));
    s.interacted[k] = b.split.interacted[u];
    s.validation_item[k] = b.split.validation_item[u];
    s.test_item[k] = b.split.test_item[u];
    s.validation_candidates[k] = b.split.validation_candidates[u];
    s.test_candidates[k] = b.split.test_candidates[u];
    q[Tensor::user_table].col(k) = p[Tensor::user_table].col(u);
  }
  s.train = InteractionLog(ids, b.split.train.item_ids(), train);
  const auto a = evaluate(p, b.split, Phase::test);
  const auto r = evaluate(q, s, Phase::test);
  CHECK(r.auc == doctest::Approx(a.auc).epsilon(1e-14));
  CHECK(r.mrr == doctest::Approx(a.mrr).epsilon(1e-14));
  CHECK(r.hr_at_k == a.hr_at_k);
  CHECK(r.ndcg_at_k == doctest::Approx(a.ndcg_at_k).epsilon(1e-14));
  for (Index k = 0; k < n; ++k) CHECK(r.per_user[k].rank == a.per_user[perm[k]].rank);
}
