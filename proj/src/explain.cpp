#include "duple/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "duple/error.hpp"

namespace duple {

namespace {

void check_user(const ModelParams& p, Index u) {
  if (u < 0 || u >= p.shape().n_users) {
    throw UsageError("user index " + std::to_string(u) + " out of range");
  }
}

void check_attributes(const ModelParams& p, const std::vector<Index>& attrs) {
  for (Index a : attrs) {
    if (a < 0 || a >= p.shape().n_attributes) {
      throw UsageError("attribute index " + std::to_string(a) + " out of range");
    }
  }
}

/// Sigma_s restricted to attrs.
Eigen::MatrixXd specific_covariance_block(const ModelParams& p, Index u,
                                          const std::vector<Index>& attrs) {
  const LowRankGaussiand g = specific_distribution(p, u);
  const Index n = static_cast<Index>(attrs.size());
  Eigen::MatrixXd rows(n, g.rank());
  for (Index k = 0; k < n; ++k) rows.row(k) = g.factor().row(attrs[k]);
  Eigen::MatrixXd cov = rows * rows.transpose();
  cov.diagonal().array() += g.jitter();
  return cov;
}

}  // namespace

AttributeProfile preferred_profile(const ModelParams& p, Index u, Index r) {
  check_user(p, u);
  const Index n_attr = p.shape().n_attributes;
  if (r < 0 || r > n_attr) {
    throw UsageError("profile length " + std::to_string(r) + " exceeds the " +
                     std::to_string(n_attr) + " attributes");
  }
  const Eigen::VectorXd mu = specific_distribution(p, u).mean();
  std::vector<Index> order(n_attr);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + r, order.end(), [&](Index a, Index b) {
    if (mu[a] != mu[b]) return mu[a] > mu[b];
    return a < b;
  });
  AttributeProfile prof;
  prof.user = u;
  for (Index k = 0; k < r; ++k) prof.entries.emplace_back(order[k], mu[order[k]]);
  return prof;
}

Explanation explain_recommendation(const ModelParams& p, Index u, Index i,
                                   const AttributeCatalog& catalog, Index r,
                                   const std::string& item_name) {
  if (i < 0 || i >= catalog.n_items()) {
    throw UsageError("item index " + std::to_string(i) + " out of range");
  }
  Explanation ex;
  ex.user = u;
  ex.item = i;
  const auto prof = preferred_profile(p, u, r);
  for (const auto& [a, v] : prof.entries) {
    if (catalog.has(i, a)) ex.overlap.push_back(a);
  }
  const std::string name = item_name.empty() ? std::to_string(i) : item_name;
  if (ex.overlap.empty()) {
    ex.text = "item " + name + " shares no attribute with the preferred profile of user " +
              std::to_string(u) + "; no attribute-level explanation";
    return ex;
  }
  ex.text = "you may like item " + name + " for its attribute" +
            (ex.overlap.size() > 1 ? "s " : " ");
  for (std::size_t k = 0; k < ex.overlap.size(); ++k) {
    if (k) ex.text += ", ";
    ex.text += catalog.vocabulary.at(ex.overlap[k]);
  }
  return ex;
}

std::vector<PreferenceStrength> preference_strength(const ModelParams& p, Index u,
                                                    const std::vector<Index>& attrs) {
  check_user(p, u);
  check_attributes(p, attrs);
  const LowRankGaussiand g = specific_distribution(p, u);
  std::vector<PreferenceStrength> out;
  out.reserve(attrs.size());
  for (Index a : attrs) out.push_back({a, g.factor().row(a).squaredNorm() + g.jitter()});
  return out;
}

Eigen::MatrixXd attribute_correlation(const ModelParams& p, Index u,
                                      const std::vector<Index>& attrs) {
  check_user(p, u);
  check_attributes(p, attrs);
  if (std::set<Index>(attrs.begin(), attrs.end()).size() != attrs.size()) {
    throw UsageError("heatmap attributes must be distinct");
  }
  const Eigen::MatrixXd cov = specific_covariance_block(p, u, attrs);
  const Eigen::VectorXd inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd corr = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
  // exact symmetry, unit diagonal and [-1, 1] despite rounding
  corr = (0.5 * (corr + corr.transpose())).cwiseMax(-1.0).cwiseMin(1.0);
  corr.diagonal().setOnes();
  return corr;
}

void export_covariance_heatmap(const ModelParams& p, Index u, const std::vector<Index>& attrs,
                               const AttributeCatalog& catalog,
                               const std::filesystem::path& path) {
  const Eigen::MatrixXd corr = attribute_correlation(p, u, attrs);
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(12);
  out << "attribute";
  for (Index a : attrs) out << "," << catalog.vocabulary.at(a);
  out << "\n";
  for (Index r = 0; r < corr.rows(); ++r) {
    out << catalog.vocabulary.at(attrs[r]);
    for (Index c = 0; c < corr.cols(); ++c) out << "," << corr(r, c);
    out << "\n";
  }
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<Index> sample_attributes(Index n_attributes, Index count, std::uint64_t seed) {
  if (count > n_attributes) {
    throw UsageError("cannot pick " + std::to_string(count) + " of " +
                     std::to_string(n_attributes) + " attributes");
  }
  std::vector<Index> all(n_attributes);
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(seed);
  for (Index k = 0; k < count; ++k) {
    std::uniform_int_distribution<Index> d(k, n_attributes - 1);
    std::swap(all[k], all[d(rng)]);
  }
  all.resize(count);
  return all;
}

void write_profile(const std::filesystem::path& path, const AttributeProfile& profile,
                   const AttributeCatalog& catalog) {
  nlohmann::json j;
  j["user"] = profile.user;
  j["attributes"] = nlohmann::json::array();
  for (const auto& [a, v] : profile.entries) {
    j["attributes"].push_back({{"index", a}, {"name", catalog.vocabulary.at(a)}, {"mean", v}});
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace duple
