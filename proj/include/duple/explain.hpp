#pragma once

// Attribute-level explanations read off the specific preference distribution.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "duple/corpus.hpp"
#include "duple/model.hpp"

namespace duple {

struct AttributeProfile {
  Index user = 0;
  /// (attribute, mean value), descending by value, ties by ascending index.
  std::vector<std::pair<Index, double>> entries;
};

/// The r largest coordinates of the user's specific mean.  Throws UsageError
/// when r > |A| or r < 0.
AttributeProfile preferred_profile(const ModelParams& p, Index u, Index r = 10);

struct Explanation {
  Index user = 0;
  Index item = 0;
  /// Profile attributes the item carries, in profile order.
  std::vector<Index> overlap;
  std::string text;
};

/// `item_name` replaces the item index in the rendered sentence when
/// non-empty.
Explanation explain_recommendation(const ModelParams& p, Index u, Index i,
                                   const AttributeCatalog& catalog, Index r = 10,
                                   const std::string& item_name = {});

struct PreferenceStrength {
  Index attribute = 0;
  /// Sigma_s[a, a].  Smaller means a stronger preference.
  double variance = 0.0;
};

std::vector<PreferenceStrength> preference_strength(const ModelParams& p, Index u,
                                                    const std::vector<Index>& attrs);

/// Correlation submatrix of Sigma_s over `attrs` (distinct).
Eigen::MatrixXd attribute_correlation(const ModelParams& p, Index u,
                                      const std::vector<Index>& attrs);

/// Writes the correlation submatrix as CSV with attribute names in the header
/// row and first column.
void export_covariance_heatmap(const ModelParams& p, Index u, const std::vector<Index>& attrs,
                               const AttributeCatalog& catalog,
                               const std::filesystem::path& path);

/// `count` distinct attribute indices drawn uniformly, deterministic in seed.
std::vector<Index> sample_attributes(Index n_attributes, Index count, std::uint64_t seed);

void write_profile(const std::filesystem::path& path, const AttributeProfile& profile,
                   const AttributeCatalog& catalog);

}  // namespace duple
