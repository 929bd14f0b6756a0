#pragma once

// Synthetic corpora shared by unit tests and the acceptance binary.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "duple/bundle.hpp"
#include "duple/corpus.hpp"

namespace duple::testing {

struct PlantedOptions {
  Index n_groups = 2;
  Index users_per_group = 20;
  Index n_items = 200;
  Index pool_size = 20;
  Index n_attributes = 30;
  Index preferred_per_group = 5;
  Index interactions_per_user = 15;
  Index n_neg = 100;
};

/// Group g prefers attributes [g*p, (g+1)*p); its users interact only with
/// the g-th pool of items, which carry 2-4 of those attributes plus noise.
/// The remaining items carry noise attributes only.
struct Planted {
  Bundle bundle;
  std::vector<Index> user_group;
  std::vector<std::vector<Index>> group_attributes;
};

inline Planted make_planted(const PlantedOptions& o, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Index n_pref = o.n_groups * o.preferred_per_group;
  const Index n_users = o.n_groups * o.users_per_group;
  std::uniform_int_distribution<Index> noise(n_pref, o.n_attributes - 1);

  Planted out;
  AttributeCatalog& cat = out.bundle.catalog;
  for (Index a = 0; a < o.n_attributes; ++a) cat.vocabulary.push_back("attr" + std::to_string(a));
  for (Index i = 0; i < o.n_items; ++i) cat.item_ids.push_back("item" + std::to_string(i));
  cat.item_attributes.resize(o.n_items);
  for (Index g = 0; g < o.n_groups; ++g) {
    std::vector<Index> pref(o.preferred_per_group);
    std::iota(pref.begin(), pref.end(), g * o.preferred_per_group);
    out.group_attributes.push_back(pref);
  }
  for (Index i = 0; i < o.n_items; ++i) {
    std::vector<Index> attrs;
    const Index g = i / o.pool_size;
    if (g < o.n_groups) {
      auto pref = out.group_attributes[g];
      std::shuffle(pref.begin(), pref.end(), rng);
      const Index take = std::uniform_int_distribution<Index>(2, 4)(rng);
      attrs.assign(pref.begin(), pref.begin() + take);
      attrs.push_back(noise(rng));
    } else {
      const Index take = std::uniform_int_distribution<Index>(2, 4)(rng);
      for (Index k = 0; k < take; ++k) attrs.push_back(noise(rng));
    }
    std::sort(attrs.begin(), attrs.end());
    attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
    cat.item_attributes[i] = attrs;
  }

  std::vector<std::string> users;
  std::vector<std::vector<Index>> positives(n_users);
  for (Index u = 0; u < n_users; ++u) {
    users.push_back("user" + std::to_string(u));
    const Index g = u / o.users_per_group;
    out.user_group.push_back(g);
    std::vector<Index> pool(o.pool_size);
    std::iota(pool.begin(), pool.end(), g * o.pool_size);
    std::shuffle(pool.begin(), pool.end(), rng);
    positives[u].assign(pool.begin(), pool.begin() + o.interactions_per_user);
  }
  const InteractionLog log(users, cat.item_ids, positives);
  out.bundle.split = leave_one_out_split(log, seed + 1);
  freeze_candidates(out.bundle.split, o.n_neg, seed + 2);
  out.bundle.item_titles.assign(o.n_items, "");
  auto& st = out.bundle.stats;
  st.users = log.n_users();
  st.items = log.n_items();
  st.interactions = log.n_interactions();
  st.attributes = cat.n_attributes();
  st.density = density(log);
  return out;
}

/// Small random corpus: every user has `per_user` distinct items, every item
/// 1-4 attributes.
inline Bundle make_random_bundle(Index n_users, Index n_items, Index n_attributes, Index per_user,
                                 Index n_neg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bundle b;
  auto& cat = b.catalog;
  for (Index a = 0; a < n_attributes; ++a) cat.vocabulary.push_back("w" + std::to_string(a));
  for (Index i = 0; i < n_items; ++i) cat.item_ids.push_back("i" + std::to_string(i));
  std::uniform_int_distribution<Index> pick_attr(0, n_attributes - 1);
  for (Index i = 0; i < n_items; ++i) {
    std::vector<Index> attrs;
    const Index take = std::uniform_int_distribution<Index>(1, 4)(rng);
    for (Index k = 0; k < take; ++k) attrs.push_back(pick_attr(rng));
    std::sort(attrs.begin(), attrs.end());
    attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
    cat.item_attributes.push_back(attrs);
  }
  std::vector<std::string> users;
  std::vector<std::vector<Index>> positives(n_users);
  std::vector<Index> all(n_items);
  std::iota(all.begin(), all.end(), 0);
  for (Index u = 0; u < n_users; ++u) {
    users.push_back("u" + std::to_string(u));
    std::shuffle(all.begin(), all.end(), rng);
    positives[u].assign(all.begin(), all.begin() + per_user);
  }
  const InteractionLog log(users, cat.item_ids, positives);
  b.split = leave_one_out_split(log, seed + 1);
  freeze_candidates(b.split, n_neg, seed + 2);
  b.item_titles.assign(n_items, "");
  b.stats.users = n_users;
  b.stats.items = n_items;
  b.stats.interactions = log.n_interactions();
  b.stats.attributes = n_attributes;
  b.stats.density = density(log);
  return b;
}

}  // namespace duple::testing
