#pragma once

// Interaction logs, item attribute catalogs and leave-one-out splits.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

namespace duple {

using Index = Eigen::Index;

struct RawInteraction {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
};

enum class InteractionFormat { csv_movielens, jsonl_amazon };

enum class MalformedPolicy { abort, skip };

struct ParseIssue {
  std::size_t line = 0;
  std::string message;
};

InteractionFormat parse_format(std::string_view name);

/// Reads one RawInteraction per record, in file order.  CSV input is
/// `user,item,rating[,timestamp]` with an optional header line; JSON-lines
/// input uses the reviewerID / asin / overall fields.
std::vector<RawInteraction> parse_interactions(const std::filesystem::path& path,
                                               InteractionFormat format,
                                               MalformedPolicy policy = MalformedPolicy::abort,
                                               std::vector<ParseIssue>* issues = nullptr);

/// Collapses repeated (user, item) records onto their last occurrence, keeping
/// the position of that last occurrence.
std::vector<RawInteraction> deduplicate_keep_last(std::span<const RawInteraction> log);

/// Keeps records whose rating is strictly greater than `threshold`.
std::vector<RawInteraction> filter_positive(std::span<const RawInteraction> log,
                                            double threshold = 3.0);

/// Implicit-feedback log with dense user and item indices.  Indices are
/// assigned in order of first appearance.
class InteractionLog {
 public:
  InteractionLog() = default;
  InteractionLog(std::vector<std::string> user_ids, std::vector<std::string> item_ids,
                 std::vector<std::vector<Index>> positives);

  static InteractionLog from_raw(std::span<const RawInteraction> log);

  Index n_users() const { return static_cast<Index>(user_ids_.size()); }
  Index n_items() const { return static_cast<Index>(item_ids_.size()); }
  Index n_interactions() const { return n_interactions_; }

  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  /// Sorted item indices of user u.
  const std::vector<Index>& positives(Index u) const { return positives_[u]; }
  const std::vector<std::vector<Index>>& all_positives() const { return positives_; }
  bool contains(Index u, Index i) const;
  std::vector<Index> item_degrees() const;

 private:
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
  std::vector<std::vector<Index>> positives_;
  Index n_interactions_ = 0;
};

/// Repeatedly drops users and items with fewer than k interactions until every
/// remaining degree is >= k.  Throws InputError when nothing survives.
InteractionLog k_core_filter(const InteractionLog& log, Index k = 10);

/// #interactions / (#users * #items).
double density(const InteractionLog& log);

// ---------------------------------------------------------------------------
// Attributes

struct ItemText {
  std::string item_id;
  std::string text;
};

struct ItemRecord {
  std::string item_id;
  std::string title;
  std::string text;
};

/// Item side files: MovieLens `movies.csv` (movieId,title,genres with
/// pipe-separated genres) or Amazon metadata JSON-lines (asin, title,
/// description, brand, categories).  The text of a record is what attribute
/// extraction tokenizes.
std::vector<ItemRecord> parse_item_records(const std::filesystem::path& path,
                                           InteractionFormat format);

struct AttributeOptions {
  /// A token becomes an attribute when it occurs in strictly more than this
  /// fraction of the items.
  double min_doc_frac = 0.001;
  /// Drop four-digit tokens in [1800, 2099] (publication years).
  bool exclude_years = false;
};

/// Lowercases, splits on runs of non-alphanumeric characters and drops tokens
/// shorter than two characters.
std::vector<std::string> tokenize(std::string_view text);

using StopwordSet = std::unordered_set<std::string>;
StopwordSet load_stopwords(const std::filesystem::path& path);

struct AttributeCatalog {
  /// Ordered by descending document frequency, ties lexicographic.
  std::vector<std::string> vocabulary;
  std::vector<std::string> item_ids;
  /// Sorted vocabulary indices per item, aligned with item_ids.
  std::vector<std::vector<Index>> item_attributes;

  Index n_attributes() const { return static_cast<Index>(vocabulary.size()); }
  Index n_items() const { return static_cast<Index>(item_ids.size()); }
  bool has(Index item, Index attribute) const;
  /// Binary bag-of-words vector t_i.
  Eigen::VectorXd bow(Index item) const;
  /// -1 when the attribute is not in the vocabulary.
  Index find(std::string_view attribute) const;
};

AttributeCatalog extract_attribute_catalog(std::span<const ItemText> items,
                                           const StopwordSet& stopwords,
                                           const AttributeOptions& options = {});

/// Re-indexes a catalog onto the item space of `log`.  Items without text get
/// an empty attribute set.
AttributeCatalog align_catalog(const AttributeCatalog& catalog, const InteractionLog& log);

// ---------------------------------------------------------------------------
// Splits

enum class Phase { validation, test };

std::string_view phase_name(Phase phase);
Phase parse_phase(std::string_view name);

struct SplitDataset {
  /// Training positives, in the same index spaces as the full log.
  InteractionLog train;
  /// Every known positive (train plus both held-out items) per user.
  std::vector<std::vector<Index>> interacted;
  std::vector<Index> validation_item;
  std::vector<Index> test_item;
  std::vector<std::vector<Index>> validation_candidates;
  std::vector<std::vector<Index>> test_candidates;
  std::uint64_t seed = 0;
  std::uint64_t candidate_seed = 0;
  Index n_neg = 0;

  Index n_users() const { return train.n_users(); }
  Index n_items() const { return train.n_items(); }
  Index held_out(Phase phase, Index user) const;
  const std::vector<Index>& candidates(Phase phase, Index user) const;
  bool has_interacted(Index user, Index item) const;
};

/// Per user: one uniformly chosen item for test, a distinct one for
/// validation, the rest for training.  Candidate lists are left empty.
SplitDataset leave_one_out_split(const InteractionLog& log, std::uint64_t seed);

/// The held-out item followed by n_neg distinct items drawn uniformly from
/// the items the user never interacted with.
std::vector<Index> sample_candidates(const SplitDataset& split, Index user, Phase phase,
                                     Index n_neg, std::uint64_t seed);

/// Samples and stores candidate lists for both phases and every user.
void freeze_candidates(SplitDataset& split, Index n_neg, std::uint64_t seed);

}  // namespace duple
