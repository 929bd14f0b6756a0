#pragma once

// Dataset bundle: the preprocessed, split corpus every later command reads.
//
//   interactions.csv     user,item (dense indices, every positive)
//   users.txt            raw user id per index
//   items.tsv            item index <TAB> raw id <TAB> title
//   vocabulary.txt       one attribute per line, index = line number
//   item_attributes.csv  item,attributes (space-separated vocabulary indices)
//   split.json           per-user validation/test item and frozen candidates
//   meta.json            counts per stage, density, seeds, thresholds

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duple/corpus.hpp"

namespace duple {

struct IngestOptions {
  InteractionFormat format = InteractionFormat::csv_movielens;
  std::filesystem::path interactions;
  std::filesystem::path items;
  std::filesystem::path stopwords;
  MalformedPolicy malformed = MalformedPolicy::abort;
  double rating_threshold = 3.0;
  Index k_core = 10;
  AttributeOptions attributes;
  std::uint64_t split_seed = 42;
  std::uint64_t candidate_seed = 42;
  Index n_neg = 100;
};

struct IngestStats {
  Index raw_records = 0;
  Index skipped_records = 0;
  Index deduplicated = 0;
  Index positive = 0;
  Index items_with_text = 0;
  Index users = 0;
  Index items = 0;
  Index interactions = 0;
  Index attributes = 0;
  double density = 0.0;
};

struct Bundle {
  SplitDataset split;
  AttributeCatalog catalog;
  /// Aligned with the item index space; empty when unknown.
  std::vector<std::string> item_titles;
  IngestStats stats;
};

/// Parse, deduplicate (keep last), keep ratings above the threshold, extract
/// attributes from the surviving items, k-core filter, split and freeze the
/// candidate lists.
Bundle ingest(const IngestOptions& options);

/// Refuses to write into a directory that already holds a bundle unless
/// `force` is set.
void write_bundle(const std::filesystem::path& dir, const Bundle& bundle,
                  const IngestOptions& options, bool force = false);

Bundle read_bundle(const std::filesystem::path& dir);

}  // namespace duple
