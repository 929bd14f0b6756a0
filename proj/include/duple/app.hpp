#pragma once

// Command-line front end: ingest, train, evaluate, explain.
//
// A run is configured by an optional flat JSON document (--config) whose keys
// are the long flag names with dashes replaced by underscores; flags given on
// the command line override it.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "duple/bundle.hpp"
#include "duple/model.hpp"
#include "duple/training.hpp"

namespace duple {

struct RunConfig {
  // ingest
  std::string format = "movielens";
  std::filesystem::path ratings;
  std::filesystem::path items;
  std::filesystem::path stopwords;
  double rating_threshold = 3.0;
  Index k_core = 10;
  double min_doc_frac = 0.001;
  bool exclude_years = false;
  bool skip_malformed = false;
  Index n_neg = 100;
  bool force = false;

  // model
  std::string variant = "full";
  Index raw_dim = 64;
  Index dim = 64;
  Index rank = 8;
  double jitter = 1e-3;
  double lambda = 0.5;

  // training
  double lr = 1e-4;
  Index batch_size = 256;
  Index steps = 50000;
  Index eval_every = 1000;
  Index log_every = 100;
  double clip_norm = 10.0;
  double table_std = 0.1;
  double head_std = 0.1;
  double attr_proj_std = 0.0;
  bool grid = false;
  std::vector<double> lambda_grid;
  std::vector<Index> rank_grid;

  // evaluate / explain
  std::string phase = "test";
  Index k = 10;
  std::string user;
  std::string item;
  bool by_index = false;
  Index r = 10;
  std::vector<std::string> heatmap;
  bool heatmap_random = false;

  std::uint64_t seed = 42;
  std::filesystem::path bundle;
  std::filesystem::path checkpoint;
  std::filesystem::path out;

  /// Re-checks every constraint of the underlying modules.  Throws
  /// UsageError.
  void validate() const;
};

/// Applies the keys of a flat JSON config file onto `config`.  Unknown keys
/// are a UsageError; a missing file is an InputError.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

IngestOptions ingest_options(const RunConfig& config);
ModelConfig model_config(const RunConfig& config, const Bundle& bundle);
TrainConfig train_config(const RunConfig& config);

/// Entry point; returns the process exit code (0 success, 1 usage, 2 input,
/// 3 integrity, 4 numerical).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace duple
