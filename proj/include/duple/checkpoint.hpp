#pragma once

// Checkpoint directory: manifest.json (shape, variant, seeds, tensor table,
// vocabulary hash, payload checksum) and params.bin (float64 little-endian,
// column-major, tensors in manifest order).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duple/model.hpp"

namespace duple {

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::uint64_t vocabulary_hash = 0;
  Index best_step = 0;
  double best_val_mrr = 0.0;
  Index steps = 0;
};

struct Checkpoint {
  ModelParams params;
  CheckpointInfo info;
};

/// FNV-1a over the vocabulary, one newline-terminated entry at a time.
std::uint64_t vocabulary_hash(const std::vector<std::string>& vocabulary);

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                     const CheckpointInfo& info);

/// Throws InputError when files are missing and IntegrityError when the
/// manifest and payload disagree.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Throws IntegrityError when the checkpoint was not trained on a bundle with
/// these dimensions and vocabulary.
void check_matches_bundle(const Checkpoint& ckpt, Index n_users, Index n_items,
                          const std::vector<std::string>& vocabulary);

}  // namespace duple
