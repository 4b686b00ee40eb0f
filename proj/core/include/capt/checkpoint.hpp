#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capt/config.hpp"
#include "capt/optimizer.hpp"
#include "capt/params.hpp"

namespace capt {

/// Complete training state. Restoring it and continuing reproduces the
/// uninterrupted run bit for bit.
///
/// File layout, all integers u64 little-endian, all floats IEEE-754 binary64
/// little-endian, strings as (length, bytes):
///   "CAPT1" | config text | vocab tokens (count, strings)
///   | params (count, then name, rank, dims, values)
///   | step | adam step, m (count, named tensors), v (same)
///   | queue capacity, dim, rows, values | iterator rng state
struct Checkpoint {
  RunConfig config;
  std::vector<std::string> vocab_tokens;
  ParamStore params;
  std::uint64_t step = 0;
  AdamState adam;
  std::uint64_t queue_capacity = 0;
  std::uint64_t queue_dim = 0;
  std::vector<double> queue_rows;  // row-major, oldest first
  std::string iterator_state;
};

// Writes to a temporary sibling and renames, so a crash never leaves a torn file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::uint64_t step);

}  // namespace capt
