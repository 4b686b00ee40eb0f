#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capt/encoder.hpp"

namespace capt {

/// Everything one `pretrain` or `probe` invocation needs.
struct RunConfig {
  EncoderConfig model = EncoderConfig::desk();

  std::filesystem::path corpus;
  std::filesystem::path vocab;  // built from the corpus (capped at vocab_size) when empty
  std::filesystem::path out_dir = "run";
  std::size_t checkpoint_interval = 500;
  double capt_weight = 1.0;
  bool capt_average = true;  // divide the batch CAPT loss by 2n

  std::filesystem::path probe_train;
  std::filesystem::path probe_train_labels;
  std::filesystem::path probe_val;
  std::filesystem::path probe_val_labels;
  std::size_t finetune_steps = 150;
  double finetune_lr = 0.0;  // 0 selects peak_lr / 5
  std::size_t finetune_batch = 32;
  std::size_t eval_interval = 10;
  std::size_t probe_seeds = 5;
  double probe_threshold = 0.9;

  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// `key = value` lines, `#` comments. A `preset` key (desk, capt_small,
// capt_large) is applied before every other key regardless of its position.
// Relative paths resolve against `base_dir`. Unknown keys raise one
// ConfigError naming all of them.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

// Round-trips through parse_config with absolute paths preserved.
std::string serialize_config(const RunConfig& config);

std::vector<std::string> config_keys();

}  // namespace capt
