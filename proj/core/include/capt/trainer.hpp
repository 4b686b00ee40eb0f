#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "capt/checkpoint.hpp"
#include "capt/config.hpp"
#include "capt/contrastive.hpp"
#include "capt/corpus.hpp"
#include "capt/optimizer.hpp"
#include "capt/params.hpp"

namespace capt {

struct MetricsRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double tau = 0.0;
  double mlm_loss = 0.0;  // NaN when the step has no MLM term (shuffle noise)
  double capt_loss = 0.0;
  double total_loss = 0.0;
  double mean_pair_cosine = 0.0;
  std::uint64_t queue_fill = 0;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);
MetricsRow parse_metrics_row(const std::string& line);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// One pre-training run held in memory: parameters, optimizer, queue and data stream.
class Trainer {
 public:
  // `config.model.vocab_size` must equal `vocab.size()`.
  Trainer(RunConfig config, Vocabulary vocab, std::span<const std::string> corpus_lines);
  static Trainer resume(const Checkpoint& checkpoint, std::span<const std::string> corpus_lines);

  // Executes step t = step() + 1. Throws NumericError on a non-finite loss
  // before touching any state.
  MetricsRow train_step();

  Checkpoint checkpoint() const;

  std::uint64_t step() const { return step_; }
  const RunConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ParamStore& params() const { return params_; }
  const MemoryQueue& queue() const { return queue_; }
  const AdamState& adam_state() const { return adam_.state(); }

  double temperature(std::uint64_t t) const;
  double learning_rate(std::uint64_t t) const;

 private:
  Trainer(RunConfig config, Vocabulary vocab, ParamStore params, std::span<const std::string> corpus_lines);

  RunConfig config_;
  Vocabulary vocab_;
  ParamStore params_;
  Adam adam_;
  MemoryQueue queue_;
  BatchIterator batches_;
  std::uint64_t step_ = 0;
};

// Loads the corpus and the vocabulary (built from the corpus, capped at
// vocab_size, when `config.vocab` is empty) and sets model.vocab_size to the
// vocabulary's actual size.
struct PreparedRun {
  RunConfig config;
  Vocabulary vocab;
  std::vector<std::string> lines;
};
PreparedRun prepare_run(RunConfig config);

struct PretrainOptions {
  std::optional<std::filesystem::path> resume;
  std::ostream* log = nullptr;
  std::uint64_t log_every = 100;
};

struct PretrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics;
  std::vector<MetricsRow> rows;  // rows produced by this invocation
};

// Runs to total_steps, writing out_dir/metrics.csv (one flushed row per step),
// out_dir/vocab.txt and out_dir/checkpoint_<t>.capt every checkpoint_interval
// steps and at the end. On resume from step k, metrics rows after k are dropped
// before continuing.
PretrainResult run_pretrain(const RunConfig& config, const PretrainOptions& options = {});

}  // namespace capt
