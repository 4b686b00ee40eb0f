#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capt/config.hpp"
#include "capt/corpus.hpp"
#include "capt/encoder.hpp"
#include "capt/params.hpp"

namespace capt {

/// Word inventory shared by the synthetic pre-training corpus and the probe:
/// `topics` disjoint topic vocabularies plus shared filler words.
struct SyntheticLexicon {
  std::size_t topics = 8;
  std::size_t words_per_topic = 16;
  std::size_t fillers = 32;

  std::string topic_word(std::size_t topic, std::size_t j) const;
  std::string filler_word(std::size_t j) const;
};

/// Unlabeled topical text with local structure for MLM to pick up: each token
/// continues its word chain (topic or filler) with probability `chain_prob`,
/// otherwise restarts with a topic word at rate `topic_rate` or a filler.
struct TopicCorpusOptions {
  std::size_t lines = 20000;
  std::size_t min_words = 5;
  std::size_t max_words = 10;
  double topic_rate = 0.35;
  double chain_prob = 0.75;
  std::uint64_t seed = 7;
};

std::vector<std::string> generate_topic_corpus(const SyntheticLexicon& lexicon, const TopicCorpusOptions& options);

/// Two-class task: class c draws topic words from topic `class_topics[c]` at
/// rate rho; every other word is a shared filler.
struct ProbeTask {
  SyntheticLexicon lexicon;
  std::size_t class_topics[2] = {0, 1};
  double rho = 0.35;
  std::size_t min_words = 5;
  std::size_t max_words = 10;
};

struct LabeledSet {
  std::vector<std::string> texts;
  std::vector<int> labels;
};

struct ProbeDatasets {
  LabeledSet train;
  LabeledSet val;
};

// Exactly half of each split per class; no validation sentence occurs in train.
// Throws ConfigError when a split size is odd.
ProbeDatasets generate_probe_data(const ProbeTask& task, std::size_t n_train, std::size_t n_val, std::uint64_t seed);

void write_labeled_set(const LabeledSet& set, const std::filesystem::path& texts, const std::filesystem::path& labels);
LabeledSet read_labeled_set(const std::filesystem::path& texts, const std::filesystem::path& labels);

struct FinetuneOptions {
  std::size_t steps = 150;
  std::size_t batch = 32;
  std::size_t eval_interval = 10;
  double lr = 0.0;  // 0 selects peak_lr / 5
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

// Fine-tuning settings of a run config, with the given seed.
FinetuneOptions finetune_options(const RunConfig& config, std::uint64_t seed);

/// Validation accuracy recorded every eval_interval steps.
struct ProbeCurve {
  double initial_accuracy = 0.0;
  std::vector<std::size_t> steps;
  std::vector<double> accuracy;

  // First recorded step with accuracy >= threshold.
  std::optional<std::size_t> steps_to(double threshold) const;
};

struct PretrainedModel {
  const ParamStore& params;
  const EncoderConfig& config;
  std::uint64_t vocab_fingerprint = 0;
};

// Fine-tunes all encoder parameters plus a fresh d -> d -> 2 GELU head on the
// [CLS] representation. Throws ConfigError when `vocab` is not the vocabulary
// the model was trained with.
ProbeCurve finetune(const PretrainedModel& model, const Vocabulary& vocab, const ProbeDatasets& data,
                    const FinetuneOptions& options);

struct CurveComparison {
  std::vector<std::optional<std::size_t>> steps_a;  // per seed
  std::vector<std::optional<std::size_t>> steps_b;
  std::optional<double> median_a;  // nullopt: median run never reached the threshold
  std::optional<double> median_b;
  std::vector<std::size_t> steps;
  std::vector<double> median_delta;  // per recorded step, median acc_a minus median acc_b
  int winner = 0;                    // -1: a, +1: b, 0: tie
  double median_final_a = 0.0;
  double median_final_b = 0.0;
};

CurveComparison compare_runs(std::span<const ProbeCurve> a, std::span<const ProbeCurve> b, double threshold);

std::string format_comparison(const CurveComparison& cmp, const std::string& name_a, const std::string& name_b,
                              double threshold);
void write_curves_csv(const std::filesystem::path& path, std::span<const ProbeCurve> curves, const std::string& label);

double median(std::vector<double> values);

}  // namespace capt
