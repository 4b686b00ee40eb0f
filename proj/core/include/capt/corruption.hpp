#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "capt/corpus.hpp"
#include "capt/rng.hpp"

namespace capt {

/// An input x, its corrupted version x-hat and the MLM targets.
struct CorruptedPair {
  TokenSequence original;
  TokenSequence corrupted;
  // Original id at every corrupted position under masking; all empty under shuffling.
  std::vector<std::optional<std::int32_t>> mlm_labels;

  std::size_t label_count() const;
};

// Positions strictly between [CLS] and [SEP].
std::vector<std::size_t> maskable_positions(const TokenSequence& seq);

// BERT-style masking: round(rate * maskable) positions (at least one when
// rate > 0) become [MASK] 80% / random non-special id 10% / unchanged 10%.
CorruptedPair mask_corrupt(const TokenSequence& seq, double rate, std::size_t vocab_size, Rng& rng);

// Independent uniform permutation inside consecutive windows of k maskable positions.
CorruptedPair shuffle_corrupt(const TokenSequence& seq, std::size_t window, Rng& rng);

}  // namespace capt
