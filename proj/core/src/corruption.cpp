#include "capt/corruption.hpp"

#include <algorithm>
#include <cmath>

#include "capt/error.hpp"

namespace capt {

std::size_t CorruptedPair::label_count() const {
  return static_cast<std::size_t>(std::count_if(mlm_labels.begin(), mlm_labels.end(), [](const auto& l) { return l.has_value(); }));
}

std::vector<std::size_t> maskable_positions(const TokenSequence& seq) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i + 1 < seq.attention_len; ++i) out.push_back(i);
  return out;
}

CorruptedPair mask_corrupt(const TokenSequence& seq, double rate, std::size_t vocab_size, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw CorruptionError("mask rate must lie in [0, 1]");
  auto positions = maskable_positions(seq);
  if (positions.empty()) throw CorruptionError("sequence has no maskable positions");
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) throw CorruptionError("vocabulary has no non-special tokens");

  CorruptedPair pair{seq, seq, std::vector<std::optional<std::int32_t>>(seq.length())};
  if (rate == 0.0) return pair;

  auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(positions.size())));
  count = std::clamp<std::size_t>(count, 1, positions.size());

  // Partial Fisher-Yates: the first `count` entries form a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + uniform_index(rng, positions.size() - i);
    std::swap(positions[i], positions[j]);
  }
  positions.resize(count);
  std::sort(positions.begin(), positions.end());

  const std::size_t regular = vocab_size - static_cast<std::size_t>(kNumSpecials);
  for (std::size_t pos : positions) {
    pair.mlm_labels[pos] = seq.ids[pos];
    const double u = uniform01(rng);
    if (u < 0.8) {
      pair.corrupted.ids[pos] = kMaskId;
    } else if (u < 0.9) {
      pair.corrupted.ids[pos] = kNumSpecials + static_cast<std::int32_t>(uniform_index(rng, regular));
    }
  }
  return pair;
}

CorruptedPair shuffle_corrupt(const TokenSequence& seq, std::size_t window, Rng& rng) {
  if (window == 0) throw CorruptionError("shuffle window must be at least 1");
  CorruptedPair pair{seq, seq, std::vector<std::optional<std::int32_t>>(seq.length())};
  const auto positions = maskable_positions(seq);
  for (std::size_t start = 0; start < positions.size(); start += window) {
    const std::size_t end = std::min(start + window, positions.size());
    // Fisher-Yates inside [start, end).
    for (std::size_t i = end - 1; i > start; --i) {
      const std::size_t j = start + uniform_index(rng, i - start + 1);
      std::swap(pair.corrupted.ids[positions[i]], pair.corrupted.ids[positions[j]]);
    }
  }
  return pair;
}

}  // namespace capt
