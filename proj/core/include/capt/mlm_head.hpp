#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "capt/corruption.hpp"
#include "capt/encoder.hpp"

namespace capt {

struct MlmLabel {
  std::size_t batch = 0;
  std::size_t position = 0;
  std::int32_t id = 0;
};

using MlmBatchLabels = std::vector<MlmLabel>;

MlmBatchLabels collect_mlm_labels(std::span<const CorruptedPair> pairs);

// Mean softmax cross-entropy over labeled positions. Logits are the hidden
// vector times the transposed token embedding table plus mlm.bias.
// Throws ContractError on an empty label list.
Var mlm_loss(Tape& tape, const ParamStore& params, const EncodedBatch& corrupted, const MlmBatchLabels& labels);

double mlm_loss(const ParamStore& params, const Tensor& hidden_corrupted, std::span<const std::size_t> attention_lens,
                const MlmBatchLabels& labels);

}  // namespace capt
