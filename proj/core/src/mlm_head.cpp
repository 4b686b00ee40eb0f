#include "capt/mlm_head.hpp"

#include "capt/error.hpp"

namespace capt {

MlmBatchLabels collect_mlm_labels(std::span<const CorruptedPair> pairs) {
  MlmBatchLabels labels;
  for (std::size_t b = 0; b < pairs.size(); ++b) {
    const auto& l = pairs[b].mlm_labels;
    for (std::size_t pos = 0; pos < l.size(); ++pos) {
      if (l[pos]) labels.push_back({b, pos, *l[pos]});
    }
  }
  return labels;
}

Var mlm_loss(Tape& tape, const ParamStore& params, const EncodedBatch& corrupted, const MlmBatchLabels& labels) {
  if (labels.empty()) throw ContractError("mlm_loss: no labeled positions");
  const std::size_t vocab = params.get("tok_emb").rows();
  std::vector<std::size_t> rows;
  std::vector<std::size_t> targets;
  rows.reserve(labels.size());
  targets.reserve(labels.size());
  for (const auto& l : labels) {
    if (l.batch >= corrupted.layout.sequences()) throw IndexError("mlm label batch index out of range");
    if (l.position >= corrupted.layout.segments[l.batch].length) throw IndexError("mlm label outside attention_len");
    if (l.id < 0 || static_cast<std::size_t>(l.id) >= vocab) throw IndexError("mlm label id outside vocabulary");
    rows.push_back(corrupted.layout.row(l.batch, l.position));
    targets.push_back(static_cast<std::size_t>(l.id));
  }
  Var h = ops::gather_rows(corrupted.hidden, rows);
  Var logits = ops::add_bias(ops::matmul_nt(h, params.bind(tape, "tok_emb")), params.bind(tape, "mlm.bias"));
  Var losses = ops::softmax_xent_rows(logits, targets);
  return ops::scale(ops::sum(losses), 1.0 / static_cast<double>(labels.size()));
}

double mlm_loss(const ParamStore& params, const Tensor& hidden_corrupted, std::span<const std::size_t> attention_lens,
                const MlmBatchLabels& labels) {
  Tape tape;
  return mlm_loss(tape, params, dense_batch(tape, hidden_corrupted, attention_lens), labels).value().item();
}

}  // namespace capt
