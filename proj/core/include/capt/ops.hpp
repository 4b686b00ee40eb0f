#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "capt/rng.hpp"
#include "capt/tape.hpp"

namespace capt::ops {

inline constexpr double kLayerNormEps = 1e-5;

// Linear algebra.
Var matmul(Var a, Var b);     // [p x q] * [q x r]
Var matmul_nt(Var a, Var b);  // [p x q] * [r x q]^T

// Elementwise; shapes must match exactly or one operand must be a scalar.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var add_bias(Var x, Var bias);  // bias has shape {last dim of x}
Var relu(Var x);
Var gelu(Var x);
Var log(Var x);

// Inverted dropout. Identity when !train or rate == 0; the mask is drawn from rng.
Var dropout(Var x, double rate, bool train, Rng& rng);
Tensor draw_dropout_mask(const Shape& shape, double rate, Rng& rng);
// Multiplies by a pre-drawn mask scaled by 1/(1-rate).
Var apply_dropout_mask(Var x, const Tensor& mask, double rate);

// Row-wise normalizations.
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);
// Throws DegenerateRowError when a row has norm <= 1e-12.
Var l2_normalize_rows(Var x);

// Indexing.
Var embedding_gather(Var table, std::span<const std::int32_t> ids);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
Var pick(Var x, std::span<const std::size_t> flat_indices);  // -> [k]

// Reductions.
Var sum(Var x);

// Stops gradient flow; the result is a constant copy.
Var detach(Var x);

/// Contiguous row range [offset, offset + length) of a packed token matrix.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Multi-head scaled dot-product self-attention over packed sequences.
// q, k, v are [tokens x d]; each segment attends only within itself.
Var attention(Var q, Var k, Var v, std::span<const Segment> segments, std::size_t heads);

// Per-row softmax cross-entropy: loss_r = logsumexp_{c not excluded} x[r,c] - x[r, target_r].
// exclude[r] < 0 means no excluded column for that row. Returns [rows].
Var softmax_xent_rows(Var logits, std::span<const std::size_t> targets,
                      std::span<const std::ptrdiff_t> exclude = {});

}  // namespace capt::ops
