#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "capt/corpus.hpp"
#include "capt/ops.hpp"
#include "capt/params.hpp"
#include "capt/rng.hpp"

namespace capt {

enum class NoiseKind { kMask, kShuffle };
enum class Pooling { kCls, kMean };

struct TemperatureSetting {
  bool adaptive = true;
  double fixed = 0.05;  // used when !adaptive

  friend bool operator==(const TemperatureSetting&, const TemperatureSetting&) = default;
};

/// Architecture and optimization hyperparameters of one pre-training run.
struct EncoderConfig {
  std::size_t layers = 6;
  std::size_t heads = 4;
  std::size_t hidden = 256;
  std::size_t ffn_inner = 1024;
  std::size_t agg_inner = 1024;
  std::size_t agg_out = 256;
  double dropout = 0.1;
  std::size_t max_len = 64;
  std::size_t vocab_size = 8192;
  std::size_t batch = 32;
  std::size_t total_steps = 2000;
  std::size_t warmup_steps = 100;
  double peak_lr = 5e-4;
  double weight_decay = 0.01;
  double adam_eps = 1e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double mask_rate = 0.15;
  std::size_t queue_capacity = 1024;
  TemperatureSetting temperature_mode;
  NoiseKind noise_kind = NoiseKind::kMask;
  std::size_t shuffle_window = 3;
  std::uint64_t seed = 1;
  Pooling pooling = Pooling::kCls;

  // Throws ConfigError describing the first violated invariant.
  void validate() const;

  static EncoderConfig capt_small();
  static EncoderConfig capt_large();
  // CAPT-Small architecture at desk scale: m=64, n=32, T=2000, warmup 100, queue 1024.
  static EncoderConfig desk();

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Weights of the encoder, the aggregation MLP and the MLM output bias.
//
// tok_emb [V x d], pos_emb [m x d], emb_ln.{gain,bias}
// layer<l>.{wq,bq,wk,wv,bv,wo,bo,ln1.gain,ln1.bias,w1,b1,w2,b2,ln2.gain,ln2.bias}
// agg.{w1,b1,w2,b2}, mlm.bias [V]
//
// The key projection has no bias: it would shift every score of a query row
// by the same amount and cancel in the softmax.
ParamStore init_model_params(const EncoderConfig& config, std::uint64_t seed);

// Closed-form count matching init_model_params:
//   V*d + m*d + 2d + L*(4d^2 + 2*d*f + f + 8d) + d*a + a + a*o + o + V
std::size_t expected_parameter_count(const EncoderConfig& config);

// Weight matrices (rank 2) receive decoupled weight decay; biases and
// layer-norm parameters do not.
bool is_decayed(const Tensor& param);

/// Row layout of a packed [tokens x d] hidden matrix: one segment per sequence.
struct PackedLayout {
  std::vector<ops::Segment> segments;
  std::size_t max_len = 0;

  std::size_t sequences() const { return segments.size(); }
  std::size_t row(std::size_t seq, std::size_t position) const { return segments[seq].offset + position; }
};

struct EncodedBatch {
  Var hidden;  // [tokens x d], padding positions are not materialized
  PackedLayout layout;
};

// Post-norm transformer over the non-padding positions of each sequence.
// Dropout is active only when `train`; masks are drawn from `rng`.
EncodedBatch encode_packed(Tape& tape, const ParamStore& params, const EncoderConfig& config,
                           std::span<const TokenSequence> batch, bool train, Rng& rng);

// [n x m x d] with m = batch sequence length. Rows at padding positions are zero.
Tensor encode(const ParamStore& params, const EncoderConfig& config, std::span<const TokenSequence> batch,
              bool train, Rng& rng);

// View of a dense [n x m x d] hidden tensor as a packed batch.
EncodedBatch dense_batch(Tape& tape, const Tensor& hidden, std::span<const std::size_t> attention_lens);

// s(x): aggregation MLP (d -> agg_inner -> agg_out, GELU) on the [CLS] row, or
// on the mean of real tokens with Pooling::kMean, then l2-normalized.
Var aggregate(Tape& tape, const ParamStore& params, const EncoderConfig& config, const EncodedBatch& encoded);

Tensor aggregate(const ParamStore& params, const EncoderConfig& config, const Tensor& hidden,
                 std::span<const std::size_t> attention_lens);

}  // namespace capt
