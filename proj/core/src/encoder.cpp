#include "capt/encoder.hpp"

#include <algorithm>
#include <random>

#include "capt/error.hpp"

namespace capt {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (layers == 0) fail("layers must be at least 1");
  if (heads == 0 || hidden % heads != 0) fail("hidden must be divisible by heads");
  if (ffn_inner == 0 || agg_inner == 0) fail("inner sizes must be positive");
  if (agg_out != hidden) fail("agg_out must equal hidden");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (max_len < 3) fail("max_len must be at least 3");
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) fail("vocab_size must exceed the 5 special tokens");
  if (batch == 0) fail("batch must be at least 1");
  if (total_steps > 0 && !(warmup_steps > 0 && warmup_steps < total_steps)) fail("need 0 < warmup_steps < total_steps");
  if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0, 1)");
  }
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) fail("mask_rate must lie in [0, 1]");
  if (queue_capacity > 0 && 2 * batch > queue_capacity) fail("queue_capacity must hold one batch (2n entries)");
  if (!temperature_mode.adaptive && !(temperature_mode.fixed > 0.0)) fail("fixed temperature must be positive");
  if (noise_kind == NoiseKind::kShuffle && shuffle_window == 0) fail("shuffle window must be at least 1");
}

EncoderConfig EncoderConfig::capt_small() {
  EncoderConfig c;
  c.layers = 6;
  c.heads = 4;
  c.hidden = 256;
  c.ffn_inner = 1024;
  c.agg_inner = 1024;
  c.agg_out = 256;
  c.dropout = 0.1;
  c.max_len = 512;
  c.vocab_size = 50265;
  c.batch = 2048;
  c.total_steps = 200000;
  c.warmup_steps = 10000;
  c.peak_lr = 5e-4;
  c.weight_decay = 0.01;
  c.adam_eps = 1e-6;
  c.adam_beta1 = 0.9;
  c.adam_beta2 = 0.98;
  c.mask_rate = 0.15;
  c.queue_capacity = 8192;
  return c;
}

EncoderConfig EncoderConfig::capt_large() {
  EncoderConfig c = capt_small();
  c.layers = 24;
  c.heads = 16;
  c.hidden = 1024;
  c.ffn_inner = 4096;
  c.agg_inner = 4096;
  c.agg_out = 1024;
  c.batch = 8192;
  c.total_steps = 500000;
  c.warmup_steps = 30000;
  c.peak_lr = 6e-4;
  return c;
}

EncoderConfig EncoderConfig::desk() {
  EncoderConfig c = capt_small();
  c.max_len = 64;
  c.vocab_size = 8192;
  c.batch = 32;
  c.total_steps = 2000;
  c.warmup_steps = 100;
  c.queue_capacity = 1024;
  return c;
}

bool is_decayed(const Tensor& param) { return param.rank() == 2; }

ParamStore init_model_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = derive_rng(seed, 0x696e6974ULL);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto weight = [&](std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    for (double& v : t.data()) v = normal(rng);
    return t;
  };
  auto zeros = [](std::size_t n) { return Tensor({n}, 0.0); };
  auto ones = [](std::size_t n) { return Tensor({n}, 1.0); };

  const std::size_t d = config.hidden;
  const std::size_t f = config.ffn_inner;
  ParamStore p;
  p.add("tok_emb", weight(config.vocab_size, d));
  p.add("pos_emb", weight(config.max_len, d));
  p.add("emb_ln.gain", ones(d));
  p.add("emb_ln.bias", zeros(d));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    p.add(pre + "wq", weight(d, d));
    p.add(pre + "bq", zeros(d));
    p.add(pre + "wk", weight(d, d));
    p.add(pre + "wv", weight(d, d));
    p.add(pre + "bv", zeros(d));
    p.add(pre + "wo", weight(d, d));
    p.add(pre + "bo", zeros(d));
    p.add(pre + "ln1.gain", ones(d));
    p.add(pre + "ln1.bias", zeros(d));
    p.add(pre + "w1", weight(d, f));
    p.add(pre + "b1", zeros(f));
    p.add(pre + "w2", weight(f, d));
    p.add(pre + "b2", zeros(d));
    p.add(pre + "ln2.gain", ones(d));
    p.add(pre + "ln2.bias", zeros(d));
  }
  p.add("agg.w1", weight(d, config.agg_inner));
  p.add("agg.b1", zeros(config.agg_inner));
  p.add("agg.w2", weight(config.agg_inner, config.agg_out));
  p.add("agg.b2", zeros(config.agg_out));
  p.add("mlm.bias", zeros(config.vocab_size));
  return p;
}

std::size_t expected_parameter_count(const EncoderConfig& c) {
  const std::size_t d = c.hidden;
  const std::size_t f = c.ffn_inner;
  const std::size_t per_layer = 4 * d * d + 2 * d * f + f + 8 * d;
  return c.vocab_size * d + c.max_len * d + 2 * d + c.layers * per_layer + d * c.agg_inner + c.agg_inner +
         c.agg_inner * c.agg_out + c.agg_out + c.vocab_size;
}

EncodedBatch encode_packed(Tape& tape, const ParamStore& params, const EncoderConfig& config,
                           std::span<const TokenSequence> batch, bool train, Rng& rng) {
  if (batch.empty()) throw DimensionError("encode: empty batch");
  const Tensor& tok = params.get("tok_emb");
  if (tok.rows() != config.vocab_size || tok.cols() != config.hidden) {
    throw DimensionError("encode: token embedding " + shape_string(tok.shape()) + " does not match config");
  }

  EncodedBatch out;
  out.layout.max_len = batch[0].length();
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> positions;
  for (const auto& seq : batch) {
    if (seq.length() != out.layout.max_len) throw DimensionError("encode: sequences in a batch must share one length");
    if (seq.length() > config.max_len) throw DimensionError("encode: sequence longer than max_len");
    if (seq.attention_len < 1 || seq.attention_len > seq.length()) throw DimensionError("encode: bad attention_len");
    out.layout.segments.push_back({ids.size(), seq.attention_len});
    for (std::size_t i = 0; i < seq.attention_len; ++i) {
      ids.push_back(seq.ids[i]);
      positions.push_back(static_cast<std::int32_t>(i));
    }
  }

  auto w = [&](const std::string& name) { return params.bind(tape, name); };
  using namespace ops;
  Var x = add(embedding_gather(w("tok_emb"), ids), embedding_gather(w("pos_emb"), positions));
  x = dropout(layer_norm(x, w("emb_ln.gain"), w("emb_ln.bias")), config.dropout, train, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Var q = add_bias(matmul(x, w(pre + "wq")), w(pre + "bq"));
    Var k = matmul(x, w(pre + "wk"));
    Var v = add_bias(matmul(x, w(pre + "wv")), w(pre + "bv"));
    Var a = attention(q, k, v, out.layout.segments, config.heads);
    Var o = dropout(add_bias(matmul(a, w(pre + "wo")), w(pre + "bo")), config.dropout, train, rng);
    x = layer_norm(add(x, o), w(pre + "ln1.gain"), w(pre + "ln1.bias"));
    Var h = gelu(add_bias(matmul(x, w(pre + "w1")), w(pre + "b1")));
    Var f = dropout(add_bias(matmul(h, w(pre + "w2")), w(pre + "b2")), config.dropout, train, rng);
    x = layer_norm(add(x, f), w(pre + "ln2.gain"), w(pre + "ln2.bias"));
  }
  out.hidden = x;
  return out;
}

Tensor encode(const ParamStore& params, const EncoderConfig& config, std::span<const TokenSequence> batch, bool train,
              Rng& rng) {
  Tape tape;
  const EncodedBatch enc = encode_packed(tape, params, config, batch, train, rng);
  const std::size_t n = batch.size();
  const std::size_t m = enc.layout.max_len;
  const std::size_t d = config.hidden;
  Tensor out({n, m, d});
  const Tensor& h = enc.hidden.value();
  for (std::size_t b = 0; b < n; ++b) {
    const auto& seg = enc.layout.segments[b];
    std::copy_n(h.data().begin() + static_cast<std::ptrdiff_t>(seg.offset * d), seg.length * d,
                out.data().begin() + static_cast<std::ptrdiff_t>(b * m * d));
  }
  return out;
}

EncodedBatch dense_batch(Tape& tape, const Tensor& hidden, std::span<const std::size_t> attention_lens) {
  if (hidden.rank() != 3) throw DimensionError("dense_batch expects [n x m x d]");
  const std::size_t n = hidden.dim(0);
  const std::size_t m = hidden.dim(1);
  const std::size_t d = hidden.dim(2);
  if (attention_lens.size() != n) throw DimensionError("dense_batch: one attention_len per sequence");
  EncodedBatch out;
  out.layout.max_len = m;
  for (std::size_t b = 0; b < n; ++b) {
    if (attention_lens[b] < 1 || attention_lens[b] > m) throw DimensionError("dense_batch: bad attention_len");
    out.layout.segments.push_back({b * m, attention_lens[b]});
  }
  out.hidden = tape.constant(hidden.reshaped({n * m, d}));
  return out;
}

Var aggregate(Tape& tape, const ParamStore& params, const EncoderConfig& config, const EncodedBatch& encoded) {
  using namespace ops;
  const auto& segs = encoded.layout.segments;
  Var pooled;
  if (config.pooling == Pooling::kCls) {
    std::vector<std::size_t> rows;
    for (const auto& s : segs) rows.push_back(s.offset);
    pooled = gather_rows(encoded.hidden, rows);
  } else {
    Tensor weights({segs.size(), encoded.hidden.value().rows()});
    for (std::size_t b = 0; b < segs.size(); ++b) {
      for (std::size_t i = 0; i < segs[b].length; ++i) weights.at(b, segs[b].offset + i) = 1.0 / static_cast<double>(segs[b].length);
    }
    pooled = matmul(tape.constant(std::move(weights)), encoded.hidden);
  }
  auto w = [&](const std::string& name) { return params.bind(tape, name); };
  Var h = gelu(add_bias(matmul(pooled, w("agg.w1")), w("agg.b1")));
  Var s = add_bias(matmul(h, w("agg.w2")), w("agg.b2"));
  return l2_normalize_rows(s);
}

Tensor aggregate(const ParamStore& params, const EncoderConfig& config, const Tensor& hidden,
                 std::span<const std::size_t> attention_lens) {
  Tape tape;
  return aggregate(tape, params, config, dense_batch(tape, hidden, attention_lens)).value();
}

}  // namespace capt
