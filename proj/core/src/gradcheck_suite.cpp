#include "capt/gradcheck_suite.hpp"

#include <cmath>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "capt/contrastive.hpp"
#include "capt/corruption.hpp"
#include "capt/encoder.hpp"
#include "capt/grad_check.hpp"
#include "capt/mlm_head.hpp"

namespace capt {

namespace {

constexpr double kTamper = 1e-3;
constexpr double kStep = 1e-5;

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(shape);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

Tensor unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Tensor t = random_tensor({n, d}, rng);
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (double v : t.row(r)) sq += v * v;
    const double inv = 1.0 / std::sqrt(sq);
    for (double& v : t.row(r)) v *= inv;
  }
  return t;
}

void tamper_all(Gradients& g) {
  for (auto& [name, t] : g) {
    for (double& v : t.data()) v += kTamper;
  }
}

GradCheckOptions options(bool corrupt) {
  GradCheckOptions o;
  if (corrupt) o.tamper = tamper_all;
  return o;
}

// Instance loss in extended precision with s_i[k] shifted by delta.
long double instance_loss_ld(const Tensor& s, const Tensor& s_hat, double tau, std::size_t i, std::size_t k,
                             long double delta) {
  const std::size_t n = s.rows();
  const std::size_t d = s.cols();
  std::vector<long double> si(d);
  for (std::size_t c = 0; c < d; ++c) si[c] = s.at(i, c);
  si[k] += delta;
  auto dot = [&](const Tensor& m, std::size_t r) {
    long double acc = 0.0L;
    for (std::size_t c = 0; c < d; ++c) acc += si[c] * static_cast<long double>(m.at(r, c));
    return acc / static_cast<long double>(tau);
  };
  std::vector<long double> logits;
  for (std::size_t j = 0; j < n; ++j) {
    logits.push_back(dot(s_hat, j));
    if (j != i) logits.push_back(dot(s, j));
  }
  long double mx = logits.front();
  for (long double v : logits) mx = std::max(mx, v);
  long double z = 0.0L;
  for (long double v : logits) z += std::exp(v - mx);
  return mx + std::log(z) - dot(s_hat, i);
}

// Central differences refined by Richardson extrapolation (Ridders).
double ridders_derivative(const Tensor& s, const Tensor& s_hat, double tau, std::size_t i, std::size_t k) {
  constexpr int kTable = 10;
  constexpr long double kShrink = 1.4L;
  constexpr long double kShrink2 = kShrink * kShrink;
  long double h = 0.1L * static_cast<long double>(tau);
  long double a[kTable][kTable];
  auto central = [&](long double step) {
    return (instance_loss_ld(s, s_hat, tau, i, k, step) - instance_loss_ld(s, s_hat, tau, i, k, -step)) /
           (2.0L * step);
  };
  a[0][0] = central(h);
  long double best = a[0][0];
  long double err = std::numeric_limits<long double>::max();
  for (int r = 1; r < kTable; ++r) {
    h /= kShrink;
    a[0][r] = central(h);
    long double fac = kShrink2;
    for (int c = 1; c <= r; ++c) {
      a[c][r] = (a[c - 1][r] * fac - a[c - 1][r - 1]) / (fac - 1.0L);
      fac *= kShrink2;
      const long double e = std::max(std::abs(a[c][r] - a[c - 1][r]), std::abs(a[c][r] - a[c - 1][r - 1]));
      if (e <= err) {
        err = e;
        best = a[c][r];
      }
    }
    if (std::abs(a[r][r] - a[r - 1][r - 1]) >= 2.0L * err) break;
  }
  return static_cast<double>(best);
}

ClosedFormCheck closed_form_check_impl(std::size_t n, std::size_t d, double tau, Rng& rng, bool corrupt) {
  const Tensor s = unit_rows(n, d, rng);
  const Tensor s_hat = unit_rows(n, d, rng);
  ClosedFormCheck out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor closed = capt_grad_closed_form(s, s_hat, tau, i);
    if (corrupt) {
      for (double& v : closed.data()) v += kTamper;
    }

    Tape tape;
    Var sv = tape.parameter("s", s);
    Var loss = capt_instance_loss(tape, sv, tape.constant(s_hat), std::nullopt, tau, i, CaptSide::kOriginal);
    const Tensor grad = tape.backward(loss).at("s");
    for (std::size_t k = 0; k < d; ++k) {
      out.max_abs_vs_autodiff = std::max(out.max_abs_vs_autodiff, std::abs(closed[k] - grad.at(i, k)));
    }

    for (std::size_t k = 0; k < d; ++k) {
      const double numeric = ridders_derivative(s, s_hat, tau, i, k);
      out.max_rel_vs_numeric = std::max({out.max_rel_vs_numeric, relative_error(closed[k], numeric),
                                         relative_error(grad.at(i, k), numeric)});
    }
  }
  return out;
}

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 8;
  c.ffn_inner = 12;
  c.agg_inner = 10;
  c.agg_out = 8;
  c.dropout = 0.1;
  c.max_len = 8;
  c.vocab_size = 12;
  c.batch = 2;
  c.queue_capacity = 0;
  return c;
}

// Weights at the default 0.02 scale leave many gradient entries near the
// finite-difference noise floor; a wider init keeps the check informative.
ParamStore tiny_params(const EncoderConfig& c, std::uint64_t seed) {
  ParamStore p = init_model_params(c, seed);
  Rng rng = derive_rng(seed, 99);
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (const auto& name : p.names()) {
    Tensor& t = p.get(name);
    for (double& v : t.data()) v = t.rank() == 2 ? v * 20.0 : v + jitter(rng);
  }
  return p;
}

std::vector<TokenSequence> tiny_batch() {
  TokenSequence a{{kClsId, 5, 6, 7, 8, kSepId, kPadId, kPadId}, 6};
  TokenSequence b{{kClsId, 9, 10, 11, kSepId, kPadId, kPadId, kPadId}, 5};
  return {a, b};
}

}  // namespace

ClosedFormCheck closed_form_check(std::size_t n, std::size_t d, double tau, Rng& rng) {
  return closed_form_check_impl(n, d, tau, rng, false);
}

bool GradCheckReport::passed() const {
  for (const auto& e : entries) {
    if (!e.passed()) return false;
  }
  return !entries.empty();
}

std::string GradCheckReport::format() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    char line[160];
    std::snprintf(line, sizeof line, "%-40s %s err %.3e  (< %.0e)  %s\n", e.name.c_str(), e.metric.c_str(), e.error,
                  e.threshold, e.passed() ? "ok" : "FAIL");
    os << line;
  }
  os << (passed() ? "all checks passed\n" : "gradient check FAILED\n");
  return os.str();
}

GradCheckReport run_gradcheck_suite(std::uint64_t seed, bool corrupt) {
  GradCheckReport report;
  Rng rng = derive_rng(seed, 0x6763);
  const GradCheckOptions opt = options(corrupt);
  auto check = [&](const std::string& name, ParamStore params, const LossBuilder& f, double threshold,
                   double step = kStep) {
    GradCheckOptions o = opt;
    o.step = step;
    const auto r = grad_check(f, params, o);
    report.entries.push_back({name, r.max_rel_error, threshold, "rel"});
  };
  using namespace ops;

  {
    ParamStore p;
    p.add("a", random_tensor({3, 4}, rng));
    p.add("b", random_tensor({4, 2}, rng));
    check("matmul", p, [](Tape& t, const ParamStore& ps) { return sum(matmul(ps.bind(t, "a"), ps.bind(t, "b"))); },
          1e-7, 1e-6);
  }
  {
    ParamStore p;
    p.add("x", random_tensor({4, 7}, rng));
    const Tensor w = random_tensor({4, 7}, rng);
    check("softmax_rows", p,
          [w](Tape& t, const ParamStore& ps) { return sum(mul(softmax_rows(ps.bind(t, "x")), t.constant(w))); }, 1e-7);
  }
  {
    ParamStore p;
    p.add("x", random_tensor({2, 8}, rng));
    p.add("gain", random_tensor({8}, rng));
    p.add("bias", random_tensor({8}, rng));
    const Tensor w = random_tensor({2, 8}, rng);
    check("layer_norm", p,
          [w](Tape& t, const ParamStore& ps) {
            return sum(mul(layer_norm(ps.bind(t, "x"), ps.bind(t, "gain"), ps.bind(t, "bias")), t.constant(w)));
          },
          1e-6);
  }
  {
    ParamStore p;
    p.add("x", random_tensor({5, 16}, rng));
    const Tensor w = random_tensor({5, 16}, rng);
    check("l2_normalize_rows", p,
          [w](Tape& t, const ParamStore& ps) { return sum(mul(l2_normalize_rows(ps.bind(t, "x")), t.constant(w))); },
          1e-6);
  }
  {
    ParamStore p;
    p.add("table", random_tensor({6, 3}, rng));
    const Tensor w = random_tensor({5, 3}, rng);
    check("embedding_gather", p,
          [w](Tape& t, const ParamStore& ps) {
            const std::vector<std::int32_t> ids = {0, 3, 3, 5, 1};
            return sum(mul(embedding_gather(ps.bind(t, "table"), ids), t.constant(w)));
          },
          1e-8);
  }
  {
    ParamStore p;
    p.add("x", random_tensor({3, 5}, rng));
    p.add("b", random_tensor({5}, rng));
    const Tensor w = random_tensor({3, 5}, rng);
    check("gelu + add_bias", p,
          [w](Tape& t, const ParamStore& ps) {
            return sum(mul(gelu(add_bias(ps.bind(t, "x"), ps.bind(t, "b"))), t.constant(w)));
          },
          1e-6);
  }
  {
    ParamStore p;
    p.add("q", random_tensor({7, 6}, rng));
    p.add("k", random_tensor({7, 6}, rng));
    p.add("v", random_tensor({7, 6}, rng));
    const Tensor w = random_tensor({7, 6}, rng);
    check("attention (packed, 2 heads)", p,
          [w](Tape& t, const ParamStore& ps) {
            const std::vector<Segment> segs = {{0, 4}, {4, 3}};
            return sum(mul(attention(ps.bind(t, "q"), ps.bind(t, "k"), ps.bind(t, "v"), segs, 2), t.constant(w)));
          },
          1e-6);
  }
  {
    ParamStore p;
    p.add("x", random_tensor({3, 4}, rng));
    p.add("w", random_tensor({4, 5}, rng));
    check("matmul -> softmax -> xent", p,
          [](Tape& t, const ParamStore& ps) {
            const std::vector<std::size_t> targets = {0, 4, 2};
            const std::vector<std::ptrdiff_t> exclude = {3, -1, 0};
            return sum(softmax_xent_rows(matmul(ps.bind(t, "x"), ps.bind(t, "w")), targets, exclude));
          },
          1e-6);
  }

  {
    ClosedFormCheck worst;
    for (int b = 0; b < 5; ++b) {
      const ClosedFormCheck c = closed_form_check_impl(4, 8, 0.1 + 0.1 * b, rng, corrupt);
      worst.max_abs_vs_autodiff = std::max(worst.max_abs_vs_autodiff, c.max_abs_vs_autodiff);
      worst.max_rel_vs_numeric = std::max(worst.max_rel_vs_numeric, c.max_rel_vs_numeric);
    }
    report.entries.push_back({"closed form vs reverse mode", worst.max_abs_vs_autodiff, 1e-10, "abs"});
    report.entries.push_back({"closed form vs finite differences", worst.max_rel_vs_numeric, 1e-6, "rel"});
  }
  {
    ParamStore p;
    p.add("s", random_tensor({3, 6}, rng));
    p.add("s_hat", random_tensor({3, 6}, rng));
    const Tensor queue = unit_rows(4, 6, rng);
    check("capt_loss with queue", p,
          [queue](Tape& t, const ParamStore& ps) {
            return capt_loss(t, l2_normalize_rows(ps.bind(t, "s")), l2_normalize_rows(ps.bind(t, "s_hat")),
                             std::optional<Tensor>(queue), 0.2);
          },
          1e-6);
  }

  const EncoderConfig cfg = tiny_config();
  const ParamStore model = tiny_params(cfg, seed);
  const std::vector<TokenSequence> batch = tiny_batch();
  {
    ParamStore p;
    p.add("h", random_tensor({6, cfg.hidden}, rng));
    p.add("tok_emb", random_tensor({cfg.vocab_size, cfg.hidden}, rng));
    p.add("mlm.bias", random_tensor({cfg.vocab_size}, rng));
    check("mlm_loss", p,
          [](Tape& t, const ParamStore& ps) {
            EncodedBatch enc;
            enc.hidden = ps.bind(t, "h");
            enc.layout.segments = {{0, 4}, {4, 2}};
            enc.layout.max_len = 4;
            const MlmBatchLabels labels = {{0, 1, 7}, {0, 2, 5}, {1, 1, 9}};
            return mlm_loss(t, ps, enc, labels);
          },
          1e-6);
  }
  check("capt on a 2-sequence batch", model,
        [cfg, batch](Tape& t, const ParamStore& ps) {
          Rng r1 = derive_rng(7, 1);
          Rng r2 = derive_rng(7, 2);
          std::vector<TokenSequence> corrupted = batch;
          corrupted[0].ids[2] = kMaskId;
          corrupted[1].ids[1] = kMaskId;
          Var s = aggregate(t, ps, cfg, encode_packed(t, ps, cfg, batch, true, r1));
          Var s_hat = aggregate(t, ps, cfg, encode_packed(t, ps, cfg, corrupted, true, r2));
          return capt_loss(t, s, s_hat, std::optional<Tensor>(), 0.3);
        },
        1e-6);
  check("full model (capt + mlm, dropout frozen)", model,
        [cfg, batch](Tape& t, const ParamStore& ps) {
          Rng corrupt = derive_rng(7, 0);
          std::vector<CorruptedPair> pairs;
          std::vector<TokenSequence> corrupted;
          for (const auto& seq : batch) {
            pairs.push_back(mask_corrupt(seq, 0.3, cfg.vocab_size, corrupt));
            corrupted.push_back(pairs.back().corrupted);
          }
          Rng r1 = derive_rng(7, 1);
          Rng r2 = derive_rng(7, 2);
          const EncodedBatch ex = encode_packed(t, ps, cfg, batch, true, r1);
          const EncodedBatch exh = encode_packed(t, ps, cfg, corrupted, true, r2);
          Var capt = capt_loss(t, aggregate(t, ps, cfg, ex), aggregate(t, ps, cfg, exh), std::optional<Tensor>(), 0.3);
          return add(capt, mlm_loss(t, ps, exh, collect_mlm_labels(pairs)));
        },
        1e-5);
  return report;
}

}  // namespace capt
