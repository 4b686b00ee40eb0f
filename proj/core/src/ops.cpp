#include "capt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <limits>
#include <string>

#include "capt/error.hpp"
#include "eigen_view.hpp"

namespace capt::ops {

using detail::as_matrix;
using detail::as_vector;
using detail::RowMatrix;

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.is_scalar()) return Broadcast::kRightScalar;
  if (a.is_scalar()) return Broadcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, Broadcast kind, F f) {
  Tensor out(kind == Broadcast::kLeftScalar ? b.shape() : a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == Broadcast::kLeftScalar ? a[0] : a[i];
    const double y = kind == Broadcast::kRightScalar ? b[0] : b[i];
    out[i] = f(x, y);
  }
  return out;
}

// Adds `g` into `dst`, summing everything when dst is the broadcast scalar.
void accumulate(Tensor* dst, const Tensor& g, bool reduce_to_scalar) {
  if (!dst) return;
  if (reduce_to_scalar) {
    double s = 0.0;
    for (double v : g.data()) s += v;
    (*dst)[0] += s;
  } else {
    as_vector(*dst) += as_vector(g);
  }
}

template <typename F, typename D>
Var unary(Var x, F f, D dfdx) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return x.tape().record(std::move(out), {x}, [x, dfdx](const Tensor& g, GradSink& sink) {
    Tensor* gx = sink.grad(0);
    if (!gx) return;
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * dfdx(xv[i]);
  });
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_string(av.shape()) + " * " +
                         shape_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g, GradSink& sink) {
    if (Tensor* ga = sink.grad(0)) as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(b.value()).transpose();
    if (Tensor* gb = sink.grad(1)) as_matrix(*gb).noalias() += as_matrix(a.value()).transpose() * as_matrix(g);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul_nt");
  require_rank2(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ: " + shape_string(av.shape()) + " * " +
                         shape_string(bv.shape()) + "^T");
  }
  Tensor out({av.rows(), bv.rows()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv).transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g, GradSink& sink) {
    if (Tensor* ga = sink.grad(0)) as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(b.value());
    if (Tensor* gb = sink.grad(1)) as_matrix(*gb).noalias() += as_matrix(g).transpose() * as_matrix(a.value());
  });
}

Var add(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "add");
  Tensor out = zip(a.value(), b.value(), kind, [](double x, double y) { return x + y; });
  return a.tape().record(std::move(out), {a, b}, [kind](const Tensor& g, GradSink& sink) {
    accumulate(sink.grad(0), g, kind == Broadcast::kLeftScalar);
    accumulate(sink.grad(1), g, kind == Broadcast::kRightScalar);
  });
}

Var sub(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "sub");
  Tensor out = zip(a.value(), b.value(), kind, [](double x, double y) { return x - y; });
  return a.tape().record(std::move(out), {a, b}, [kind](const Tensor& g, GradSink& sink) {
    accumulate(sink.grad(0), g, kind == Broadcast::kLeftScalar);
    if (Tensor* gb = sink.grad(1)) {
      Tensor neg(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
      accumulate(gb, neg, kind == Broadcast::kRightScalar);
    }
  });
}

Var mul(Var a, Var b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "mul");
  Tensor out = zip(a.value(), b.value(), kind, [](double x, double y) { return x * y; });
  return a.tape().record(std::move(out), {a, b}, [a, b, kind](const Tensor& g, GradSink& sink) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (Tensor* ga = sink.grad(0)) {
      accumulate(ga, zip(g, bv, kind == Broadcast::kRightScalar ? kind : Broadcast::kNone,
                         [](double x, double y) { return x * y; }),
                 kind == Broadcast::kLeftScalar);
    }
    if (Tensor* gb = sink.grad(1)) {
      accumulate(gb, zip(g, av, kind == Broadcast::kLeftScalar ? Broadcast::kRightScalar : Broadcast::kNone,
                         [](double x, double y) { return x * y; }),
                 kind == Broadcast::kRightScalar);
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  as_vector(out) *= factor;
  return x.tape().record(std::move(out), {x}, [factor](const Tensor& g, GradSink& sink) {
    if (Tensor* gx = sink.grad(0)) as_vector(*gx) += factor * as_vector(g);
  });
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || bv.size() != xv.shape().back()) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match " + shape_string(xv.shape()));
  }
  Tensor out = xv;
  as_matrix(out).rowwise() += as_vector(bv).transpose();
  return x.tape().record(std::move(out), {x, bias}, [](const Tensor& g, GradSink& sink) {
    if (Tensor* gx = sink.grad(0)) as_vector(*gx) += as_vector(g);
    if (Tensor* gb = sink.grad(1)) as_vector(*gb) += as_matrix(g).colwise().sum().transpose();
  });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  Tensor slope(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    const double cdf = normal_cdf(v);
    out[i] = v * cdf;
    slope[i] = cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  }
  return x.tape().record(std::move(out), {x}, [slope = std::move(slope)](const Tensor& g, GradSink& sink) {
    if (Tensor* gx = sink.grad(0)) as_vector(*gx).array() += as_vector(g).array() * as_vector(slope).array();
  });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw ContractError("log of a non-positive value");
  }
  return unary(
      x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor draw_dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must lie in [0, 1)");
  Tensor mask(shape);
  for (double& m : mask.data()) m = uniform01(rng) >= rate ? 1.0 : 0.0;
  return mask;
}

Var apply_dropout_mask(Var x, const Tensor& mask, double rate) {
  if (mask.shape() != x.value().shape()) throw DimensionError("dropout mask shape mismatch");
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must lie in [0, 1)");
  Tensor scaled = mask;
  as_vector(scaled) *= 1.0 / (1.0 - rate);
  Tensor out = x.value();
  as_vector(out).array() *= as_vector(scaled).array();
  return x.tape().record(std::move(out), {x}, [scaled = std::move(scaled)](const Tensor& g, GradSink& sink) {
    if (Tensor* gx = sink.grad(0)) as_vector(*gx).array() += as_vector(g).array() * as_vector(scaled).array();
  });
}

Var dropout(Var x, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must lie in [0, 1)");
  if (!train || rate == 0.0) return x;
  return apply_dropout_mask(x, draw_dropout_mask(x.value().shape(), rate, rng), rate);
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto in = as_matrix(xv);
  auto y = as_matrix(out);
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mx = in.row(r).maxCoeff();
    y.row(r) = (in.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  auto saved = std::make_shared<const Tensor>(out);
  return x.tape().record(std::move(out), {x}, [saved](const Tensor& g, GradSink& sink) {
    Tensor* gx = sink.grad(0);
    if (!gx) return;
    auto yv = as_matrix(*saved);
    auto gm = as_matrix(g);
    auto dx = as_matrix(*gx);
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      const double dot = gm.row(r).dot(yv.row(r));
      dx.row(r).array() += yv.row(r).array() * (gm.row(r).array() - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm eps must be positive");
  auto in = as_matrix(xv);
  const Eigen::Index rows = in.rows();
  auto xhat = std::make_shared<RowMatrix>(rows, static_cast<Eigen::Index>(d));
  auto rstd = std::make_shared<Eigen::VectorXd>(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().mean();
    (*rstd)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (in.row(r).array() - mean) * (*rstd)(r);
  }
  Tensor out(xv.shape());
  auto y = as_matrix(out);
  y = (xhat->array().rowwise() * as_vector(gain.value()).transpose().array()).rowwise() +
      as_vector(bias.value()).transpose().array();
  return x.tape().record(std::move(out), {x, gain, bias}, [gain, xhat, rstd](const Tensor& g, GradSink& sink) {
    auto gm = as_matrix(g);
    if (Tensor* gg = sink.grad(1)) as_vector(*gg) += (gm.array() * xhat->array()).colwise().sum().transpose().matrix();
    if (Tensor* gb = sink.grad(2)) as_vector(*gb) += gm.colwise().sum().transpose();
    if (Tensor* gx = sink.grad(0)) {
      auto dx = as_matrix(*gx);
      const auto gamma = as_vector(gain.value()).transpose().array();
      for (Eigen::Index r = 0; r < gm.rows(); ++r) {
        const Eigen::ArrayXd dxhat = (gm.row(r).array() * gamma).transpose();
        const Eigen::ArrayXd xh = xhat->row(r).array().transpose();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xh).mean();
        dx.row(r).array() += ((dxhat - m1 - xh * m2) * (*rstd)(r)).transpose();
      }
    }
  });
}

Var l2_normalize_rows(Var x) {
  const Tensor& xv = x.value();
  auto in = as_matrix(xv);
  auto norms = std::make_shared<Eigen::VectorXd>(in.rows());
  Tensor out(xv.shape());
  auto y = as_matrix(out);
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double n = in.row(r).norm();
    if (!(n > 1e-12)) throw DegenerateRowError("l2_normalize_rows: row " + std::to_string(r) + " has norm " + std::to_string(n));
    (*norms)(r) = n;
    y.row(r) = in.row(r) / n;
  }
  auto saved = std::make_shared<const Tensor>(out);
  return x.tape().record(std::move(out), {x}, [saved, norms](const Tensor& g, GradSink& sink) {
    Tensor* gx = sink.grad(0);
    if (!gx) return;
    auto yv = as_matrix(*saved);
    auto gm = as_matrix(g);
    auto dx = as_matrix(*gx);
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      const double dot = gm.row(r).dot(yv.row(r));
      dx.row(r) += (gm.row(r) - dot * yv.row(r)) / (*norms)(r);
    }
  });
}

Var embedding_gather(Var table, std::span<const std::int32_t> ids) {
  const Tensor& tv = table.value();
  require_rank2(tv, "embedding_gather");
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw IndexError("embedding id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(tv.rows()) + ")");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, rows);
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  require_rank2(xv, "gather_rows");
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t c = xv.cols();
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) throw IndexError("row index " + std::to_string(rows[i]) + " out of range");
    std::copy_n(xv.row(rows[i]).begin(), c, out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape().record(std::move(out), {x}, [idx = std::move(idx)](const Tensor& g, GradSink& sink) {
    Tensor* gx = sink.grad(0);
    if (!gx) return;
    const std::size_t c = g.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = gx->row(idx[i]);
      auto src = g.row(i);
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t c = parts[0].value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank2(p.value(), "concat_rows");
    if (p.value().cols() != c) throw DimensionError("concat_rows: column counts differ");
    total += p.value().rows();
  }
  Tensor out({total, c});
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const Var& p : parts) {
    offsets.push_back(at);
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at * c));
    at += p.value().rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), inputs, [offsets, c](const Tensor& g, GradSink& sink) {
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      Tensor* gk = sink.grad(k);
      if (!gk) continue;
      auto src = g.data().subspan(offsets[k] * c, gk->size());
      for (std::size_t i = 0; i < src.size(); ++i) (*gk)[i] += src[i];
    }
  });
}

Var pick(Var x, std::span<const std::size_t> flat_indices) {
  const Tensor& xv = x.value();
  if (flat_indices.empty()) throw DimensionError("pick: empty index list");
  Tensor out({flat_indices.size()});
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= xv.size()) throw IndexError("pick index out of range");
    out[i] = xv[flat_indices[i]];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  return x.tape().record(std::move(out), {x}, [idx = std::move(idx)](const Tensor& g, GradSink& sink) {
    if (Tensor* gx = sink.grad(0)) {
      for (std::size_t i = 0; i < idx.size(); ++i) (*gx)[idx[i]] += g[i];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [](const Tensor& g, GradSink& sink) {
    if (Tensor* gx = sink.grad(0)) as_vector(*gx).array() += g[0];
  });
}

Var detach(Var x) { return x.tape().constant(x.value()); }

Var attention(Var q, Var k, Var v, std::span<const Segment> segments, std::size_t heads) {
  const Tensor& qv = q.value();
  require_rank2(qv, "attention");
  if (k.value().shape() != qv.shape() || v.value().shape() != qv.shape()) {
    throw DimensionError("attention: q, k, v shapes differ");
  }
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: hidden size not divisible by heads");
  const auto dh = static_cast<Eigen::Index>(d / heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const Segment& s : segments) {
    if (s.length == 0 || s.offset + s.length > qv.rows()) throw IndexError("attention: segment out of range");
  }

  auto qm = as_matrix(qv);
  auto km = as_matrix(k.value());
  auto vm = as_matrix(v.value());
  Tensor out(qv.shape());
  auto om = as_matrix(out);
  auto probs = std::make_shared<std::vector<RowMatrix>>();
  probs->reserve(segments.size() * heads);
  for (const Segment& s : segments) {
    const auto off = static_cast<Eigen::Index>(s.offset);
    const auto len = static_cast<Eigen::Index>(s.length);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h) * dh;
      RowMatrix p = (qm.block(off, col, len, dh) * km.block(off, col, len, dh).transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < len; ++r) {
        const double mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      om.block(off, col, len, dh).noalias() = p * vm.block(off, col, len, dh);
      probs->push_back(std::move(p));
    }
  }

  std::vector<Segment> segs(segments.begin(), segments.end());
  return q.tape().record(
      std::move(out), {q, k, v}, [q, k, v, segs = std::move(segs), heads, dh, inv_sqrt, probs](const Tensor& g, GradSink& sink) {
        auto qm = as_matrix(q.value());
        auto km = as_matrix(k.value());
        auto vm = as_matrix(v.value());
        auto gm = as_matrix(g);
        Tensor* gq = sink.grad(0);
        Tensor* gk = sink.grad(1);
        Tensor* gv = sink.grad(2);
        std::size_t idx = 0;
        for (const Segment& s : segs) {
          const auto off = static_cast<Eigen::Index>(s.offset);
          const auto len = static_cast<Eigen::Index>(s.length);
          for (std::size_t h = 0; h < heads; ++h, ++idx) {
            const auto col = static_cast<Eigen::Index>(h) * dh;
            const RowMatrix& p = (*probs)[idx];
            auto go = gm.block(off, col, len, dh);
            if (gv) as_matrix(*gv).block(off, col, len, dh).noalias() += p.transpose() * go;
            if (!gq && !gk) continue;
            RowMatrix dp = go * vm.block(off, col, len, dh).transpose();
            const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
            RowMatrix ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * inv_sqrt;
            if (gq) as_matrix(*gq).block(off, col, len, dh).noalias() += ds * km.block(off, col, len, dh);
            if (gk) as_matrix(*gk).block(off, col, len, dh).noalias() += ds.transpose() * qm.block(off, col, len, dh);
          }
        }
      });
}

Var softmax_xent_rows(Var logits, std::span<const std::size_t> targets, std::span<const std::ptrdiff_t> exclude) {
  const Tensor& lv = logits.value();
  require_rank2(lv, "softmax_xent_rows");
  const std::size_t rows = lv.rows();
  const std::size_t cols = lv.cols();
  if (targets.size() != rows) throw DimensionError("softmax_xent_rows: one target per row required");
  if (!exclude.empty() && exclude.size() != rows) throw DimensionError("softmax_xent_rows: one exclusion per row required");

  auto probs = std::make_shared<Tensor>(lv.shape());
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::ptrdiff_t ex = exclude.empty() ? -1 : exclude[r];
    if (targets[r] >= cols) throw IndexError("softmax_xent_rows: target out of range");
    if (ex >= 0 && static_cast<std::size_t>(ex) == targets[r]) throw ContractError("softmax_xent_rows: target is excluded");
    auto x = lv.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (static_cast<std::ptrdiff_t>(c) != ex) mx = std::max(mx, x[c]);
    }
    double z = 0.0;
    auto p = probs->row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      p[c] = static_cast<std::ptrdiff_t>(c) == ex ? 0.0 : std::exp(x[c] - mx);
      z += p[c];
    }
    for (double& v : p) v /= z;
    out[r] = mx + std::log(z) - x[targets[r]];
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return logits.tape().record(std::move(out), {logits}, [probs, tg = std::move(tg)](const Tensor& g, GradSink& sink) {
    Tensor* gx = sink.grad(0);
    if (!gx) return;
    for (std::size_t r = 0; r < tg.size(); ++r) {
      auto p = probs->row(r);
      auto dst = gx->row(r);
      for (std::size_t c = 0; c < p.size(); ++c) dst[c] += g[r] * p[c];
      dst[tg[r]] -= g[r];
    }
  });
}

}  // namespace capt::ops
