#include "capt/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "capt/error.hpp"
#include "capt/ops.hpp"

namespace capt {

namespace {

void require_unit_rows(const Tensor& t, const char* what) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double sq = 0.0;
    for (double v : t.row(r)) sq += v * v;
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance) {
      throw ContractError(std::string(what) + " row " + std::to_string(r) + " is not unit-norm");
    }
  }
}

void require_pair(const Tensor& s, const Tensor& s_hat) {
  if (s.rank() != 2 || s.shape() != s_hat.shape()) {
    throw DimensionError("capt: S and S-hat must be matrices of equal shape, got " + shape_string(s.shape()) + " and " +
                         shape_string(s_hat.shape()));
  }
}

void require_tau(double tau) {
  if (!(tau > 0.0)) throw ScheduleError("temperature must be positive");
}

// Per-row losses [2n]: rows 0..n-1 are L(x_i), rows n..2n-1 are L(x-hat_i).
Var capt_rows(Var s, Var s_hat, std::optional<Var> queue, double tau) {
  require_pair(s.value(), s_hat.value());
  require_tau(tau);
  const std::size_t n = s.value().rows();
  std::vector<Var> keys = {s, s_hat};
  if (queue) {
    if (queue->value().rank() != 2 || queue->value().cols() != s.value().cols()) {
      throw DimensionError("capt: queue width does not match representation size");
    }
    keys.push_back(ops::detach(*queue));
  }
  const std::vector<Var> anchors_parts = {s, s_hat};
  Var anchors = ops::concat_rows(anchors_parts);
  Var all = ops::concat_rows(keys);
  Var logits = ops::scale(ops::matmul_nt(anchors, all), 1.0 / tau);

  std::vector<std::size_t> targets(2 * n);
  std::vector<std::ptrdiff_t> exclude(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    targets[i] = n + i;
    exclude[i] = static_cast<std::ptrdiff_t>(i);
    targets[n + i] = i;
    exclude[n + i] = static_cast<std::ptrdiff_t>(n + i);
  }
  return ops::softmax_xent_rows(logits, targets, exclude);
}

}  // namespace

MemoryQueue::MemoryQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
  if (dim == 0) throw ConfigError("queue dimension must be positive");
}

void MemoryQueue::enqueue_batch(const Tensor& s, const Tensor& s_hat) {
  if (capacity_ == 0) return;
  require_pair(s, s_hat);
  if (s.cols() != dim_) throw DimensionError("enqueue: representation size does not match queue");
  if (2 * s.rows() > capacity_) throw ConfigError("enqueue: a batch of 2n rows exceeds queue capacity");
  require_unit_rows(s, "enqueue S");
  require_unit_rows(s_hat, "enqueue S-hat");
  for (const Tensor* t : {&s, &s_hat}) {
    for (std::size_t r = 0; r < t->rows(); ++r) {
      auto row = t->row(r);
      entries_.emplace_back(row.begin(), row.end());
    }
  }
  while (entries_.size() > capacity_) entries_.pop_front();
}

std::optional<Tensor> MemoryQueue::snapshot() const {
  if (entries_.empty()) return std::nullopt;
  Tensor out({entries_.size(), dim_});
  for (std::size_t i = 0; i < entries_.size(); ++i) std::copy(entries_[i].begin(), entries_[i].end(), out.row(i).begin());
  return out;
}

MemoryQueue MemoryQueue::restore(std::size_t capacity, std::size_t dim, std::span<const double> rows) {
  MemoryQueue q(capacity, dim);
  if (rows.size() % dim != 0 || rows.size() / dim > capacity) throw ConfigError("queue dump does not fit its capacity");
  for (std::size_t i = 0; i < rows.size(); i += dim) q.entries_.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(i), rows.begin() + static_cast<std::ptrdiff_t>(i + dim));
  return q;
}

TemperatureSchedule TemperatureSchedule::adaptive(std::size_t total_steps) {
  if (total_steps == 0) throw ScheduleError("adaptive temperature needs total_steps > 0");
  return TemperatureSchedule(true, total_steps, 0.0);
}

TemperatureSchedule TemperatureSchedule::fixed(double tau) {
  require_tau(tau);
  return TemperatureSchedule(false, 0, tau);
}

double TemperatureSchedule::operator()(double t) const {
  if (!adaptive_) return tau_;
  const double total = static_cast<double>(total_);
  if (!(t >= 0.0 && t <= total)) throw ScheduleError("step " + std::to_string(t) + " outside [0, T]");
  return std::abs(t - total / 2.0) / total + 0.05;
}

Var capt_loss(Tape& /*tape*/, Var s, Var s_hat, std::optional<Var> queue, double tau) {
  require_pair(s.value(), s_hat.value());
  require_tau(tau);
  require_unit_rows(s.value(), "S");
  require_unit_rows(s_hat.value(), "S-hat");
  if (queue) require_unit_rows(queue->value(), "queue");
  return ops::sum(capt_rows(s, s_hat, queue, tau));
}

Var capt_loss(Tape& tape, Var s, Var s_hat, const std::optional<Tensor>& queue, double tau) {
  std::optional<Var> q;
  if (queue) q = tape.constant(*queue);
  return capt_loss(tape, s, s_hat, q, tau);
}

double capt_loss(const Tensor& s, const Tensor& s_hat, const std::optional<Tensor>& queue, double tau) {
  Tape tape;
  return capt_loss(tape, tape.constant(s), tape.constant(s_hat), queue, tau).value().item();
}

Var capt_instance_loss(Tape& /*tape*/, Var s, Var s_hat, std::optional<Var> queue, double tau, std::size_t i,
                       CaptSide side) {
  const std::size_t n = s.value().rows();
  if (i >= n) throw IndexError("capt_instance_loss: instance index out of range");
  const std::size_t row = side == CaptSide::kOriginal ? i : n + i;
  const std::vector<std::size_t> pick_row = {row};
  return ops::sum(ops::pick(capt_rows(s, s_hat, queue, tau), pick_row));
}

Tensor capt_grad_closed_form(const Tensor& s, const Tensor& s_hat, double tau, std::size_t i) {
  require_pair(s, s_hat);
  require_tau(tau);
  require_unit_rows(s, "S");
  require_unit_rows(s_hat, "S-hat");
  const std::size_t n = s.rows();
  const std::size_t d = s.cols();
  if (i >= n) throw IndexError("capt_grad_closed_form: instance index out of range");

  auto dot = [d](std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += a[k] * b[k];
    return acc;
  };
  const auto si = s.row(i);
  // Logits of every denominator term, shifted by their max for stability.
  std::vector<double> to_hat(n), to_orig(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    to_hat[j] = dot(si, s_hat.row(j)) / tau;
    mx = std::max(mx, to_hat[j]);
    if (j != i) {
      to_orig[j] = dot(si, s.row(j)) / tau;
      mx = std::max(mx, to_orig[j]);
    }
  }
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    to_hat[j] = std::exp(to_hat[j] - mx);
    z += to_hat[j];
    if (j != i) {
      to_orig[j] = std::exp(to_orig[j] - mx);
      z += to_orig[j];
    }
  }
  // (1 / tau Z) [ (e_ii - Z) s-hat_i + sum_{j != i} (e(s_i.s_j) s_j + e(s_i.s-hat_j) s-hat_j) ]
  Tensor grad({d});
  const auto hat_i = s_hat.row(i);
  for (std::size_t k = 0; k < d; ++k) grad[k] = (to_hat[i] - z) * hat_i[k];
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const auto sj = s.row(j);
    const auto hj = s_hat.row(j);
    for (std::size_t k = 0; k < d; ++k) grad[k] += to_orig[j] * sj[k] + to_hat[j] * hj[k];
  }
  for (std::size_t k = 0; k < d; ++k) grad[k] /= tau * z;
  return grad;
}

double mean_pair_cosine(const Tensor& s, const Tensor& s_hat) {
  require_pair(s, s_hat);
  double total = 0.0;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto a = s.row(r);
    auto b = s_hat.row(r);
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
    total += acc;
  }
  return total / static_cast<double>(s.rows());
}

}  // namespace capt
