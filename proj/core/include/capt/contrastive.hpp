#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "capt/tape.hpp"
#include "capt/tensor.hpp"

namespace capt {

/// Fixed-capacity FIFO of unit-norm negatives, oldest first.
/// A capacity of zero disables the queue: enqueue_batch is a no-op.
class MemoryQueue {
 public:
  MemoryQueue(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::span<const double> entry(std::size_t i) const { return entries_.at(i); }

  // Appends every row of s, then every row of s_hat, evicting the oldest
  // entries beyond capacity. Throws ConfigError when 2n > capacity.
  void enqueue_batch(const Tensor& s, const Tensor& s_hat);

  // [size x dim] copy, or nullopt when empty.
  std::optional<Tensor> snapshot() const;

  // Rebuilds a queue from a row-major dump (oldest first).
  static MemoryQueue restore(std::size_t capacity, std::size_t dim, std::span<const double> rows);

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::deque<std::vector<double>> entries_;
};

/// Adaptive inverted-triangle temperature, or a fixed value.
class TemperatureSchedule {
 public:
  static TemperatureSchedule adaptive(std::size_t total_steps);
  static TemperatureSchedule fixed(double tau);

  // adaptive: |t - T/2| / T + 0.05 for t in [0, T]; throws ScheduleError outside.
  double operator()(double t) const;

  bool is_adaptive() const { return adaptive_; }
  std::size_t total_steps() const { return total_; }

 private:
  TemperatureSchedule(bool adaptive, std::size_t total, double tau) : adaptive_(adaptive), total_(total), tau_(tau) {}
  bool adaptive_;
  std::size_t total_;
  double tau_;
};

enum class CaptSide { kOriginal, kCorrupted };

inline constexpr double kUnitNormTolerance = 1e-9;

// Sum over i of L(x_i) + L(x-hat_i). Negatives for x_i are every x-hat_j, every
// x_j with j != i and every queue row; symmetrically for x-hat_i. The queue is
// detached, so it never receives gradient. Rows must be unit-norm.
Var capt_loss(Tape& tape, Var s, Var s_hat, std::optional<Var> queue, double tau);
Var capt_loss(Tape& tape, Var s, Var s_hat, const std::optional<Tensor>& queue, double tau);
double capt_loss(const Tensor& s, const Tensor& s_hat, const std::optional<Tensor>& queue, double tau);

// Single term L(x_i) or L(x-hat_i) without the unit-norm precondition, for
// differentiating in raw coordinates.
Var capt_instance_loss(Tape& tape, Var s, Var s_hat, std::optional<Var> queue, double tau, std::size_t i,
                       CaptSide side);

// Closed-form dL(x_i)/ds_i with every other row held fixed (empty queue).
Tensor capt_grad_closed_form(const Tensor& s, const Tensor& s_hat, double tau, std::size_t i);

// Mean over rows of s_i . s-hat_i.
double mean_pair_cosine(const Tensor& s, const Tensor& s_hat);

}  // namespace capt
