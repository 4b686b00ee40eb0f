#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "capt/params.hpp"
#include "capt/tape.hpp"

namespace capt {

/// Linear warmup to `peak`, then linear decay to zero at `total`.
struct LrSchedule {
  std::size_t warmup = 0;
  std::size_t total = 0;
  double peak = 0.0;

  double operator()(std::size_t t) const;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam with decoupled weight decay on weight matrices.
class Adam {
 public:
  explicit Adam(AdamHyper hyper) : hyper_(hyper) {}

  // One update with learning rate `lr`. Throws NumericError naming the first
  // parameter with a non-finite gradient, before anything is modified.
  void step(ParamStore& params, const Gradients& grads, double lr);

  const AdamHyper& hyper() const { return hyper_; }
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }

 private:
  AdamHyper hyper_;
  AdamState state_;
};

}  // namespace capt
