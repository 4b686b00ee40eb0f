#include "capt/optimizer.hpp"

#include <cmath>

#include "capt/encoder.hpp"
#include "capt/error.hpp"

namespace capt {

double LrSchedule::operator()(std::size_t t) const {
  if (!(warmup > 0 && warmup < total)) throw ScheduleError("learning-rate schedule needs 0 < warmup < total");
  if (t > total) throw ScheduleError("step " + std::to_string(t) + " beyond total steps");
  if (t <= warmup) return peak * static_cast<double>(t) / static_cast<double>(warmup);
  return peak * static_cast<double>(total - t) / static_cast<double>(total - warmup);
}

void Adam::step(ParamStore& params, const Gradients& grads, double lr) {
  for (const auto& name : params.names()) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    if (it->second.shape() != params.get(name).shape()) throw DimensionError("adam: gradient shape mismatch for " + name);
    if (!it->second.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
  }

  ++state_.step;
  const double b1 = hyper_.beta1;
  const double b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
  for (const auto& name : params.names()) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    Tensor& p = params.get(name);
    Tensor& m = state_.m.try_emplace(name, p.shape()).first->second;
    Tensor& v = state_.v.try_emplace(name, p.shape()).first->second;
    const bool decay = hyper_.weight_decay != 0.0 && is_decayed(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      if (decay) p[i] -= lr * hyper_.weight_decay * p[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + hyper_.eps);
    }
  }
}

}  // namespace capt
