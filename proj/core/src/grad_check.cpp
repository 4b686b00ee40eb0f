#include "capt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "capt/error.hpp"

namespace capt {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const LossBuilder& f, const ParamStore& params) {
  Tape tape;
  return f(tape, params).value().item();
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& f, const ParamStore& params, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ContractError("grad_check step must be positive");
  Gradients analytic;
  {
    Tape tape;
    analytic = tape.backward(f(tape, params));
  }
  if (options.tamper) options.tamper(analytic);

  GradCheckResult result;
  ParamStore probe = params;
  for (const auto& name : params.names()) {
    auto it = analytic.find(name);
    Tensor& value = probe.get(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = value[i];
      value[i] = original + options.step;
      const double up = evaluate(f, probe);
      value[i] = original - options.step;
      const double down = evaluate(f, probe);
      value[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double err = relative_error(a, numeric);
      if (result.worst_param.empty() || err > result.max_rel_error) result = {err, name, i, a, numeric};
    }
  }
  return result;
}

}  // namespace capt
