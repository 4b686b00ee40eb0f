#pragma once

#include <functional>
#include <string>

#include "capt/params.hpp"
#include "capt/tape.hpp"

namespace capt {

// Builds a scalar loss on `tape` from the parameters in `params`. Must be
// deterministic: any dropout has to draw from a freshly seeded stream.
using LossBuilder = std::function<Var(Tape& tape, const ParamStore& params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckOptions {
  double step = 1e-6;
  // Test hook: lets a caller tamper with the reverse-mode gradients before comparison.
  std::function<void(Gradients&)> tamper;
};

/// Central-difference check of reverse-mode gradients for every element of
/// every parameter. Error per element is |a - n| / max(|a|, |n|, 1e-12).
GradCheckResult grad_check(const LossBuilder& f, const ParamStore& params, const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric);

}  // namespace capt
