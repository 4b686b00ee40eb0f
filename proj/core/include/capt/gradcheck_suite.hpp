#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capt/rng.hpp"

namespace capt {

struct GradCheckEntry {
  std::string name;
  double error = 0.0;
  double threshold = 0.0;
  std::string metric;  // "rel" or "abs"

  bool passed() const { return error < threshold; }
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  std::string format() const;
};

/// Closed form dL(x_i)/ds_i compared with reverse mode (absolute) and with
/// central differences (relative) on one random unit-norm batch.
struct ClosedFormCheck {
  double max_abs_vs_autodiff = 0.0;
  double max_rel_vs_numeric = 0.0;
};
ClosedFormCheck closed_form_check(std::size_t n, std::size_t d, double tau, Rng& rng);

// Per-op checks, the closed-form triple check, CAPT on a two-sequence batch
// and a tiny full model. With `corrupt`, every reverse-mode gradient is
// perturbed before comparison so every check must fail.
GradCheckReport run_gradcheck_suite(std::uint64_t seed = 1, bool corrupt = false);

}  // namespace capt
