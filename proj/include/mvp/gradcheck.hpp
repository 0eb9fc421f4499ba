// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "mvp/tensor.hpp"

namespace mvp::core {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares Parameter::grad (already filled by the caller) against central
/// differences of `loss_fn`, which must re-evaluate the loss at the current
/// parameter values with any noise held fixed. Per coordinate the error is
/// |a - n| / max(|a|, |n|, abs_floor); abs_floor keeps coordinates whose
/// true gradient is ~0 from turning rounding noise into huge ratios.
GradCheckResult finite_difference_check(const std::function<double()>& loss_fn,
                                        std::span<Parameter<double>* const> params,
                                        double step = 1e-4, double abs_floor = 1e-6);

}  // namespace mvp::core
