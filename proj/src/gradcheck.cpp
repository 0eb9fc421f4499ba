// SPDX-License-Identifier: Apache-2.0
#include "mvp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mvp::core {

GradCheckResult finite_difference_check(const std::function<double()>& loss_fn,
                                        std::span<Parameter<double>* const> params, double step,
                                        double abs_floor) {
  GradCheckResult out;
  for (Parameter<double>* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = loss_fn();
      p->value[i] = saved - step;
      const double down = loss_fn();
      p->value[i] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
      const double err = std::abs(analytic - numeric) / denom;
      ++out.coordinates;
      if (err > out.max_rel_error || out.worst_param.empty()) {
        if (err >= out.max_rel_error) {
          out.max_rel_error = err;
          out.worst_param = p->name;
          out.worst_index = i;
          out.analytic = analytic;
          out.numeric = numeric;
        }
      }
    }
  }
  return out;
}

}  // namespace mvp::core
