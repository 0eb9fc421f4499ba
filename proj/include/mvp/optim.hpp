// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mvp/tensor.hpp"

namespace mvp::core {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct AdamWState {
  Tensor2D<T> m;
  Tensor2D<T> v;
  std::size_t step = 0;

  AdamWState() = default;
  explicit AdamWState(const Parameter<T>& p)
      : m(p.value.rows(), p.value.cols()), v(p.value.rows(), p.value.cols()) {}
};

/// One bias-corrected Adam update with decoupled weight decay
/// (theta -= lr*wd*theta before the moment step). Throws non_finite, leaving
/// the parameter and state untouched, if any gradient entry is NaN/Inf.
template <typename T>
void adamw_step(Parameter<T>& param, AdamWState<T>& state, double lr, const AdamWConfig& cfg);

/// Applies adamw_step to a fixed list of parameters. All gradients are
/// checked before anything is mutated.
template <typename T>
class AdamW {
 public:
  AdamW(std::span<Parameter<T>* const> params, AdamWConfig cfg);

  void step(double lr);
  void zero_grad();
  const AdamWConfig& config() const noexcept { return cfg_; }
  const std::vector<AdamWState<T>>& states() const noexcept { return states_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<AdamWState<T>> states_;
  AdamWConfig cfg_;
};

struct Schedule {
  double base_lr = 1e-3;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  double floor_lr = 0.0;

  /// Throws invalid_argument unless 0 <= warmup < total and floor >= 0.
  void validate() const;
};

/// Linear warmup from 0, then cosine decay to floor_lr at total_steps.
/// Steps past the end clamp to floor_lr and log a warning.
double lr_at(std::size_t step, const Schedule& s);

/// Schedule for `total` optimizer steps with the warmup set to a fraction
/// of them (floor of fraction * total).
Schedule warmup_cosine(double base_lr, std::size_t total, double warmup_fraction = 0.1,
                       double floor_lr = 0.0);

extern template void adamw_step<float>(Parameter<float>&, AdamWState<float>&, double,
                                       const AdamWConfig&);
extern template void adamw_step<double>(Parameter<double>&, AdamWState<double>&, double,
                                        const AdamWConfig&);
extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace mvp::core
