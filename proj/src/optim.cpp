// SPDX-License-Identifier: Apache-2.0
#include "mvp/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mvp/error.hpp"
#include "mvp/log.hpp"

namespace mvp::core {

namespace {

template <typename T>
void check_grad(const Parameter<T>& p) {
  if (!p.grad.same_shape(p.value)) {
    fail(ErrorCode::shape_mismatch, "gradient shape does not match parameter '" + p.name + "'");
  }
  const std::size_t bad = p.grad.first_non_finite();
  if (bad != p.grad.size()) {
    const std::size_t c = p.grad.cols() == 0 ? 0 : bad % p.grad.cols();
    const std::size_t r = p.grad.cols() == 0 ? 0 : bad / p.grad.cols();
    fail(ErrorCode::non_finite, "non-finite gradient in '" + p.name + "' at (" +
                                    std::to_string(r) + ", " + std::to_string(c) + ")");
  }
}

template <typename T>
void apply(Parameter<T>& p, AdamWState<T>& s, double lr, const AdamWConfig& cfg) {
  if (!s.m.same_shape(p.value)) s = AdamWState<T>(p);
  s.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad[i];
    const double m = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
    s.m[i] = static_cast<T>(m);
    s.v[i] = static_cast<T>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    const double theta = static_cast<double>(p.value[i]) * decay;
    p.value[i] = static_cast<T>(theta - lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

}  // namespace

template <typename T>
void adamw_step(Parameter<T>& param, AdamWState<T>& state, double lr, const AdamWConfig& cfg) {
  check_grad(param);
  apply(param, state, lr, cfg);
}

template <typename T>
AdamW<T>::AdamW(std::span<Parameter<T>* const> params, AdamWConfig cfg)
    : params_(params.begin(), params.end()), cfg_(cfg) {
  states_.reserve(params_.size());
  for (auto* p : params_) states_.emplace_back(*p);
}

template <typename T>
void AdamW<T>::step(double lr) {
  for (auto* p : params_) check_grad(*p);
  for (std::size_t i = 0; i < params_.size(); ++i) apply(*params_[i], states_[i], lr, cfg_);
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Schedule::validate() const {
  if (!(warmup_steps < total_steps)) {
    fail(ErrorCode::invalid_argument, "schedule requires warmup_steps (" +
                                          std::to_string(warmup_steps) + ") < total_steps (" +
                                          std::to_string(total_steps) + ")");
  }
  if (!(floor_lr >= 0.0) || !std::isfinite(base_lr)) {
    fail(ErrorCode::invalid_argument, "schedule requires finite base_lr and floor_lr >= 0");
  }
}

double lr_at(std::size_t step, const Schedule& s) {
  s.validate();
  if (step > s.total_steps) {
    log::warn("lr_at: step " + std::to_string(step) + " beyond total_steps " +
              std::to_string(s.total_steps) + ", using floor_lr");
    return s.floor_lr;
  }
  if (step < s.warmup_steps) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.floor_lr +
         0.5 * (s.base_lr - s.floor_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

Schedule warmup_cosine(double base_lr, std::size_t total, double warmup_fraction,
                       double floor_lr) {
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    fail(ErrorCode::invalid_argument, "warmup fraction must lie in [0, 1)");
  }
  Schedule s;
  s.base_lr = base_lr;
  s.total_steps = total;
  s.warmup_steps = static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total)));
  s.floor_lr = floor_lr;
  s.validate();
  return s;
}

template void adamw_step<float>(Parameter<float>&, AdamWState<float>&, double,
                                const AdamWConfig&);
template void adamw_step<double>(Parameter<double>&, AdamWState<double>&, double,
                                 const AdamWConfig&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace mvp::core
