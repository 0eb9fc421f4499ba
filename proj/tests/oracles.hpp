// SPDX-License-Identifier: Apache-2.0
// Oracle harnesses shared by the unit tests and the acceptance runner.
#pragma once

#include <cstdint>
#include <vector>

#include "mvp/gradcheck.hpp"
#include "mvp/model.hpp"
#include "mvp/rng.hpp"

namespace mvp::testing {

struct PipelineDims {
  std::size_t d = 8, h = 8, z = 4, d_img = 6, k = 3, m = 2, batch = 4;
};

/// Finite-difference check of the whole training loss (loss_mt + alpha *
/// loss_vae) with respect to every parameter block, in float64 with the
/// reparameterization noise held fixed. The x100 logit scale makes the
/// O(step^2) truncation term visible at 1e-4, hence the smaller default step.
inline core::GradCheckResult pipeline_gradcheck(std::uint64_t seed, model::Variant variant,
                                                const PipelineDims& dims = {}, double alpha = 1.0,
                                                double variance_scale = 1.0, double step = 1e-5) {
  using core::Graph;
  using core::Tensor2D;
  model::MvpConfig cfg;
  cfg.text_dim = dims.d;
  cfg.image_dim = dims.d_img;
  cfg.hidden_dim = dims.h;
  cfg.latent_dim = dims.z;
  cfg.variant = variant;
  auto params = model::MvpParameters<double>::init(cfg, seed);

  Rng rng(derive_seed(seed, "gradcheck/inputs"));
  auto fill = [&](std::size_t r, std::size_t c) {
    Tensor2D<double> t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
  };
  const auto images = fill(dims.batch, dims.d_img);
  const auto templates = fill(dims.m, dims.d);
  const auto classes = fill(dims.k, dims.d);
  const auto grid = fill(dims.m * dims.k, dims.d);
  const std::size_t vae_rows = model::decoupled(variant) ? dims.m : dims.m * dims.k;
  const auto eps = fill(vae_rows, dims.z);
  std::vector<std::size_t> labels(dims.batch);
  for (auto& y : labels) y = static_cast<std::size_t>(rng.below(dims.k));

  model::ForwardInputs<double> in{&images, &templates, &classes, &grid, dims.m, dims.k};
  const model::ForwardMode mode{variant, true, variance_scale};
  auto forward = [&](Graph<double>& g) {
    auto f = model::build_forward(g, params, in, mode, &eps);
    auto l = model::loss_mt(g, f.logits, std::span<const std::size_t>(labels), dims.m);
    if (f.vae) l = model::loss_total(g, l, model::loss_vae(g, *f.vae), alpha);
    return l;
  };

  auto ptrs = params.all();
  for (auto* p : ptrs) p->zero_grad();
  {
    Graph<double> g;
    auto l = forward(g);
    g.backward(l);
    g.accumulate_into(ptrs);
  }
  return core::finite_difference_check(
      [&] {
        Graph<double> g(false);
        return g.scalar(forward(g));
      },
      ptrs, step);
}

}  // namespace mvp::testing
