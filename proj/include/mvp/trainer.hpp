// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvp/bench.hpp"
#include "mvp/embedstore.hpp"
#include "mvp/model.hpp"
#include "mvp/optim.hpp"

namespace mvp::train {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t templates_per_epoch = 50;
  std::size_t shots = 16;
  std::size_t epochs = 50;
  std::uint64_t seed = 7;
  model::Variant variant = model::Variant::full;
  /// Unset means the variant default: 0.01 for no_decouple, 1 otherwise.
  std::optional<double> alpha;
  /// Unset means the variant default: 0.1 for no_decouple, 1 otherwise.
  std::optional<double> variance_scale;
  double weight_decay = 0.01;
  double logit_scale = 100.0;
  std::size_t latent_dim = 128;
  std::size_t hidden_dim = 0;  ///< 0 = text dim
  bool linear_decoder = false;
  double warmup_fraction = 0.1;
  double floor_lr = 0.0;

  double resolved_alpha() const noexcept;
  double resolved_variance_scale() const noexcept;
  void validate() const;
};

/// JSON with TrainConfig field names; unknown keys are rejected.
std::string config_to_json(const TrainConfig& c);
TrainConfig config_from_json(std::string_view text, TrainConfig base = {});

struct EpochStats {
  std::size_t epoch = 0;
  double loss_mt = 0.0;
  double loss_vae = 0.0;
  double loss_total = 0.0;
  /// Mean ||t - recon|| and cos(t, recon) over the epoch (0 without a VAE).
  double recon_l2 = 0.0;
  double recon_cos = 0.0;
  std::vector<double> lrs;  ///< one per optimizer step, in order
  std::vector<std::string> template_ids;
};

struct RunLog {
  std::string config_echo;
  std::vector<EpochStats> epochs;
  std::string checkpoint_path;
  double wall_clock_seconds = 0.0;
  std::size_t steps = 0;
};

/// One JSON object per epoch, newline-terminated.
std::string runlog_jsonl(const RunLog& log);
std::string runlog_summary_json(const RunLog& log);

/// M distinct positions drawn from `train_split` (record indices) for an
/// epoch; a pure function of (seed, epoch).
std::vector<std::size_t> sample_templates(std::uint64_t seed, std::size_t epoch,
                                          std::span<const std::size_t> train_split, std::size_t m);

/// min(shots, available) image indices per class, class-major, no
/// duplicates. Clamping logs a warning; a class without images throws.
std::vector<std::size_t> sample_few_shot(std::span<const std::uint32_t> labels, std::size_t num_classes,
                                         std::size_t shots, std::uint64_t seed);

class Trainer {
 public:
  Trainer(const store::Benchmark& bench, TrainConfig config);
  /// Resumes from existing parameters (shapes must match the benchmark).
  Trainer(const store::Benchmark& bench, TrainConfig config, model::MvpParameters<float> params);

  EpochStats train_epoch(std::size_t epoch);

  const model::MvpParameters<float>& params() const noexcept { return params_; }
  model::MvpParameters<float>& params() noexcept { return params_; }
  const TrainConfig& config() const noexcept { return config_; }
  std::size_t step() const noexcept { return step_; }
  std::size_t steps_per_epoch() const noexcept;
  const std::vector<std::size_t>& few_shot() const noexcept { return few_shot_; }
  std::string config_echo() const;

 private:
  void setup();

  const store::Benchmark& bench_;
  TrainConfig config_;
  model::MvpParameters<float> params_;
  std::unique_ptr<core::AdamW<float>> opt_;
  std::optional<core::Schedule> schedule_;
  std::vector<std::size_t> train_templates_;
  std::vector<std::size_t> few_shot_;
  core::Tensor2D<float> classes_;
  core::Tensor2D<float> templates_;
  core::Tensor2D<float> images_;
  std::size_t step_ = 0;
};

model::MvpConfig model_config(const TrainConfig& c, const store::Benchmark& b);

struct TrainResult {
  model::Checkpoint<float> checkpoint;
  RunLog log;
};

TrainResult train_run(const TrainConfig& config, const store::Benchmark& bench);

/// Accuracy of a trained head on one template (deterministic forward).
double evaluate_accuracy(const model::MvpParameters<float>& params, const store::Benchmark& bench,
                         std::size_t record);

class MvpEvaluator final : public bench::TemplateEvaluator {
 public:
  MvpEvaluator(const model::MvpParameters<float>& params, const store::Benchmark& bench,
               std::string name = "mvp");
  std::string name() const override { return name_; }
  double accuracy(std::size_t record) override;
  /// Fused (K x d_img) features for one template.
  core::Tensor2D<float> prototypes(std::size_t record) const;

 private:
  const model::MvpParameters<float>& params_;
  const store::Benchmark& bench_;
  std::string name_;
  core::Tensor2D<float> images_;
  core::Tensor2D<float> classes_;
  core::Tensor2D<float> templates_;
};

}  // namespace mvp::train
