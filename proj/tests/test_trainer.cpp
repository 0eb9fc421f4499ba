// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "mvp/log.hpp"
#include "mvp/trainer.hpp"
#include "test_util.hpp"

namespace mvp::train {
namespace {

using mvp::testing::code_of;
using model::Variant;

TrainConfig small_config(Variant v = Variant::full, std::size_t epochs = 3) {
  TrainConfig c;
  c.variant = v;
  c.epochs = epochs;
  c.templates_per_epoch = 6;
  c.shots = 4;
  c.batch_size = 8;
  c.latent_dim = 4;
  c.seed = 13;
  return c;
}

TEST(SampleTemplates, WholeSplitIsAPermutation) {
  const std::vector<std::size_t> split = {3, 5, 8, 13, 21};
  const auto s = sample_templates(1, 0, split, split.size());
  EXPECT_EQ(std::multiset<std::size_t>(s.begin(), s.end()),
            std::multiset<std::size_t>(split.begin(), split.end()));
}

TEST(SampleTemplates, DeterministicAndEpochDependent) {
  std::vector<std::size_t> split(60);
  for (std::size_t i = 0; i < split.size(); ++i) split[i] = 2 * i;
  EXPECT_EQ(sample_templates(7, 3, split, 20), sample_templates(7, 3, split, 20));
  EXPECT_NE(sample_templates(7, 3, split, 20), sample_templates(7, 4, split, 20));
  const auto s = sample_templates(7, 3, split, 20);
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 20u);
  EXPECT_EQ(s.size(), 20u);
  for (std::size_t x : s) EXPECT_EQ(x % 2, 0u);
}

TEST(SampleTemplates, TooManyRequested) {
  const std::vector<std::size_t> split = {1, 2};
  EXPECT_EQ(code_of([&] { sample_templates(1, 0, split, 3); }), ErrorCode::invalid_argument);
}

TEST(FewShot, CountsPerClass) {
  std::vector<std::uint32_t> labels;
  for (std::uint32_t c = 0; c < 3; ++c) labels.insert(labels.end(), 20, c);
  const auto idx = sample_few_shot(labels, 3, 16, 5);
  ASSERT_EQ(idx.size(), 48u);
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 48u);
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(labels[idx[i]], i / 16);
  EXPECT_EQ(sample_few_shot(labels, 3, 16, 5), idx);
}

TEST(FewShot, ClampWithWarning) {
  std::vector<std::uint32_t> labels(20, 0);
  labels.insert(labels.end(), 5, 1);
  const auto before = log::warning_count();
  const auto idx = sample_few_shot(labels, 2, 16, 5);
  EXPECT_EQ(idx.size(), 21u);
  EXPECT_GT(log::warning_count(), before);
}

TEST(FewShot, EmptyClass) {
  const std::vector<std::uint32_t> labels = {0, 0, 2};
  EXPECT_EQ(code_of([&] { sample_few_shot(labels, 3, 2, 1); }), ErrorCode::invalid_argument);
}

TEST(TrainConfig, VariantDefaults) {
  TrainConfig c;
  c.variant = Variant::no_decouple;
  EXPECT_EQ(c.resolved_alpha(), 0.01);
  EXPECT_EQ(c.resolved_variance_scale(), 0.1);
  c.alpha = 0.5;
  EXPECT_EQ(c.resolved_alpha(), 0.5);
  c.variant = Variant::full;
  c.alpha.reset();
  EXPECT_EQ(c.resolved_alpha(), 1.0);
  EXPECT_EQ(c.resolved_variance_scale(), 1.0);
}

TEST(TrainConfig, JsonRoundTripRejectsUnknownKeys) {
  auto c = small_config(Variant::no_decouple);
  c.alpha = 0.25;
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_THROW(config_from_json(R"({"learning_rate": 0.1})"), Error);
  EXPECT_EQ(config_from_json(R"({"lr": 0.5})").lr, 0.5);
}

TEST(Trainer, ZeroLearningRateIsFixedPoint) {
  const auto b = mvp::testing::small_benchmark();
  auto c = small_config();
  c.lr = 0.0;
  c.epochs = 1;
  Trainer t(b, c);
  const auto before = t.params();
  const auto s = t.train_epoch(0);
  EXPECT_TRUE(t.params().bitwise_equal(before));
  EXPECT_GT(s.loss_mt, 0.0);
  EXPECT_GT(s.loss_vae, 0.0);
  EXPECT_EQ(s.template_ids.size(), 6u);
}

TEST(Trainer, OverfitsSingleBatch) {
  store::SynthSpec spec;
  spec.n_classes = 4;
  spec.dim = 8;
  spec.n_templates = 42;
  spec.seed = 3;
  spec.class_coherence = 0.5;
  spec.train_per_class = 8;
  spec.test_per_class = 10;
  const auto b = store::gen_synthetic_benchmark(spec, bench::make_synthetic_taxonomy(spec.n_templates));
  for (Variant v : {Variant::full, Variant::no_vae}) {
    auto c = small_config(v, 200);
    c.batch_size = 64;
    c.lr = 1e-2;
    // Every train template each epoch, so the single batch never changes.
    c.templates_per_epoch = b.templates.indices(bench::Split::train).size();
    Trainer t(b, c);
    ASSERT_EQ(t.steps_per_epoch(), 1u);
    EpochStats first = t.train_epoch(0), last;
    for (std::size_t e = 1; e < 200; ++e) last = t.train_epoch(e);
    EXPECT_LT(last.loss_mt, first.loss_mt) << to_string(v);
    EXPECT_LT(last.loss_mt, std::log(4.0) / 10.0) << to_string(v);
  }
}

TEST(Trainer, ZeroEpochsKeepsInitialization) {
  const auto b = mvp::testing::small_benchmark();
  auto c = small_config(Variant::full, 0);
  const auto r = train_run(c, b);
  EXPECT_TRUE(r.log.epochs.empty());
  const auto init = model::MvpParameters<float>::init(model_config(c, b), c.seed);
  EXPECT_TRUE(r.checkpoint.params.bitwise_equal(init));
  EXPECT_EQ(r.checkpoint.step, 0u);
}

TEST(Trainer, SameSeedSameBytes) {
  const auto b = mvp::testing::small_benchmark();
  for (Variant v : {Variant::full, Variant::no_decouple}) {
    const auto a = train_run(small_config(v), b);
    const auto c = train_run(small_config(v), b);
    EXPECT_EQ(model::encode_checkpoint(a.checkpoint), model::encode_checkpoint(c.checkpoint));
    EXPECT_EQ(runlog_jsonl(a.log), runlog_jsonl(c.log));
  }
  auto other = small_config();
  other.seed = 14;
  EXPECT_NE(model::encode_checkpoint(train_run(other, b).checkpoint),
            model::encode_checkpoint(train_run(small_config(), b).checkpoint));
}

TEST(Trainer, NoVaeLogsZeroVaeLoss) {
  const auto b = mvp::testing::small_benchmark();
  for (Variant v : {Variant::no_vae, Variant::no_decouple_no_vae}) {
    const auto r = train_run(small_config(v), b);
    ASSERT_EQ(r.log.epochs.size(), 3u);
    for (const auto& e : r.log.epochs) {
      EXPECT_EQ(e.loss_vae, 0.0);
      EXPECT_EQ(e.loss_total, e.loss_mt);
      EXPECT_EQ(e.recon_cos, 0.0);
    }
    EXPECT_FALSE(r.checkpoint.params.has_vae);
  }
}

TEST(Trainer, AlphaZeroStillTrainsEncoderOnlyThroughFusionPath) {
  const auto b = mvp::testing::small_benchmark();
  auto c = small_config();
  c.alpha = 0.0;
  const auto r = train_run(c, b);
  for (const auto& e : r.log.epochs) EXPECT_EQ(e.loss_total, e.loss_mt);
}

TEST(Trainer, VaeBlocksUntouchedWithoutVaeVariant) {
  const auto b = mvp::testing::small_benchmark();
  auto c = small_config(Variant::no_vae);
  auto init = model::MvpParameters<float>::init(model_config(c, b), c.seed, true);
  Trainer t(b, c, init);
  for (std::size_t e = 0; e < 3; ++e) t.train_epoch(e);
  EXPECT_EQ(t.params().enc1_w.value, init.enc1_w.value);
  EXPECT_EQ(t.params().dec_b.value, init.dec_b.value);
  EXPECT_NE(t.params().fusion_w.value, init.fusion_w.value);
  // The fusion trajectory does not depend on whether dormant VAE blocks exist.
  Trainer lean(b, c);
  for (std::size_t e = 0; e < 3; ++e) lean.train_epoch(e);
  EXPECT_EQ(lean.params().fusion_w.value, t.params().fusion_w.value);
}

TEST(Trainer, LearningRatesFollowSchedule) {
  const auto b = mvp::testing::small_benchmark();
  auto c = small_config(Variant::full, 10);
  c.batch_size = 5;
  const auto r = train_run(c, b);
  const std::size_t spe = (16 + 4) / 5;
  const auto s = core::warmup_cosine(c.lr, 10 * spe, 0.1, 0.0);
  std::size_t step = 0;
  for (const auto& e : r.log.epochs) {
    ASSERT_EQ(e.lrs.size(), spe);
    for (double lr : e.lrs) EXPECT_EQ(lr, core::lr_at(step++, s));
  }
  EXPECT_EQ(r.checkpoint.step, 10 * spe);
}

TEST(Trainer, OnlyTrainTemplatesAreSampled) {
  const auto b = mvp::testing::small_benchmark();
  const auto r = train_run(small_config(Variant::full, 8), b);
  for (const auto& e : r.log.epochs)
    for (const auto& id : e.template_ids)
      EXPECT_EQ(b.templates.records[b.templates.index_of(id)].split, bench::Split::train) << id;
}

TEST(Trainer, NonFiniteLossIsReported) {
  auto b = mvp::testing::small_benchmark();
  auto c = small_config(Variant::no_vae, 1);
  c.lr = 1e30;
  c.weight_decay = 0.0;
  Trainer t(b, c);
  ErrorCode code = ErrorCode::invalid_argument;
  try {
    for (std::size_t e = 0; e < 50; ++e) t.train_epoch(e);
  } catch (const Error& err) {
    code = err.code();
  }
  EXPECT_EQ(code, ErrorCode::non_finite);
}

TEST(Trainer, TooManyTemplatesPerEpoch) {
  const auto b = mvp::testing::small_benchmark();
  auto c = small_config();
  c.templates_per_epoch = 1000;
  EXPECT_EQ(code_of([&] { Trainer t(b, c); }), ErrorCode::invalid_argument);
}

TEST(RunLog, JsonlHasOneLinePerEpoch) {
  const auto b = mvp::testing::small_benchmark();
  const auto r = train_run(small_config(Variant::full, 4), b);
  const auto jsonl = runlog_jsonl(r.log);
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 4);
  EXPECT_NE(runlog_summary_json(r.log).find("wall_clock_seconds"), std::string::npos);
  EXPECT_EQ(jsonl.find("wall_clock"), std::string::npos);
}

// Accuracy oracles -----------------------------------------------------------

TEST(Accuracy, SeparableNoiseFreeDataIsPerfect) {
  store::SynthSpec spec;
  spec.n_classes = 4;
  spec.dim = 16;
  spec.n_templates = 28;
  spec.noise_sigma = 0.0;
  spec.sensitivity = 0.3;
  spec.class_coherence = 0.3;
  spec.train_per_class = 8;
  spec.test_per_class = 10;
  const auto b = store::gen_synthetic_benchmark(spec, bench::make_synthetic_taxonomy(spec.n_templates));
  auto c = small_config(Variant::full, 40);
  c.lr = 5e-3;
  const auto r = train_run(c, b);
  for (std::size_t rec : b.templates.indices(bench::Split::test)) {
    EXPECT_EQ(evaluate_accuracy(r.checkpoint.params, b, rec), 1.0) << b.templates.records[rec].id;
  }
}

TEST(Accuracy, RandomModelIsNearChance) {
  auto b = mvp::testing::small_benchmark(21, 1.0, 5, 8, 28);
  // Images carry no class signal: labels are balanced, embeddings are noise.
  core::Tensor2D<float> noise(400, b.image_dim());
  Rng rng(77);
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = static_cast<float>(rng.normal());
  b.test.embeddings = store::EmbeddingMatrix(noise);
  b.test.labels.resize(400);
  for (std::size_t i = 0; i < 400; ++i) b.test.labels[i] = static_cast<std::uint32_t>(i % 5);
  double correct = 0;
  std::size_t n = 0;
  const auto test = b.templates.indices(bench::Split::test);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto c = small_config();
    const auto params = model::MvpParameters<float>::init(model_config(c, b), seed);
    correct += evaluate_accuracy(params, b, test[seed % test.size()]) * 400.0;
    n += 400;
  }
  const double p = 0.2, acc = correct / static_cast<double>(n);
  const double ci = 4.0 * std::sqrt(p * (1 - p) / static_cast<double>(n));
  EXPECT_NEAR(acc, p, ci);
}

TEST(Accuracy, EmptyTestShard) {
  auto b = mvp::testing::small_benchmark();
  b.test.embeddings = store::EmbeddingMatrix(core::Tensor2D<float>(0, b.image_dim()));
  b.test.labels.clear();
  const auto params = model::MvpParameters<float>::init(model_config(small_config(), b), 1);
  EXPECT_THROW(evaluate_accuracy(params, b, b.templates.indices(bench::Split::test)[0]), Error);
}

TEST(Evaluator, MatchesEvaluateAccuracy) {
  const auto b = mvp::testing::small_benchmark();
  const auto r = train_run(small_config(Variant::no_decouple, 2), b);
  MvpEvaluator ev(r.checkpoint.params, b);
  for (std::size_t rec : b.templates.indices(bench::Split::test)) {
    EXPECT_EQ(ev.accuracy(rec), evaluate_accuracy(r.checkpoint.params, b, rec));
  }
  EXPECT_EQ(ev.prototypes(0).rows(), b.num_classes());
}

}  // namespace
}  // namespace mvp::train
