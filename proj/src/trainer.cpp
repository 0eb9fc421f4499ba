// SPDX-License-Identifier: Apache-2.0
#include "mvp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mvp/error.hpp"
#include "mvp/log.hpp"
#include "mvp/rng.hpp"

namespace mvp::train {

using core::Graph;
using core::Tensor2D;
using model::Variant;
using nlohmann::json;

double TrainConfig::resolved_alpha() const noexcept {
  return alpha.value_or(variant == Variant::no_decouple ? 0.01 : 1.0);
}

double TrainConfig::resolved_variance_scale() const noexcept {
  return variance_scale.value_or(variant == Variant::no_decouple ? 0.1 : 1.0);
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::invalid_argument, "invalid train config: " + what); };
  if (!(lr >= 0.0) || !std::isfinite(lr)) bad("lr must be ≥ 0");
  if (batch_size < 1) bad("batch_size must be ≥ 1");
  if (templates_per_epoch < 1) bad("templates_per_epoch must be ≥ 1");
  if (shots < 1) bad("shots must be ≥ 1");
  if (!(resolved_alpha() >= 0.0)) bad("alpha must be ≥ 0");
  if (!(resolved_variance_scale() >= 0.0)) bad("variance_scale must be ≥ 0");
  if (!(weight_decay >= 0.0)) bad("weight_decay must be ≥ 0");
  if (!(logit_scale > 0.0)) bad("logit_scale must be > 0");
  if (latent_dim < 1) bad("latent_dim must be ≥ 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) bad("warmup_fraction must lie in [0, 1)");
  if (!(floor_lr >= 0.0)) bad("floor_lr must be ≥ 0");
}

std::string config_to_json(const TrainConfig& c) {
  json j = {{"lr", c.lr},
            {"batch_size", c.batch_size},
            {"templates_per_epoch", c.templates_per_epoch},
            {"shots", c.shots},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"variant", model::to_string(c.variant)},
            {"alpha", c.resolved_alpha()},
            {"variance_scale", c.resolved_variance_scale()},
            {"weight_decay", c.weight_decay},
            {"logit_scale", c.logit_scale},
            {"latent_dim", c.latent_dim},
            {"hidden_dim", c.hidden_dim},
            {"linear_decoder", c.linear_decoder},
            {"warmup_fraction", c.warmup_fraction},
            {"floor_lr", c.floor_lr}};
  return j.dump();
}

TrainConfig config_from_json(std::string_view text, TrainConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::invalid_argument, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::invalid_argument, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "lr") c.lr = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "templates_per_epoch") c.templates_per_epoch = v.get<std::size_t>();
      else if (key == "shots") c.shots = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "variant") c.variant = model::parse_variant(v.get<std::string>());
      else if (key == "alpha") c.alpha = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "variance_scale")
        c.variance_scale = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "logit_scale") c.logit_scale = v.get<double>();
      else if (key == "latent_dim") c.latent_dim = v.get<std::size_t>();
      else if (key == "hidden_dim") c.hidden_dim = v.get<std::size_t>();
      else if (key == "linear_decoder") c.linear_decoder = v.get<bool>();
      else if (key == "warmup_fraction") c.warmup_fraction = v.get<double>();
      else if (key == "floor_lr") c.floor_lr = v.get<double>();
      else fail(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::size_t> sample_templates(std::uint64_t seed, std::size_t epoch,
                                          std::span<const std::size_t> train_split, std::size_t m) {
  if (train_split.empty()) fail(ErrorCode::invalid_argument, "train split is empty");
  if (m > train_split.size()) {
    fail(ErrorCode::invalid_argument, "templates_per_epoch " + std::to_string(m) + " exceeds the " +
                                          std::to_string(train_split.size()) + " train templates");
  }
  std::vector<std::size_t> pool(train_split.begin(), train_split.end());
  Rng rng(derive_seed(seed, "templates", epoch));
  rng.shuffle(pool);
  pool.resize(m);
  return pool;
}

std::vector<std::size_t> sample_few_shot(std::span<const std::uint32_t> labels, std::size_t num_classes,
                                         std::size_t shots, std::uint64_t seed) {
  if (shots < 1) fail(ErrorCode::invalid_argument, "shots must be ≥ 1");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) fail(ErrorCode::out_of_range, "label " + std::to_string(labels[i]) + " out of range");
    by_class[labels[i]].push_back(i);
  }
  Rng rng(derive_seed(seed, "few_shot"));
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& pool = by_class[c];
    if (pool.empty()) fail(ErrorCode::invalid_argument, "class " + std::to_string(c) + " has no training images");
    if (pool.size() < shots) {
      log::warn("class " + std::to_string(c) + " has only " + std::to_string(pool.size()) + " images; using " +
                std::to_string(pool.size()) + " instead of " + std::to_string(shots) + " shots");
    }
    rng.shuffle(pool);
    const std::size_t take = std::min(shots, pool.size());
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return out;
}

model::MvpConfig model_config(const TrainConfig& c, const store::Benchmark& b) {
  model::MvpConfig m;
  m.text_dim = b.text_dim();
  m.image_dim = b.image_dim();
  m.hidden_dim = c.hidden_dim;
  m.latent_dim = c.latent_dim;
  m.variant = c.variant;
  m.linear_decoder = c.linear_decoder;
  m.logit_scale = c.logit_scale;
  return m;
}

Trainer::Trainer(const store::Benchmark& bench, TrainConfig config)
    : bench_(bench), config_(std::move(config)) {
  config_.validate();
  params_ = model::MvpParameters<float>::init(model_config(config_, bench_), config_.seed);
  setup();
}

Trainer::Trainer(const store::Benchmark& bench, TrainConfig config, model::MvpParameters<float> params)
    : bench_(bench), config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto want = model_config(config_, bench_);
  if (!(params_.config == want)) {
    fail(ErrorCode::shape_mismatch, "parameters were built for " + model::config_to_json(params_.config) +
                                        ", training needs " + model::config_to_json(want));
  }
  setup();
}

void Trainer::setup() {
  bench_.validate();
  train_templates_ = bench_.templates.indices(bench::Split::train);
  if (config_.templates_per_epoch > train_templates_.size()) {
    fail(ErrorCode::invalid_argument, "templates_per_epoch " + std::to_string(config_.templates_per_epoch) +
                                          " exceeds the " + std::to_string(train_templates_.size()) +
                                          " train templates");
  }
  few_shot_ = sample_few_shot(bench_.train.labels, bench_.num_classes(), config_.shots, config_.seed);
  images_ = store::gather_rows(bench_.train.embeddings, few_shot_).as<float>();
  classes_ = bench_.classes.as<float>();
  templates_ = bench_.template_features.as<float>();

  std::vector<core::Parameter<float>*> trainable;
  if (model::uses_vae(config_.variant)) {
    trainable = params_.all();
  } else {
    trainable = {&params_.fusion_w, &params_.fusion_b};
  }
  core::AdamWConfig ocfg;
  ocfg.weight_decay = config_.weight_decay;
  opt_ = std::make_unique<core::AdamW<float>>(trainable, ocfg);

  const std::size_t total = config_.epochs * steps_per_epoch();
  if (total > 0) schedule_ = core::warmup_cosine(config_.lr, total, config_.warmup_fraction, config_.floor_lr);
}

std::size_t Trainer::steps_per_epoch() const noexcept {
  return (few_shot_.size() + config_.batch_size - 1) / config_.batch_size;
}

std::string Trainer::config_echo() const {
  json echo = {{"train", json::parse(config_to_json(config_))},
               {"dataset", bench_.dataset},
               {"template_set_hash", bench_.templates.hash}};
  return echo.dump();
}

EpochStats Trainer::train_epoch(std::size_t epoch) {
  const std::size_t m = config_.templates_per_epoch;
  const std::size_t k = bench_.num_classes();
  const std::size_t d = bench_.text_dim();
  const Variant variant = config_.variant;

  const auto ids = sample_templates(config_.seed, epoch, train_templates_, m);
  EpochStats stats;
  stats.epoch = epoch;
  for (std::size_t idx : ids) stats.template_ids.push_back(bench_.templates.records[idx].id);

  Tensor2D<float> tmpl(m, d);
  Tensor2D<float> grid;
  if (model::decoupled(variant)) {
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(templates_.data() + ids[i] * d, d, tmpl.data() + i * d);
    }
  } else {
    std::vector<std::size_t> rows;
    rows.reserve(m * k);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < k; ++j) rows.push_back(bench_.grid.row(ids[i], j));
    }
    grid = store::gather_rows(bench_.grid.embeddings, rows).as<float>();
  }

  std::vector<std::size_t> order(few_shot_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng batch_rng(derive_seed(config_.seed, "batches", epoch));
  batch_rng.shuffle(order);

  const bool has_vae = model::uses_vae(variant);
  const model::ForwardMode mode{variant, has_vae, config_.resolved_variance_scale()};
  const std::size_t vae_rows = model::decoupled(variant) ? m : m * k;
  const std::size_t img_dim = images_.cols();
  const std::size_t nb = steps_per_epoch();
  double sum_mt = 0, sum_vae = 0, sum_total = 0, sum_l2 = 0, sum_cos = 0;

  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t begin = b * config_.batch_size;
    const std::size_t end = std::min(order.size(), begin + config_.batch_size);
    Tensor2D<float> x(end - begin, img_dim);
    std::vector<std::size_t> labels;
    for (std::size_t r = begin; r < end; ++r) {
      std::copy_n(images_.data() + order[r] * img_dim, img_dim, x.data() + (r - begin) * img_dim);
      labels.push_back(bench_.train.labels[few_shot_[order[r]]]);
    }

    Tensor2D<float> eps;
    if (has_vae) {
      eps = Tensor2D<float>(vae_rows, params_.config.latent_dim);
      Rng eps_rng(derive_seed(config_.seed, "eps", step_));
      for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<float>(eps_rng.normal());
    }

    model::ForwardInputs<float> in;
    in.images = &x;
    in.num_templates = m;
    in.num_classes = k;
    if (model::decoupled(variant)) {
      in.templates = &tmpl;
      in.classes = &classes_;
    } else {
      in.grid = &grid;
    }

    Graph<float> g;
    auto fw = model::build_forward(g, params_, in, mode, has_vae ? &eps : nullptr);
    auto l_mt = model::loss_mt(g, fw.logits, labels, m);
    auto total = l_mt;
    double vae_value = 0.0;
    if (fw.vae) {
      auto l_vae = model::loss_vae(g, *fw.vae);
      vae_value = g.scalar(l_vae);
      total = model::loss_total(g, l_mt, l_vae, config_.resolved_alpha());
    }
    const double mt_value = g.scalar(l_mt);
    const double total_value = g.scalar(total);
    if (!std::isfinite(total_value) || !std::isfinite(mt_value) || !std::isfinite(vae_value)) {
      fail(ErrorCode::non_finite, "non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                      std::to_string(b) + ": loss_mt=" + std::to_string(mt_value) +
                                      " loss_vae=" + std::to_string(vae_value) +
                                      " total=" + std::to_string(total_value));
    }

    if (fw.vae) {
      const auto& t = g.value(Graph<float>::Var{fw.vae->input});
      const auto& r = g.value(Graph<float>::Var{fw.vae->recon});
      double l2 = 0, cs = 0;
      for (std::size_t i = 0; i < t.rows(); ++i) {
        double dd = 0, tt = 0, rr = 0, tr = 0;
        for (std::size_t c = 0; c < t.cols(); ++c) {
          const double a = t(i, c), e = r(i, c);
          dd += (a - e) * (a - e);
          tt += a * a;
          rr += e * e;
          tr += a * e;
        }
        l2 += std::sqrt(dd);
        cs += (tt > 0 && rr > 0) ? tr / std::sqrt(tt * rr) : 0.0;
      }
      sum_l2 += l2 / static_cast<double>(t.rows());
      sum_cos += cs / static_cast<double>(t.rows());
    }

    g.backward(total);
    opt_->zero_grad();
    std::vector<core::Parameter<float>*> bound = params_.all();
    g.accumulate_into(bound);
    const double lr = schedule_ ? core::lr_at(step_, *schedule_) : config_.lr;
    opt_->step(lr);
    stats.lrs.push_back(lr);
    ++step_;

    sum_mt += mt_value;
    sum_vae += vae_value;
    sum_total += total_value;
  }
  const double inv = nb ? 1.0 / static_cast<double>(nb) : 0.0;
  stats.loss_mt = sum_mt * inv;
  stats.loss_vae = sum_vae * inv;
  stats.loss_total = sum_total * inv;
  stats.recon_l2 = sum_l2 * inv;
  stats.recon_cos = sum_cos * inv;
  return stats;
}

TrainResult train_run(const TrainConfig& config, const store::Benchmark& bench) {
  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(bench, config);
  TrainResult out;
  out.log.config_echo = trainer.config_echo();
  for (std::size_t e = 0; e < config.epochs; ++e) {
    out.log.epochs.push_back(trainer.train_epoch(e));
    const auto& s = out.log.epochs.back();
    log::info("epoch " + std::to_string(e + 1) + "/" + std::to_string(config.epochs) +
              " loss_mt=" + std::to_string(s.loss_mt) + " loss_vae=" + std::to_string(s.loss_vae) +
              " recon_cos=" + std::to_string(s.recon_cos));
  }
  out.checkpoint.params = trainer.params();
  out.checkpoint.step = trainer.step();
  out.checkpoint.config_echo = out.log.config_echo;
  out.log.steps = trainer.step();
  out.log.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::string runlog_jsonl(const RunLog& log) {
  std::string out;
  for (const auto& s : log.epochs) {
    json j = {{"epoch", s.epoch},
              {"loss_mt", s.loss_mt},
              {"loss_vae", s.loss_vae},
              {"loss_total", s.loss_total},
              {"recon_l2", s.recon_l2},
              {"recon_cos", s.recon_cos},
              {"lr", s.lrs.empty() ? 0.0 : s.lrs.front()},
              {"lrs", s.lrs},
              {"template_ids", s.template_ids}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string runlog_summary_json(const RunLog& log) {
  json j = {{"config", json::parse(log.config_echo)},
            {"epochs", log.epochs.size()},
            {"steps", log.steps},
            {"checkpoint", log.checkpoint_path},
            {"wall_clock_seconds", log.wall_clock_seconds}};
  if (!log.epochs.empty()) {
    const auto& last = log.epochs.back();
    j["final"] = {{"loss_mt", last.loss_mt},
                  {"loss_vae", last.loss_vae},
                  {"loss_total", last.loss_total},
                  {"recon_l2", last.recon_l2},
                  {"recon_cos", last.recon_cos}};
  }
  return j.dump(2) + "\n";
}

MvpEvaluator::MvpEvaluator(const model::MvpParameters<float>& params, const store::Benchmark& bench,
                           std::string name)
    : params_(params),
      bench_(bench),
      name_(std::move(name)),
      images_(bench.test.embeddings.as<float>()),
      classes_(bench.classes.as<float>()),
      templates_(bench.template_features.as<float>()) {
  if (params.config.text_dim != bench.text_dim() || params.config.image_dim != bench.image_dim()) {
    fail(ErrorCode::shape_mismatch, "checkpoint dims (text " + std::to_string(params.config.text_dim) +
                                        ", image " + std::to_string(params.config.image_dim) +
                                        ") do not match benchmark dims (text " +
                                        std::to_string(bench.text_dim()) + ", image " +
                                        std::to_string(bench.image_dim()) + ")");
  }
}

Tensor2D<float> MvpEvaluator::prototypes(std::size_t record) const {
  if (model::decoupled(params_.config.variant)) {
    const std::size_t d = templates_.cols();
    Tensor2D<float> t(1, d);
    std::copy_n(templates_.data() + record * d, d, t.data());
    return model::class_prototypes(params_, t, classes_);
  }
  return model::class_prototypes(params_, bench_.grid.block(record).cast<float>(), classes_);
}

double MvpEvaluator::accuracy(std::size_t record) {
  return bench::prototype_accuracy(images_, bench_.test.labels, prototypes(record));
}

double evaluate_accuracy(const model::MvpParameters<float>& params, const store::Benchmark& bench,
                         std::size_t record) {
  MvpEvaluator ev(params, bench);
  return ev.accuracy(record);
}

}  // namespace mvp::train
