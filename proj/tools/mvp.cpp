// SPDX-License-Identifier: Apache-2.0
// mvp: synthesize benchmarks, train heads, evaluate prompt robustness.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mvp/bench.hpp"
#include "mvp/embedstore.hpp"
#include "mvp/error.hpp"
#include "mvp/io.hpp"
#include "mvp/log.hpp"
#include "mvp/model.hpp"
#include "mvp/templates.hpp"
#include "mvp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kUsage = 2, kNumeric = 3, kCorrupt = 4 };

int exit_code(mvp::ErrorCode c) {
  switch (c) {
    case mvp::ErrorCode::non_finite: return kNumeric;
    case mvp::ErrorCode::bad_magic:
    case mvp::ErrorCode::unsupported_version:
    case mvp::ErrorCode::checksum_mismatch:
    case mvp::ErrorCode::missing_section: return kCorrupt;
    default: return kUsage;
  }
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out_dir;
  std::string verbosity = "warn";
};

fs::path out_dir(const Globals& g) {
  if (!g.out_dir.empty()) return g.out_dir;
  if (const char* env = std::getenv("MVP_OUT_DIR"); env && *env) return env;
  return ".";
}

json load_config(const Globals& g) {
  if (g.config.empty()) return json::object();
  const std::string text = mvp::io::read_file(g.config);
  try {
    json j = json::parse(text);
    if (!j.is_object()) mvp::fail(mvp::ErrorCode::invalid_argument, "config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    mvp::fail(mvp::ErrorCode::invalid_argument, g.config + " is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  mvp::store::SynthSpec spec;
};

int run_synth(const Globals& g, const SynthArgs& a) {
  if (!g.seed) mvp::fail(mvp::ErrorCode::invalid_argument, "synth requires --seed");
  auto spec = a.spec;
  spec.seed = *g.seed;
  spec.validate();
  const auto taxonomy = mvp::bench::make_synthetic_taxonomy(spec.n_templates);
  mvp::bench::validate(taxonomy);
  const auto b = mvp::store::gen_synthetic_benchmark(spec, taxonomy);
  const auto manifest = mvp::store::save_benchmark(b, out_dir(g));
  std::cout << manifest.string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string manifest;
  mvp::train::TrainConfig flags;
  std::string variant;
  CLI::App* cmd = nullptr;
};

mvp::train::TrainConfig resolve_train_config(const Globals& g, const TrainArgs& a) {
  const json file = load_config(g);
  mvp::train::TrainConfig c = mvp::train::config_from_json(file.dump());
  auto given = [&](const char* name) { return a.cmd->count(name) > 0; };
  if (given("--lr")) c.lr = a.flags.lr;
  if (given("--batch")) c.batch_size = a.flags.batch_size;
  if (given("--templates-per-epoch")) c.templates_per_epoch = a.flags.templates_per_epoch;
  if (given("--shots")) c.shots = a.flags.shots;
  if (given("--epochs")) c.epochs = a.flags.epochs;
  if (given("--latent")) c.latent_dim = a.flags.latent_dim;
  if (given("--hidden")) c.hidden_dim = a.flags.hidden_dim;
  if (given("--alpha")) c.alpha = a.flags.alpha;
  if (given("--variance-scale")) c.variance_scale = a.flags.variance_scale;
  if (given("--weight-decay")) c.weight_decay = a.flags.weight_decay;
  if (given("--logit-scale")) c.logit_scale = a.flags.logit_scale;
  if (given("--warmup-fraction")) c.warmup_fraction = a.flags.warmup_fraction;
  if (given("--floor-lr")) c.floor_lr = a.flags.floor_lr;
  if (given("--linear-decoder")) c.linear_decoder = true;
  if (given("--variant")) c.variant = mvp::model::parse_variant(a.variant);
  if (g.seed) {
    c.seed = *g.seed;
  } else if (!file.contains("seed")) {
    mvp::fail(mvp::ErrorCode::invalid_argument, "train requires --seed (or a seed in --config)");
  }
  c.validate();
  return c;
}

int run_train(const Globals& g, const TrainArgs& a) {
  const auto config = resolve_train_config(g, a);
  const auto bench = mvp::store::load_benchmark(a.manifest);
  auto result = mvp::train::train_run(config, bench);
  const fs::path dir = out_dir(g);
  const fs::path ckpt = dir / "checkpoint.mvpc";
  result.log.checkpoint_path = ckpt.string();
  mvp::model::save_checkpoint(result.checkpoint, ckpt);
  mvp::io::write_file_atomic(dir / "runlog.jsonl", mvp::train::runlog_jsonl(result.log));
  mvp::io::write_file_atomic(dir / "summary.json", mvp::train::runlog_summary_json(result.log));
  if (result.log.epochs.empty()) {
    std::printf("trained 0 epochs; checkpoint %s\n", ckpt.string().c_str());
  } else {
    const auto& last = result.log.epochs.back();
    std::printf("epochs=%zu steps=%zu loss_mt=%.6f loss_vae=%.6f recon_cos=%.4f checkpoint=%s\n",
                result.log.epochs.size(), result.log.steps, last.loss_mt, last.loss_vae,
                last.recon_cos, ckpt.string().c_str());
  }
  return kOk;
}

struct EvalArgs {
  std::string manifest;
  std::string checkpoint;
  bool zero_shot = false;
  std::string name;
  bool dump_features = false;
};

int run_eval(const Globals& g, const EvalArgs& a) {
  if (a.zero_shot == !a.checkpoint.empty()) {
    mvp::fail(mvp::ErrorCode::invalid_argument, "eval needs exactly one of --zero-shot or --checkpoint");
  }
  const auto bench = mvp::store::load_benchmark(a.manifest);
  mvp::bench::ReportMeta meta;
  meta.dataset = bench.dataset;
  meta.template_set_hash = bench.templates.hash;

  mvp::bench::PrsReport report;
  std::optional<mvp::core::Tensor2D<double>> features;
  const auto test_ids = bench.templates.indices(mvp::bench::Split::test);
  std::vector<mvp::bench::TemplateRecord> test_records;
  for (std::size_t i : test_ids) test_records.push_back(bench.templates.records[i]);
  const std::size_t k = bench.num_classes();

  if (a.zero_shot) {
    meta.model = a.name.empty() ? "zero-shot" : a.name;
    meta.seed = g.seed.value_or(0);
    mvp::bench::ZeroShotEvaluator ev(bench);
    report = mvp::bench::run_benchmark(ev, bench, meta);
    if (a.dump_features) {
      std::vector<std::size_t> rows;
      for (std::size_t i : test_ids)
        for (std::size_t j = 0; j < k; ++j) rows.push_back(bench.grid.row(i, j));
      features = mvp::store::gather_rows(bench.grid.embeddings, rows).as<double>();
    }
  } else {
    const auto ckpt = mvp::model::load_checkpoint<float>(a.checkpoint);
    const json echo = json::parse(ckpt.config_echo);
    meta.model = a.name.empty() ? "mvp-" + std::string(mvp::model::to_string(ckpt.params.config.variant)) : a.name;
    meta.seed = echo.contains("train") ? echo["train"].value("seed", std::uint64_t{0}) : 0;
    mvp::train::MvpEvaluator ev(ckpt.params, bench, meta.model);
    report = mvp::bench::run_benchmark(ev, bench, meta);
    if (a.dump_features) {
      mvp::core::Tensor2D<double> f(test_ids.size() * k, bench.image_dim());
      for (std::size_t i = 0; i < test_ids.size(); ++i) {
        const auto p = ev.prototypes(test_ids[i]).cast<double>();
        std::copy(p.values().begin(), p.values().end(), f.data() + i * k * f.cols());
      }
      features = std::move(f);
    }
  }

  const fs::path dir = out_dir(g);
  mvp::io::write_file_atomic(dir / "report.json", mvp::bench::report_to_json(report));
  mvp::io::write_file_atomic(dir / "report.txt", mvp::bench::report_to_text(report));
  const std::vector<mvp::bench::PrsReport> one = {report};
  mvp::io::write_file_atomic(dir / "accuracy.csv", mvp::bench::emit_plot_data(one));
  if (features) {
    mvp::io::write_file_atomic(dir / "features.csv",
                               mvp::bench::feature_dump_csv(test_records, k, *features));
  }
  std::printf("model=%s accuracy=%.4f PRS-Avg %.3f\n", report.meta.model.c_str(), report.mean_accuracy,
              report.prs_avg);
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
};

int run_report(const Globals& g, const ReportArgs& a) {
  std::vector<mvp::bench::PrsReport> reports;
  for (const auto& p : a.inputs) reports.push_back(mvp::bench::report_from_json(mvp::io::read_file(p)));
  const std::string table = mvp::bench::comparison_table(reports);
  const fs::path dir = out_dir(g);
  mvp::io::write_file_atomic(dir / "comparison.txt", table);
  mvp::io::write_file_atomic(dir / "plot_data.csv", mvp::bench::emit_plot_data(reports));
  std::cout << table;
  return kOk;
}

struct InspectArgs {
  std::string path;
};

int run_inspect(const InspectArgs& a) {
  if (fs::is_directory(a.path)) {
    std::cerr << "error: " << a.path << " is a directory, expected a store file\n";
    return kUsage;
  }
  const auto info = mvp::store::inspect_store(a.path);
  std::printf("rows=%llu dim=%u dtype=%s checksum=%s\n",
              static_cast<unsigned long long>(info.header.rows), info.header.dim,
              std::string(mvp::store::to_string(info.header.dtype)).c_str(),
              info.checksum_ok ? "ok" : "mismatch");
  return info.checksum_ok ? kOk : kCorrupt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-robustness training and benchmarking on frozen embeddings"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Random seed (required by synth and train)");
  app.add_option("--config", g.config, "JSON run configuration (TrainConfig field names)")->check(CLI::ExistingFile);
  app.add_option("--out-dir", g.out_dir, "Output directory (default: $MVP_OUT_DIR or .)");
  app.add_option("--verbosity", g.verbosity, "quiet, warn, info or debug")
      ->check(CLI::IsMember({"quiet", "warn", "info", "debug"}));

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic benchmark");
  c_synth->add_option("--classes", synth.spec.n_classes, "Number of classes")->capture_default_str();
  c_synth->add_option("--dim", synth.spec.dim, "Embedding dimension")->capture_default_str();
  c_synth->add_option("--templates", synth.spec.n_templates, "Number of templates")->capture_default_str();
  c_synth->add_option("--sensitivity", synth.spec.sensitivity, "Subtype offset multiplier")->capture_default_str();
  c_synth->add_option("--noise", synth.spec.noise_sigma, "Image noise sigma")->capture_default_str();
  c_synth->add_option("--class-coherence", synth.spec.class_coherence)->capture_default_str();
  c_synth->add_option("--template-norm", synth.spec.template_norm)->capture_default_str();
  c_synth->add_option("--subtype-offset", synth.spec.subtype_offset)->capture_default_str();
  c_synth->add_option("--template-jitter", synth.spec.template_jitter)->capture_default_str();
  c_synth->add_option("--train-per-class", synth.spec.train_per_class)->capture_default_str();
  c_synth->add_option("--test-per-class", synth.spec.test_per_class)->capture_default_str();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train an MVP head");
  train.cmd = c_train;
  c_train->add_option("--manifest", train.manifest, "Benchmark manifest")->required();
  c_train->add_option("--lr", train.flags.lr);
  c_train->add_option("--batch", train.flags.batch_size);
  c_train->add_option("--templates-per-epoch", train.flags.templates_per_epoch);
  c_train->add_option("--shots", train.flags.shots);
  c_train->add_option("--epochs", train.flags.epochs);
  c_train->add_option("--latent", train.flags.latent_dim);
  c_train->add_option("--hidden", train.flags.hidden_dim);
  c_train->add_option("--alpha", train.flags.alpha);
  c_train->add_option("--variance-scale", train.flags.variance_scale);
  c_train->add_option("--weight-decay", train.flags.weight_decay);
  c_train->add_option("--logit-scale", train.flags.logit_scale);
  c_train->add_option("--warmup-fraction", train.flags.warmup_fraction);
  c_train->add_option("--floor-lr", train.flags.floor_lr);
  c_train->add_flag("--linear-decoder", "Drop the GELU after the VAE decoder");
  c_train->add_option("--variant", train.variant, "full, no_decouple, no_vae, no_decouple_no_vae")
      ->check(CLI::IsMember({"full", "no_decouple", "no_vae", "no_decouple_no_vae"}));

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Run the robustness benchmark");
  c_eval->add_option("--manifest", eval.manifest, "Benchmark manifest")->required();
  auto* zs = c_eval->add_flag("--zero-shot", eval.zero_shot, "Evaluate the untrained prompt baseline");
  c_eval->add_option("--checkpoint", eval.checkpoint, "Trained checkpoint")->excludes(zs);
  c_eval->add_option("--name", eval.name, "Model name recorded in the report");
  c_eval->add_flag("--dump-features", eval.dump_features, "Also write features.csv");

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Merge reports into a comparison table");
  c_report->add_option("reports", report.inputs, "report.json files")->required()->check(CLI::ExistingFile);

  InspectArgs inspect;
  auto* c_inspect = app.add_subcommand("inspect", "Summarize a store file");
  c_inspect->add_option("path", inspect.path, "Store file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  using mvp::log::Level;
  mvp::log::set_level(g.verbosity == "quiet" ? Level::quiet
                      : g.verbosity == "info" ? Level::info
                      : g.verbosity == "debug" ? Level::debug
                                               : Level::warn);
  try {
    if (*c_synth) return run_synth(g, synth);
    if (*c_train) return run_train(g, train);
    if (*c_eval) return run_eval(g, eval);
    if (*c_report) return run_report(g, report);
    if (*c_inspect) return run_inspect(inspect);
  } catch (const mvp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
