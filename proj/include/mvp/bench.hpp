// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvp/embedstore.hpp"
#include "mvp/templates.hpp"
#include "mvp/tensor.hpp"

namespace mvp::bench {

/// Index of the largest score; ties go to the lowest index.
std::size_t best_subtype(std::span<const double> scores);

/// |S_best - mean(others)| / S_best * 100. Needs n >= 2 and nonnegative
/// scores; returns 0 (with a warning) when every score is 0.
double compute_prs(std::span<const double> scores);

struct TypeResult {
  EvalType type = EvalType::article;
  std::vector<std::string> subtypes;
  std::vector<double> scores;
  std::size_t best = 0;
  double prs = 0.0;
};

struct TemplateAccuracy {
  std::string id;
  EvalType eval_type = EvalType::article;
  std::string subtype;
  double accuracy = 0.0;
};

struct ReportMeta {
  std::string dataset;
  std::string model;
  std::uint64_t seed = 0;
  std::string template_set_hash;
};

struct PrsReport {
  ReportMeta meta;
  std::vector<TypeResult> types;  ///< canonical type order
  double prs_avg = 0.0;
  double mean_accuracy = 0.0;
  std::vector<TemplateAccuracy> templates;

  double prs(EvalType t) const;
};

/// Aggregates per-type PRS values; all six types must be present.
PrsReport build_report(const std::map<EvalType, double>& per_type_prs, const ReportMeta& meta);
PrsReport build_report(std::vector<TypeResult> types, const ReportMeta& meta,
                       std::vector<TemplateAccuracy> templates = {});

std::string report_to_json(const PrsReport& r);
PrsReport report_from_json(std::string_view text);
std::string report_to_text(const PrsReport& r);

/// Model-by-type table (PRS per type plus PRS-Avg). Reports must agree on
/// dataset and template-set hash.
std::string comparison_table(std::span<const PrsReport> reports);

/// CSV: template_id,eval_type,subtype,model,accuracy, one row per template
/// per report.
std::string emit_plot_data(std::span<const PrsReport> reports);

/// CSV dump of (template x class) feature rows for external projection.
/// `features` has rows.size() * num_classes rows, row i*K + j.
std::string feature_dump_csv(std::span<const TemplateRecord> rows, std::size_t num_classes,
                             const core::Tensor2D<double>& features);

/// Fraction of images whose most similar prototype row (cosine, lowest
/// index on ties) matches the label.
template <typename T>
double prototype_accuracy(const core::Tensor2D<T>& images, std::span<const std::uint32_t> labels,
                          const core::Tensor2D<T>& prototypes);

/// Zero-shot accuracy of one template: `grid_block` is its K x dim rendered
/// prompt block.
double zero_shot_eval(const store::ImageShard& shard, const core::Tensor2D<double>& grid_block);

/// Per-template accuracy oracle used by the benchmark.
class TemplateEvaluator {
 public:
  virtual ~TemplateEvaluator() = default;
  virtual std::string name() const = 0;
  /// Accuracy on the test shard for the template at `record` in the set.
  virtual double accuracy(std::size_t record) = 0;
};

class ZeroShotEvaluator final : public TemplateEvaluator {
 public:
  explicit ZeroShotEvaluator(const store::Benchmark& b);
  std::string name() const override { return "zero-shot"; }
  double accuracy(std::size_t record) override;

 private:
  const store::Benchmark& bench_;
  core::Tensor2D<double> images_;
};

/// S_i for every subtype of `type`, each the mean accuracy over that
/// subtype's test templates.
std::vector<double> eval_subtype_scores(TemplateEvaluator& ev, const TemplateSet& set, EvalType type,
                                        std::vector<TemplateAccuracy>* per_template = nullptr);

/// Full protocol over the test split of every type.
PrsReport run_benchmark(TemplateEvaluator& ev, const store::Benchmark& b, const ReportMeta& meta);

}  // namespace mvp::bench
