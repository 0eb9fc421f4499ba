// SPDX-License-Identifier: Apache-2.0
#include "mvp/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mvp/error.hpp"
#include "mvp/log.hpp"

namespace mvp::bench {

using core::Tensor2D;
using nlohmann::json;

std::size_t best_subtype(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorCode::invalid_argument, "no scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

double compute_prs(std::span<const double> scores) {
  if (scores.size() < 2) {
    fail(ErrorCode::invalid_argument, "PRS needs at least 2 subtype scores, got " + std::to_string(scores.size()));
  }
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0) fail(ErrorCode::invalid_argument, "PRS scores must be finite and nonnegative");
  }
  const std::size_t best = best_subtype(scores);
  const double s_best = scores[best];
  if (s_best == 0.0) {
    log::warn("PRS: every subtype score is 0, reporting PRS = 0");
    return 0.0;
  }
  // Summing the gaps rather than the scores keeps equal scores at exactly 0.
  double gap = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != best) gap += s_best - scores[i];
  }
  gap /= static_cast<double>(scores.size() - 1);
  return std::abs(gap) / s_best * 100.0;
}

double PrsReport::prs(EvalType t) const {
  for (const auto& r : types) {
    if (r.type == t) return r.prs;
  }
  fail(ErrorCode::missing_section, "report has no " + std::string(to_string(t)) + " entry");
}

PrsReport build_report(const std::map<EvalType, double>& per_type_prs, const ReportMeta& meta) {
  std::vector<TypeResult> types;
  for (EvalType t : kEvalTypes) {
    auto it = per_type_prs.find(t);
    if (it == per_type_prs.end()) {
      fail(ErrorCode::invalid_argument, "report is missing type " + std::string(to_string(t)));
    }
    TypeResult r;
    r.type = t;
    r.prs = it->second;
    types.push_back(std::move(r));
  }
  return build_report(std::move(types), meta);
}

PrsReport build_report(std::vector<TypeResult> types, const ReportMeta& meta,
                       std::vector<TemplateAccuracy> templates) {
  PrsReport out;
  out.meta = meta;
  for (EvalType t : kEvalTypes) {
    auto it = std::find_if(types.begin(), types.end(), [t](const auto& r) { return r.type == t; });
    if (it == types.end()) fail(ErrorCode::invalid_argument, "report is missing type " + std::string(to_string(t)));
    out.types.push_back(*it);
  }
  if (types.size() != kEvalTypes.size()) fail(ErrorCode::invalid_argument, "report has duplicate types");
  double sum = 0.0;
  for (const auto& r : out.types) sum += r.prs;
  out.prs_avg = sum / static_cast<double>(out.types.size());
  out.templates = std::move(templates);
  if (!out.templates.empty()) {
    double acc = 0.0;
    for (const auto& t : out.templates) acc += t.accuracy;
    out.mean_accuracy = acc / static_cast<double>(out.templates.size());
  }
  return out;
}

std::string report_to_json(const PrsReport& r) {
  json doc = json::object();
  doc["meta"] = {{"dataset", r.meta.dataset},
                 {"model", r.meta.model},
                 {"seed", r.meta.seed},
                 {"template_set_hash", r.meta.template_set_hash}};
  json types = json::array();
  for (const auto& t : r.types) {
    json subs = json::array();
    for (std::size_t i = 0; i < t.scores.size(); ++i) {
      subs.push_back({{"subtype", t.subtypes[i]}, {"score", t.scores[i]}});
    }
    json entry = {{"type", to_string(t.type)}, {"prs", t.prs}, {"subtypes", subs}};
    if (!t.scores.empty()) entry["best"] = t.subtypes[t.best];
    types.push_back(std::move(entry));
  }
  doc["types"] = std::move(types);
  doc["prs_avg"] = r.prs_avg;
  doc["mean_accuracy"] = r.mean_accuracy;
  json tmpl = json::array();
  for (const auto& t : r.templates) {
    tmpl.push_back({{"id", t.id},
                    {"eval_type", to_string(t.eval_type)},
                    {"subtype", t.subtype},
                    {"accuracy", t.accuracy}});
  }
  doc["templates"] = std::move(tmpl);
  return doc.dump(2) + "\n";
}

PrsReport report_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    PrsReport r;
    const auto& meta = doc.at("meta");
    r.meta.dataset = meta.at("dataset").get<std::string>();
    r.meta.model = meta.at("model").get<std::string>();
    r.meta.seed = meta.at("seed").get<std::uint64_t>();
    r.meta.template_set_hash = meta.at("template_set_hash").get<std::string>();
    for (const auto& t : doc.at("types")) {
      TypeResult tr;
      tr.type = parse_eval_type(t.at("type").get<std::string>());
      tr.prs = t.at("prs").get<double>();
      for (const auto& s : t.at("subtypes")) {
        tr.subtypes.push_back(s.at("subtype").get<std::string>());
        tr.scores.push_back(s.at("score").get<double>());
      }
      if (!tr.scores.empty()) tr.best = best_subtype(tr.scores);
      r.types.push_back(std::move(tr));
    }
    r.prs_avg = doc.at("prs_avg").get<double>();
    r.mean_accuracy = doc.at("mean_accuracy").get<double>();
    for (const auto& t : doc.at("templates")) {
      r.templates.push_back({t.at("id").get<std::string>(), parse_eval_type(t.at("eval_type").get<std::string>()),
                             t.at("subtype").get<std::string>(), t.at("accuracy").get<double>()});
    }
    if (r.types.size() != kEvalTypes.size()) fail(ErrorCode::schema, "report must list all six types");
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("malformed report: ") + e.what());
  }
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return left ? s + fill : fill + s;
}

}  // namespace

std::string report_to_text(const PrsReport& r) {
  std::ostringstream out;
  out << "dataset " << r.meta.dataset << "  model " << r.meta.model << "  seed " << r.meta.seed << "\n";
  out << pad("type", 12, true) << pad("PRS", 10) << "  subtype scores\n";
  for (const auto& t : r.types) {
    out << pad(std::string(to_string(t.type)), 12, true) << pad(fixed(t.prs, 3), 10) << "  ";
    for (std::size_t i = 0; i < t.scores.size(); ++i) {
      if (i) out << "  ";
      out << t.subtypes[i] << '=' << fixed(t.scores[i], 4);
      if (i == t.best) out << '*';
    }
    out << "\n";
  }
  out << pad("PRS-Avg", 12, true) << pad(fixed(r.prs_avg, 3), 10) << "\n";
  out << pad("accuracy", 12, true) << pad(fixed(r.mean_accuracy, 4), 10) << "\n";
  return out.str();
}

std::string comparison_table(std::span<const PrsReport> reports) {
  if (reports.empty()) fail(ErrorCode::invalid_argument, "no reports to compare");
  const auto& ref = reports.front().meta;
  for (const auto& r : reports) {
    if (r.meta.template_set_hash != ref.template_set_hash) {
      fail(ErrorCode::invalid_argument, "reports use different template sets (hash " + ref.template_set_hash +
                                            " vs " + r.meta.template_set_hash + "); PRS values are not comparable");
    }
    if (r.meta.dataset != ref.dataset) {
      fail(ErrorCode::invalid_argument, "reports come from different datasets (" + ref.dataset + " vs " +
                                            r.meta.dataset + ")");
    }
  }
  std::size_t width = 10;
  for (const auto& r : reports) width = std::max(width, r.meta.model.size() + 2);
  std::ostringstream out;
  out << pad("metric", 16, true);
  for (const auto& r : reports) out << pad(r.meta.model, width);
  out << "\n";
  for (EvalType t : kEvalTypes) {
    out << pad("PRS-" + std::string(to_string(t)), 16, true);
    for (const auto& r : reports) out << pad(fixed(r.prs(t), 3), width);
    out << "\n";
  }
  out << pad("PRS-Avg", 16, true);
  for (const auto& r : reports) out << pad(fixed(r.prs_avg, 3), width);
  out << "\n";
  return out.str();
}

std::string emit_plot_data(std::span<const PrsReport> reports) {
  std::ostringstream out;
  out << "template_id,eval_type,subtype,model,accuracy\n";
  for (const auto& r : reports) {
    for (const auto& t : r.templates) {
      out << t.id << ',' << to_string(t.eval_type) << ',' << t.subtype << ',' << r.meta.model << ','
          << fixed(t.accuracy, 6) << "\n";
    }
  }
  return out.str();
}

std::string feature_dump_csv(std::span<const TemplateRecord> rows, std::size_t num_classes,
                             const Tensor2D<double>& features) {
  if (features.rows() != rows.size() * num_classes) {
    fail(ErrorCode::shape_mismatch, "feature dump has " + std::to_string(features.rows()) + " rows for " +
                                        std::to_string(rows.size()) + " templates x " +
                                        std::to_string(num_classes) + " classes");
  }
  std::ostringstream out;
  out << "template_id,eval_type,subtype,class";
  for (std::size_t c = 0; c < features.cols(); ++c) out << ",f" << c;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < num_classes; ++j) {
      out << rows[i].id << ',' << to_string(rows[i].eval_type) << ',' << rows[i].subtype << ',' << j;
      for (std::size_t c = 0; c < features.cols(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.9g", features(i * num_classes + j, c));
        out << buf;
      }
      out << "\n";
    }
  }
  return out.str();
}

template <typename T>
double prototype_accuracy(const Tensor2D<T>& images, std::span<const std::uint32_t> labels,
                          const Tensor2D<T>& prototypes) {
  if (images.rows() == 0) fail(ErrorCode::invalid_argument, "empty test shard");
  if (labels.size() != images.rows()) fail(ErrorCode::shape_mismatch, "label count differs from image rows");
  if (images.cols() != prototypes.cols()) {
    fail(ErrorCode::shape_mismatch, "image dim " + std::to_string(images.cols()) + " != prompt dim " +
                                        std::to_string(prototypes.cols()));
  }
  const std::size_t k = prototypes.rows(), d = images.cols();
  std::vector<T> inv_norm(k);
  for (std::size_t j = 0; j < k; ++j) {
    T ss = 0;
    for (std::size_t c = 0; c < d; ++c) ss += prototypes(j, c) * prototypes(j, c);
    if (!(ss > T(0))) fail(ErrorCode::invalid_argument, "prototype row " + std::to_string(j) + " is all zeros");
    inv_norm[j] = T(1) / std::sqrt(ss);
  }
  std::size_t correct = 0;
  std::vector<T> scores(k);
  for (std::size_t i = 0; i < images.rows(); ++i) {
    // Image norm is shared by every class score and cannot change the argmax.
    for (std::size_t j = 0; j < k; ++j) {
      T dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += images(i, c) * prototypes(j, c);
      scores[j] = dot * inv_norm[j];
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (scores[j] > scores[best]) best = j;
    }
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(images.rows());
}

template double prototype_accuracy<float>(const Tensor2D<float>&, std::span<const std::uint32_t>,
                                          const Tensor2D<float>&);
template double prototype_accuracy<double>(const Tensor2D<double>&, std::span<const std::uint32_t>,
                                           const Tensor2D<double>&);

double zero_shot_eval(const store::ImageShard& shard, const Tensor2D<double>& grid_block) {
  return prototype_accuracy(shard.embeddings.as<double>(), shard.labels, grid_block);
}

ZeroShotEvaluator::ZeroShotEvaluator(const store::Benchmark& b)
    : bench_(b), images_(b.test.embeddings.as<double>()) {}

double ZeroShotEvaluator::accuracy(std::size_t record) {
  return prototype_accuracy(images_, bench_.test.labels, bench_.grid.block(record));
}

std::vector<double> eval_subtype_scores(TemplateEvaluator& ev, const TemplateSet& set, EvalType type,
                                        std::vector<TemplateAccuracy>* per_template) {
  const auto subs = subtypes_of(type);
  std::vector<double> sums(subs.size(), 0.0);
  std::vector<std::size_t> counts(subs.size(), 0);
  for (std::size_t idx : set.indices(Split::test, type)) {
    const auto& rec = set.records[idx];
    const auto s = subtype_index(type, rec.subtype);
    if (!s) fail(ErrorCode::schema, "template '" + rec.id + "' has an illegal subtype");
    const double acc = ev.accuracy(idx);
    sums[*s] += acc;
    ++counts[*s];
    if (per_template) per_template->push_back({rec.id, type, rec.subtype, acc});
  }
  std::vector<double> scores(subs.size());
  for (std::size_t s = 0; s < subs.size(); ++s) {
    if (counts[s] == 0) {
      fail(ErrorCode::schema, "no test template for " + std::string(to_string(type)) + "/" + std::string(subs[s]));
    }
    scores[s] = sums[s] / static_cast<double>(counts[s]);
  }
  return scores;
}

PrsReport run_benchmark(TemplateEvaluator& ev, const store::Benchmark& b, const ReportMeta& meta) {
  std::vector<TypeResult> types;
  std::vector<TemplateAccuracy> per_template;
  for (EvalType t : kEvalTypes) {
    TypeResult r;
    r.type = t;
    for (auto s : subtypes_of(t)) r.subtypes.emplace_back(s);
    r.scores = eval_subtype_scores(ev, b.templates, t, &per_template);
    r.best = best_subtype(r.scores);
    r.prs = compute_prs(r.scores);
    types.push_back(std::move(r));
  }
  return build_report(std::move(types), meta, std::move(per_template));
}

}  // namespace mvp::bench
