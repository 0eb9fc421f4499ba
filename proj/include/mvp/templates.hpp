// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mvp::bench {

enum class EvalType { article, synonym, length, person, tense, sentiment };
enum class TrainType { article_synonym, length, sentiment, person_tense, detailed };
enum class Split { train, test };

inline constexpr std::array<EvalType, 6> kEvalTypes = {
    EvalType::article, EvalType::synonym, EvalType::length,
    EvalType::person,  EvalType::tense,   EvalType::sentiment};
inline constexpr std::array<TrainType, 5> kTrainTypes = {
    TrainType::article_synonym, TrainType::length, TrainType::sentiment, TrainType::person_tense,
    TrainType::detailed};

std::string_view to_string(EvalType t) noexcept;
std::string_view to_string(TrainType t) noexcept;
std::string_view to_string(Split s) noexcept;
EvalType parse_eval_type(std::string_view s);
TrainType parse_train_type(std::string_view s);
Split parse_split(std::string_view s);

/// Legal subtypes of an evaluation type, in canonical (report) order.
std::span<const std::string_view> subtypes_of(EvalType t) noexcept;
/// Position of `subtype` in subtypes_of(t), or nullopt when not legal.
std::optional<std::size_t> subtype_index(EvalType t, std::string_view subtype) noexcept;
/// Number of (type, subtype) pairs across all six types.
std::size_t subtype_pair_count() noexcept;
/// Flat index of a (type, subtype) pair in canonical order.
std::size_t subtype_pair_index(EvalType t, std::size_t subtype) noexcept;

/// The training-type each evaluation type falls under by default.
TrainType default_train_type(EvalType t) noexcept;

struct TemplateRecord {
  std::string id;
  std::string text;
  EvalType eval_type = EvalType::article;
  std::string subtype;
  TrainType train_type = TrainType::article_synonym;
  Split split = Split::train;

  friend bool operator==(const TemplateRecord&, const TemplateRecord&) = default;
};

using TrainTypeCounts = std::map<TrainType, std::size_t>;

/// Per-training-type counts of the full robust prompt dataset (733 total).
const TrainTypeCounts& reference_counts();

struct TemplateSet {
  std::string name;
  std::vector<TemplateRecord> records;
  /// Declared per-train-type counts, checked by validate() when present.
  std::optional<TrainTypeCounts> expected_counts;
  /// CRC-32 of the source document bytes as 8 lowercase hex digits; empty
  /// when the set was built in memory.
  std::string hash;

  std::size_t size() const noexcept { return records.size(); }
  /// Row position of a record id; throws out_of_range when absent.
  std::size_t index_of(std::string_view id) const;
  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> indices(Split split, EvalType type) const;
  TrainTypeCounts counts() const;
};

struct ValidateOptions {
  /// Require at least one test template for every subtype of every type.
  bool require_test_coverage = true;
};

/// Throws schema errors for: placeholder count != 1, duplicate id, unknown
/// subtype, the same text in train and test of one type, missing test
/// coverage, and declared counts that disagree with the records.
void validate(const TemplateSet& set, const ValidateOptions& opts = {});

TemplateSet parse_template_set(std::string_view json_text, const ValidateOptions& opts = {});
TemplateSet load_template_set(const std::filesystem::path& path, const ValidateOptions& opts = {});
std::string template_set_to_json(const TemplateSet& set);

std::string render_prompt(const TemplateRecord& t, std::string_view class_name);
std::string render_prompt(std::string_view text, std::string_view class_name);
/// Removes the placeholder and one adjacent space, then collapses runs of
/// spaces. "a photo of a {}." -> "a photo of a."
std::string decouple_template(const TemplateRecord& t);
std::string decouple_template(std::string_view text);

/// `n` records cycling through the 14 (type, subtype) pairs; within each
/// pair occurrences alternate train, test, train, ...
TemplateSet make_synthetic_taxonomy(std::size_t n);

}  // namespace mvp::bench
