// SPDX-License-Identifier: Apache-2.0
#include "mvp/templates.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <utility>

#include <nlohmann/json.hpp>

#include "mvp/error.hpp"
#include "mvp/io.hpp"

namespace mvp::bench {

using nlohmann::json;

namespace {

constexpr std::string_view kArticle[] = {"with_article", "without_article"};
constexpr std::string_view kSynonym[] = {"photo", "alternative"};
constexpr std::string_view kLength[] = {"short", "long"};
constexpr std::string_view kPerson[] = {"first", "second", "third"};
constexpr std::string_view kTense[] = {"present", "past", "future"};
constexpr std::string_view kSentiment[] = {"positive", "negative"};

constexpr std::string_view kPlaceholder = "{}";

std::size_t count_placeholders(std::string_view text) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(kPlaceholder); pos != std::string_view::npos;
       pos = text.find(kPlaceholder, pos + kPlaceholder.size())) {
    ++n;
  }
  return n;
}

}  // namespace

std::string_view to_string(EvalType t) noexcept {
  switch (t) {
    case EvalType::article: return "article";
    case EvalType::synonym: return "synonym";
    case EvalType::length: return "length";
    case EvalType::person: return "person";
    case EvalType::tense: return "tense";
    case EvalType::sentiment: return "sentiment";
  }
  return "?";
}

std::string_view to_string(TrainType t) noexcept {
  switch (t) {
    case TrainType::article_synonym: return "article_synonym";
    case TrainType::length: return "length";
    case TrainType::sentiment: return "sentiment";
    case TrainType::person_tense: return "person_tense";
    case TrainType::detailed: return "detailed";
  }
  return "?";
}

std::string_view to_string(Split s) noexcept { return s == Split::train ? "train" : "test"; }

EvalType parse_eval_type(std::string_view s) {
  for (EvalType t : kEvalTypes) {
    if (to_string(t) == s) return t;
  }
  fail(ErrorCode::schema, "unknown eval_type '" + std::string(s) + "'");
}

TrainType parse_train_type(std::string_view s) {
  for (TrainType t : kTrainTypes) {
    if (to_string(t) == s) return t;
  }
  fail(ErrorCode::schema, "unknown train_type '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  fail(ErrorCode::schema, "unknown split '" + std::string(s) + "'");
}

std::span<const std::string_view> subtypes_of(EvalType t) noexcept {
  switch (t) {
    case EvalType::article: return kArticle;
    case EvalType::synonym: return kSynonym;
    case EvalType::length: return kLength;
    case EvalType::person: return kPerson;
    case EvalType::tense: return kTense;
    case EvalType::sentiment: return kSentiment;
  }
  return {};
}

std::optional<std::size_t> subtype_index(EvalType t, std::string_view subtype) noexcept {
  const auto subs = subtypes_of(t);
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i] == subtype) return i;
  }
  return std::nullopt;
}

std::size_t subtype_pair_count() noexcept {
  std::size_t n = 0;
  for (EvalType t : kEvalTypes) n += subtypes_of(t).size();
  return n;
}

std::size_t subtype_pair_index(EvalType t, std::size_t subtype) noexcept {
  std::size_t base = 0;
  for (EvalType u : kEvalTypes) {
    if (u == t) break;
    base += subtypes_of(u).size();
  }
  return base + subtype;
}

TrainType default_train_type(EvalType t) noexcept {
  switch (t) {
    case EvalType::article:
    case EvalType::synonym: return TrainType::article_synonym;
    case EvalType::length: return TrainType::length;
    case EvalType::person:
    case EvalType::tense: return TrainType::person_tense;
    case EvalType::sentiment: return TrainType::sentiment;
  }
  return TrainType::detailed;
}

const TrainTypeCounts& reference_counts() {
  static const TrainTypeCounts counts = {
      {TrainType::article_synonym, 155}, {TrainType::length, 86}, {TrainType::sentiment, 72},
      {TrainType::person_tense, 24},     {TrainType::detailed, 396},
  };
  return counts;
}

std::size_t TemplateSet::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].id == id) return i;
  }
  fail(ErrorCode::out_of_range, "no template with id '" + std::string(id) + "'");
}

std::vector<std::size_t> TemplateSet::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> TemplateSet::indices(Split split, EvalType type) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split && records[i].eval_type == type) out.push_back(i);
  }
  return out;
}

TrainTypeCounts TemplateSet::counts() const {
  TrainTypeCounts out;
  for (TrainType t : kTrainTypes) out[t] = 0;
  for (const auto& r : records) ++out[r.train_type];
  return out;
}

void validate(const TemplateSet& set, const ValidateOptions& opts) {
  std::set<std::string> ids;
  std::set<std::pair<EvalType, std::string>> train_texts;
  std::set<std::pair<EvalType, std::string>> test_texts;
  for (const auto& r : set.records) {
    if (r.id.empty()) fail(ErrorCode::schema, "template with empty id");
    if (!ids.insert(r.id).second) fail(ErrorCode::schema, "duplicate template id '" + r.id + "'");
    const std::size_t n = count_placeholders(r.text);
    if (n != 1) {
      fail(ErrorCode::schema, "template '" + r.id + "' has " + std::to_string(n) +
                                  " placeholders, expected exactly 1");
    }
    if (!subtype_index(r.eval_type, r.subtype)) {
      fail(ErrorCode::schema, "template '" + r.id + "': subtype '" + r.subtype +
                                  "' is not legal for eval_type " +
                                  std::string(to_string(r.eval_type)));
    }
    auto& mine = r.split == Split::train ? train_texts : test_texts;
    const auto& other = r.split == Split::train ? test_texts : train_texts;
    auto key = std::make_pair(r.eval_type, r.text);
    if (other.count(key) != 0) {
      fail(ErrorCode::schema, "template text \"" + r.text + "\" appears in both splits of type " +
                                  std::string(to_string(r.eval_type)));
    }
    mine.insert(std::move(key));
  }
  if (opts.require_test_coverage) {
    for (EvalType t : kEvalTypes) {
      const auto subs = subtypes_of(t);
      for (std::size_t s = 0; s < subs.size(); ++s) {
        const bool covered = std::any_of(set.records.begin(), set.records.end(), [&](const auto& r) {
          return r.split == Split::test && r.eval_type == t && r.subtype == subs[s];
        });
        if (!covered) {
          fail(ErrorCode::schema, "no test template for " + std::string(to_string(t)) + "/" +
                                      std::string(subs[s]));
        }
      }
    }
  }
  if (set.expected_counts) {
    const auto actual = set.counts();
    for (TrainType t : kTrainTypes) {
      auto it = set.expected_counts->find(t);
      const std::size_t want = it == set.expected_counts->end() ? 0 : it->second;
      if (actual.at(t) != want) {
        fail(ErrorCode::schema, "train_type " + std::string(to_string(t)) + " has " +
                                    std::to_string(actual.at(t)) + " templates, manifest declares " +
                                    std::to_string(want));
      }
    }
  }
}

namespace {

TrainTypeCounts parse_counts(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "reference") return reference_counts();
    fail(ErrorCode::schema, "expected_counts must be an object or \"reference\"");
  }
  if (!j.is_object()) fail(ErrorCode::schema, "expected_counts must be an object or \"reference\"");
  TrainTypeCounts out;
  std::size_t declared_total = 0;
  bool has_total = false;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number_unsigned()) fail(ErrorCode::schema, "count for '" + key + "' must be a nonnegative integer");
    if (key == "total") {
      declared_total = value.get<std::size_t>();
      has_total = true;
      continue;
    }
    out[parse_train_type(key)] = value.get<std::size_t>();
  }
  if (has_total) {
    std::size_t sum = 0;
    for (const auto& [t, n] : out) sum += n;
    if (sum != declared_total) {
      fail(ErrorCode::schema, "expected_counts total " + std::to_string(declared_total) +
                                  " does not equal the sum of per-type counts " + std::to_string(sum));
    }
  }
  return out;
}

std::string required_string(const json& obj, const char* key, std::size_t index) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    fail(ErrorCode::schema, "template #" + std::to_string(index) + " is missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

TemplateSet parse_template_set(std::string_view json_text, const ValidateOptions& opts) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::schema, std::string("template set is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorCode::schema, "template set must be a JSON object");
  auto templates = doc.find("templates");
  if (templates == doc.end() || !templates->is_array()) {
    fail(ErrorCode::schema, "template set needs a 'templates' array");
  }
  TemplateSet set;
  set.name = doc.value("name", std::string{});
  if (auto c = doc.find("expected_counts"); c != doc.end()) set.expected_counts = parse_counts(*c);
  std::size_t index = 0;
  for (const auto& item : *templates) {
    if (!item.is_object()) fail(ErrorCode::schema, "template #" + std::to_string(index) + " is not an object");
    TemplateRecord r;
    r.id = required_string(item, "id", index);
    r.text = required_string(item, "text", index);
    r.eval_type = parse_eval_type(required_string(item, "eval_type", index));
    r.subtype = required_string(item, "subtype", index);
    r.train_type = parse_train_type(required_string(item, "train_type", index));
    r.split = parse_split(required_string(item, "split", index));
    set.records.push_back(std::move(r));
    ++index;
  }
  set.hash = io::hex32(io::crc32(json_text));
  validate(set, opts);
  return set;
}

TemplateSet load_template_set(const std::filesystem::path& path, const ValidateOptions& opts) {
  return parse_template_set(io::read_file(path), opts);
}

std::string template_set_to_json(const TemplateSet& set) {
  json doc = json::object();
  doc["name"] = set.name;
  if (set.expected_counts) {
    json counts = json::object();
    std::size_t total = 0;
    for (TrainType t : kTrainTypes) {
      auto it = set.expected_counts->find(t);
      const std::size_t n = it == set.expected_counts->end() ? 0 : it->second;
      counts[std::string(to_string(t))] = n;
      total += n;
    }
    counts["total"] = total;
    doc["expected_counts"] = counts;
  }
  json arr = json::array();
  for (const auto& r : set.records) {
    arr.push_back({{"id", r.id},
                   {"text", r.text},
                   {"eval_type", to_string(r.eval_type)},
                   {"subtype", r.subtype},
                   {"train_type", to_string(r.train_type)},
                   {"split", to_string(r.split)}});
  }
  doc["templates"] = std::move(arr);
  return doc.dump(2) + "\n";
}

std::string render_prompt(std::string_view text, std::string_view class_name) {
  const std::size_t pos = text.find(kPlaceholder);
  if (pos == std::string_view::npos) {
    fail(ErrorCode::schema, "template \"" + std::string(text) + "\" has no placeholder");
  }
  std::string out;
  out.reserve(text.size() + class_name.size());
  out.append(text.substr(0, pos));
  out.append(class_name);
  out.append(text.substr(pos + kPlaceholder.size()));
  return out;
}

std::string render_prompt(const TemplateRecord& t, std::string_view class_name) {
  return render_prompt(t.text, class_name);
}

std::string decouple_template(std::string_view text) {
  const std::size_t pos = text.find(kPlaceholder);
  if (pos == std::string_view::npos) {
    fail(ErrorCode::schema, "template \"" + std::string(text) + "\" has no placeholder");
  }
  std::string_view before = text.substr(0, pos);
  std::string_view after = text.substr(pos + kPlaceholder.size());
  // Prefer the space before the placeholder; fall back to the one after.
  if (!before.empty() && before.back() == ' ') {
    before.remove_suffix(1);
  } else if (!after.empty() && after.front() == ' ') {
    after.remove_prefix(1);
  }
  std::string joined;
  joined.append(before);
  joined.append(after);
  std::string out;
  out.reserve(joined.size());
  for (char c : joined) {
    if (c == ' ' && !out.empty() && out.back() == ' ') continue;
    out.push_back(c);
  }
  if (out.find_first_not_of(' ') == std::string::npos) {
    fail(ErrorCode::schema, "template \"" + std::string(text) + "\" is empty once decoupled");
  }
  return out;
}

std::string decouple_template(const TemplateRecord& t) { return decouple_template(t.text); }

TemplateSet make_synthetic_taxonomy(std::size_t n) {
  struct Pair {
    EvalType type;
    std::string_view subtype;
  };
  std::vector<Pair> pairs;
  for (EvalType t : kEvalTypes) {
    for (auto s : subtypes_of(t)) pairs.push_back({t, s});
  }
  TemplateSet set;
  set.name = "synthetic";
  std::vector<std::size_t> seen(pairs.size(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t p = k % pairs.size();
    TemplateRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%04zu", k);
    r.id = id;
    r.eval_type = pairs[p].type;
    r.subtype = std::string(pairs[p].subtype);
    r.train_type = default_train_type(r.eval_type);
    r.text = "a " + r.subtype + " {} pattern, variant " + std::to_string(k) + ".";
    r.split = seen[p] % 2 == 0 ? Split::train : Split::test;
    ++seen[p];
    set.records.push_back(std::move(r));
  }
  return set;
}

}  // namespace mvp::bench
