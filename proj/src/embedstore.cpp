// SPDX-License-Identifier: Apache-2.0
#include "mvp/embedstore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "mvp/error.hpp"
#include "mvp/io.hpp"
#include "mvp/rng.hpp"

namespace mvp::store {

static_assert(std::endian::native == std::endian::little,
              "store payloads are memcpy'd and assume a little-endian host");

using core::Tensor2D;
using nlohmann::json;

std::string_view to_string(DType d) noexcept { return d == DType::f32 ? "f32" : "f64"; }

std::size_t dtype_size(DType d) noexcept { return d == DType::f32 ? 4 : 8; }

EmbeddingMatrix::EmbeddingMatrix(Tensor2D<float> values) : dtype_(DType::f32), f32_(std::move(values)) {}

EmbeddingMatrix::EmbeddingMatrix(Tensor2D<double> values) : dtype_(DType::f64), f64_(std::move(values)) {}

std::size_t EmbeddingMatrix::rows() const noexcept {
  return dtype_ == DType::f32 ? f32_.rows() : f64_.rows();
}

std::size_t EmbeddingMatrix::dim() const noexcept {
  return dtype_ == DType::f32 ? f32_.cols() : f64_.cols();
}

double EmbeddingMatrix::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= dim()) {
    fail(ErrorCode::out_of_range, "index (" + std::to_string(r) + ", " + std::to_string(c) +
                                      ") outside " + core::shape_string(rows(), dim()));
  }
  return dtype_ == DType::f32 ? static_cast<double>(f32_(r, c)) : f64_(r, c);
}

const Tensor2D<float>& EmbeddingMatrix::f32() const {
  if (dtype_ != DType::f32) fail(ErrorCode::invalid_argument, "matrix holds f64 values");
  return f32_;
}

const Tensor2D<double>& EmbeddingMatrix::f64() const {
  if (dtype_ != DType::f64) fail(ErrorCode::invalid_argument, "matrix holds f32 values");
  return f64_;
}

std::string_view EmbeddingMatrix::payload() const noexcept {
  if (dtype_ == DType::f32) {
    return {reinterpret_cast<const char*>(f32_.data()), f32_.size() * sizeof(float)};
  }
  return {reinterpret_cast<const char*>(f64_.data()), f64_.size() * sizeof(double)};
}

bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  return a.dtype_ == b.dtype_ && a.rows() == b.rows() && a.dim() == b.dim() &&
         a.payload() == b.payload();
}

void validate(const EmbeddingMatrix& m) {
  if (m.rows() < 1) fail(ErrorCode::invalid_argument, "rows must be ≥ 1");
  if (m.dim() < 1) fail(ErrorCode::invalid_argument, "dim must be ≥ 1");
  const std::size_t bad =
      m.dtype() == DType::f32 ? m.f32().first_non_finite() : m.f64().first_non_finite();
  if (bad != m.rows() * m.dim()) {
    fail(ErrorCode::non_finite, "non-finite value at (" + std::to_string(bad / m.dim()) + ", " +
                                    std::to_string(bad % m.dim()) + ")");
  }
}

namespace {

template <typename U>
void put(std::string& out, std::size_t offset, U value) {
  std::memcpy(out.data() + offset, &value, sizeof(U));
}

template <typename U>
U get(std::string_view in, std::size_t offset) {
  U value;
  std::memcpy(&value, in.data() + offset, sizeof(U));
  return value;
}

}  // namespace

std::string encode_store(const EmbeddingMatrix& m) {
  validate(m);
  const std::string_view payload = m.payload();
  std::string out(kHeaderSize, '\0');
  std::memcpy(out.data(), kStoreMagic.data(), 4);
  put<std::uint16_t>(out, 4, kStoreVersion);
  put<std::uint16_t>(out, 6, static_cast<std::uint16_t>(m.dtype()));
  put<std::uint64_t>(out, 8, m.rows());
  put<std::uint32_t>(out, 16, static_cast<std::uint32_t>(m.dim()));
  put<std::uint32_t>(out, 20, io::crc32(payload));
  out.append(payload);
  return out;
}

StoreHeader decode_header(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kStoreMagic.data(), 4) != 0) {
    fail(ErrorCode::bad_magic, "not an embedding store (bad magic)");
  }
  if (bytes.size() < kHeaderSize) fail(ErrorCode::checksum_mismatch, "store header truncated");
  StoreHeader h;
  h.version = get<std::uint16_t>(bytes, 4);
  if (h.version != kStoreVersion) {
    fail(ErrorCode::unsupported_version, "unsupported store version " + std::to_string(h.version) +
                                             " (expected " + std::to_string(kStoreVersion) + ")");
  }
  const auto dtype = get<std::uint16_t>(bytes, 6);
  if (dtype > 1) fail(ErrorCode::schema, "unknown dtype code " + std::to_string(dtype));
  h.dtype = static_cast<DType>(dtype);
  h.rows = get<std::uint64_t>(bytes, 8);
  h.dim = get<std::uint32_t>(bytes, 16);
  h.checksum = get<std::uint32_t>(bytes, 20);
  if (h.rows < 1 || h.dim < 1) fail(ErrorCode::schema, "store header declares an empty matrix");
  return h;
}

namespace {

std::size_t expected_payload(const StoreHeader& h) {
  const std::uint64_t cells = h.rows * h.dim;
  if (h.dim != 0 && cells / h.dim != h.rows) fail(ErrorCode::schema, "store dimensions overflow");
  return static_cast<std::size_t>(cells) * dtype_size(h.dtype);
}

}  // namespace

EmbeddingMatrix decode_store(std::string_view bytes) {
  const StoreHeader h = decode_header(bytes);
  const std::string_view payload = bytes.substr(kHeaderSize);
  const std::size_t want = expected_payload(h);
  if (payload.size() != want) {
    fail(ErrorCode::checksum_mismatch, "store payload is " + std::to_string(payload.size()) +
                                           " bytes, header implies " + std::to_string(want));
  }
  const std::uint32_t crc = io::crc32(payload);
  if (crc != h.checksum) {
    fail(ErrorCode::checksum_mismatch, "store checksum mismatch (header " + io::hex32(h.checksum) +
                                           ", payload " + io::hex32(crc) + ")");
  }
  EmbeddingMatrix m;
  if (h.dtype == DType::f32) {
    std::vector<float> v(h.rows * h.dim);
    std::memcpy(v.data(), payload.data(), payload.size());
    m = EmbeddingMatrix(Tensor2D<float>(h.rows, h.dim, std::move(v)));
  } else {
    std::vector<double> v(h.rows * h.dim);
    std::memcpy(v.data(), payload.data(), payload.size());
    m = EmbeddingMatrix(Tensor2D<double>(h.rows, h.dim, std::move(v)));
  }
  validate(m);
  return m;
}

void write_store(const EmbeddingMatrix& m, const std::filesystem::path& destination) {
  io::write_file_atomic(destination, encode_store(m));
}

EmbeddingMatrix read_store(const std::filesystem::path& source) {
  try {
    return decode_store(io::read_file(source));
  } catch (const Error& e) {
    throw Error(e.code(), source.string() + ": " + e.what());
  }
}

StoreInfo inspect_store(const std::filesystem::path& source) {
  const std::string bytes = io::read_file(source);
  StoreInfo info;
  info.header = decode_header(bytes);
  const std::string_view payload = std::string_view(bytes).substr(kHeaderSize);
  info.payload_bytes = payload.size();
  info.computed_checksum = io::crc32(payload);
  info.checksum_ok = payload.size() == expected_payload(info.header) &&
                     info.computed_checksum == info.header.checksum;
  return info;
}

namespace {

template <typename T>
Tensor2D<T> normalize_impl(const Tensor2D<T>& in) {
  Tensor2D<T> out(in.rows(), in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    double ss = 0;
    for (std::size_t c = 0; c < in.cols(); ++c) ss += static_cast<double>(in(r, c)) * in(r, c);
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0)) fail(ErrorCode::invalid_argument, "row " + std::to_string(r) + " is all zeros");
    for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = static_cast<T>(in(r, c) / norm);
  }
  return out;
}

template <typename T>
Tensor2D<T> gather_impl(const Tensor2D<T>& in, std::span<const std::size_t> indices) {
  Tensor2D<T> out(indices.size(), in.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= in.rows()) {
      fail(ErrorCode::out_of_range, "row index " + std::to_string(indices[r]) + " out of range for " +
                                        std::to_string(in.rows()) + " rows");
    }
    std::copy_n(in.data() + indices[r] * in.cols(), in.cols(), out.data() + r * in.cols());
  }
  return out;
}

}  // namespace

EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m) {
  if (m.dtype() == DType::f32) return EmbeddingMatrix(normalize_impl(m.f32()));
  return EmbeddingMatrix(normalize_impl(m.f64()));
}

EmbeddingMatrix gather_rows(const EmbeddingMatrix& m, std::span<const std::size_t> indices) {
  if (m.dtype() == DType::f32) return EmbeddingMatrix(gather_impl(m.f32(), indices));
  return EmbeddingMatrix(gather_impl(m.f64(), indices));
}

void ImageShard::validate(std::size_t num_classes) const {
  if (labels.size() != embeddings.rows()) {
    fail(ErrorCode::shape_mismatch, std::string(bench::to_string(split)) + " shard has " +
                                        std::to_string(embeddings.rows()) + " rows but " +
                                        std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      fail(ErrorCode::out_of_range, "label " + std::to_string(labels[i]) + " at row " +
                                        std::to_string(i) + " is not < " + std::to_string(num_classes));
    }
  }
}

void PromptGrid::validate() const {
  if (embeddings.rows() != template_ids.size() * class_ids.size()) {
    fail(ErrorCode::shape_mismatch, "prompt grid has " + std::to_string(embeddings.rows()) +
                                        " rows, expected " + std::to_string(template_ids.size()) +
                                        " x " + std::to_string(class_ids.size()));
  }
}

Tensor2D<double> PromptGrid::block(std::size_t template_pos) const {
  if (template_pos >= num_templates()) {
    fail(ErrorCode::out_of_range, "template position " + std::to_string(template_pos) + " out of range");
  }
  std::vector<std::size_t> rows(num_classes());
  for (std::size_t j = 0; j < rows.size(); ++j) rows[j] = row(template_pos, j);
  return gather_rows(embeddings, rows).as<double>();
}

void SynthSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::invalid_argument, "invalid synth spec: " + what); };
  if (n_classes < 2) bad("n_classes must be ≥ 2");
  if (dim < 1) bad("dim must be ≥ 1");
  if (n_templates < 1) bad("n_templates must be ≥ 1");
  if (!(sensitivity >= 0.0) || !std::isfinite(sensitivity)) bad("sensitivity must be ≥ 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) bad("noise_sigma must be ≥ 0");
  if (!(class_coherence >= 0.0 && class_coherence < 1.0)) bad("class_coherence must lie in [0, 1)");
  if (!(template_norm > 0.0)) bad("template_norm must be > 0");
  if (!(subtype_offset >= 0.0) || !(template_jitter >= 0.0)) bad("offset and jitter must be ≥ 0");
  if (train_per_class < 1 || test_per_class < 1) bad("per-class image counts must be ≥ 1");
}

void Benchmark::validate() const {
  const std::size_t k = num_classes();
  if (classes.rows() != k) {
    fail(ErrorCode::shape_mismatch, "class store has " + std::to_string(classes.rows()) +
                                        " rows for " + std::to_string(k) + " class names");
  }
  if (template_features.rows() != templates.size()) {
    fail(ErrorCode::shape_mismatch, "template store has " + std::to_string(template_features.rows()) +
                                        " rows for " + std::to_string(templates.size()) + " templates");
  }
  if (template_features.dim() != classes.dim()) {
    fail(ErrorCode::shape_mismatch, "template dim " + std::to_string(template_features.dim()) +
                                        " != class dim " + std::to_string(classes.dim()));
  }
  grid.validate();
  if (grid.num_classes() != k || grid.num_templates() != templates.size()) {
    fail(ErrorCode::shape_mismatch, "prompt grid does not cover templates x classes");
  }
  for (std::size_t i = 0; i < templates.size(); ++i) {
    if (grid.template_ids[i] != templates.records[i].id) {
      fail(ErrorCode::schema, "prompt grid template order differs from the template set at " + std::to_string(i));
    }
  }
  train.validate(k);
  test.validate(k);
  if (train.embeddings.dim() != test.embeddings.dim()) {
    fail(ErrorCode::shape_mismatch, "train image dim " + std::to_string(train.embeddings.dim()) +
                                        " != test image dim " + std::to_string(test.embeddings.dim()));
  }
  if (grid.embeddings.dim() != image_dim()) {
    fail(ErrorCode::shape_mismatch, "prompt grid dim " + std::to_string(grid.embeddings.dim()) +
                                        " != image dim " + std::to_string(image_dim()));
  }
}

namespace {

std::vector<double> gaussian(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

void normalize(std::vector<double>& v) {
  double ss = 0;
  for (double x : v) ss += x * x;
  const double n = std::sqrt(ss);
  for (double& x : v) x /= n;
}

}  // namespace

Benchmark gen_synthetic_benchmark(const SynthSpec& spec, const bench::TemplateSet& taxonomy) {
  spec.validate();
  if (taxonomy.size() != spec.n_templates) {
    fail(ErrorCode::invalid_argument, "taxonomy has " + std::to_string(taxonomy.size()) +
                                          " templates but spec asks for " + std::to_string(spec.n_templates));
  }
  for (bench::EvalType t : bench::kEvalTypes) {
    const bool present = std::any_of(taxonomy.records.begin(), taxonomy.records.end(),
                                     [&](const auto& r) { return r.eval_type == t; });
    if (!present) {
      fail(ErrorCode::invalid_argument, "taxonomy has no template of type " + std::string(bench::to_string(t)));
    }
  }
  const std::size_t d = spec.dim;
  const std::size_t k = spec.n_classes;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  // Class prototypes share a common direction so classes are close enough
  // for template noise to flip decisions.
  Rng class_rng(derive_seed(spec.seed, "classes"));
  std::vector<double> shared = gaussian(class_rng, d, 1.0);
  normalize(shared);
  std::vector<std::vector<double>> protos(k);
  for (auto& p : protos) {
    p = gaussian(class_rng, d, 1.0);
    normalize(p);
    for (std::size_t c = 0; c < d; ++c) {
      p[c] = spec.class_coherence * shared[c] + (1.0 - spec.class_coherence) * p[c];
    }
    normalize(p);
  }

  Rng template_rng(derive_seed(spec.seed, "templates"));
  std::vector<double> base = gaussian(template_rng, d, 1.0);
  normalize(base);
  for (double& x : base) x *= spec.template_norm;
  std::vector<std::vector<double>> offsets(bench::subtype_pair_count());
  for (auto& o : offsets) o = gaussian(template_rng, d, spec.subtype_offset * inv_sqrt_d);

  Tensor2D<double> tfeat(taxonomy.size(), d);
  for (std::size_t i = 0; i < taxonomy.size(); ++i) {
    const auto& r = taxonomy.records[i];
    const auto sub = bench::subtype_index(r.eval_type, r.subtype);
    if (!sub) fail(ErrorCode::schema, "template '" + r.id + "' has an illegal subtype");
    const auto& off = offsets[bench::subtype_pair_index(r.eval_type, *sub)];
    const auto jitter = gaussian(template_rng, d, spec.template_jitter * inv_sqrt_d);
    for (std::size_t c = 0; c < d; ++c) {
      tfeat(i, c) = base[c] + spec.sensitivity * (off[c] + jitter[c]);
    }
  }

  Tensor2D<double> cfeat(k, d);
  for (std::size_t j = 0; j < k; ++j) std::copy(protos[j].begin(), protos[j].end(), cfeat.row(j).begin());

  Tensor2D<double> grid(taxonomy.size() * k, d);
  for (std::size_t i = 0; i < taxonomy.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> row(d);
      for (std::size_t c = 0; c < d; ++c) row[c] = tfeat(i, c) + cfeat(j, c);
      normalize(row);
      std::copy(row.begin(), row.end(), grid.row(i * k + j).begin());
    }
  }

  Rng image_rng(derive_seed(spec.seed, "images"));
  auto images = [&](std::size_t per_class, bench::Split split) {
    ImageShard shard;
    shard.split = split;
    Tensor2D<double> x(per_class * k, d);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t n = 0; n < per_class; ++n) {
        const std::size_t r = j * per_class + n;
        for (std::size_t c = 0; c < d; ++c) x(r, c) = protos[j][c] + spec.noise_sigma * image_rng.normal();
        shard.labels.push_back(static_cast<std::uint32_t>(j));
      }
    }
    shard.embeddings = EmbeddingMatrix(x.cast<float>());
    return shard;
  };

  Benchmark b;
  b.dataset = "synthetic";
  b.templates = taxonomy;
  for (std::size_t j = 0; j < k; ++j) {
    char name[32];
    std::snprintf(name, sizeof name, "class_%02zu", j);
    b.class_names.emplace_back(name);
  }
  b.classes = EmbeddingMatrix(cfeat.cast<float>());
  b.template_features = EmbeddingMatrix(tfeat.cast<float>());
  b.grid.embeddings = EmbeddingMatrix(grid.cast<float>());
  for (const auto& r : taxonomy.records) b.grid.template_ids.push_back(r.id);
  for (std::size_t j = 0; j < k; ++j) b.grid.class_ids.push_back(j);
  b.train = images(spec.train_per_class, bench::Split::train);
  b.test = images(spec.test_per_class, bench::Split::test);
  b.validate();
  return b;
}

// ---------------------------------------------------------------------------
// Manifest

std::string manifest_to_json(const Manifest& m) {
  json doc = json::object();
  doc["format"] = "mvp-manifest";
  doc["version"] = m.version;
  doc["dataset"] = m.dataset;
  doc["num_classes"] = m.num_classes;
  doc["dim"] = m.dim;
  doc["stores"] = m.stores;
  json shards = json::array();
  for (const auto& s : m.shards) {
    shards.push_back({{"split", bench::to_string(s.split)},
                      {"row_begin", s.row_begin},
                      {"row_end", s.row_end},
                      {"labels", s.labels}});
  }
  doc["shards"] = std::move(shards);
  doc["template_ids"] = m.template_ids;
  doc["class_names"] = m.class_names;
  doc["template_set"] = {{"path", m.template_set_path}, {"hash", m.template_set_hash}};
  return doc.dump(2) + "\n";
}

Manifest parse_manifest(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::schema, std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    Manifest m;
    if (doc.value("format", std::string{}) != "mvp-manifest") fail(ErrorCode::schema, "not an mvp manifest");
    m.version = doc.at("version").get<int>();
    if (m.version != 1) fail(ErrorCode::unsupported_version, "unsupported manifest version " + std::to_string(m.version));
    m.dataset = doc.at("dataset").get<std::string>();
    m.num_classes = doc.at("num_classes").get<std::size_t>();
    m.dim = doc.at("dim").get<std::size_t>();
    m.stores = doc.at("stores").get<std::map<std::string, std::string>>();
    for (const auto& s : doc.at("shards")) {
      ManifestShard shard;
      shard.split = bench::parse_split(s.at("split").get<std::string>());
      shard.row_begin = s.at("row_begin").get<std::size_t>();
      shard.row_end = s.at("row_end").get<std::size_t>();
      shard.labels = s.at("labels").get<std::vector<std::uint32_t>>();
      m.shards.push_back(std::move(shard));
    }
    m.template_ids = doc.at("template_ids").get<std::vector<std::string>>();
    m.class_names = doc.at("class_names").get<std::vector<std::string>>();
    m.template_set_path = doc.at("template_set").at("path").get<std::string>();
    m.template_set_hash = doc.at("template_set").at("hash").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("malformed manifest: ") + e.what());
  }
}

namespace {

constexpr const char* kRoles[] = {"images", "classes", "templates", "prompt_grid"};

Tensor2D<float> stack_images(const ImageShard& a, const ImageShard& b) {
  const auto& x = a.embeddings.f32();
  const auto& y = b.embeddings.f32();
  std::vector<float> v(x.values().begin(), x.values().end());
  v.insert(v.end(), y.values().begin(), y.values().end());
  return Tensor2D<float>(x.rows() + y.rows(), x.cols(), std::move(v));
}

}  // namespace

std::filesystem::path save_benchmark(const Benchmark& b, const std::filesystem::path& dir) {
  b.validate();
  Manifest m;
  m.dataset = b.dataset;
  m.num_classes = b.num_classes();
  m.dim = b.text_dim();
  m.stores = {{"images", "images.mvps"},
              {"classes", "classes.mvps"},
              {"templates", "templates.mvps"},
              {"prompt_grid", "prompt_grid.mvps"}};
  const std::size_t ntrain = b.train.embeddings.rows();
  m.shards.push_back({bench::Split::train, 0, ntrain, b.train.labels});
  m.shards.push_back({bench::Split::test, ntrain, ntrain + b.test.embeddings.rows(), b.test.labels});
  m.template_ids = b.grid.template_ids;
  m.class_names = b.class_names;
  m.template_set_path = "templates.json";

  const std::string tset = bench::template_set_to_json(b.templates);
  m.template_set_hash = io::hex32(io::crc32(tset));

  // The image store must share one dtype; both shards come from the same source.
  if (b.train.embeddings.dtype() != DType::f32 || b.test.embeddings.dtype() != DType::f32) {
    fail(ErrorCode::invalid_argument, "save_benchmark expects float32 image shards");
  }
  write_store(EmbeddingMatrix(stack_images(b.train, b.test)), dir / "images.mvps");
  write_store(b.classes, dir / "classes.mvps");
  write_store(b.template_features, dir / "templates.mvps");
  write_store(b.grid.embeddings, dir / "prompt_grid.mvps");
  io::write_file_atomic(dir / m.template_set_path, tset);
  const auto manifest_path = dir / "manifest.json";
  io::write_file_atomic(manifest_path, manifest_to_json(m));
  return manifest_path;
}

Benchmark load_benchmark(const std::filesystem::path& manifest_path) {
  const Manifest m = parse_manifest(io::read_file(manifest_path));
  const auto dir = manifest_path.parent_path();
  for (const char* role : kRoles) {
    if (m.stores.count(role) == 0) fail(ErrorCode::schema, std::string("manifest lists no '") + role + "' store");
  }
  Benchmark b;
  b.dataset = m.dataset;
  b.class_names = m.class_names;
  if (b.class_names.size() != m.num_classes) {
    fail(ErrorCode::schema, "manifest num_classes " + std::to_string(m.num_classes) + " but " +
                                std::to_string(m.class_names.size()) + " class names");
  }

  const std::string tset_text = io::read_file(dir / m.template_set_path);
  b.templates = bench::parse_template_set(tset_text);
  if (b.templates.hash != m.template_set_hash) {
    fail(ErrorCode::checksum_mismatch, "template set hash " + b.templates.hash +
                                           " does not match manifest " + m.template_set_hash);
  }

  b.classes = read_store(dir / m.stores.at("classes"));
  b.template_features = read_store(dir / m.stores.at("templates"));
  b.grid.embeddings = read_store(dir / m.stores.at("prompt_grid"));
  b.grid.template_ids = m.template_ids;
  for (std::size_t j = 0; j < m.num_classes; ++j) b.grid.class_ids.push_back(j);
  if (b.classes.dim() != m.dim) {
    fail(ErrorCode::shape_mismatch, "class store dim " + std::to_string(b.classes.dim()) +
                                        " != manifest dim " + std::to_string(m.dim));
  }

  const EmbeddingMatrix images = read_store(dir / m.stores.at("images"));
  bool have_train = false, have_test = false;
  for (const auto& s : m.shards) {
    if (s.row_begin > s.row_end || s.row_end > images.rows()) {
      fail(ErrorCode::schema, "shard rows [" + std::to_string(s.row_begin) + ", " +
                                  std::to_string(s.row_end) + ") exceed image store rows " +
                                  std::to_string(images.rows()));
    }
    std::vector<std::size_t> idx;
    for (std::size_t r = s.row_begin; r < s.row_end; ++r) idx.push_back(r);
    ImageShard shard;
    shard.split = s.split;
    shard.labels = s.labels;
    if (idx.empty()) fail(ErrorCode::schema, std::string(bench::to_string(s.split)) + " shard is empty");
    shard.embeddings = gather_rows(images, idx);
    if (s.split == bench::Split::train) {
      if (have_train) fail(ErrorCode::schema, "manifest has two train shards");
      b.train = std::move(shard);
      have_train = true;
    } else {
      if (have_test) fail(ErrorCode::schema, "manifest has two test shards");
      b.test = std::move(shard);
      have_test = true;
    }
  }
  if (!have_train) fail(ErrorCode::schema, "manifest has no train split");
  if (!have_test) fail(ErrorCode::schema, "manifest has no test split");
  b.validate();
  return b;
}

}  // namespace mvp::store
