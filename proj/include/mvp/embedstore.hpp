// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvp/templates.hpp"
#include "mvp/tensor.hpp"

namespace mvp::store {

enum class DType : std::uint16_t { f32 = 0, f64 = 1 };

std::string_view to_string(DType d) noexcept;
std::size_t dtype_size(DType d) noexcept;

inline constexpr std::array<char, 4> kStoreMagic = {'M', 'V', 'P', 'S'};
inline constexpr std::uint16_t kStoreVersion = 1;
inline constexpr std::size_t kHeaderSize = 24;

/// On-disk layout, little-endian:
///   0 magic[4]  4 version u16  6 dtype u16  8 rows u64  16 dim u32  20 crc32 u32
/// followed by rows*dim values, row-major.
struct StoreHeader {
  std::array<char, 4> magic = kStoreMagic;
  std::uint16_t version = kStoreVersion;
  DType dtype = DType::f32;
  std::uint64_t rows = 0;
  std::uint32_t dim = 0;
  std::uint32_t checksum = 0;
};

/// Row-major embedding block in either float32 or float64.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  explicit EmbeddingMatrix(core::Tensor2D<float> values);
  explicit EmbeddingMatrix(core::Tensor2D<double> values);

  DType dtype() const noexcept { return dtype_; }
  std::size_t rows() const noexcept;
  std::size_t dim() const noexcept;
  double at(std::size_t r, std::size_t c) const;

  const core::Tensor2D<float>& f32() const;
  const core::Tensor2D<double>& f64() const;

  /// Copy converted to T (exact for f32 -> f64).
  template <typename T>
  core::Tensor2D<T> as() const {
    if (dtype_ == DType::f32) return f32_.template cast<T>();
    return f64_.template cast<T>();
  }

  /// Payload bytes in store order.
  std::string_view payload() const noexcept;

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b);

 private:
  DType dtype_ = DType::f32;
  core::Tensor2D<float> f32_;
  core::Tensor2D<double> f64_;
};

/// Throws unless rows >= 1, dim >= 1 and every value is finite.
void validate(const EmbeddingMatrix& m);

std::string encode_store(const EmbeddingMatrix& m);
/// Parses the header only: bad_magic / unsupported_version, or
/// checksum_mismatch when fewer than kHeaderSize bytes are present.
StoreHeader decode_header(std::string_view bytes);
/// Full decode; checksum_mismatch when the payload CRC or length is wrong.
EmbeddingMatrix decode_store(std::string_view bytes);

void write_store(const EmbeddingMatrix& m, const std::filesystem::path& destination);
EmbeddingMatrix read_store(const std::filesystem::path& source);

struct StoreInfo {
  StoreHeader header;
  std::uint32_t computed_checksum = 0;
  bool checksum_ok = false;
  std::size_t payload_bytes = 0;
};
/// Reads the header and verifies the payload without materializing it.
/// Magic/version problems throw; checksum status is reported.
StoreInfo inspect_store(const std::filesystem::path& source);

EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m);
EmbeddingMatrix gather_rows(const EmbeddingMatrix& m, std::span<const std::size_t> indices);

struct ImageShard {
  EmbeddingMatrix embeddings;
  std::vector<std::uint32_t> labels;
  bench::Split split = bench::Split::train;

  void validate(std::size_t num_classes) const;
};

/// Embeddings of fully rendered prompts; row i*K + j is (template i, class j).
struct PromptGrid {
  EmbeddingMatrix embeddings;
  std::vector<std::string> template_ids;
  std::vector<std::size_t> class_ids;

  std::size_t num_templates() const noexcept { return template_ids.size(); }
  std::size_t num_classes() const noexcept { return class_ids.size(); }
  std::size_t row(std::size_t i, std::size_t j) const noexcept { return i * class_ids.size() + j; }
  void validate() const;
  /// K x dim block for one template position.
  core::Tensor2D<double> block(std::size_t template_pos) const;
};

struct SynthSpec {
  std::size_t n_classes = 10;
  std::size_t dim = 64;
  std::size_t n_templates = 200;
  double sensitivity = 1.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 7;

  // Generator shape knobs.
  double class_coherence = 0.8;  ///< weight of the shared direction in each class prototype
  double template_norm = 1.0;    ///< norm of the shared template base vector
  double subtype_offset = 0.5;   ///< expected norm of a subtype offset
  double template_jitter = 0.1;  ///< expected norm of per-template jitter
  std::size_t train_per_class = 32;
  std::size_t test_per_class = 50;

  void validate() const;
};

/// A complete benchmark: template set plus all frozen embeddings. Template
/// feature row r belongs to templates.records[r]; the grid covers every
/// record in the same order.
struct Benchmark {
  std::string dataset;
  bench::TemplateSet templates;
  std::vector<std::string> class_names;
  EmbeddingMatrix classes;
  EmbeddingMatrix template_features;
  PromptGrid grid;
  ImageShard train;
  ImageShard test;

  std::size_t num_classes() const noexcept { return class_names.size(); }
  std::size_t text_dim() const noexcept { return classes.dim(); }
  std::size_t image_dim() const noexcept { return test.embeddings.dim(); }
  void validate() const;
};

Benchmark gen_synthetic_benchmark(const SynthSpec& spec, const bench::TemplateSet& taxonomy);

struct ManifestShard {
  bench::Split split = bench::Split::train;
  std::size_t row_begin = 0;
  std::size_t row_end = 0;
  std::vector<std::uint32_t> labels;
};

struct Manifest {
  int version = 1;
  std::string dataset;
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  /// Role -> path relative to the manifest: images, classes, templates, prompt_grid.
  std::map<std::string, std::string> stores;
  std::vector<ManifestShard> shards;
  std::vector<std::string> template_ids;
  std::vector<std::string> class_names;
  std::string template_set_path;
  std::string template_set_hash;
};

std::string manifest_to_json(const Manifest& m);
Manifest parse_manifest(std::string_view json_text);

/// Writes the four stores, the template set and manifest.json into `dir`.
/// Returns the manifest path.
std::filesystem::path save_benchmark(const Benchmark& b, const std::filesystem::path& dir);
Benchmark load_benchmark(const std::filesystem::path& manifest_path);

}  // namespace mvp::store
