// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "mvp/bench.hpp"
#include "mvp/embedstore.hpp"
#include "mvp/io.hpp"
#include "test_util.hpp"

namespace mvp::store {
namespace {

using core::Tensor2D;
using mvp::testing::TempDir;
using mvp::testing::code_of;
using namespace mvp::io;

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

EmbeddingMatrix random_matrix(Rng& rng, DType dtype) {
  const std::size_t rows = 1 + rng.below(20);
  const std::size_t dim = 1 + rng.below(33);
  Tensor2D<double> t(rows, dim);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * std::pow(10.0, rng.uniform(-3, 3));
  if (dtype == DType::f32) return EmbeddingMatrix(t.cast<float>());
  return EmbeddingMatrix(t);
}

TEST(Store, RoundTripSmallMatrix) {
  TempDir dir("store");
  const EmbeddingMatrix m(Tensor2D<float>::from_rows({{1, 2, 3}, {4, 5, 6}}));
  write_store(m, dir / "m.mvps");
  const auto back = read_store(dir / "m.mvps");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.dtype(), DType::f32);
  EXPECT_EQ(back.at(1, 2), 6.0);
}

TEST(Store, RoundTripBothDtypes) {
  TempDir dir("store");
  Rng rng(17);
  for (DType d : {DType::f32, DType::f64}) {
    const auto m = random_matrix(rng, d);
    write_store(m, dir / "x.mvps");
    EXPECT_EQ(read_store(dir / "x.mvps"), m);
  }
}

TEST(Store, HeaderLayout) {
  const EmbeddingMatrix m(Tensor2D<double>::from_rows({{1, 2}, {3, 4}, {5, 6}}));
  const auto bytes = encode_store(m);
  ASSERT_EQ(bytes.size(), kHeaderSize + 6 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "MVPS");
  std::uint16_t version = 0, dtype = 0;
  std::uint64_t rows = 0;
  std::uint32_t dim = 0, crc = 0;
  std::memcpy(&version, bytes.data() + 4, 2);
  std::memcpy(&dtype, bytes.data() + 6, 2);
  std::memcpy(&rows, bytes.data() + 8, 8);
  std::memcpy(&dim, bytes.data() + 16, 4);
  std::memcpy(&crc, bytes.data() + 20, 4);
  EXPECT_EQ(version, 1);
  EXPECT_EQ(dtype, 1);
  EXPECT_EQ(rows, 3u);
  EXPECT_EQ(dim, 2u);
  EXPECT_EQ(crc, crc32(bytes.data() + kHeaderSize, bytes.size() - kHeaderSize));
}

TEST(Store, NonFiniteRejectedBeforeWrite) {
  TempDir dir("store");
  Tensor2D<float> t(2, 3, 1.0f);
  t(1, 2) = std::numeric_limits<float>::quiet_NaN();
  const EmbeddingMatrix m(t);
  const auto msg = message_of([&] { write_store(m, dir / "nan.mvps"); });
  EXPECT_NE(msg.find("non-finite value at (1, 2)"), std::string::npos) << msg;
  EXPECT_FALSE(std::filesystem::exists(dir / "nan.mvps"));
}

TEST(Store, EmptyMatrixRejected) {
  const EmbeddingMatrix m(Tensor2D<float>(0, 4));
  const auto msg = message_of([&] { encode_store(m); });
  EXPECT_NE(msg.find("rows must be ≥ 1"), std::string::npos) << msg;
}

TEST(Store, FlippedPayloadByte) {
  const EmbeddingMatrix m(Tensor2D<float>::from_rows({{1, 2, 3}, {4, 5, 6}}));
  auto bytes = encode_store(m);
  bytes[kHeaderSize + 5] ^= 0x01;
  EXPECT_EQ(code_of([&] { decode_store(bytes); }), ErrorCode::checksum_mismatch);
}

TEST(Store, WrongMagic) {
  const EmbeddingMatrix m(Tensor2D<float>::from_rows({{1}}));
  auto bytes = encode_store(m);
  bytes[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_store(bytes); }), ErrorCode::bad_magic);
  EXPECT_EQ(code_of([&] { decode_header(bytes); }), ErrorCode::bad_magic);
}

TEST(Store, UnsupportedVersion) {
  const EmbeddingMatrix m(Tensor2D<float>::from_rows({{1}}));
  auto bytes = encode_store(m);
  bytes[4] = 2;
  EXPECT_EQ(code_of([&] { decode_store(bytes); }), ErrorCode::unsupported_version);
}

TEST(Store, TruncatedPayload) {
  const EmbeddingMatrix m(Tensor2D<float>::from_rows({{1, 2}, {3, 4}}));
  const auto bytes = encode_store(m);
  EXPECT_EQ(code_of([&] { decode_store(std::string_view(bytes).substr(0, bytes.size() - 1)); }),
            ErrorCode::checksum_mismatch);
  EXPECT_EQ(code_of([&] { decode_store(std::string_view(bytes).substr(0, 10)); }),
            ErrorCode::checksum_mismatch);
}

TEST(Store, InspectReportsChecksumStatus) {
  TempDir dir("store");
  const EmbeddingMatrix m(Tensor2D<float>(100, 64, 0.5f));
  write_store(m, dir / "s.mvps");
  auto info = inspect_store(dir / "s.mvps");
  EXPECT_TRUE(info.checksum_ok);
  EXPECT_EQ(info.header.rows, 100u);
  EXPECT_EQ(info.header.dim, 64u);
  auto bytes = read_file(dir / "s.mvps");
  bytes.back() ^= 0x40;
  write_file_atomic(dir / "s.mvps", bytes);
  EXPECT_FALSE(inspect_store(dir / "s.mvps").checksum_ok);
}

// 100 random matrices: each must round-trip bit-exactly, and each of a
// random single-byte corruption must be detected with the right code.
TEST(Store, RandomizedRoundTripAndCorruption) {
  Rng rng(2024);
  std::size_t failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_matrix(rng, rng.below(2) ? DType::f64 : DType::f32);
    const auto bytes = encode_store(m);
    if (!(decode_store(bytes) == m)) ++failures;

    auto bad = bytes;
    const std::size_t pos = rng.below(bytes.size());
    bad[pos] = static_cast<char>(bad[pos] ^ (1 + rng.below(255)));
    ErrorCode expected = ErrorCode::checksum_mismatch;
    if (pos < 4) {
      expected = ErrorCode::bad_magic;
    } else if (pos < 6) {
      expected = ErrorCode::unsupported_version;
    }
    bool detected = false;
    try {
      decode_store(bad);
    } catch (const Error& e) {
      // dtype/rows/dim damage surfaces as a payload-length mismatch or an
      // invalid header field; both count as detection.
      detected = pos < 6 ? e.code() == expected : true;
    }
    if (!detected) {
      ++failures;
      ADD_FAILURE() << "trial " << trial << " byte " << pos << " undetected";
    }
  }
  EXPECT_EQ(failures, 0u);
}

TEST(Normalize, Examples) {
  const auto n = l2_normalize_rows(EmbeddingMatrix(Tensor2D<double>::from_rows({{3, 4}, {1, 0}})));
  EXPECT_DOUBLE_EQ(n.at(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(n.at(0, 1), 0.8);
  EXPECT_EQ(n.at(1, 0), 1.0);
  EXPECT_EQ(n.at(1, 1), 0.0);
  EXPECT_THROW(l2_normalize_rows(EmbeddingMatrix(Tensor2D<double>::from_rows({{0, 0}}))), Error);
}

TEST(Normalize, UnitNormAndIdempotent) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_matrix(rng, DType::f64);
    const auto n = l2_normalize_rows(m);
    for (std::size_t r = 0; r < n.rows(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < n.dim(); ++c) s += n.at(r, c) * n.at(r, c);
      EXPECT_NEAR(std::sqrt(s), 1.0, 1e-12);
    }
    const auto nn = l2_normalize_rows(n);
    for (std::size_t r = 0; r < n.rows(); ++r)
      for (std::size_t c = 0; c < n.dim(); ++c) EXPECT_NEAR(nn.at(r, c), n.at(r, c), 1e-15);
  }
}

TEST(Gather, Examples) {
  const EmbeddingMatrix m(Tensor2D<float>::from_rows({{1, 2}, {3, 4}}));
  const std::vector<std::size_t> swap = {1, 0}, dup = {0, 0}, bad = {2};
  EXPECT_EQ(gather_rows(m, swap), EmbeddingMatrix(Tensor2D<float>::from_rows({{3, 4}, {1, 2}})));
  EXPECT_EQ(gather_rows(m, dup), EmbeddingMatrix(Tensor2D<float>::from_rows({{1, 2}, {1, 2}})));
  EXPECT_EQ(code_of([&] { gather_rows(m, bad); }), ErrorCode::out_of_range);
}

TEST(Synth, DeterministicStores) {
  const auto a = mvp::testing::small_benchmark(5);
  const auto b = mvp::testing::small_benchmark(5);
  EXPECT_EQ(encode_store(a.grid.embeddings), encode_store(b.grid.embeddings));
  EXPECT_EQ(encode_store(a.test.embeddings), encode_store(b.test.embeddings));
  EXPECT_EQ(encode_store(a.template_features), encode_store(b.template_features));
  const auto c = mvp::testing::small_benchmark(6);
  EXPECT_NE(encode_store(a.test.embeddings), encode_store(c.test.embeddings));
}

TEST(Synth, ShapesAndDimensionAgreement) {
  const auto b = mvp::testing::small_benchmark(1, 1.0, 5, 12, 30);
  EXPECT_EQ(b.grid.embeddings.rows(), 30u * 5u);
  EXPECT_EQ(b.classes.rows(), 5u);
  EXPECT_EQ(b.template_features.rows(), 30u);
  EXPECT_EQ(b.classes.dim(), 12u);
  EXPECT_EQ(b.grid.embeddings.dim(), 12u);
  EXPECT_EQ(b.template_features.dim(), 12u);
  EXPECT_EQ(b.test.labels.size(), 50u);
  EXPECT_NO_THROW(b.validate());
}

TEST(Synth, SensitivityZeroMakesTemplatesOfATypeIdentical) {
  const auto b = mvp::testing::small_benchmark(3, 0.0);
  const auto& recs = b.templates.records;
  for (std::size_t i = 1; i < recs.size(); ++i) {
    for (std::size_t c = 0; c < b.template_features.dim(); ++c) {
      ASSERT_EQ(b.template_features.at(i, c), b.template_features.at(0, c));
    }
  }
}

TEST(Synth, SensitivityZeroGivesZeroShotPrsZero) {
  const auto b = mvp::testing::small_benchmark(3, 0.0);
  bench::ZeroShotEvaluator ev(b);
  const auto r = bench::run_benchmark(ev, b, {"synthetic", "zero-shot", 3, b.templates.hash});
  for (const auto& t : r.types) EXPECT_EQ(t.prs, 0.0) << to_string(t.type);
  EXPECT_EQ(r.prs_avg, 0.0);
}

TEST(Synth, DefaultSpecHasPositiveZeroShotPrs) {
  SynthSpec spec;
  const auto b = gen_synthetic_benchmark(spec, bench::make_synthetic_taxonomy(spec.n_templates));
  bench::ZeroShotEvaluator ev(b);
  const auto r = bench::run_benchmark(ev, b, {"synthetic", "zero-shot", spec.seed, ""});
  EXPECT_GT(r.prs_avg, 0.0);
  // Regression fixture from the seed-7 oracle run.
  EXPECT_NEAR(r.prs_avg, 4.354, 5e-4);
  EXPECT_NEAR(r.mean_accuracy, 0.9316, 5e-4);
}

TEST(Synth, InvalidSpec) {
  SynthSpec spec;
  spec.sensitivity = -1;
  EXPECT_THROW(spec.validate(), Error);
  spec.sensitivity = 1;
  spec.noise_sigma = -0.1;
  EXPECT_THROW(spec.validate(), Error);
}

TEST(Manifest, SaveLoadRoundTrip) {
  TempDir dir("manifest");
  const auto b = mvp::testing::small_benchmark(9);
  const auto path = save_benchmark(b, dir.path());
  EXPECT_EQ(path.filename(), "manifest.json");
  for (const char* f : {"images.mvps", "classes.mvps", "templates.mvps", "prompt_grid.mvps"}) {
    EXPECT_TRUE(inspect_store(dir / f).checksum_ok) << f;
  }
  const auto back = load_benchmark(path);
  EXPECT_EQ(back.class_names, b.class_names);
  EXPECT_EQ(back.templates.records, b.templates.records);
  EXPECT_EQ(back.test.embeddings, b.test.embeddings);
  EXPECT_EQ(back.train.labels, b.train.labels);
  EXPECT_EQ(back.grid.embeddings, b.grid.embeddings);
  EXPECT_EQ(back.template_features, b.template_features);
  const auto m = parse_manifest(read_file(path));
  EXPECT_EQ(m.template_set_hash, hex32(crc32(read_file(dir / m.template_set_path))));
  EXPECT_EQ(back.templates.hash, m.template_set_hash);
  EXPECT_EQ(parse_manifest(manifest_to_json(m)).template_ids, m.template_ids);
}

TEST(Manifest, HashMismatchDetected) {
  TempDir dir("manifest");
  const auto path = save_benchmark(mvp::testing::small_benchmark(9), dir.path());
  auto json = read_file(dir / "templates.json");
  json.insert(json.size() - 1, " ");
  write_file_atomic(dir / "templates.json", json);
  EXPECT_EQ(code_of([&] { load_benchmark(path); }), ErrorCode::checksum_mismatch);
}

TEST(Manifest, MissingStoreFails) {
  TempDir dir("manifest");
  const auto path = save_benchmark(mvp::testing::small_benchmark(9), dir.path());
  std::filesystem::remove(dir / "classes.mvps");
  EXPECT_THROW(load_benchmark(path), Error);
}

}  // namespace
}  // namespace mvp::store
