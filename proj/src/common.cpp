// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cmath>
#include <iostream>
#include <numbers>

#include "mvp/error.hpp"
#include "mvp/log.hpp"
#include "mvp/rng.hpp"

namespace mvp {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::io: return "io";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::checksum_mismatch: return "checksum_mismatch";
    case ErrorCode::missing_section: return "missing_section";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::schema: return "schema";
  }
  return "unknown";
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) fail(ErrorCode::invalid_argument, "Rng::below requires n > 0");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

namespace log {
namespace {
std::atomic<Level> g_level{Level::warn};
std::atomic<std::size_t> g_warnings{0};
}  // namespace

void set_level(Level level) noexcept { g_level.store(level); }
Level level() noexcept { return g_level.load(); }
std::size_t warning_count() noexcept { return g_warnings.load(); }

void warn(std::string_view message) {
  g_warnings.fetch_add(1);
  if (g_level.load() >= Level::warn) std::cerr << "warning: " << message << '\n';
}

void info(std::string_view message) {
  if (g_level.load() >= Level::info) std::cerr << message << '\n';
}

void debug(std::string_view message) {
  if (g_level.load() >= Level::debug) std::cerr << "debug: " << message << '\n';
}

}  // namespace log
}  // namespace mvp
