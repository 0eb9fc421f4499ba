// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mvp {

enum class ErrorCode {
  invalid_argument,
  shape_mismatch,
  non_finite,
  io,
  bad_magic,
  unsupported_version,
  checksum_mismatch,
  missing_section,
  out_of_range,
  schema,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the engine carries a stable code so callers
/// (the CLI in particular) can map it onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace mvp
