// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>

namespace mvp::log {

enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

void set_level(Level level) noexcept;
Level level() noexcept;

void warn(std::string_view message);
void info(std::string_view message);
void debug(std::string_view message);

// Warnings are also counted so tests can assert that a clamp or fallback fired.
std::size_t warning_count() noexcept;

}  // namespace mvp::log
