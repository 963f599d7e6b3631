#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace twoview {

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);

/// Child seed for a named pipeline step.
///
/// The first 8 bytes (little-endian) of SHA-256(le64(master) || step_name).
/// Each step depends only on its own name, so adding steps never changes the
/// seeds of existing ones.
std::uint64_t derive_seed(std::uint64_t master, std::string_view step_name);

}  // namespace twoview
