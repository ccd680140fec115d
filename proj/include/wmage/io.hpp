#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wmage {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

// Writes to a sibling temporary and renames over the target, so a failure
// never leaves a partial file behind.
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path& path, std::string_view text);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t value);

/// Splits one CSV line on commas. Quoting is not supported; none of the
/// formats this project emits need it.
std::vector<std::string> split_csv_line(std::string_view line);

/// Splits text into lines, dropping a trailing '\r' and blank lines.
std::vector<std::string> nonblank_lines(std::string_view text);

std::string_view trim(std::string_view s);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

/// Worker cap: WMAGE_THREADS when set and positive, otherwise hardware concurrency.
unsigned worker_threads();

}  // namespace wmage
