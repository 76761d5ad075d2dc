#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace llmseg {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames over the target, so concurrent
/// readers see either the old content or the complete new content.
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// File-name-safe form of a class name: lowercase, runs of anything outside
/// [a-z0-9] collapsed to '_'.
std::string slugify(std::string_view name);

std::vector<std::string> split(std::string_view s, char sep);

std::optional<std::string> env(const char* name);

}  // namespace llmseg
