#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace points {

std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string trim(std::string_view s);
std::string ascii_lower(std::string_view s);
std::vector<std::string> split_lines(std::string_view text);

// Decodes UTF-8 into code points; invalid bytes decode as U+FFFD.
std::vector<char32_t> utf8_decode(std::string_view s);
std::string utf8_encode(char32_t cp);

bool is_cjk(char32_t cp);

// splitmix64 finalizer, used for stateless seeded draws.
std::uint64_t mix64(std::uint64_t x);

// Unbiased draw in [0, n) from a stateless (seed, index) pair.
std::uint64_t seeded_index(std::uint64_t seed, std::uint64_t index, std::uint64_t n);

}  // namespace points
