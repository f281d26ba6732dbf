#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace defemb {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
std::vector<std::string> read_lines(const std::string& path);

// FNV-1a 64-bit, used for input hashes in run manifests
uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64_file(const std::string& path);
std::string hex64(uint64_t v);

void ensure_directory(const std::string& path);

// Locale-independent float formatting for CSV/SVG output (shortest
// round-trippable form, via std::to_chars).
std::string format_double(double v);

}  // namespace defemb
