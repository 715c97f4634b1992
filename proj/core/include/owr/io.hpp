#pragma once

// Whole-file IO and little-endian float32 packing shared by the writers.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace owr {

/// Throws owr::Error(kIo, "missing file: <name>") if unreadable.
std::string read_file(const std::filesystem::path& path);

/// Creates parent directories as needed; truncates.
void write_file(const std::filesystem::path& path, const std::string& bytes);

std::string pack_float32(std::span<const double> values);

/// Byte count must be a multiple of four.
std::vector<double> unpack_float32(const std::string& bytes);

}  // namespace owr
