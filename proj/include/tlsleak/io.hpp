#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace tlsleak {

/// Reads a whole file; throws kNotFound / kIo naming the path.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over path.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content);

/// Lower-case hex of a 64-bit value, zero padded to 16 digits.
std::string hex64(std::uint64_t value);

/// Content digest used in provenance and manifests.
std::string digest(const std::string& content);

}  // namespace tlsleak
