#pragma once

#include <stdexcept>
#include <string>

namespace crossflow {

/// Filesystem-level failure (open/read/write), distinct from config errors
/// so the CLI can map it to its own exit code.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest decimal string that parses back to exactly the same double.
/// All file output goes through this so identical inputs serialize
/// byte-identically.
std::string fmt_double(double v);

/// Reads a whole file; throws IoError on failure.
std::string read_file(const std::string& path);

/// Writes text to path, creating parent directories as needed.
void write_file(const std::string& path, const std::string& text);

/// FNV-1a 64-bit hash, used for config fingerprints.
std::uint64_t fnv1a(const std::string& s);

}  // namespace crossflow
