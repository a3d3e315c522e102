#pragma once

#include <string>

namespace vld {

// Writes bytes to a sibling temp file and renames it into place, so readers
// never observe a partially written artifact. Throws DataError on I/O failure.
void atomic_write(const std::string& path, const std::string& bytes);

// Whole-file slurp; throws DataError when the file cannot be opened.
std::string read_file(const std::string& path);

} // namespace vld
