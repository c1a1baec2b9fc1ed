#ifndef FAVAE_FSUTIL_HPP
#define FAVAE_FSUTIL_HPP

#include <string>

namespace favae {

// Writes bytes to path via a temp file in the same directory plus rename, so
// readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& bytes);

std::string read_file(const std::string& path);  // DataError on failure

}  // namespace favae

#endif
