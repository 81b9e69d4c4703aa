#pragma once

#include <cstdint>
#include <string>

namespace exchanger {

// SHA-1 over a byte buffer, hex encoded. Used for config hashes and
// dataset content hashes written into run manifests.
std::string sha1_hex(const void* data, std::size_t n);
std::string sha1_hex(const std::string& s);

// Hash of a whole file's bytes; throws FormatError if unreadable.
std::string sha1_file(const std::string& path);

}  // namespace exchanger
