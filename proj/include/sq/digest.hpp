#pragma once

#include <cstdint>
#include <string>

namespace sq {

// FNV-1a 64 over arbitrary bytes, lowercase hex. Used to key images in the
// model call ledger and mock scripts without embedding whole payloads.
std::string digest_hex(const uint8_t* data, size_t size);
inline std::string digest_hex(const std::string& bytes) {
  return digest_hex(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
}

}  // namespace sq
