// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace splitfit {

// Base class for all library errors. Subclasses mirror the failure survey in
// the public API docs; catching splitfit::Error catches everything raised here.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define SPLITFIT_DEFINE_ERROR(NAME)                        \
  class NAME : public Error {                              \
   public:                                                 \
    explicit NAME(const std::string& msg) : Error(msg) {}  \
  }

SPLITFIT_DEFINE_ERROR(UnknownArchitecture);
SPLITFIT_DEFINE_ERROR(ShapeError);
SPLITFIT_DEFINE_ERROR(InvalidLayerId);
SPLITFIT_DEFINE_ERROR(InvalidSplitConfig);
SPLITFIT_DEFINE_ERROR(InvalidLabel);
SPLITFIT_DEFINE_ERROR(InvalidTemperature);
SPLITFIT_DEFINE_ERROR(InvalidTensor);
SPLITFIT_DEFINE_ERROR(CorruptPayload);
SPLITFIT_DEFINE_ERROR(MissingConfig);
SPLITFIT_DEFINE_ERROR(UnknownRecipe);
SPLITFIT_DEFINE_ERROR(EmptyDataset);
SPLITFIT_DEFINE_ERROR(DivergenceError);
SPLITFIT_DEFINE_ERROR(EndpointUnavailable);
SPLITFIT_DEFINE_ERROR(NetworkTimeout);
SPLITFIT_DEFINE_ERROR(TraceExhausted);
SPLITFIT_DEFINE_ERROR(ProtocolError);
SPLITFIT_DEFINE_ERROR(IoError);

#undef SPLITFIT_DEFINE_ERROR

// --- little-endian scalar (de)serialization -------------------------------
// All on-disk and on-wire multi-byte values are little-endian.

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline float get_f32(const uint8_t* p) {
  uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

// FNV-1a over raw bytes; used to fingerprint parameter blobs.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace splitfit
