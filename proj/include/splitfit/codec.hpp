// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "splitfit/tensor.hpp"

namespace splitfit {

enum class QuantMode : uint8_t { symmetric = 0 };

// 8-bit symmetric quantization of one tensor: signed bytes plus a single
// 32-bit dequantization scale. Wire layout (little-endian): 4-byte IEEE-754
// scale, then the data bytes in row-major order.
struct QuantizedTensor {
  Shape shape;
  std::vector<int8_t> data;
  float scale = 1.0f;
  QuantMode mode = QuantMode::symmetric;

  int64_t payload_bytes() const { return static_cast<int64_t>(data.size()) + 4; }
};

// scale = max|t| / 127 (1 for an all-zero tensor); q = round-half-away-from-
// zero(x/scale). The scale choice keeps every quantized value inside
// [-127, 127], so nothing clamps.
template <typename T>
QuantizedTensor quantize(const Tensor<T>& t) {
  QuantizedTensor q;
  q.shape = t.shape;
  q.data.resize(t.data.size());
  double mx = 0;
  for (T v : t.data) {
    if (!std::isfinite(static_cast<double>(v)))
      throw InvalidTensor("cannot quantize a tensor with NaN/Inf elements");
    mx = std::max(mx, std::abs(static_cast<double>(v)));
  }
  q.scale = (mx == 0.0) ? 1.0f : static_cast<float>(mx / 127.0);
  const double inv = 1.0 / static_cast<double>(q.scale);
  for (size_t i = 0; i < t.data.size(); ++i)
    q.data[i] = static_cast<int8_t>(std::lround(static_cast<double>(t.data[i]) * inv));
  return q;
}

template <typename T = float>
Tensor<T> dequantize(const QuantizedTensor& q) {
  if (static_cast<int64_t>(q.data.size()) != numel(q.shape))
    throw CorruptPayload("quantized data length " + std::to_string(q.data.size()) +
                         " does not match shape " + shape_str(q.shape));
  if (!(q.scale > 0)) throw CorruptPayload("non-positive dequantization scale");
  Tensor<T> t(q.shape);
  for (size_t i = 0; i < q.data.size(); ++i)
    t.data[i] = static_cast<T>(q.data[i]) * static_cast<T>(q.scale);
  return t;
}

// Fraction of tensor elements removed by transferring `bottleneck` instead of
// `input`: 1 - numel(bottleneck)/numel(input).
inline double element_reduction(const Shape& input, const Shape& bottleneck) {
  if (input.empty() || bottleneck.empty()) throw ShapeError("element_reduction needs shapes");
  return 1.0 - static_cast<double>(numel(bottleneck)) / static_cast<double>(numel(input));
}

enum class PayloadFormat : uint8_t { float32 = 0, bq8 = 1, configured_jpeg = 2 };

inline const char* payload_format_name(PayloadFormat f) {
  switch (f) {
    case PayloadFormat::float32: return "float32";
    case PayloadFormat::bq8: return "bq8";
    case PayloadFormat::configured_jpeg: return "configured_jpeg";
  }
  return "?";
}

inline PayloadFormat payload_format_from_name(const std::string& s) {
  if (s == "float32") return PayloadFormat::float32;
  if (s == "bq8") return PayloadFormat::bq8;
  if (s == "configured_jpeg") return PayloadFormat::configured_jpeg;
  throw MissingConfig("unknown payload format '" + s + "'");
}

// Transfer size in bytes before frame headers. configured_jpeg is an average
// payload size supplied by configuration; there is no image codec here.
inline int64_t payload_size(const Shape& shape, PayloadFormat format,
                            std::optional<int64_t> configured_jpeg_bytes = std::nullopt) {
  switch (format) {
    case PayloadFormat::bq8: return numel(shape) + 4;
    case PayloadFormat::float32: return 4 * numel(shape);
    case PayloadFormat::configured_jpeg:
      if (!configured_jpeg_bytes)
        throw MissingConfig("configured_jpeg requires an average JPEG size in the config");
      return *configured_jpeg_bytes;
  }
  throw MissingConfig("unhandled payload format");
}

inline std::vector<uint8_t> encode_payload(const QuantizedTensor& q) {
  std::vector<uint8_t> out;
  out.reserve(static_cast<size_t>(q.payload_bytes()));
  put_f32(out, q.scale);
  for (int8_t b : q.data) out.push_back(static_cast<uint8_t>(b));
  return out;
}

inline QuantizedTensor decode_payload(const uint8_t* bytes, size_t len, const Shape& shape) {
  const int64_t n = numel(shape);
  if (static_cast<int64_t>(len) != n + 4)
    throw CorruptPayload("bq8 payload of " + std::to_string(len) + " bytes cannot carry " +
                         shape_str(shape));
  QuantizedTensor q;
  q.shape = shape;
  q.scale = get_f32(bytes);
  if (!(q.scale > 0) || !std::isfinite(q.scale))
    throw CorruptPayload("bad dequantization scale");
  q.data.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) q.data[static_cast<size_t>(i)] = static_cast<int8_t>(bytes[4 + i]);
  return q;
}

inline std::vector<uint8_t> encode_payload_f32(const Tensor<float>& t) {
  std::vector<uint8_t> out;
  out.reserve(t.data.size() * 4);
  for (float v : t.data) put_f32(out, v);
  return out;
}

inline Tensor<float> decode_payload_f32(const uint8_t* bytes, size_t len, const Shape& shape) {
  const int64_t n = numel(shape);
  if (static_cast<int64_t>(len) != 4 * n)
    throw CorruptPayload("float32 payload of " + std::to_string(len) + " bytes cannot carry " +
                         shape_str(shape));
  Tensor<float> t(shape);
  for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = get_f32(bytes + 4 * i);
  return t;
}

}  // namespace splitfit
