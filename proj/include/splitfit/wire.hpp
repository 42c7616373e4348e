// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "splitfit/codec.hpp"

namespace splitfit {

// Frame layout (little-endian, bit-exact):
//   magic "SPLF" | version u8 | msg_type u8 | body_len u32 | body bytes
//
// INFER_REQUEST body:  request_id u32 | rank u8 | dims rank*u32 | codec u8 |
//                      payload (bq8: scale f32 + int8 data; float32: f32 data)
// INFER_RESPONSE body: request_id u32 | label u32 | server_compute_ns u64
// MODEL_INFO body:     rank u8 | dims rank*u32 | codec u8 | num_classes u32 |
//                      name (rest of body)  — responses only; requests empty
// ERROR body:          request_id u32 (0 if unparsed) | ascii code (rest)
//
// ProtocolError messages double as the short error codes sent on the wire.

constexpr uint8_t kWireVersion = 1;
constexpr size_t kFrameHeaderBytes = 10;
constexpr uint32_t kMaxBodyBytes = 64u << 20;

enum class MsgType : uint8_t {
  infer_request = 1,
  infer_response = 2,
  model_info = 3,
  error = 255,
};

struct FrameHeader {
  uint8_t version = kWireVersion;
  MsgType type = MsgType::error;
  uint32_t body_len = 0;
};

inline std::vector<uint8_t> encode_frame(MsgType type, const std::vector<uint8_t>& body) {
  std::vector<uint8_t> out;
  out.reserve(kFrameHeaderBytes + body.size());
  out.insert(out.end(), {'S', 'P', 'L', 'F'});
  out.push_back(kWireVersion);
  out.push_back(static_cast<uint8_t>(type));
  put_u32(out, static_cast<uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

inline FrameHeader parse_frame_header(const uint8_t* h) {
  if (h[0] != 'S' || h[1] != 'P' || h[2] != 'L' || h[3] != 'F') throw ProtocolError("bad_magic");
  FrameHeader fh;
  fh.version = h[4];
  if (fh.version != kWireVersion) throw ProtocolError("bad_version");
  const uint8_t t = h[5];
  if (t != 1 && t != 2 && t != 3 && t != 255) throw ProtocolError("bad_type");
  fh.type = static_cast<MsgType>(t);
  fh.body_len = get_u32(h + 6);
  if (fh.body_len > kMaxBodyBytes) throw ProtocolError("body_too_large");
  return fh;
}

struct InferRequest {
  uint32_t request_id = 0;
  Shape dims;
  PayloadFormat codec = PayloadFormat::bq8;
  std::vector<uint8_t> payload;
};

inline std::vector<uint8_t> encode_infer_request(const InferRequest& r) {
  std::vector<uint8_t> b;
  put_u32(b, r.request_id);
  b.push_back(static_cast<uint8_t>(r.dims.size()));
  for (int d : r.dims) put_u32(b, static_cast<uint32_t>(d));
  b.push_back(static_cast<uint8_t>(r.codec));
  b.insert(b.end(), r.payload.begin(), r.payload.end());
  return b;
}

inline InferRequest decode_infer_request(const std::vector<uint8_t>& b) {
  if (b.size() < 6) throw ProtocolError("bad_body");
  InferRequest r;
  r.request_id = get_u32(b.data());
  const int rank = b[4];
  if (rank < 1 || rank > 8 || b.size() < 6 + 4u * rank) throw ProtocolError("bad_body");
  r.dims.resize(static_cast<size_t>(rank));
  size_t off = 5;
  for (int i = 0; i < rank; ++i, off += 4) {
    uint32_t d = get_u32(b.data() + off);
    if (d == 0 || d > (1u << 24)) throw ProtocolError("bad_body");
    r.dims[static_cast<size_t>(i)] = static_cast<int>(d);
  }
  const uint8_t codec = b[off++];
  if (codec > 1) throw ProtocolError("bad_codec");
  r.codec = static_cast<PayloadFormat>(codec);
  r.payload.assign(b.begin() + static_cast<long>(off), b.end());
  const int64_t expect = (r.codec == PayloadFormat::bq8) ? numel(r.dims) + 4 : 4 * numel(r.dims);
  if (static_cast<int64_t>(r.payload.size()) != expect) throw ProtocolError("payload_mismatch");
  return r;
}

struct InferResponse {
  uint32_t request_id = 0;
  uint32_t label = 0;
  uint64_t server_compute_ns = 0;
};

inline std::vector<uint8_t> encode_infer_response(const InferResponse& r) {
  std::vector<uint8_t> b;
  put_u32(b, r.request_id);
  put_u32(b, r.label);
  put_u64(b, r.server_compute_ns);
  return b;
}

inline InferResponse decode_infer_response(const std::vector<uint8_t>& b) {
  if (b.size() != 16) throw ProtocolError("bad_body");
  return {get_u32(b.data()), get_u32(b.data() + 4), get_u64(b.data() + 8)};
}

// Size of a complete label response on the wire; the simulator uses this as
// the downlink payload.
constexpr int64_t kInferResponseFrameBytes = static_cast<int64_t>(kFrameHeaderBytes) + 16;

struct WireError {
  uint32_t request_id = 0;
  std::string code;
};

inline std::vector<uint8_t> encode_wire_error(const WireError& e) {
  std::vector<uint8_t> b;
  put_u32(b, e.request_id);
  b.insert(b.end(), e.code.begin(), e.code.end());
  return b;
}

inline WireError decode_wire_error(const std::vector<uint8_t>& b) {
  if (b.size() < 4) throw ProtocolError("bad_body");
  WireError e;
  e.request_id = get_u32(b.data());
  e.code.assign(b.begin() + 4, b.end());
  return e;
}

struct ModelInfo {
  Shape input_dims;
  PayloadFormat codec = PayloadFormat::bq8;
  uint32_t num_classes = 0;
  std::string name;
};

inline std::vector<uint8_t> encode_model_info(const ModelInfo& m) {
  std::vector<uint8_t> b;
  b.push_back(static_cast<uint8_t>(m.input_dims.size()));
  for (int d : m.input_dims) put_u32(b, static_cast<uint32_t>(d));
  b.push_back(static_cast<uint8_t>(m.codec));
  put_u32(b, m.num_classes);
  b.insert(b.end(), m.name.begin(), m.name.end());
  return b;
}

inline ModelInfo decode_model_info(const std::vector<uint8_t>& b) {
  if (b.size() < 1) throw ProtocolError("bad_body");
  const int rank = b[0];
  if (b.size() < 1 + 4u * rank + 5) throw ProtocolError("bad_body");
  ModelInfo m;
  size_t off = 1;
  m.input_dims.resize(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i, off += 4)
    m.input_dims[static_cast<size_t>(i)] = static_cast<int>(get_u32(b.data() + off));
  m.codec = static_cast<PayloadFormat>(b[off++]);
  m.num_classes = get_u32(b.data() + off);
  off += 4;
  m.name.assign(b.begin() + static_cast<long>(off), b.end());
  return m;
}

}  // namespace splitfit
