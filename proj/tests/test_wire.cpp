// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "splitfit/wire.hpp"

using namespace splitfit;

TEST_CASE("frame header: golden bytes and rejection paths") {
  auto frame = encode_frame(MsgType::infer_response, {0xaa, 0xbb});
  REQUIRE(frame.size() == kFrameHeaderBytes + 2);
  REQUIRE(frame[0] == 'S');
  REQUIRE(frame[1] == 'P');
  REQUIRE(frame[2] == 'L');
  REQUIRE(frame[3] == 'F');
  REQUIRE(frame[4] == kWireVersion);
  REQUIRE(frame[5] == 2);
  REQUIRE(frame[6] == 2);  // body_len LE
  REQUIRE(frame[7] == 0);
  REQUIRE(frame[8] == 0);
  REQUIRE(frame[9] == 0);

  auto fh = parse_frame_header(frame.data());
  REQUIRE(fh.type == MsgType::infer_response);
  REQUIRE(fh.body_len == 2);

  auto bad = frame;
  bad[0] = 'X';
  REQUIRE_THROWS_MATCHES(parse_frame_header(bad.data()), ProtocolError,
                         Catch::Matchers::Message("bad_magic"));
  bad = frame;
  bad[4] = 9;
  REQUIRE_THROWS_MATCHES(parse_frame_header(bad.data()), ProtocolError,
                         Catch::Matchers::Message("bad_version"));
  bad = frame;
  bad[5] = 7;
  REQUIRE_THROWS_MATCHES(parse_frame_header(bad.data()), ProtocolError,
                         Catch::Matchers::Message("bad_type"));
  bad = frame;
  bad[9] = 0xff;  // > 64 MB
  REQUIRE_THROWS_MATCHES(parse_frame_header(bad.data()), ProtocolError,
                         Catch::Matchers::Message("body_too_large"));
}

TEST_CASE("infer request: encode/decode is the identity over random messages") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    InferRequest r;
    r.request_id = static_cast<uint32_t>(rng.next_u64());
    int rank = rng.uniform_int(1, 4);
    int64_t n = 1;
    for (int i = 0; i < rank; ++i) {
      r.dims.push_back(rng.uniform_int(1, 6));
      n *= r.dims.back();
    }
    r.codec = rng.uniform_int(0, 1) ? PayloadFormat::bq8 : PayloadFormat::float32;
    const int64_t len = r.codec == PayloadFormat::bq8 ? n + 4 : 4 * n;
    r.payload.resize(static_cast<size_t>(len));
    for (auto& b : r.payload) b = static_cast<uint8_t>(rng.next_u64());
    if (r.codec == PayloadFormat::bq8) {
      // keep the scale field positive so decode accepts it downstream
      float s = 0.5f;
      std::memcpy(r.payload.data(), &s, 4);
    }

    auto body = encode_infer_request(r);
    auto back = decode_infer_request(body);
    REQUIRE(back.request_id == r.request_id);
    REQUIRE(back.dims == r.dims);
    REQUIRE(back.codec == r.codec);
    REQUIRE(back.payload == r.payload);
  }
}

TEST_CASE("infer request: malformed bodies are rejected") {
  REQUIRE_THROWS_AS(decode_infer_request({1, 2, 3}), ProtocolError);

  InferRequest r;
  r.request_id = 5;
  r.dims = {2, 3};
  r.codec = PayloadFormat::bq8;
  r.payload.resize(10);  // 2*3+4
  auto body = encode_infer_request(r);

  auto truncated = body;
  truncated.pop_back();
  REQUIRE_THROWS_MATCHES(decode_infer_request(truncated), ProtocolError,
                         Catch::Matchers::Message("payload_mismatch"));

  auto bad_codec = body;
  bad_codec[4 + 1 + 8] = 7;
  REQUIRE_THROWS_MATCHES(decode_infer_request(bad_codec), ProtocolError,
                         Catch::Matchers::Message("bad_codec"));

  auto zero_dim = body;
  zero_dim[5] = 0;  // first dim -> 0
  zero_dim[6] = 0;
  zero_dim[7] = 0;
  zero_dim[8] = 0;
  REQUIRE_THROWS_AS(decode_infer_request(zero_dim), ProtocolError);
}

TEST_CASE("infer response and error bodies: fixed layout") {
  InferResponse r{7, 3, 1234567890123ull};
  auto body = encode_infer_response(r);
  REQUIRE(body.size() == 16);
  REQUIRE(get_u32(body.data()) == 7);
  REQUIRE(get_u32(body.data() + 4) == 3);
  REQUIRE(get_u64(body.data() + 8) == 1234567890123ull);
  auto back = decode_infer_response(body);
  REQUIRE(back.request_id == 7);
  REQUIRE(back.label == 3);
  REQUIRE(back.server_compute_ns == 1234567890123ull);
  REQUIRE(kInferResponseFrameBytes == 26);

  WireError e{42, "shape_mismatch"};
  auto eb = encode_wire_error(e);
  auto eback = decode_wire_error(eb);
  REQUIRE(eback.request_id == 42);
  REQUIRE(eback.code == "shape_mismatch");
}

TEST_CASE("model info: round trip") {
  ModelInfo m;
  m.input_dims = {3, 8, 8};
  m.codec = PayloadFormat::bq8;
  m.num_classes = 10;
  m.name = "tail_model";
  auto back = decode_model_info(encode_model_info(m));
  REQUIRE(back.input_dims == m.input_dims);
  REQUIRE(back.codec == m.codec);
  REQUIRE(back.num_classes == 10);
  REQUIRE(back.name == "tail_model");
}
