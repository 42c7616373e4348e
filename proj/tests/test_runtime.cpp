// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <thread>

#include "splitfit/dataset.hpp"
#include "splitfit/net.hpp"
#include "splitfit/split.hpp"

using namespace splitfit;

namespace {

struct Rig {
  ModelGraph<float> teacher;
  BottleneckedModel<float> bm;
  SplitPair<float> pair;
  Dataset<float> images;
  std::unique_ptr<Server> server;

  Rig() : teacher(build_teacher<float>("small_resnet", {3, 32, 32}, 10, 61)) {
    SplitConfig cfg;
    cfg.split_point = SplitPoint::SP1;
    cfg.bottleneck_channels = 3;
    cfg.spatial_factor = 2;
    bm = inject(teacher, cfg, 62);
    pair = split(bm);
    images = make_synthetic_dataset<float>(24, 4242);
    server = serve(pair.tail, 0, PayloadFormat::bq8);
  }
};

}  // namespace

TEST_CASE("loopback inference matches the local split oracle, payloads bit-identical") {
  Rig rig;
  Connection conn("127.0.0.1", rig.server->port());
  for (PayloadFormat codec : {PayloadFormat::bq8, PayloadFormat::float32}) {
    for (int i = 0; i < 12; ++i) {
      auto img = rig.images.image(i);
      auto local = infer_local_split(rig.pair.head, rig.pair.tail, img, codec);
      auto remote = infer_remote(rig.pair.head, img, conn, codec, static_cast<uint32_t>(i + 1));
      REQUIRE(remote.label == local.label);
      REQUIRE(remote.payload_bytes == local.payload_bytes);
    }
  }
}

TEST_CASE("float32 split path always reproduces the unsplit model's label") {
  Rig rig;
  for (int i = 0; i < 12; ++i) {
    auto img = rig.images.image(i);
    auto full = full_forward(rig.bm, img);
    int want = 0;
    for (int c = 1; c < full.dim(1); ++c)
      if (full.data[static_cast<size_t>(c)] > full.data[static_cast<size_t>(want)]) want = c;
    auto local = infer_local_split(rig.pair.head, rig.pair.tail, img, PayloadFormat::float32);
    REQUIRE(local.label == want);
  }
}

TEST_CASE("local split inference is deterministic across calls") {
  Rig rig;
  auto img = rig.images.image(0);
  auto a = infer_local_split(rig.pair.head, rig.pair.tail, img, PayloadFormat::bq8);
  auto b = infer_local_split(rig.pair.head, rig.pair.tail, img, PayloadFormat::bq8);
  REQUIRE(a.label == b.label);
  REQUIRE(a.payload_bytes == b.payload_bytes);
}

TEST_CASE("server replies bad_magic and closes when framing is lost") {
  Rig rig;
  Connection conn("127.0.0.1", rig.server->port(), 2000);
  std::vector<uint8_t> junk = {'X', 'Y', 'Z', 'W', 1, 1, 0, 0, 0, 0};
  conn.send_raw(junk);
  auto [type, body] = conn.recv_frame();
  REQUIRE(type == MsgType::error);
  REQUIRE(decode_wire_error(body).code == "bad_magic");
  // the stream is unusable afterwards; the server hangs up
  REQUIRE_THROWS_AS(conn.recv_frame(), Error);
}

TEST_CASE("recoverable request errors keep the connection usable") {
  Rig rig;
  Connection conn("127.0.0.1", rig.server->port(), 5000);

  // shape mismatch: well-framed request with the wrong dims
  InferRequest bad;
  bad.request_id = 9;
  bad.dims = {4, 4, 4};
  bad.codec = PayloadFormat::bq8;
  bad.payload.resize(4 * 4 * 4 + 4);
  float s = 1.0f;
  std::memcpy(bad.payload.data(), &s, 4);
  conn.send_frame(MsgType::infer_request, encode_infer_request(bad));
  auto [t1, b1] = conn.recv_frame();
  REQUIRE(t1 == MsgType::error);
  REQUIRE(decode_wire_error(b1).code == "shape_mismatch");
  REQUIRE(decode_wire_error(b1).request_id == 9);

  // unknown codec byte inside an intact frame
  auto body = encode_infer_request(bad);
  body[4 + 1 + 12] = 9;  // codec field after request_id, rank, 3 dims
  conn.send_frame(MsgType::infer_request, body);
  auto [t2, b2] = conn.recv_frame();
  REQUIRE(t2 == MsgType::error);
  REQUIRE(decode_wire_error(b2).code == "bad_codec");

  // a response-typed frame from a client is not a request
  conn.send_frame(MsgType::infer_response, encode_infer_response({1, 2, 3}));
  auto [t3, b3] = conn.recv_frame();
  REQUIRE(t3 == MsgType::error);
  REQUIRE(decode_wire_error(b3).code == "bad_type");

  // ...and the very same connection still serves a valid request
  auto img = rig.images.image(3);
  auto local = infer_local_split(rig.pair.head, rig.pair.tail, img, PayloadFormat::bq8);
  auto remote = infer_remote(rig.pair.head, img, conn, PayloadFormat::bq8, 77);
  REQUIRE(remote.label == local.label);
}

TEST_CASE("hand-built fixture request reproduces the oracle label") {
  Rig rig;
  auto img = rig.images.image(7);
  auto local = infer_local_split(rig.pair.head, rig.pair.tail, img, PayloadFormat::bq8);

  // rebuild the request from raw parts rather than through infer_remote
  auto head_out = forward(rig.pair.head, img).first;
  Shape dims(head_out.shape.begin() + 1, head_out.shape.end());
  InferRequest req;
  req.request_id = 1234;
  req.dims = dims;
  req.codec = PayloadFormat::bq8;
  req.payload = encode_payload(quantize(head_out.reshaped(dims)));
  REQUIRE(req.payload == local.payload_bytes);

  Connection conn("127.0.0.1", rig.server->port());
  conn.send_frame(MsgType::infer_request, encode_infer_request(req));
  auto [type, body] = conn.recv_frame();
  REQUIRE(type == MsgType::infer_response);
  auto resp = decode_infer_response(body);
  REQUIRE(resp.request_id == 1234);
  REQUIRE(static_cast<int>(resp.label) == local.label);
  REQUIRE(resp.server_compute_ns > 0);
}

TEST_CASE("model info answers with the tail contract") {
  Rig rig;
  Connection conn("127.0.0.1", rig.server->port());
  conn.send_frame(MsgType::model_info, {});
  auto [type, body] = conn.recv_frame();
  REQUIRE(type == MsgType::model_info);
  auto info = decode_model_info(body);
  REQUIRE(info.input_dims == rig.bm.bottleneck_shape);
  REQUIRE(info.num_classes == 10);
  REQUIRE(info.codec == PayloadFormat::bq8);
}

TEST_CASE("delay breakdown accounts for its parts") {
  Rig rig;
  Connection conn("127.0.0.1", rig.server->port());
  auto remote = infer_remote(rig.pair.head, rig.images.image(1), conn, PayloadFormat::bq8);
  const auto& d = remote.breakdown;
  REQUIRE(d.d_head_s > 0);
  REQUIRE(d.d_tail_s > 0);
  REQUIRE(d.total_s >=
          d.d_head_s + d.d_net_up_s + d.d_tail_s + d.d_net_down_s - 1e-3);
}

TEST_CASE("client failure modes: refused endpoint and silent server") {
  REQUIRE_THROWS_AS(Connection("127.0.0.1", 1, 500), EndpointUnavailable);

  // a listener that accepts but never replies drives the client into timeout
  int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  ::listen(lfd, 1);
  socklen_t alen = sizeof(addr);
  ::getsockname(lfd, reinterpret_cast<sockaddr*>(&addr), &alen);
  {
    Connection conn("127.0.0.1", ntohs(addr.sin_port), 300);
    conn.send_frame(MsgType::model_info, {});
    REQUIRE_THROWS_AS(conn.recv_frame(), NetworkTimeout);
  }
  ::close(lfd);
}

TEST_CASE("concurrent clients get correct answers") {
  Rig rig;
  std::vector<int> expect;
  for (int i = 0; i < 4; ++i)
    expect.push_back(
        infer_local_split(rig.pair.head, rig.pair.tail, rig.images.image(i), PayloadFormat::bq8)
            .label);
  std::vector<std::thread> threads;
  std::vector<int> got(4, -1);
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&, t] {
      Connection conn("127.0.0.1", rig.server->port());
      for (int rep = 0; rep < 3; ++rep) {
        auto r = infer_remote(rig.pair.head, rig.images.image(t), conn, PayloadFormat::bq8,
                              static_cast<uint32_t>(100 * t + rep));
        got[static_cast<size_t>(t)] = r.label;
      }
    });
  for (auto& th : threads) th.join();
  REQUIRE(got == expect);
}

TEST_CASE("fuzzed frames never wedge the server") {
  Rig rig;
  Rng rng(4711);
  for (int i = 0; i < 200; ++i) {
    std::vector<uint8_t> blob(static_cast<size_t>(rng.uniform_int(1, 64)));
    for (auto& b : blob) b = static_cast<uint8_t>(rng.next_u64());
    if (i % 3 == 0) {  // sometimes a plausible header with garbage body
      blob.resize(kFrameHeaderBytes + 8);
      blob[0] = 'S';
      blob[1] = 'P';
      blob[2] = 'L';
      blob[3] = 'F';
      blob[4] = kWireVersion;
      blob[5] = 1;
      blob[6] = 8;
      blob[7] = 0;
      blob[8] = 0;
      blob[9] = 0;
    }
    try {
      Connection conn("127.0.0.1", rig.server->port(), 200);
      conn.send_raw(blob);
      auto [type, body] = conn.recv_frame();
      (void)type;
    } catch (const Error&) {
      // timeouts / closed connections are acceptable; crashes are not
    }
  }
  // the server still answers a clean request afterwards
  auto img = rig.images.image(2);
  auto local = infer_local_split(rig.pair.head, rig.pair.tail, img, PayloadFormat::bq8);
  Connection conn("127.0.0.1", rig.server->port());
  auto remote = infer_remote(rig.pair.head, img, conn, PayloadFormat::bq8);
  REQUIRE(remote.label == local.label);
}
