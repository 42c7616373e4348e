// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "splitfit/codec.hpp"

using namespace splitfit;

TEST_CASE("quantize: hand-worked values") {
  TensorF t({3}, {-1.27f, 0.0f, 1.27f});
  auto q = quantize(t);
  REQUIRE(q.scale == Catch::Approx(0.01).epsilon(1e-6));
  REQUIRE(q.data == std::vector<int8_t>{-127, 0, 127});

  TensorF zeros({2, 2});
  auto qz = quantize(zeros);
  REQUIRE(qz.scale == 1.0f);
  REQUIRE(qz.data == std::vector<int8_t>{0, 0, 0, 0});

  TensorF bad({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  REQUIRE_THROWS_AS(quantize(bad), InvalidTensor);
  bad.data[1] = std::numeric_limits<float>::infinity();
  REQUIRE_THROWS_AS(quantize(bad), InvalidTensor);
}

TEST_CASE("quantize: rounding is half-away-from-zero and never clamps") {
  // elements exactly halfway between steps
  TensorF t({4}, {0.635f, -0.635f, 1.27f, 0.0f});  // scale 0.01, 63.5 rounds to 64
  auto q = quantize(t);
  REQUIRE(q.data[0] == 64);
  REQUIRE(q.data[1] == -64);
  REQUIRE(q.data[2] == 127);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    TensorF r({64});
    rng.fill_normal(r, 0.0, std::pow(10.0, rng.uniform(-6, 6)));
    auto qr = quantize(r);
    for (int8_t v : qr.data) {
      REQUIRE(v >= -127);
      REQUIRE(v <= 127);
    }
  }
}

TEST_CASE("dequantize: bounds, idempotence and exact inversion") {
  QuantizedTensor q;
  q.shape = {3};
  q.data = {-127, 0, 127};
  q.scale = 0.01f;
  auto t = dequantize(q);
  REQUIRE(t.data[0] == Catch::Approx(-1.27).epsilon(1e-6));
  REQUIRE(t.data[1] == 0.0f);
  REQUIRE(t.data[2] == Catch::Approx(1.27).epsilon(1e-6));

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    TensorF r({37});
    rng.fill_normal(r, rng.uniform(-2, 2), std::pow(10.0, rng.uniform(-4, 4)));
    auto qr = quantize(r);
    auto back = dequantize(qr);
    for (size_t i = 0; i < r.data.size(); ++i)
      REQUIRE(std::abs(back.data[i] - r.data[i]) <= qr.scale / 2 * (1 + 1e-6));

    // representable values quantize to themselves
    auto q2 = quantize(back);
    REQUIRE(q2.scale == qr.scale);
    REQUIRE(q2.data == qr.data);
  }

  QuantizedTensor broken;
  broken.shape = {4};
  broken.data = {1, 2, 3};  // length mismatch
  broken.scale = 0.5f;
  REQUIRE_THROWS_AS(dequantize(broken), CorruptPayload);
}

TEST_CASE("element_reduction: published ratios") {
  double r = element_reduction({3, 224, 224}, {12, 29, 29});
  REQUIRE(r == 1.0 - 10092.0 / 150528.0);
  REQUIRE(std::round(r * 1e4) / 1e4 == 0.9330);

  REQUIRE(element_reduction({3, 224, 224}, {3, 224, 224}) == 0.0);

  double r2 = element_reduction({3, 224, 224}, {3, 29, 29});
  REQUIRE(r2 == 1.0 - 2523.0 / 150528.0);
  REQUIRE(std::round(r2 * 1e4) / 1e4 == 0.9832);

  REQUIRE_THROWS_AS(element_reduction({}, {1}), ShapeError);
}

TEST_CASE("payload_size: exact byte counts per format") {
  REQUIRE(payload_size({12, 29, 29}, PayloadFormat::bq8) == 10096);
  REQUIRE(payload_size({12, 29, 29}, PayloadFormat::float32) == 40368);
  REQUIRE(payload_size({3, 224, 224}, PayloadFormat::float32) == 602112);
  REQUIRE(payload_size({3, 224, 224}, PayloadFormat::configured_jpeg, 23500) == 23500);
  REQUIRE_THROWS_AS(payload_size({3, 3, 3}, PayloadFormat::configured_jpeg), MissingConfig);

  // the 8-bit payload sits ~75% below raw float32
  double cut = 1.0 - 10096.0 / 40368.0;
  REQUIRE(std::abs(cut - 0.75) < 0.005);
  REQUIRE(std::round(cut * 1e4) / 1e2 == Catch::Approx(74.99));
}

TEST_CASE("wire layout: little-endian scale then row-major bytes") {
  TensorF t({2, 2}, {0.0f, 0.5f, -0.25f, 1.27f});
  auto q = quantize(t);
  auto bytes = encode_payload(q);
  REQUIRE(bytes.size() == 8);

  uint32_t scale_bits;
  std::memcpy(&scale_bits, &q.scale, 4);
  REQUIRE(bytes[0] == (scale_bits & 0xff));
  REQUIRE(bytes[1] == ((scale_bits >> 8) & 0xff));
  REQUIRE(bytes[2] == ((scale_bits >> 16) & 0xff));
  REQUIRE(bytes[3] == ((scale_bits >> 24) & 0xff));
  for (int i = 0; i < 4; ++i)
    REQUIRE(static_cast<int8_t>(bytes[4 + i]) == q.data[static_cast<size_t>(i)]);

  auto q2 = decode_payload(bytes.data(), bytes.size(), {2, 2});
  REQUIRE(q2.scale == q.scale);
  REQUIRE(q2.data == q.data);

  REQUIRE_THROWS_AS(decode_payload(bytes.data(), bytes.size(), {2, 3}), CorruptPayload);
  bytes[3] = 0xff;  // negative scale
  REQUIRE_THROWS_AS(decode_payload(bytes.data(), bytes.size(), {2, 2}), CorruptPayload);
}
