// SPDX-License-Identifier: Apache-2.0
//
// Minimal end-to-end walkthrough: build a teacher, pinch it with a 3-channel
// bottleneck, split it, serve the tail on loopback and push a few images
// through the quantized wire path.

#include <cstdio>

#include "splitfit/dataset.hpp"
#include "splitfit/net.hpp"
#include "splitfit/split.hpp"

using namespace splitfit;

int main() {
  auto teacher = build_teacher<float>("small_resnet", {3, 32, 32}, 10, /*seed=*/1);

  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP1;
  cfg.bottleneck_channels = 3;
  cfg.spatial_factor = 2;
  auto bm = inject(teacher, cfg, /*seed=*/2);
  auto pair = split(bm);

  std::printf("teacher: %s, %lld parameters\n", teacher.name.c_str(),
              static_cast<long long>(teacher.param_count()));
  std::printf("bottleneck %s: %lld elements -> %lld-byte payload (%.1f%% of the input kept)\n",
              shape_str(bm.bottleneck_shape).c_str(),
              static_cast<long long>(numel(bm.bottleneck_shape)),
              static_cast<long long>(payload_size(bm.bottleneck_shape, PayloadFormat::bq8)),
              100.0 * (1.0 - element_reduction(teacher.input_shape, bm.bottleneck_shape)));

  auto server = serve(pair.tail, /*port=*/0, PayloadFormat::bq8);
  Connection conn("127.0.0.1", server->port());
  auto images = make_synthetic_dataset<float>(5, 42);
  for (int i = 0; i < images.size(); ++i) {
    auto result = infer_remote(pair.head, images.image(i), conn, PayloadFormat::bq8,
                               static_cast<uint32_t>(i + 1));
    std::printf("image %d -> label %d  (head %.2f ms, tail %.2f ms, %zu bytes on the wire)\n", i,
                result.label, result.breakdown.d_head_s * 1e3, result.breakdown.d_tail_s * 1e3,
                result.payload_bytes.size());
  }
  return 0;
}
