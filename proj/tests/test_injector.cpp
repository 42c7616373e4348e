// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "splitfit/split.hpp"

using namespace splitfit;

namespace {

TensorF random_input(const Shape& chw, uint64_t seed, int batch = 1) {
  Shape s = chw;
  s.insert(s.begin(), batch);
  TensorF x(s);
  Rng rng(seed);
  rng.fill_uniform(x, -1.0, 1.0);
  return x;
}

bool has_deconv(const ModelGraph<float>& g) {
  for (const auto& l : g.layers)
    if (l.kind == LayerKind::deconv) return true;
  return false;
}

// independent parameter count: walk tensors directly
int64_t count_params(const ModelGraph<float>& g, int lo, int hi) {
  int64_t n = 0;
  for (int i = lo - 1; i < hi; ++i) {
    std::vector<const Layer<float>*> stack{&g.layers[static_cast<size_t>(i)]};
    while (!stack.empty()) {
      const Layer<float>* l = stack.back();
      stack.pop_back();
      n += l->weight.size() + l->bias.size() + l->gamma.size() + l->beta.size();
      for (const auto& c : l->children) stack.push_back(&c);
    }
  }
  return n;
}

}  // namespace

TEST_CASE("design: paper-style early split on the 224x224 model gives (12,29,29)") {
  auto teacher = build_teacher<float>("small_resnet", {3, 224, 224}, 1000, 1);
  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP1;
  cfg.bottleneck_channels = 12;
  cfg.spatial_factor = 8;
  auto [enc, dec] = design_encoder_decoder(teacher, cfg, 1);
  REQUIRE(infer_shapes(enc).back() == Shape{12, 29, 29});
  // decoder must hand the classifier exactly what the teacher produced at l_ed
  auto shapes = infer_shapes(teacher);
  REQUIRE(shapes[4] == Shape{16, 112, 112});
  REQUIRE(infer_shapes(dec).back() == shapes[4]);
}

TEST_CASE("design: late split with spatial_factor 2 halves a 28x28 intermediate") {
  auto teacher = build_teacher<float>("small_resnet", {3, 112, 112}, 10, 1);
  auto shapes = infer_shapes(teacher);
  REQUIRE(shapes[9] == Shape{32, 28, 28});  // the intermediate being mimicked
  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP2;
  cfg.bottleneck_channels = 12;
  cfg.spatial_factor = 2;
  auto [enc, dec] = design_encoder_decoder(teacher, cfg, 1);
  REQUIRE(infer_shapes(enc).back() == Shape{12, 14, 14});
  REQUIRE(has_deconv(dec));
  REQUIRE(infer_shapes(dec).back() == Shape{32, 28, 28});
}

TEST_CASE("design: spatial_factor 1 with full channel width degenerates to shape-preserving") {
  auto teacher = build_teacher<float>("small_resnet", {3, 32, 32}, 10, 1);
  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP1;
  cfg.bottleneck_channels = 16;  // equals the teacher's width at the split
  cfg.spatial_factor = 1;
  auto [enc, dec] = design_encoder_decoder(teacher, cfg, 1);
  // bottleneck and decoder output both equal the replaced activation's shape
  REQUIRE(infer_shapes(enc).back() == Shape{16, 16, 16});
  REQUIRE(infer_shapes(dec).back() == Shape{16, 16, 16});
  REQUIRE_FALSE(has_deconv(dec));
  for (const auto& l : dec.layers) REQUIRE(l.stride == 1);
}

TEST_CASE("design: pooled variant keeps the same shapes") {
  auto teacher = build_teacher<float>("small_resnet", {3, 32, 32}, 10, 1);
  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP1;
  cfg.bottleneck_channels = 3;
  cfg.spatial_factor = 2;
  auto [enc0, dec0] = design_encoder_decoder(teacher, cfg, 1);
  cfg.use_pool = true;
  auto [enc1, dec1] = design_encoder_decoder(teacher, cfg, 1);
  REQUIRE(infer_shapes(enc0).back() == infer_shapes(enc1).back());
  bool pooled = false;
  for (const auto& l : enc1.layers) pooled |= (l.kind == LayerKind::pool);
  REQUIRE(pooled);
}

TEST_CASE("inject: classifier is the teacher's tail, bit-identical") {
  auto teacher = build_teacher<float>("small_resnet", {3, 32, 32}, 10, 3);
  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP1;
  cfg.bottleneck_channels = 3;
  cfg.spatial_factor = 2;
  auto bm = inject(teacher, cfg, 7);
  REQUIRE(bm.bottleneck_shape == Shape{3, 8, 8});
  REQUIRE(bm.config.l_ed == 5);
  REQUIRE(bm.config.k_star == static_cast<int>(bm.encoder.layers.size()));

  // feed the teacher's own activation at l_ed through the copied classifier
  auto x = random_input({3, 32, 32}, 17, 2);
  auto [logits, acts] = forward(teacher, x, {bm.config.l_ed});
  auto [cls_logits, unused] = forward(bm.classifier, acts[0].tensor);
  REQUIRE(cls_logits.data == logits.data);

  uint64_t tail_hash = slice(teacher, bm.config.l_ed + 1, 16, "tail").param_hash();
  REQUIRE(bm.classifier.param_hash() == tail_hash);
}

TEST_CASE("inject: parameter budget honored across the shipped sweep") {
  struct Combo {
    const char* arch;
    SplitPoint sp;
  };
  for (auto [arch, sp] : {Combo{"small_resnet", SplitPoint::SP1},
                          Combo{"small_resnet", SplitPoint::SP2},
                          Combo{"small_densenet", SplitPoint::SP1},
                          Combo{"small_densenet", SplitPoint::SP2}}) {
    auto teacher = build_teacher<float>(arch, {3, 32, 32}, 10, 5);
    for (int channels : {3, 6, 9, 12}) {
      for (int sf : {1, 2}) {
        SplitConfig cfg;
        cfg.split_point = sp;
        cfg.bottleneck_channels = channels;
        cfg.spatial_factor = sf;
        auto bm = inject(teacher, cfg, 11);
        INFO(arch << " " << split_point_name(sp) << " B=" << channels << " sf=" << sf);
        REQUIRE(bm.encdec_params <= bm.teacher_prefix_params);
        // independent recount
        int64_t prefix = count_params(teacher, 1, bm.config.l_ed);
        int64_t encdec = count_params(bm.encoder, 1, bm.encoder_len()) +
                         count_params(bm.decoder, 1, bm.decoder_len());
        REQUIRE(prefix == bm.teacher_prefix_params);
        REQUIRE(encdec == bm.encdec_params);
        REQUIRE(encdec <= prefix);
        REQUIRE(bm.decoder_output_shape ==
                infer_shapes(teacher)[static_cast<size_t>(bm.config.l_ed - 1)]);
        REQUIRE(bm.bottleneck_shape[0] == channels);
      }
    }
  }
}

TEST_CASE("inject: paper-style 12-channel early split stays under budget at 224") {
  auto teacher = build_teacher<float>("small_resnet", {3, 224, 224}, 1000, 2);
  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP1;
  cfg.bottleneck_channels = 12;
  cfg.spatial_factor = 8;
  auto bm = inject(teacher, cfg, 2);
  REQUIRE(bm.encdec_params <= bm.teacher_prefix_params);
  REQUIRE(bm.bottleneck_shape == Shape{12, 29, 29});
}

TEST_CASE("inject: invalid configurations are rejected") {
  auto teacher = build_teacher<float>("small_resnet", {3, 32, 32}, 10, 1);
  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP1;
  cfg.bottleneck_channels = 3;

  SplitConfig bad = cfg;
  bad.l_ed = 16;  // >= layer count: nothing left for the classifier
  REQUIRE_THROWS_AS(inject(teacher, bad, 1), InvalidSplitConfig);
  bad.l_ed = 99;
  REQUIRE_THROWS_AS(inject(teacher, bad, 1), InvalidSplitConfig);

  bad = cfg;
  bad.bottleneck_channels = 0;
  REQUIRE_THROWS_AS(inject(teacher, bad, 1), InvalidSplitConfig);

  bad = cfg;
  bad.bottleneck_channels = 17;  // wider than the replaced activation
  REQUIRE_THROWS_AS(inject(teacher, bad, 1), InvalidSplitConfig);

  // an early split cannot absorb two extra halvings: the bottleneck would
  // land past the replaced prefix
  bad = cfg;
  bad.spatial_factor = 4;
  REQUIRE_THROWS_AS(inject(teacher, bad, 1), InvalidSplitConfig);

  bad = cfg;
  bad.spatial_factor = 3;
  REQUIRE_THROWS_AS(inject(teacher, bad, 1), InvalidSplitConfig);

  bad = cfg;
  bad.k_star = 2;  // designed sequence puts the bottleneck elsewhere
  REQUIRE_THROWS_AS(inject(teacher, bad, 1), InvalidSplitConfig);

  // the wide-kernel schedule needs an early split point
  bad = cfg;
  bad.split_point = SplitPoint::SP2;
  bad.spatial_factor = 8;
  REQUIRE_THROWS_AS(inject(teacher, bad, 1), InvalidSplitConfig);
}

TEST_CASE("split: composing head and tail reproduces the full model bitwise") {
  auto teacher = build_teacher<float>("small_resnet", {3, 32, 32}, 10, 23);
  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP1;
  cfg.bottleneck_channels = 3;
  cfg.spatial_factor = 2;
  auto bm = inject(teacher, cfg, 29);
  auto pair = split(bm);

  REQUIRE(infer_shapes(pair.head).back() == bm.bottleneck_shape);
  REQUIRE(pair.head.layers.back().tag == "bottleneck");
  REQUIRE(pair.head.param_count() < teacher.param_count());

  for (int i = 0; i < 100; ++i) {
    auto x = random_input({3, 32, 32}, 500 + i);
    auto full = full_forward(bm, x);
    auto mid = forward(pair.head, x).first;
    REQUIRE(mid.dim(1) == cfg.bottleneck_channels);
    auto out = forward(pair.tail, mid).first;
    REQUIRE(out.data == full.data);
  }
}
