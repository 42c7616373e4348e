// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "splitfit/zoo.hpp"

namespace splitfit {

enum class SplitPoint : uint8_t { SP1 = 1, SP2 = 2 };

inline const char* split_point_name(SplitPoint sp) { return sp == SplitPoint::SP1 ? "SP1" : "SP2"; }
inline SplitPoint split_point_from_name(const std::string& s) {
  if (s == "SP1") return SplitPoint::SP1;
  if (s == "SP2") return SplitPoint::SP2;
  throw InvalidSplitConfig("unknown split point '" + s + "'");
}

// Where and how aggressively to pinch the network.
//
// spatial_factor is the extra width/height reduction of the bottleneck
// relative to the teacher's activation at l_ed (the shape the decoder must
// restore):
//   1  bottleneck keeps the replaced activation's resolution; channel
//      reduction only, decoder is shape-preserving
//   2  bottleneck at half that resolution, decoder opens with a deconv
//   4  quarter resolution, two deconvs
//   8  the wide-kernel schedule (7x7/s2 then 4x4/s4) mapping the *input* to
//      H/8 + 1 (29x29 from 224); restored by one 4x4/s4 deconv
//
// k_star and l_ed are derived from the teacher when left at 0 and are filled
// in on the config stored inside the returned model. bottleneck_channels is
// typically swept over {3, 6, 9, 12}; any value from 1 up to the replaced
// activation's channel count is accepted.
struct SplitConfig {
  SplitPoint split_point = SplitPoint::SP1;
  int bottleneck_channels = 3;
  int spatial_factor = 1;
  bool use_pool = false;  // realize the first stride-2 as conv + max pool
  int k_star = 0;         // bottleneck index within the new sequence
  int l_ed = 0;           // teacher layers replaced by encoder+decoder
};

// Encoder / decoder / classifier partition of a bottleneck-injected model.
// The classifier fragment carries verbatim copies of the teacher's layers
// l_ed+1..n; encoder and decoder are freshly initialized.
template <typename T>
struct BottleneckedModel {
  ModelGraph<T> encoder;     // ends in the bottleneck layer
  ModelGraph<T> decoder;     // restores the teacher's shape at l_ed
  ModelGraph<T> classifier;  // teacher tail, parameters copied
  std::string teacher_ref;
  SplitConfig config;
  Shape bottleneck_shape;       // (C,H,W) of the transferred tensor
  Shape decoder_output_shape;   // == teacher activation shape at l_ed
  int64_t teacher_prefix_params = 0;
  int64_t encdec_params = 0;

  int encoder_len() const { return static_cast<int>(encoder.layers.size()); }
  int decoder_len() const { return static_cast<int>(decoder.layers.size()); }
  int total_layers() const {
    return encoder_len() + decoder_len() + static_cast<int>(classifier.layers.size());
  }
  int64_t param_count() const {
    return encoder.param_count() + decoder.param_count() + classifier.param_count();
  }
};

template <typename T>
struct SplitPair {
  ModelGraph<T> head;  // == encoder
  ModelGraph<T> tail;  // decoder followed by classifier
};

namespace detail {

// Stage boundary the decoder must reproduce, looked up by structural tag.
template <typename T>
int derive_l_ed(const ModelGraph<T>& teacher, SplitPoint sp) {
  std::string tag;
  if (teacher.arch_id == "small_resnet") {
    tag = (sp == SplitPoint::SP1) ? "block2" : "block4";
  } else if (teacher.arch_id == "small_densenet") {
    tag = (sp == SplitPoint::SP1) ? "transition1_pool" : "transition2_pool";
  } else {
    throw InvalidSplitConfig("cannot derive l_ed for architecture '" + teacher.arch_id +
                             "'; set it explicitly");
  }
  for (const auto& l : teacher.layers)
    if (l.tag == tag) return l.id;
  throw InvalidSplitConfig("teacher lacks expected stage tag '" + tag + "'");
}

}  // namespace detail

// Build the replacement sequence for the teacher's first l_ed layers: an
// encoder from the model input down to a bottleneck conv, and a decoder that
// restores the teacher's activation shape at l_ed. Strides grow ("slightly
// larger kernel-stride") with spatial_factor; upsampling is by deconvolution.
template <typename T>
std::pair<ModelGraph<T>, ModelGraph<T>> design_encoder_decoder(const ModelGraph<T>& teacher,
                                                               const SplitConfig& config,
                                                               uint64_t seed = 0) {
  validate(teacher);
  const int n = static_cast<int>(teacher.layers.size());
  int l_ed = config.l_ed ? config.l_ed : detail::derive_l_ed(teacher, config.split_point);
  if (l_ed < 1 || l_ed >= n)
    throw InvalidSplitConfig("l_ed " + std::to_string(l_ed) + " must lie in [1," +
                             std::to_string(n - 1) + ") so the classifier survives");
  const int B = config.bottleneck_channels;
  if (B < 1) throw InvalidSplitConfig("bottleneck_channels must be positive");
  const int sf = config.spatial_factor;
  if (sf != 1 && sf != 2 && sf != 4 && sf != 8)
    throw InvalidSplitConfig("spatial_factor must be one of 1,2,4,8");

  auto shapes = infer_shapes(teacher);
  const Shape target = shapes[static_cast<size_t>(l_ed - 1)];
  if (target.size() != 3)
    throw InvalidSplitConfig("layer " + std::to_string(l_ed) +
                             " does not emit a spatial tensor; pick a conv-side split");
  const int C_led = target[0], S = target[1];
  if (target[1] != target[2]) throw ShapeError("non-square activation at l_ed");
  const int H = teacher.input_shape[1];
  const int R = H / S;  // teacher's own downsampling up to l_ed
  if (R * S != H || (R != 1 && R != 2 && R != 4))
    throw InvalidSplitConfig("unsupported teacher downsampling x" + std::to_string(R) +
                             " ahead of l_ed");
  if (sf == 8 && (R > 2 || H % 8 != 0 || (H / 2) % 4 != 0))
    throw InvalidSplitConfig("wide-kernel schedule needs an early split on a /8-divisible input");
  if (sf != 8 && S % sf != 0)
    throw InvalidSplitConfig("spatial_factor " + std::to_string(sf) +
                             " does not divide the replaced activation (" + std::to_string(S) +
                             ")");
  if (B > C_led)
    throw InvalidSplitConfig("bottleneck_channels " + std::to_string(B) + " exceeds the " +
                             std::to_string(C_led) + " channels being replaced");

  // Replacement sequences stay skinny so the injected model never costs more
  // than the prefix it replaces, whatever the bottleneck width.
  const int mid = std::max(4, C_led / 2);
  Rng rng(seed * 0x51f15eedull + 0xed);
  ModelGraph<T> enc;
  enc.name = teacher.name + "_encoder";
  enc.arch_id = "encoder";
  enc.input_shape = teacher.input_shape;

  const bool pool_first = config.use_pool && config.split_point == SplitPoint::SP1;
  if (sf == 8) {
    enc.layers.push_back(
        make_conv<T>(teacher.input_shape[0], mid, 7, pool_first ? 1 : 2, 3, rng, "enc_stem"));
    enc.layers.push_back(make_bn<T>(mid));
    enc.layers.push_back(make_relu<T>());
    if (pool_first) enc.layers.push_back(make_maxpool<T>(2, 2));
    enc.layers.push_back(make_conv<T>(mid, B, 4, 4, 2, rng, "bottleneck"));  // H/2 -> H/8+1
  } else {
    // halvings from the input down to the bottleneck resolution S/sf; the
    // bottleneck conv itself takes the last one
    int halvings = 0;
    for (int r = R * sf; r > 1; r /= 2) ++halvings;
    int ch = teacher.input_shape[0];
    bool pooled = false;
    for (int h = 0; h < std::max(0, halvings - 1); ++h) {
      int stride = 2;
      if (pool_first && !pooled) {
        stride = 1;
        pooled = true;
      }
      enc.layers.push_back(make_conv<T>(ch, mid, 3, stride, 1, rng, h == 0 ? "enc_stem" : ""));
      enc.layers.push_back(make_bn<T>(mid));
      enc.layers.push_back(make_relu<T>());
      if (stride == 1) enc.layers.push_back(make_maxpool<T>(2, 2));
      ch = mid;
    }
    if (halvings == 0) {
      enc.layers.push_back(make_conv<T>(ch, mid, 3, 1, 1, rng, "enc_stem"));
      enc.layers.push_back(make_bn<T>(mid));
      enc.layers.push_back(make_relu<T>());
      ch = mid;
    }
    enc.layers.push_back(make_conv<T>(ch, B, 3, halvings > 0 ? 2 : 1, 1, rng, "bottleneck"));
  }
  for (size_t i = 0; i < enc.layers.size(); ++i) enc.layers[i].id = static_cast<int>(i) + 1;

  Shape bott = infer_shapes(enc).back();

  ModelGraph<T> dec;
  dec.name = teacher.name + "_decoder";
  dec.arch_id = "decoder";
  dec.input_shape = bott;
  dec.layers.push_back(make_bn<T>(B));
  dec.layers.push_back(make_relu<T>());
  int ch = B;
  int at = bott[1];
  if (sf == 8) {
    dec.layers.push_back(make_deconv<T>(B, mid, 4, 4, 2, rng));  // h -> 4(h-1) = H/2
    dec.layers.push_back(make_bn<T>(mid));
    dec.layers.push_back(make_relu<T>());
    ch = mid;
    at = 4 * (at - 1);
  }
  while (at < S) {  // x2 upsampling back to the replaced activation's size
    dec.layers.push_back(make_deconv<T>(ch, mid, 4, 2, 1, rng));
    dec.layers.push_back(make_bn<T>(mid));
    dec.layers.push_back(make_relu<T>());
    ch = mid;
    at *= 2;
  }
  if (ch == B) {  // shape-preserving case still gets one refinement conv
    dec.layers.push_back(make_conv<T>(ch, mid, 3, 1, 1, rng));
    dec.layers.push_back(make_bn<T>(mid));
    dec.layers.push_back(make_relu<T>());
    ch = mid;
  }
  dec.layers.push_back(make_conv<T>(ch, C_led, 3, 1, 1, rng));
  dec.layers.push_back(make_bn<T>(C_led));
  dec.layers.push_back(make_relu<T>());
  for (size_t i = 0; i < dec.layers.size(); ++i) dec.layers[i].id = static_cast<int>(i) + 1;

  Shape restored = infer_shapes(dec).back();
  if (restored != target)
    throw ShapeError("decoder restores " + shape_str(restored) + " but the teacher expects " +
                     shape_str(target) + " at layer " + std::to_string(l_ed));
  return {std::move(enc), std::move(dec)};
}

// Replace the teacher's first l_ed layers with a fresh encoder/decoder and
// copy the remaining layers (and their parameters) as the classifier.
template <typename T>
BottleneckedModel<T> inject(const ModelGraph<T>& teacher, const SplitConfig& config,
                            uint64_t seed = 0) {
  auto [enc, dec] = design_encoder_decoder(teacher, config, seed);
  const int n = static_cast<int>(teacher.layers.size());
  const int l_ed = config.l_ed ? config.l_ed : detail::derive_l_ed(teacher, config.split_point);

  BottleneckedModel<T> bm;
  bm.encoder = std::move(enc);
  bm.decoder = std::move(dec);
  bm.classifier = slice(teacher, l_ed + 1, n, teacher.name + "_classifier");
  bm.teacher_ref = teacher.name;
  bm.config = config;
  bm.config.l_ed = l_ed;
  int derived_k = static_cast<int>(bm.encoder.layers.size());
  if (config.k_star != 0 && config.k_star != derived_k)
    throw InvalidSplitConfig("k_star " + std::to_string(config.k_star) +
                             " does not match the designed sequence (bottleneck at " +
                             std::to_string(derived_k) + ")");
  bm.config.k_star = derived_k;
  if (bm.config.k_star > l_ed)
    throw InvalidSplitConfig("encoder grew past the replaced prefix (k*=" +
                             std::to_string(bm.config.k_star) + " > l_ed=" + std::to_string(l_ed) +
                             ")");
  bm.bottleneck_shape = infer_shapes(bm.encoder).back();
  bm.decoder_output_shape = infer_shapes(bm.decoder).back();

  for (int i = 0; i < l_ed; ++i)
    bm.teacher_prefix_params += teacher.layers[static_cast<size_t>(i)].param_count();
  bm.encdec_params = bm.encoder.param_count() + bm.decoder.param_count();
  if (bm.encdec_params > bm.teacher_prefix_params)
    throw InvalidSplitConfig("encoder+decoder parameter count " + std::to_string(bm.encdec_params) +
                             " exceeds the replaced prefix (" +
                             std::to_string(bm.teacher_prefix_params) + ")");
  return bm;
}

// Head/tail partition at the bottleneck: head is the encoder, tail is the
// decoder followed by the classifier as one fragment.
template <typename T>
SplitPair<T> split(const BottleneckedModel<T>& bm) {
  SplitPair<T> p;
  p.head = bm.encoder;
  p.head.name = bm.teacher_ref + "_head";
  p.tail.name = bm.teacher_ref + "_tail";
  p.tail.arch_id = "tail";
  p.tail.input_shape = bm.bottleneck_shape;
  p.tail.num_classes = bm.classifier.num_classes;
  for (const auto& l : bm.decoder.layers) p.tail.layers.push_back(l);
  for (const auto& l : bm.classifier.layers) p.tail.layers.push_back(l);
  for (size_t i = 0; i < p.tail.layers.size(); ++i) p.tail.layers[i].id = static_cast<int>(i) + 1;
  validate(p.head);
  validate(p.tail);
  return p;
}

// Run the composed model (encoder -> decoder -> classifier) in eval mode.
template <typename T>
Tensor<T> full_forward(const BottleneckedModel<T>& bm, const Tensor<T>& x) {
  auto& m = const_cast<BottleneckedModel<T>&>(bm);
  auto runner = Runner<T>::build_parts({&m.encoder, &m.decoder, &m.classifier});
  ForwardOptions<T> opt;
  return run_forward(runner, x, opt);
}

}  // namespace splitfit
