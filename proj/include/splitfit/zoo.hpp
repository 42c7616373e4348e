// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "splitfit/graph.hpp"

namespace splitfit {

// --- layer factories (He-normal init) ---------------------------------------

template <typename T>
Layer<T> make_conv(int ic, int oc, int kernel, int stride, int padding, Rng& rng,
                   const std::string& tag = "") {
  Layer<T> l;
  l.kind = LayerKind::conv;
  l.out_channels = oc;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.tag = tag;
  l.weight = Tensor<T>({oc, ic, kernel, kernel});
  double fan_in = static_cast<double>(ic) * kernel * kernel;
  rng.fill_normal(l.weight, 0.0, std::sqrt(2.0 / fan_in));
  l.bias = Tensor<T>({oc});
  return l;
}

template <typename T>
Layer<T> make_deconv(int ic, int oc, int kernel, int stride, int padding, Rng& rng,
                     const std::string& tag = "") {
  Layer<T> l;
  l.kind = LayerKind::deconv;
  l.out_channels = oc;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.tag = tag;
  l.weight = Tensor<T>({ic, oc, kernel, kernel});
  double fan_in = static_cast<double>(ic) * kernel * kernel;
  rng.fill_normal(l.weight, 0.0, std::sqrt(2.0 / fan_in));
  l.bias = Tensor<T>({oc});
  return l;
}

template <typename T>
Layer<T> make_bn(int channels, const std::string& tag = "") {
  Layer<T> l;
  l.kind = LayerKind::batch_norm;
  l.out_channels = channels;
  l.gamma = Tensor<T>::full({channels}, T(1));
  l.beta = Tensor<T>({channels});
  l.running_mean = Tensor<T>({channels});
  l.running_var = Tensor<T>::full({channels}, T(1));
  l.tag = tag;
  return l;
}

template <typename T>
Layer<T> make_relu() {
  Layer<T> l;
  l.kind = LayerKind::relu;
  return l;
}

template <typename T>
Layer<T> make_maxpool(int kernel, int stride) {
  Layer<T> l;
  l.kind = LayerKind::pool;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

template <typename T>
Layer<T> make_avgpool(int kernel, int stride) {
  Layer<T> l;
  l.kind = LayerKind::avg_pool;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

template <typename T>
Layer<T> make_fc(int in_features, int out_features, Rng& rng) {
  Layer<T> l;
  l.kind = LayerKind::fully_connected;
  l.out_channels = out_features;
  l.weight = Tensor<T>({out_features, in_features});
  rng.fill_normal(l.weight, 0.0, std::sqrt(2.0 / in_features));
  l.bias = Tensor<T>({out_features});
  return l;
}

template <typename T>
Layer<T> make_marker(LayerKind kind) {
  Layer<T> l;
  l.kind = kind;
  return l;
}

// Identity-shortcut residual block: out = relu(bn(conv(relu(bn(conv(x))))) + x).
// Channel count and spatial dims are preserved, so the shortcut is a plain add.
template <typename T>
Layer<T> make_residual_block(int channels, Rng& rng, const std::string& tag) {
  Layer<T> b;
  b.kind = LayerKind::block;
  b.tag = tag;
  b.children.push_back(make_marker<T>(LayerKind::skip_save));
  b.children.push_back(make_conv<T>(channels, channels, 3, 1, 1, rng));
  b.children.push_back(make_bn<T>(channels));
  b.children.push_back(make_relu<T>());
  b.children.push_back(make_conv<T>(channels, channels, 3, 1, 1, rng));
  b.children.push_back(make_bn<T>(channels));
  b.children.push_back(make_marker<T>(LayerKind::skip_add));
  b.children.push_back(make_relu<T>());
  return b;
}

// Densely connected block: each conv sees the concatenation of everything
// before it and contributes `growth` channels.
template <typename T>
Layer<T> make_dense_block(int in_channels, int growth, int convs, Rng& rng,
                          const std::string& tag) {
  Layer<T> b;
  b.kind = LayerKind::block;
  b.tag = tag;
  int ch = in_channels;
  for (int i = 0; i < convs; ++i) {
    b.children.push_back(make_marker<T>(LayerKind::skip_save));
    b.children.push_back(make_conv<T>(ch, growth, 3, 1, 1, rng));
    b.children.push_back(make_bn<T>(growth));
    b.children.push_back(make_relu<T>());
    b.children.push_back(make_marker<T>(LayerKind::skip_concat));
    ch += growth;
  }
  return b;
}

namespace detail {
template <typename T>
void renumber(ModelGraph<T>& g) {
  for (size_t i = 0; i < g.layers.size(); ++i) g.layers[i].id = static_cast<int>(i) + 1;
}
}  // namespace detail

// --- desk-scale teacher architectures ---------------------------------------
//
// small_resnet: 16 top-level layers, widths 16/32/64, a stride-2 stem, five
// identity-shortcut residual blocks and two stride-2 stage transitions, global
// average pool, fc. Blocks sit at ids 4,5,9,10,14; the stage boundaries after
// the first and second block groups (ids 5 and 10) are the intended splitting
// regions, with activations already at half and quarter resolution.
template <typename T>
ModelGraph<T> build_small_resnet(Shape input_shape, int num_classes, Rng& rng) {
  const int c1 = 16, c2 = 32, c3 = 64;
  ModelGraph<T> g;
  g.arch_id = "small_resnet";
  g.name = "small_resnet";
  g.input_shape = input_shape;
  g.num_classes = num_classes;
  g.layers.push_back(make_conv<T>(input_shape[0], c1, 3, 2, 1, rng, "stem"));
  g.layers.push_back(make_bn<T>(c1));
  g.layers.push_back(make_relu<T>());
  g.layers.push_back(make_residual_block<T>(c1, rng, "block1"));
  g.layers.push_back(make_residual_block<T>(c1, rng, "block2"));
  g.layers.push_back(make_conv<T>(c1, c2, 3, 2, 1, rng, "down1"));
  g.layers.push_back(make_bn<T>(c2));
  g.layers.push_back(make_relu<T>());
  g.layers.push_back(make_residual_block<T>(c2, rng, "block3"));
  g.layers.push_back(make_residual_block<T>(c2, rng, "block4"));
  g.layers.push_back(make_conv<T>(c2, c3, 3, 2, 1, rng, "down2"));
  g.layers.push_back(make_bn<T>(c3));
  g.layers.push_back(make_relu<T>());
  g.layers.push_back(make_residual_block<T>(c3, rng, "block5"));
  const int gap = input_shape[1] / 8;  // spatial size after three halvings
  g.layers.push_back(make_avgpool<T>(gap, gap));
  g.layers.push_back(make_fc<T>(c3, num_classes, rng));
  detail::renumber(g);
  validate(g);
  return g;
}

// small_densenet: three dense blocks (growth 8, two convs each) separated by
// 1x1-conv + avg-pool transitions. Blocks sit at ids 4, 9 and 14.
template <typename T>
ModelGraph<T> build_small_densenet(Shape input_shape, int num_classes, Rng& rng) {
  const int stem = 16, growth = 8, convs = 2;
  ModelGraph<T> g;
  g.arch_id = "small_densenet";
  g.name = "small_densenet";
  g.input_shape = input_shape;
  g.num_classes = num_classes;
  int ch = stem;
  g.layers.push_back(make_conv<T>(input_shape[0], stem, 3, 1, 1, rng, "stem"));
  g.layers.push_back(make_bn<T>(stem));
  g.layers.push_back(make_relu<T>());
  g.layers.push_back(make_dense_block<T>(ch, growth, convs, rng, "block1"));
  ch += growth * convs;
  g.layers.push_back(make_bn<T>(ch));
  g.layers.push_back(make_relu<T>());
  g.layers.push_back(make_conv<T>(ch, stem, 1, 1, 0, rng, "transition1"));
  g.layers.push_back(make_avgpool<T>(2, 2));
  g.layers.back().tag = "transition1_pool";
  ch = stem;
  g.layers.push_back(make_dense_block<T>(ch, growth, convs, rng, "block2"));
  ch += growth * convs;
  g.layers.push_back(make_bn<T>(ch));
  g.layers.push_back(make_relu<T>());
  g.layers.push_back(make_conv<T>(ch, stem, 1, 1, 0, rng, "transition2"));
  g.layers.push_back(make_avgpool<T>(2, 2));
  g.layers.back().tag = "transition2_pool";
  ch = stem;
  g.layers.push_back(make_dense_block<T>(ch, growth, convs, rng, "block3"));
  ch += growth * convs;
  g.layers.push_back(make_bn<T>(ch));
  g.layers.push_back(make_relu<T>());
  const int gap = input_shape[1] / 4;
  g.layers.push_back(make_avgpool<T>(gap, gap));
  g.layers.push_back(make_fc<T>(ch, num_classes, rng));
  detail::renumber(g);
  validate(g);
  return g;
}

// Build a randomly initialized teacher. Supported ids: small_resnet,
// small_densenet. Input must be RGB with spatial dims divisible by 8
// (three halvings: two stage transitions plus split-point headroom).
template <typename T>
ModelGraph<T> build_teacher(const std::string& arch_id, Shape input_shape, int num_classes,
                            uint64_t seed = 0) {
  if (input_shape.size() != 3 || input_shape[0] != 3)
    throw ShapeError("teacher input must be (3,H,W), got " + shape_str(input_shape));
  if (input_shape[1] % 8 != 0 || input_shape[2] % 8 != 0 || input_shape[1] != input_shape[2])
    throw ShapeError("teacher input spatial dims must be square and divisible by 8");
  Rng rng(seed * 0x9e3779b9u + 17);
  if (arch_id == "small_resnet") return build_small_resnet<T>(input_shape, num_classes, rng);
  if (arch_id == "small_densenet") return build_small_densenet<T>(input_shape, num_classes, rng);
  throw UnknownArchitecture("unknown architecture '" + arch_id + "'");
}

}  // namespace splitfit
