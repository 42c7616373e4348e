// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "splitfit/split.hpp"

namespace splitfit {

using Json = nlohmann::json;

// Checkpoint container: a directory holding manifest.json (normative: ids,
// kinds, hyperparameters, shapes, split metadata) plus one parameter blob per
// layer under params/, keyed by component and layer id. Blob layout: for each
// of the six tensor slots (weight, bias, gamma, beta, running_mean,
// running_var) a presence byte, then u8 rank, u32 dims, f32 data; children
// follow recursively in order.

namespace detail {

inline Json layer_to_json(const Layer<float>& l) {
  Json j;
  j["id"] = l.id;
  j["kind"] = layer_kind_name(l.kind);
  if (l.out_channels) j["out_channels"] = l.out_channels;
  if (l.kernel) j["kernel"] = l.kernel;
  j["stride"] = l.stride;
  j["padding"] = l.padding;
  if (l.locked) j["locked"] = true;
  if (!l.tag.empty()) j["tag"] = l.tag;
  if (!l.children.empty()) {
    Json kids = Json::array();
    for (const auto& c : l.children) kids.push_back(layer_to_json(c));
    j["children"] = kids;
  }
  return j;
}

inline Layer<float> layer_from_json(const Json& j) {
  Layer<float> l;
  l.id = j.at("id").get<int>();
  l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  l.out_channels = j.value("out_channels", 0);
  l.kernel = j.value("kernel", 0);
  l.stride = j.value("stride", 1);
  l.padding = j.value("padding", 0);
  l.locked = j.value("locked", false);
  l.tag = j.value("tag", std::string());
  if (j.contains("children"))
    for (const auto& c : j.at("children")) l.children.push_back(layer_from_json(c));
  return l;
}

inline void blob_put_tensor(std::vector<uint8_t>& blob, const Tensor<float>& t) {
  if (t.empty()) {
    blob.push_back(0);
    return;
  }
  blob.push_back(1);
  blob.push_back(static_cast<uint8_t>(t.rank()));
  for (int d : t.shape) put_u32(blob, static_cast<uint32_t>(d));
  for (float v : t.data) put_f32(blob, v);
}

inline Tensor<float> blob_get_tensor(const std::vector<uint8_t>& blob, size_t& off,
                                     const std::string& path) {
  if (off >= blob.size()) throw IoError(path + ": truncated parameter blob");
  if (blob[off++] == 0) return {};
  const int rank = blob[off++];
  Shape shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i, off += 4)
    shape[static_cast<size_t>(i)] = static_cast<int>(get_u32(blob.data() + off));
  Tensor<float> t(shape);
  const int64_t n = t.size();
  if (off + 4u * n > blob.size()) throw IoError(path + ": truncated parameter blob");
  for (int64_t i = 0; i < n; ++i, off += 4) t.data[static_cast<size_t>(i)] = get_f32(blob.data() + off);
  return t;
}

inline void blob_put_layer(std::vector<uint8_t>& blob, const Layer<float>& l) {
  blob_put_tensor(blob, l.weight);
  blob_put_tensor(blob, l.bias);
  blob_put_tensor(blob, l.gamma);
  blob_put_tensor(blob, l.beta);
  blob_put_tensor(blob, l.running_mean);
  blob_put_tensor(blob, l.running_var);
  for (const auto& c : l.children) blob_put_layer(blob, c);
}

inline void blob_get_layer(const std::vector<uint8_t>& blob, size_t& off, Layer<float>& l,
                           const std::string& path) {
  l.weight = blob_get_tensor(blob, off, path);
  l.bias = blob_get_tensor(blob, off, path);
  l.gamma = blob_get_tensor(blob, off, path);
  l.beta = blob_get_tensor(blob, off, path);
  l.running_mean = blob_get_tensor(blob, off, path);
  l.running_var = blob_get_tensor(blob, off, path);
  for (auto& c : l.children) blob_get_layer(blob, off, c, path);
}

inline Json graph_structure_json(const ModelGraph<float>& g) {
  Json j;
  j["name"] = g.name;
  j["arch_id"] = g.arch_id;
  j["input_shape"] = g.input_shape;
  j["num_classes"] = g.num_classes;
  Json layers = Json::array();
  for (const auto& l : g.layers) layers.push_back(layer_to_json(l));
  j["layers"] = layers;
  return j;
}

inline ModelGraph<float> graph_structure_from_json(const Json& j) {
  ModelGraph<float> g;
  g.name = j.at("name").get<std::string>();
  g.arch_id = j.at("arch_id").get<std::string>();
  g.input_shape = j.at("input_shape").get<Shape>();
  g.num_classes = j.at("num_classes").get<int>();
  for (const auto& l : j.at("layers")) g.layers.push_back(layer_from_json(l));
  return g;
}

inline void write_graph_params(const std::filesystem::path& params_dir, const std::string& prefix,
                               const ModelGraph<float>& g) {
  namespace fs = std::filesystem;
  fs::create_directories(params_dir);
  for (const auto& l : g.layers) {
    std::vector<uint8_t> blob;
    blob_put_layer(blob, l);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%04d.bin", prefix.c_str(), l.id);
    std::ofstream f(params_dir / name, std::ios::binary);
    if (!f) throw IoError("cannot write " + (params_dir / name).string());
    f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  }
}

inline void read_graph_params(const std::filesystem::path& params_dir, const std::string& prefix,
                              ModelGraph<float>& g) {
  namespace fs = std::filesystem;
  for (auto& l : g.layers) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%04d.bin", prefix.c_str(), l.id);
    fs::path p = params_dir / name;
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("missing parameter blob " + p.string());
    std::vector<uint8_t> blob((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
    size_t off = 0;
    blob_get_layer(blob, off, l, p.string());
    if (off != blob.size()) throw IoError(p.string() + ": trailing bytes in parameter blob");
  }
}

inline Json split_config_json(const SplitConfig& c) {
  Json j;
  j["split_point"] = split_point_name(c.split_point);
  j["bottleneck_channels"] = c.bottleneck_channels;
  j["spatial_factor"] = c.spatial_factor;
  j["use_pool"] = c.use_pool;
  j["k_star"] = c.k_star;
  j["l_ed"] = c.l_ed;
  return j;
}

inline SplitConfig split_config_from_json(const Json& j) {
  SplitConfig c;
  c.split_point = split_point_from_name(j.at("split_point").get<std::string>());
  c.bottleneck_channels = j.at("bottleneck_channels").get<int>();
  c.spatial_factor = j.value("spatial_factor", 1);
  c.use_pool = j.value("use_pool", false);
  c.k_star = j.value("k_star", 0);
  c.l_ed = j.value("l_ed", 0);
  return c;
}

inline Json read_manifest(const std::string& dir) {
  std::ifstream f(std::filesystem::path(dir) / "manifest.json");
  if (!f) throw IoError("no checkpoint manifest at " + dir + "/manifest.json");
  Json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw IoError(dir + "/manifest.json: " + e.what());
  }
  if (j.value("format", "") != "splitfit-checkpoint")
    throw IoError(dir + ": not a splitfit checkpoint");
  return j;
}

}  // namespace detail

inline void save_model(const std::string& dir, const ModelGraph<float>& g) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Json j;
  j["format"] = "splitfit-checkpoint";
  j["version"] = 1;
  j["kind"] = "model";
  j["model"] = detail::graph_structure_json(g);
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot write " + dir + "/manifest.json");
  f << j.dump(2) << "\n";
  detail::write_graph_params(fs::path(dir) / "params", "model", g);
}

inline ModelGraph<float> load_model(const std::string& dir) {
  Json j = detail::read_manifest(dir);
  if (j.value("kind", "") != "model")
    throw IoError(dir + " holds a " + j.value("kind", "?") + " checkpoint, expected a plain model");
  auto g = detail::graph_structure_from_json(j.at("model"));
  detail::read_graph_params(std::filesystem::path(dir) / "params", "model", g);
  validate(g);
  return g;
}

inline void save_split_model(const std::string& dir, const BottleneckedModel<float>& bm) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Json j;
  j["format"] = "splitfit-checkpoint";
  j["version"] = 1;
  j["kind"] = "split_model";
  j["teacher_ref"] = bm.teacher_ref;
  Json split = detail::split_config_json(bm.config);
  split["bottleneck_shape"] = bm.bottleneck_shape;
  split["decoder_output_shape"] = bm.decoder_output_shape;
  split["teacher_prefix_params"] = bm.teacher_prefix_params;
  split["encdec_params"] = bm.encdec_params;
  j["split"] = split;
  j["components"]["encoder"] = detail::graph_structure_json(bm.encoder);
  j["components"]["decoder"] = detail::graph_structure_json(bm.decoder);
  j["components"]["classifier"] = detail::graph_structure_json(bm.classifier);
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot write " + dir + "/manifest.json");
  f << j.dump(2) << "\n";
  auto params = fs::path(dir) / "params";
  detail::write_graph_params(params, "encoder", bm.encoder);
  detail::write_graph_params(params, "decoder", bm.decoder);
  detail::write_graph_params(params, "classifier", bm.classifier);
}

inline BottleneckedModel<float> load_split_model(const std::string& dir) {
  namespace fs = std::filesystem;
  Json j = detail::read_manifest(dir);
  if (j.value("kind", "") != "split_model")
    throw IoError(dir + " holds a " + j.value("kind", "?") + " checkpoint, expected a split model");
  BottleneckedModel<float> bm;
  bm.teacher_ref = j.value("teacher_ref", "");
  const Json& split = j.at("split");
  bm.config = detail::split_config_from_json(split);
  bm.bottleneck_shape = split.at("bottleneck_shape").get<Shape>();
  bm.decoder_output_shape = split.at("decoder_output_shape").get<Shape>();
  bm.teacher_prefix_params = split.value("teacher_prefix_params", 0);
  bm.encdec_params = split.value("encdec_params", 0);
  bm.encoder = detail::graph_structure_from_json(j.at("components").at("encoder"));
  bm.decoder = detail::graph_structure_from_json(j.at("components").at("decoder"));
  bm.classifier = detail::graph_structure_from_json(j.at("components").at("classifier"));
  auto params = fs::path(dir) / "params";
  detail::read_graph_params(params, "encoder", bm.encoder);
  detail::read_graph_params(params, "decoder", bm.decoder);
  detail::read_graph_params(params, "classifier", bm.classifier);
  validate(bm.encoder);
  validate(bm.decoder);
  validate(bm.classifier);
  return bm;
}

inline bool is_split_checkpoint(const std::string& dir) {
  return detail::read_manifest(dir).value("kind", "") == "split_model";
}

}  // namespace splitfit
