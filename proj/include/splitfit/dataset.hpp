// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "splitfit/tensor.hpp"

namespace splitfit {

template <typename T>
struct Dataset {
  Tensor<T> images;         // (N,C,H,W)
  std::vector<int> labels;  // size N
  int num_classes = 0;

  int size() const { return images.empty() ? 0 : images.dim(0); }

  Tensor<T> batch(const std::vector<int>& idx) const {
    Shape s = images.shape;
    s[0] = static_cast<int>(idx.size());
    Tensor<T> out(s);
    const int64_t stride = images.size() / images.dim(0);
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy_n(images.data.data() + idx[i] * stride, stride,
                  out.data.data() + static_cast<int64_t>(i) * stride);
    return out;
  }

  Tensor<T> image(int i) const { return batch({i}); }
};

// --- procedural benchmark ----------------------------------------------------
//
// Ten texture/shape classes rendered onto noisy backgrounds with randomized
// colors, geometry and clutter. Hard enough that desk-scale classifiers do
// not saturate, easy enough that a small resnet fits it well.
namespace detail {

template <typename T>
void draw_class(Tensor<T>& img, int n, int cls, Rng& rng, int sz) {
  T fg[3], bg[3];
  for (int c = 0; c < 3; ++c) bg[c] = static_cast<T>(rng.uniform(0.0, 1.0));
  double dist = 0;
  do {
    dist = 0;
    for (int c = 0; c < 3; ++c) {
      fg[c] = static_cast<T>(rng.uniform(0.0, 1.0));
      dist += std::abs(static_cast<double>(fg[c] - bg[c]));
    }
  } while (dist < 0.8);

  // low-frequency background gradient
  double gx = rng.uniform(-0.3, 0.3) / sz, gy = rng.uniform(-0.3, 0.3) / sz;
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < sz; ++h)
      for (int w = 0; w < sz; ++w)
        img.at(n, c, h, w) = bg[c] + static_cast<T>(gx * w + gy * h);

  const int cx = sz / 2 + rng.uniform_int(-5, 5);
  const int cy = sz / 2 + rng.uniform_int(-5, 5);
  auto put = [&](int h, int w) {
    if (h < 0 || h >= sz || w < 0 || w >= sz) return;
    for (int c = 0; c < 3; ++c) img.at(n, c, h, w) = fg[c];
  };

  switch (cls) {
    case 0: {  // horizontal stripes
      int p = rng.uniform_int(4, 9), ph = rng.uniform_int(0, p - 1);
      for (int h = 0; h < sz; ++h)
        if ((h + ph) % p < p / 2)
          for (int w = 0; w < sz; ++w) put(h, w);
      break;
    }
    case 1: {  // vertical stripes
      int p = rng.uniform_int(4, 9), ph = rng.uniform_int(0, p - 1);
      for (int w = 0; w < sz; ++w)
        if ((w + ph) % p < p / 2)
          for (int h = 0; h < sz; ++h) put(h, w);
      break;
    }
    case 2: {  // diagonal stripes
      int p = rng.uniform_int(5, 10), ph = rng.uniform_int(0, p - 1);
      for (int h = 0; h < sz; ++h)
        for (int w = 0; w < sz; ++w)
          if ((h + w + ph) % p < p / 2) put(h, w);
      break;
    }
    case 3: {  // checkerboard
      int p = rng.uniform_int(4, 8), ph = rng.uniform_int(0, p - 1);
      for (int h = 0; h < sz; ++h)
        for (int w = 0; w < sz; ++w)
          if ((((h + ph) / p) + ((w + ph) / p)) % 2 == 0) put(h, w);
      break;
    }
    case 4: {  // filled disc
      int r = rng.uniform_int(5, 10);
      for (int h = cy - r; h <= cy + r; ++h)
        for (int w = cx - r; w <= cx + r; ++w)
          if ((h - cy) * (h - cy) + (w - cx) * (w - cx) <= r * r) put(h, w);
      break;
    }
    case 5: {  // ring
      int r = rng.uniform_int(8, 12), inner = r - 3;
      for (int h = cy - r; h <= cy + r; ++h)
        for (int w = cx - r; w <= cx + r; ++w) {
          int d2 = (h - cy) * (h - cy) + (w - cx) * (w - cx);
          if (d2 <= r * r && d2 >= inner * inner) put(h, w);
        }
      break;
    }
    case 6: {  // filled square
      int r = rng.uniform_int(5, 9);
      for (int h = cy - r; h <= cy + r; ++h)
        for (int w = cx - r; w <= cx + r; ++w) put(h, w);
      break;
    }
    case 7: {  // plus sign
      int arm = rng.uniform_int(8, 13), th = rng.uniform_int(2, 4);
      for (int h = cy - arm; h <= cy + arm; ++h)
        for (int w = cx - th; w <= cx + th; ++w) put(h, w);
      for (int w = cx - arm; w <= cx + arm; ++w)
        for (int h = cy - th; h <= cy + th; ++h) put(h, w);
      break;
    }
    case 8: {  // diagonal cross
      int arm = rng.uniform_int(8, 13), th = rng.uniform_int(1, 2);
      for (int d = -arm; d <= arm; ++d)
        for (int o = -th; o <= th; ++o) {
          put(cy + d + o, cx + d);
          put(cy + d + o, cx - d);
        }
      break;
    }
    default: {  // triangle
      int r = rng.uniform_int(7, 12);
      for (int h = 0; h <= r; ++h) {
        int half = (h * r) / (2 * r) + h / 2;
        for (int w = cx - half; w <= cx + half; ++w) put(cy - r / 2 + h, w);
      }
      break;
    }
  }

  // clutter: a couple of small random-colored rectangles
  int boxes = rng.uniform_int(0, 2);
  for (int b = 0; b < boxes; ++b) {
    int bw = rng.uniform_int(2, 5), bh = rng.uniform_int(2, 5);
    int oy = rng.uniform_int(0, sz - bh - 1), ox = rng.uniform_int(0, sz - bw - 1);
    T col[3];
    for (int c = 0; c < 3; ++c) col[c] = static_cast<T>(rng.uniform(0.0, 1.0));
    for (int h = oy; h < oy + bh; ++h)
      for (int w = ox; w < ox + bw; ++w)
        for (int c = 0; c < 3; ++c) img.at(n, c, h, w) = col[c];
  }

  // pixel noise, then rescale to [-1, 1]
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < sz; ++h)
      for (int w = 0; w < sz; ++w) {
        double v = img.at(n, c, h, w) + rng.normal(0.0, 0.10);
        v = std::clamp(v, 0.0, 1.0);
        img.at(n, c, h, w) = static_cast<T>(2.0 * v - 1.0);
      }
}

}  // namespace detail

// Deterministic in (seed, count, image_size): the i-th sample depends only on
// its own derived stream, so prefixes of a larger set match a smaller one.
template <typename T>
Dataset<T> make_synthetic_dataset(int count, uint64_t seed, int image_size = 32) {
  if (count <= 0) throw EmptyDataset("synthetic dataset needs a positive sample count");
  const int num_classes = 10;
  Dataset<T> ds;
  ds.num_classes = num_classes;
  ds.images = Tensor<T>({count, 3, image_size, image_size});
  ds.labels.resize(static_cast<size_t>(count));
  Rng order(seed ^ 0xabcdef12345ull);
  for (int i = 0; i < count; ++i) {
    int cls = i % num_classes;  // balanced
    ds.labels[static_cast<size_t>(i)] = cls;
    Rng sample(seed * 1000003ull + static_cast<uint64_t>(i) * 7919ull + 1);
    detail::draw_class(ds.images, i, cls, sample, image_size);
  }
  // deterministic shuffle of (image,label) pairs
  std::vector<int> perm(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) perm[static_cast<size_t>(i)] = i;
  order.shuffle(perm.begin(), perm.end());
  Dataset<T> out;
  out.num_classes = num_classes;
  out.images = Tensor<T>(ds.images.shape);
  out.labels.resize(ds.labels.size());
  const int64_t stride = ds.images.size() / count;
  for (int i = 0; i < count; ++i) {
    std::copy_n(ds.images.data.data() + perm[static_cast<size_t>(i)] * stride, stride,
                out.images.data.data() + static_cast<int64_t>(i) * stride);
    out.labels[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(perm[i])];
  }
  return out;
}

// --- raw tensor files (.bft) -------------------------------------------------
// magic "BFT1", u8 rank, u32 dims (LE), f32 data (LE, row-major)

template <typename T>
void write_bft(const std::string& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  std::vector<uint8_t> head;
  head.insert(head.end(), {'B', 'F', 'T', '1'});
  head.push_back(static_cast<uint8_t>(t.rank()));
  for (int d : t.shape) put_u32(head, static_cast<uint32_t>(d));
  for (T v : t.data) put_f32(head, static_cast<float>(v));
  f.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
}

template <typename T>
Tensor<T> read_bft(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 5 || buf[0] != 'B' || buf[1] != 'F' || buf[2] != 'T' || buf[3] != '1')
    throw IoError(path + " is not a tensor file");
  const int rank = buf[4];
  size_t off = 5;
  if (buf.size() < off + 4u * rank) throw IoError(path + ": truncated header");
  Shape shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i, off += 4)
    shape[static_cast<size_t>(i)] = static_cast<int>(get_u32(buf.data() + off));
  const int64_t n = numel(shape);
  if (buf.size() != off + 4u * static_cast<size_t>(n)) throw IoError(path + ": size mismatch");
  Tensor<T> t(shape);
  for (int64_t i = 0; i < n; ++i, off += 4) t.data[static_cast<size_t>(i)] = static_cast<T>(get_f32(buf.data() + off));
  return t;
}

// Labeled folder layout: <root>/class_<k>/<name>.bft, each file one (C,H,W)
// image. Class indices must be dense from 0.
template <typename T>
Dataset<T> load_dataset_folder(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset folder not found: " + root);
  std::vector<std::pair<int, std::string>> files;
  int max_cls = -1;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    std::string name = dir.path().filename().string();
    if (name.rfind("class_", 0) != 0) continue;
    int cls = std::stoi(name.substr(6));
    max_cls = std::max(max_cls, cls);
    for (const auto& f : fs::directory_iterator(dir.path()))
      if (f.path().extension() == ".bft") files.emplace_back(cls, f.path().string());
  }
  if (files.empty()) throw EmptyDataset("no .bft samples under " + root);
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  Dataset<T> ds;
  ds.num_classes = max_cls + 1;
  Tensor<T> first = read_bft<T>(files[0].second);
  Shape s = first.shape;
  s.insert(s.begin(), static_cast<int>(files.size()));
  ds.images = Tensor<T>(s);
  ds.labels.resize(files.size());
  const int64_t stride = first.size();
  for (size_t i = 0; i < files.size(); ++i) {
    Tensor<T> img = i == 0 ? first : read_bft<T>(files[i].second);
    if (img.shape != first.shape) throw ShapeError("inconsistent sample shape in " + root);
    std::copy_n(img.data.data(), stride, ds.images.data.data() + static_cast<int64_t>(i) * stride);
    ds.labels[i] = files[i].first;
  }
  return ds;
}

template <typename T>
void save_dataset_folder(const std::string& root, const Dataset<T>& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  const int64_t stride = ds.images.size() / ds.size();
  Shape img_shape(ds.images.shape.begin() + 1, ds.images.shape.end());
  for (int i = 0; i < ds.size(); ++i) {
    fs::path dir = fs::path(root) / ("class_" + std::to_string(ds.labels[static_cast<size_t>(i)]));
    fs::create_directories(dir);
    Tensor<T> img(img_shape);
    std::copy_n(ds.images.data.data() + static_cast<int64_t>(i) * stride, stride, img.data.data());
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.bft", i);
    write_bft((dir / name).string(), img);
  }
}

}  // namespace splitfit
