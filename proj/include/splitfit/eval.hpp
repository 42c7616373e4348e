// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "splitfit/dataset.hpp"
#include "splitfit/net.hpp"

namespace splitfit {

// Labels produced by the head -> codec -> tail pipeline for every sample.
inline std::vector<int> split_path_labels(const ModelGraph<float>& head,
                                          const ModelGraph<float>& tail,
                                          const Dataset<float>& ds, PayloadFormat codec) {
  if (ds.size() == 0) throw EmptyDataset("cannot evaluate on an empty dataset");
  std::vector<int> labels(static_cast<size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i)
    labels[static_cast<size_t>(i)] = infer_local_split(head, tail, ds.image(i), codec).label;
  return labels;
}

inline double split_path_accuracy(const ModelGraph<float>& head, const ModelGraph<float>& tail,
                                  const Dataset<float>& ds, PayloadFormat codec) {
  auto labels = split_path_labels(head, tail, ds, codec);
  int correct = 0;
  for (int i = 0; i < ds.size(); ++i)
    if (labels[static_cast<size_t>(i)] == ds.labels[static_cast<size_t>(i)]) ++correct;
  return static_cast<double>(correct) / ds.size();
}

// Fraction of samples whose argmax label is unchanged by 8-bit quantization
// of the transferred tensor.
inline double codec_agreement(const ModelGraph<float>& head, const ModelGraph<float>& tail,
                              const Dataset<float>& ds) {
  auto a = split_path_labels(head, tail, ds, PayloadFormat::bq8);
  auto b = split_path_labels(head, tail, ds, PayloadFormat::float32);
  int same = 0;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] == b[i]) ++same;
  return static_cast<double>(same) / static_cast<double>(a.size());
}

}  // namespace splitfit
