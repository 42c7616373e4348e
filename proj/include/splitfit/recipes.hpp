// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "splitfit/train.hpp"

namespace splitfit {

// Knobs shared by every recipe; defaults follow the reference schedule
// (two stages of 10 epochs, Adam then SGD, lr 1e-3 decayed x0.1 after 5).
struct RecipeOptions {
  int stage_epochs = 10;     // each stage of two-stage recipes
  int baseline_epochs = 20;  // single-stage recipes, matching the total budget
  int batch_size = 64;
  double lr = 1e-3;
};

inline const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names = {
      "bottlefit_ft_fe", "bottlefit_kd_fe",       "bottlefit_ft",
      "bottlefit_kd",    "baseline_conventional", "baseline_kd",
      "baseline_hnd",    "baseline_autoencoder"};
  return names;
}

// Expand a recipe name into its staged schedule.
//
//   bottlefit_*   stage 1 distills encoder+decoder against the teacher's
//                 intermediate outputs (classifier frozen, Adam); stage 2
//                 adapts to the task with CE or KD (SGD), optionally with the
//                 encoder frozen (_fe).
//   baseline_*    single-stage references: plain CE, plain KD (alpha 0.5),
//                 head-only distillation, or a reconstruction-trained
//                 autoencoder spliced into the unmodified teacher.
inline TrainingRecipe expand_recipe(const std::string& name, const RecipeOptions& opt = {}) {
  TrainingRecipe r;
  r.name = name;

  auto stage1 = [&](LossKind loss) {
    StageSpec s;
    s.name = "stage1";
    s.loss = loss;
    s.optimizer = OptKind::adam;
    s.epochs = opt.stage_epochs;
    s.initial_lr = opt.lr;
    s.lr_decay = {0.1, 5};
    s.frozen = {"classifier"};
    s.batch_size = opt.batch_size;
    return s;
  };
  auto stage2 = [&](LossKind loss, bool freeze_encoder) {
    StageSpec s;
    s.name = "stage2";
    s.loss = loss;
    s.optimizer = OptKind::sgd;
    s.epochs = opt.stage_epochs;
    s.initial_lr = opt.lr;
    s.lr_decay = {0.1, 5};
    if (freeze_encoder) s.frozen = {"encoder"};
    s.batch_size = opt.batch_size;
    return s;
  };
  auto single = [&](LossKind loss) {
    StageSpec s;
    s.name = "stage1";
    s.loss = loss;
    s.optimizer = OptKind::adam;
    s.epochs = opt.baseline_epochs;
    s.initial_lr = opt.lr;
    s.lr_decay = {0.1, opt.baseline_epochs / 2};
    s.batch_size = opt.batch_size;
    return s;
  };

  if (name == "bottlefit_ft_fe") {
    r.stages = {stage1(LossKind::GHND), stage2(LossKind::CE, true)};
  } else if (name == "bottlefit_kd_fe") {
    r.stages = {stage1(LossKind::GHND), stage2(LossKind::KD, true)};
  } else if (name == "bottlefit_ft") {
    r.stages = {stage1(LossKind::GHND), stage2(LossKind::CE, false)};
  } else if (name == "bottlefit_kd") {
    r.stages = {stage1(LossKind::GHND), stage2(LossKind::KD, false)};
  } else if (name == "baseline_conventional") {
    r.stages = {single(LossKind::CE)};
  } else if (name == "baseline_kd") {
    r.stages = {single(LossKind::KD)};
    r.stages[0].kd_alpha = 0.5;
    r.stages[0].kd_tau = 1.0;
  } else if (name == "baseline_hnd") {
    auto s = single(LossKind::HND);
    s.frozen = {"classifier"};
    r.stages = {s};
  } else if (name == "baseline_autoencoder") {
    StageSpec s;
    s.name = "stage1";
    s.loss = LossKind::AE_RECON;
    s.optimizer = OptKind::adam;
    s.epochs = opt.baseline_epochs;
    s.initial_lr = opt.lr;
    s.lr_decay = {0.1, 5};
    s.batch_size = 32;
    s.frozen = {"classifier"};
    r.stages = {s};
  } else {
    throw UnknownRecipe("unknown recipe '" + name + "'");
  }
  return r;
}

namespace detail {
template <typename T>
void lock_layers(std::vector<Layer<T>>& layers) {
  for (auto& l : layers) {
    l.locked = true;
    lock_layers(l.children);
  }
}
}  // namespace detail

// Splice a lightweight 4-conv / 4-deconv autoencoder into an otherwise
// untouched teacher at the early split boundary. The teacher prefix rides
// along inside the encoder fragment but is locked, so reconstruction training
// only ever updates the autoencoder itself. spatial_factor mirrors the
// SplitConfig meaning: the AE bottleneck sits at 1/sf of the insertion
// activation's resolution, making payloads comparable with injected
// bottlenecks of the same width.
template <typename T>
BottleneckedModel<T> inject_autoencoder(const ModelGraph<T>& teacher, int bottleneck_channels,
                                        uint64_t seed, int spatial_factor = 1, int at_layer = 0) {
  validate(teacher);
  const int n = static_cast<int>(teacher.layers.size());
  const int l_at = at_layer ? at_layer : detail::derive_l_ed(teacher, SplitPoint::SP1);
  if (l_at < 1 || l_at >= n) throw InvalidSplitConfig("autoencoder insertion point out of range");
  auto shapes = infer_shapes(teacher);
  const Shape here = shapes[static_cast<size_t>(l_at - 1)];
  const int sf = spatial_factor;
  if (sf != 1 && sf != 2 && sf != 4)
    throw InvalidSplitConfig("autoencoder spatial_factor must be 1, 2 or 4");
  if (here.size() != 3 || here[1] % (2 * sf) != 0)
    throw InvalidSplitConfig("autoencoder needs a (C,H,W) activation divisible by the reduction");
  const int C = here[0];
  const int B = bottleneck_channels;
  if (B < 1 || B > C) throw InvalidSplitConfig("autoencoder bottleneck width out of range");
  const int c2 = std::max(C / 2, 4), c4 = std::max(C / 4, 4);

  Rng rng(seed * 0xae5eedull + 3);
  BottleneckedModel<T> bm;
  bm.teacher_ref = teacher.name;
  bm.encoder.name = teacher.name + "_ae_encoder";
  bm.encoder.arch_id = "ae_encoder";
  bm.encoder.input_shape = teacher.input_shape;
  for (int i = 0; i < l_at; ++i) bm.encoder.layers.push_back(teacher.layers[static_cast<size_t>(i)]);
  detail::lock_layers(bm.encoder.layers);
  // four compression convs with bn+relu between; the first log2(sf) stride 2
  const int widths[4] = {c2, c2, c4, B};
  int ch = C;
  int left = sf;
  for (int i = 0; i < 4; ++i) {
    const int stride = left > 1 ? 2 : 1;
    if (stride == 2) left /= 2;
    bm.encoder.layers.push_back(
        make_conv<T>(ch, widths[i], 3, stride, 1, rng, i == 3 ? "bottleneck" : ""));
    if (i < 3) {
      bm.encoder.layers.push_back(make_bn<T>(widths[i]));
      bm.encoder.layers.push_back(make_relu<T>());
    }
    ch = widths[i];
  }
  for (size_t i = 0; i < bm.encoder.layers.size(); ++i)
    bm.encoder.layers[i].id = static_cast<int>(i) + 1;

  bm.decoder.name = teacher.name + "_ae_decoder";
  bm.decoder.arch_id = "ae_decoder";
  bm.decoder.input_shape = infer_shapes(bm.encoder).back();
  const int dwidths[4] = {c4, c2, c2, C};
  int ups = 0;
  for (int s = sf; s > 1; s /= 2) ++ups;
  ch = B;
  for (int i = 0; i < 4; ++i) {
    if (4 - i <= ups) {  // the last log2(sf) deconvs upsample x2
      bm.decoder.layers.push_back(make_deconv<T>(ch, dwidths[i], 4, 2, 1, rng));
    } else {
      bm.decoder.layers.push_back(make_deconv<T>(ch, dwidths[i], 3, 1, 1, rng));
    }
    if (i < 3) {
      bm.decoder.layers.push_back(make_bn<T>(dwidths[i]));
      bm.decoder.layers.push_back(make_relu<T>());
    }
    ch = dwidths[i];
  }
  for (size_t i = 0; i < bm.decoder.layers.size(); ++i)
    bm.decoder.layers[i].id = static_cast<int>(i) + 1;

  bm.classifier = slice(teacher, l_at + 1, n, teacher.name + "_classifier");
  bm.config.split_point = SplitPoint::SP1;
  bm.config.bottleneck_channels = B;
  bm.config.spatial_factor = sf;
  bm.config.l_ed = l_at;
  bm.config.k_star = static_cast<int>(bm.encoder.layers.size());
  bm.bottleneck_shape = infer_shapes(bm.encoder).back();
  bm.decoder_output_shape = infer_shapes(bm.decoder).back();
  if (bm.decoder_output_shape != here)
    throw ShapeError("autoencoder decoder does not restore the insertion shape");
  for (int i = 0; i < l_at; ++i)
    bm.teacher_prefix_params += teacher.layers[static_cast<size_t>(i)].param_count();
  bm.encdec_params = bm.encoder.param_count() + bm.decoder.param_count() -
                     bm.teacher_prefix_params;  // the AE itself (prefix rides along)
  return bm;
}

template <typename T>
struct TrainOutcome {
  BottleneckedModel<T> model;
  TrainingRecipe recipe;
  std::vector<EpochLog> log;
  double final_val_top1 = -1;
};

// Build the student dictated by `name` and run its full schedule.
template <typename T>
TrainOutcome<T> train_with_recipe(const std::string& name, const ModelGraph<T>& teacher,
                                  const SplitConfig& split_cfg, const Dataset<T>& train,
                                  const Dataset<T>& val, uint64_t seed,
                                  const RecipeOptions& opt = {}) {
  TrainOutcome<T> out;
  out.recipe = expand_recipe(name, opt);
  out.model = (name == "baseline_autoencoder")
                  ? inject_autoencoder(teacher, split_cfg.bottleneck_channels, seed,
                                       split_cfg.spatial_factor)
                  : inject(teacher, split_cfg, seed);
  auto hooks = make_hooks(teacher, out.model);
  int epoch_offset = 0;
  for (size_t si = 0; si < out.recipe.stages.size(); ++si) {
    const auto& stage = out.recipe.stages[si];
    run_stage(ModelParts<T>::of(out.model), &teacher, hooks, train, val, stage,
              seed * 31 + si + 1, epoch_offset, &out.log);
    epoch_offset += stage.epochs;
  }
  if (!out.log.empty()) out.final_val_top1 = out.log.back().val_top1;
  return out;
}

// Plain cross-entropy training of a graph (used to pretrain desk teachers).
template <typename T>
std::vector<EpochLog> train_classifier(ModelGraph<T>& model, const Dataset<T>& train,
                                       const Dataset<T>& val, int epochs, uint64_t seed,
                                       double lr = 1e-3, int batch_size = 64) {
  StageSpec s;
  s.name = "stage1";
  s.loss = LossKind::CE;
  s.optimizer = OptKind::adam;
  s.epochs = epochs;
  s.initial_lr = lr;
  s.lr_decay = {0.1, epochs > 1 ? epochs / 2 : 1};
  s.batch_size = batch_size;
  std::vector<EpochLog> log;
  run_stage(ModelParts<T>::of(model), static_cast<const ModelGraph<T>*>(nullptr), {}, train, val,
            s, seed, 0, &log);
  return log;
}

}  // namespace splitfit
