// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <fstream>
#include <set>

#include "splitfit/dataset.hpp"
#include "splitfit/losses.hpp"
#include "splitfit/optim.hpp"

namespace splitfit {

enum class LossKind : uint8_t { GHND, HND, CE, KD, AE_RECON };

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::GHND: return "ghnd";
    case LossKind::HND: return "hnd";
    case LossKind::CE: return "ce";
    case LossKind::KD: return "kd";
    case LossKind::AE_RECON: return "ae_recon";
  }
  return "?";
}

struct LrDecay {
  double factor = 0.1;
  int every_epochs = 5;  // 0 disables decay
};

// One training stage: loss, optimizer, schedule, and which components stay
// frozen. Frozen components keep parameters and batch-norm buffers bit-exact
// and run in eval mode.
struct StageSpec {
  std::string name = "stage";
  LossKind loss = LossKind::CE;
  OptKind optimizer = OptKind::adam;
  int epochs = 10;
  double initial_lr = 1e-3;
  LrDecay lr_decay;
  std::set<std::string> frozen;
  double kd_alpha = 0.5;
  double kd_tau = 1.0;
  std::map<std::string, double> lambdas;  // hook name -> weight, default 1
  int batch_size = 64;
  double sgd_momentum = 0.9;
  double sgd_weight_decay = 0.0;
};

struct TrainingRecipe {
  std::string name;
  std::vector<StageSpec> stages;
};

struct EpochLog {
  int epoch = 0;  // global, across stages
  std::string stage;
  double loss = 0;
  double lr = 0;
  double val_top1 = -1;  // -1 when no validation set was given
};

inline void write_epoch_log_csv(const std::string& path, const std::vector<EpochLog>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "epoch,stage,loss,lr,val_top1\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.8g,%.8g,%.6g\n", r.epoch, r.stage.c_str(), r.loss,
                  r.lr, r.val_top1);
    f << buf;
  }
}

// Named graph fragments trained as one unit; freezing addresses the names.
template <typename T>
struct ModelParts {
  std::vector<std::pair<std::string, ModelGraph<T>*>> parts;

  static ModelParts of(ModelGraph<T>& g) { return {{{"model", &g}}}; }
  static ModelParts of(BottleneckedModel<T>& bm) {
    return {{{"encoder", &bm.encoder}, {"decoder", &bm.decoder}, {"classifier", &bm.classifier}}};
  }
  std::vector<ModelGraph<T>*> graphs() const {
    std::vector<ModelGraph<T>*> g;
    for (auto& p : parts) g.push_back(p.second);
    return g;
  }
};

namespace detail {

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& src, const std::vector<int>& idx) {
  Shape s = src.shape;
  s[0] = static_cast<int>(idx.size());
  Tensor<T> out(s);
  const int64_t stride = src.size() / src.dim(0);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(src.data.data() + idx[i] * stride, stride,
                out.data.data() + static_cast<int64_t>(i) * stride);
  return out;
}

template <typename T>
int argmax_row(const Tensor<T>& logits, int row) {
  const int C = logits.dim(1);
  const T* p = logits.data.data() + static_cast<size_t>(row) * C;
  int best = 0;
  for (int c = 1; c < C; ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

}  // namespace detail

// Top-1 accuracy of an execution plan over a labeled dataset.
template <typename T>
double evaluate_accuracy(Runner<T>& runner, const Dataset<T>& ds, int batch_size = 64) {
  if (ds.size() == 0) throw EmptyDataset("cannot evaluate on an empty dataset");
  int correct = 0;
  ForwardOptions<T> opt;
  for (int at = 0; at < ds.size(); at += batch_size) {
    std::vector<int> idx;
    for (int i = at; i < std::min(ds.size(), at + batch_size); ++i) idx.push_back(i);
    Tensor<T> logits = run_forward(runner, ds.batch(idx), opt);
    for (size_t r = 0; r < idx.size(); ++r)
      if (detail::argmax_row(logits, static_cast<int>(r)) == ds.labels[static_cast<size_t>(idx[r])])
        ++correct;
  }
  return static_cast<double>(correct) / ds.size();
}

template <typename T>
double evaluate_accuracy(const ModelGraph<T>& m, const Dataset<T>& ds, int batch_size = 64) {
  auto& mm = const_cast<ModelGraph<T>&>(m);
  auto runner = Runner<T>::build(mm);
  return evaluate_accuracy(runner, ds, batch_size);
}

template <typename T>
double evaluate_accuracy(const BottleneckedModel<T>& bm, const Dataset<T>& ds,
                         int batch_size = 64) {
  auto& m = const_cast<BottleneckedModel<T>&>(bm);
  auto runner = Runner<T>::build_parts({&m.encoder, &m.decoder, &m.classifier});
  return evaluate_accuracy(runner, ds, batch_size);
}

namespace detail {

// Teacher outputs precomputed once per stage; the teacher never changes while
// a student trains, so per-epoch teacher passes would be wasted work.
template <typename T>
struct TeacherCache {
  Tensor<T> logits;                 // (N, classes), KD only
  std::vector<Tensor<T>> hook_act;  // per hook, (N, ...)
};

template <typename T>
TeacherCache<T> build_teacher_cache(const ModelGraph<T>& teacher, const Dataset<T>& train,
                                    LossKind loss, const std::vector<HookPoint>& hooks,
                                    int batch_size) {
  TeacherCache<T> cache;
  auto& tm = const_cast<ModelGraph<T>&>(teacher);
  auto runner = Runner<T>::build(tm);
  std::vector<int> capture;
  if (loss != LossKind::KD)
    for (const auto& h : hooks) capture.push_back(h.teacher_layer);
  for (int at = 0; at < train.size(); at += batch_size) {
    std::vector<int> idx;
    for (int i = at; i < std::min(train.size(), at + batch_size); ++i) idx.push_back(i);
    std::vector<Activation<T>> acts;
    ForwardOptions<T> opt;
    opt.capture = &capture;
    opt.captured = &acts;
    Tensor<T> logits = run_forward(runner, train.batch(idx), opt);
    auto place = [&](Tensor<T>& dst, const Tensor<T>& src) {
      if (dst.empty()) {
        Shape s = src.shape;
        s[0] = train.size();
        dst = Tensor<T>(s);
      }
      const int64_t stride = src.size() / src.dim(0);
      std::copy_n(src.data.data(), src.size(), dst.data.data() + at * stride);
    };
    if (loss == LossKind::KD) {
      place(cache.logits, logits);
    } else {
      cache.hook_act.resize(hooks.size());
      for (size_t h = 0; h < hooks.size(); ++h) place(cache.hook_act[h], acts[h].tensor);
    }
  }
  return cache;
}

}  // namespace detail

// Run one stage of training in place. `teacher` provides distillation targets
// (ignored for plain CE). Rows are appended to `log` with epochs numbered from
// `epoch_offset`. A NaN/Inf or runaway (>1e6) loss aborts with diagnostics.
template <typename T>
void run_stage(ModelParts<T> parts, const ModelGraph<T>* teacher,
               const std::vector<HookPoint>& all_hooks, const Dataset<T>& train,
               const Dataset<T>& val, const StageSpec& stage, uint64_t seed, int epoch_offset,
               std::vector<EpochLog>* log) {
  if (stage.epochs <= 0) return;
  if (train.size() == 0) throw EmptyDataset("training set is empty");
  for (const auto& name : stage.frozen) {
    bool known = false;
    for (auto& p : parts.parts) known |= (p.first == name);
    if (!known) throw Error("frozen component '" + name + "' is not part of this model");
  }
  if ((stage.loss == LossKind::GHND || stage.loss == LossKind::HND) &&
      !stage.frozen.count("classifier"))
    throw Error("distilling intermediate representations requires a frozen classifier");
  if ((stage.loss != LossKind::CE) && teacher == nullptr)
    throw Error("stage '" + stage.name + "' needs a teacher");
  if (!(stage.kd_tau > 0)) throw InvalidTemperature("temperature must be positive");

  auto runner = Runner<T>::build_parts(parts.graphs());
  std::vector<uint8_t> trainable(runner.units.size(), 1);
  {
    size_t u = 0;
    // units appear in part order; recover each unit's component by part index
    for (size_t i = 0; i < runner.units.size(); ++i) {
      const auto& name = parts.parts[static_cast<size_t>(runner.units[i].part)].first;
      trainable[i] = (!runner.units[i].layer->locked && !stage.frozen.count(name)) ? 1 : 0;
      (void)u;
    }
  }

  // hooks active in this stage: GHND uses all, HND/AE only the 'ed' pairing
  std::vector<HookPoint> hooks;
  if (stage.loss == LossKind::GHND) {
    hooks = all_hooks;
  } else if (stage.loss == LossKind::HND || stage.loss == LossKind::AE_RECON) {
    for (const auto& h : all_hooks)
      if (h.name == "ed") hooks.push_back(h);
    if (hooks.empty()) throw Error("no 'ed' hook available for reconstruction training");
  }

  detail::TeacherCache<T> cache;
  if (stage.loss != LossKind::CE)
    cache = detail::build_teacher_cache(*teacher, train, stage.loss, hooks, stage.batch_size);

  Optimizer<T> optim(stage.optimizer, runner.units.size(), static_cast<T>(stage.sgd_momentum),
                     static_cast<T>(stage.sgd_weight_decay));
  const int last_unit = static_cast<int>(runner.units.size()) - 1;
  std::vector<int> hook_units;
  for (const auto& h : hooks) hook_units.push_back(runner.last_unit_of(h.student_layer));

  std::vector<int> order(static_cast<size_t>(train.size()));
  for (int i = 0; i < train.size(); ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < stage.epochs; ++epoch) {
    double lr = stage.initial_lr;
    if (stage.lr_decay.every_epochs > 0)
      lr *= std::pow(stage.lr_decay.factor, epoch / stage.lr_decay.every_epochs);

    Rng shuffle_rng(seed * 0x100000001b3ull + static_cast<uint64_t>(epoch_offset + epoch) * 2654435761ull + 0x5eed);
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0;
    for (int at = 0; at < train.size(); at += stage.batch_size) {
      std::vector<int> idx(order.begin() + at,
                           order.begin() + std::min<size_t>(order.size(), at + stage.batch_size));
      const int N = static_cast<int>(idx.size());
      Tensor<T> x = train.batch(idx);

      Trace<T> trace;
      ForwardOptions<T> fopt;
      fopt.unit_train = &trainable;
      fopt.trace = &trace;
      Tensor<T> logits = run_forward(runner, x, fopt);

      double batch_loss = 0;
      std::map<int, Tensor<T>> inject;
      const T invN = T(1) / static_cast<T>(N);
      if (stage.loss == LossKind::CE || stage.loss == LossKind::KD) {
        const int C = logits.dim(1);
        Tensor<T> g(logits.shape);
        for (int r = 0; r < N; ++r) {
          Tensor<T> row({C});
          std::copy_n(logits.data.data() + static_cast<size_t>(r) * C, C, row.data.data());
          const int label = train.labels[static_cast<size_t>(idx[static_cast<size_t>(r)])];
          Tensor<T> grow;
          if (stage.loss == LossKind::CE) {
            batch_loss += static_cast<double>(ce_loss(row, label));
            grow = ce_loss_grad(row, label);
          } else {
            Tensor<T> trow({C});
            std::copy_n(cache.logits.data.data() +
                            static_cast<size_t>(idx[static_cast<size_t>(r)]) * C,
                        C, trow.data.data());
            batch_loss += static_cast<double>(kd_loss(row, trow, label,
                                                      static_cast<T>(stage.kd_alpha),
                                                      static_cast<T>(stage.kd_tau)));
            grow = kd_loss_grad(row, trow, label, static_cast<T>(stage.kd_alpha),
                                static_cast<T>(stage.kd_tau));
          }
          for (int c = 0; c < C; ++c)
            g.data[static_cast<size_t>(r) * C + c] = grow.data[static_cast<size_t>(c)] * invN;
        }
        batch_loss /= N;
        inject[last_unit] = std::move(g);
      } else {
        for (size_t h = 0; h < hooks.size(); ++h) {
          auto it = stage.lambdas.find(hooks[h].name);
          const T lambda = static_cast<T>(it == stage.lambdas.end() ? 1.0 : it->second);
          const Tensor<T>& s = trace.acts[static_cast<size_t>(hook_units[h]) + 1];
          Tensor<T> t = detail::gather_rows(cache.hook_act[h], idx);
          if (lambda != T(0))
            batch_loss += static_cast<double>(lambda) * static_cast<double>(squared_error(s, t)) / N;
          Tensor<T> g(s.shape);
          const T w = T(2) * lambda * invN;
          for (size_t k = 0; k < g.data.size(); ++k) g.data[k] = w * (s.data[k] - t.data[k]);
          auto pos = inject.find(hook_units[h]);
          if (pos == inject.end()) {
            inject.emplace(hook_units[h], std::move(g));
          } else {
            for (size_t k = 0; k < pos->second.data.size(); ++k) pos->second.data[k] += g.data[k];
          }
        }
      }

      if (!std::isfinite(batch_loss) || std::abs(batch_loss) > 1e6)
        throw DivergenceError("loss " + std::to_string(batch_loss) + " at stage '" + stage.name +
                              "' epoch " + std::to_string(epoch_offset + epoch) + " batch offset " +
                              std::to_string(at));

      std::vector<UnitGrads<T>> grads;
      BackwardOptions<T> bopt;
      bopt.unit_wants_param_grads = &trainable;
      run_backward(runner, trace, inject, grads, bopt);
      optim.step(runner, grads, static_cast<T>(lr));
      loss_sum += batch_loss * N;
    }

    EpochLog row;
    row.epoch = epoch_offset + epoch;
    row.stage = stage.name;
    row.loss = loss_sum / train.size();
    row.lr = lr;
    row.val_top1 = val.size() ? evaluate_accuracy(runner, val, stage.batch_size) : -1.0;
    if (log) log->push_back(std::move(row));
  }
}

}  // namespace splitfit
