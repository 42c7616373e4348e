// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "splitfit/split.hpp"

namespace splitfit {

namespace detail {

// log-softmax of z/tau, numerically stable
template <typename T>
std::vector<T> log_softened(const T* z, int C, T tau) {
  std::vector<T> lp(static_cast<size_t>(C));
  T mx = z[0] / tau;
  for (int c = 1; c < C; ++c) mx = std::max(mx, z[c] / tau);
  T lse = 0;
  for (int c = 0; c < C; ++c) lse += std::exp(z[c] / tau - mx);
  lse = std::log(lse) + mx;
  for (int c = 0; c < C; ++c) lp[static_cast<size_t>(c)] = z[c] / tau - lse;
  return lp;
}

}  // namespace detail

// Temperature-softened class distribution: p_c = exp(z_c/tau) / sum_j exp(z_j/tau).
template <typename T>
std::vector<T> softened_distribution(const Tensor<T>& logits, T tau) {
  if (!(tau > T(0))) throw InvalidTemperature("temperature must be positive");
  const int C = static_cast<int>(logits.size());
  auto lp = detail::log_softened(logits.data.data(), C, tau);
  std::vector<T> p(lp.size());
  for (size_t c = 0; c < lp.size(); ++c) p[c] = std::exp(lp[c]);
  return p;
}

// Cross entropy against a hard label: -log softmax(z)[label].
template <typename T>
T ce_loss(const Tensor<T>& logits, int label) {
  const int C = static_cast<int>(logits.size());
  if (label < 0 || label >= C)
    throw InvalidLabel("label " + std::to_string(label) + " outside [0," + std::to_string(C) + ")");
  auto lp = detail::log_softened(logits.data.data(), C, T(1));
  return -lp[static_cast<size_t>(label)];
}

// d ce / d logits = softmax(z) - onehot(label)
template <typename T>
Tensor<T> ce_loss_grad(const Tensor<T>& logits, int label) {
  const int C = static_cast<int>(logits.size());
  auto lp = detail::log_softened(logits.data.data(), C, T(1));
  Tensor<T> g(logits.shape);
  for (int c = 0; c < C; ++c) g.data[static_cast<size_t>(c)] = std::exp(lp[static_cast<size_t>(c)]);
  g.data[static_cast<size_t>(label)] -= T(1);
  return g;
}

// Distillation loss: alpha * CE(student, label)
//                  + (1-alpha) * tau^2 * KL(teacher_softened || student_softened).
// The temperature-softened teacher distribution is the KL target.
template <typename T>
T kd_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, int label, T alpha,
          T tau) {
  if (!(tau > T(0))) throw InvalidTemperature("temperature must be positive");
  if (alpha < T(0) || alpha > T(1)) throw Error("kd alpha must lie in [0,1]");
  T hard = ce_loss(student_logits, label);
  if (alpha == T(1)) return hard;  // exact reduction to plain cross entropy
  const int C = static_cast<int>(student_logits.size());
  auto lq = detail::log_softened(teacher_logits.data.data(), C, tau);
  auto lp = detail::log_softened(student_logits.data.data(), C, tau);
  T kl = 0;
  for (int c = 0; c < C; ++c) {
    const size_t i = static_cast<size_t>(c);
    kl += std::exp(lq[i]) * (lq[i] - lp[i]);
  }
  return alpha * hard + (T(1) - alpha) * tau * tau * kl;
}

// d kd / d student_logits = alpha*(softmax(z_s) - onehot)
//                         + (1-alpha)*tau*(softmax(z_s/tau) - softmax(z_t/tau))
template <typename T>
Tensor<T> kd_loss_grad(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, int label,
                       T alpha, T tau) {
  Tensor<T> g = ce_loss_grad(student_logits, label);
  for (auto& v : g.data) v *= alpha;
  if (alpha == T(1)) return g;
  const int C = static_cast<int>(student_logits.size());
  auto lq = detail::log_softened(teacher_logits.data.data(), C, tau);
  auto lp = detail::log_softened(student_logits.data.data(), C, tau);
  const T w = (T(1) - alpha) * tau;
  for (int c = 0; c < C; ++c) {
    const size_t i = static_cast<size_t>(c);
    g.data[i] += w * (std::exp(lp[i]) - std::exp(lq[i]));
  }
  return g;
}

// Sum of squared differences over all elements.
template <typename T>
T squared_error(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape)
    throw ShapeError("squared_error shapes differ: " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  T acc = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const T d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc;
}

// A teacher/student layer pairing contributing a reconstruction term.
// "ed" is the distinguished hook pairing the teacher activation at l_ed with
// the student's decoder output; the rest sit at classifier block boundaries.
struct HookPoint {
  std::string name;
  int teacher_layer = 0;
  int student_layer = 0;  // global id across encoder+decoder+classifier
};

// Hooks for a bottleneck-injected student: the decoder output against teacher
// layer l_ed, plus one hook per block boundary in the (frozen) classifier.
template <typename T>
std::vector<HookPoint> make_hooks(const ModelGraph<T>& teacher, const BottleneckedModel<T>& bm) {
  std::vector<HookPoint> hooks;
  const int dec_end = bm.encoder_len() + bm.decoder_len();
  hooks.push_back({"ed", bm.config.l_ed, dec_end});
  auto tshapes = infer_shapes(teacher);
  auto cshapes = infer_shapes(bm.classifier);
  for (size_t i = 0; i < bm.classifier.layers.size(); ++i) {
    const auto& l = bm.classifier.layers[i];
    if (l.kind != LayerKind::block) continue;
    HookPoint h;
    h.name = l.tag.empty() ? ("cls_" + std::to_string(l.id)) : l.tag;
    h.teacher_layer = bm.config.l_ed + l.id;
    h.student_layer = dec_end + l.id;
    if (tshapes[static_cast<size_t>(h.teacher_layer - 1)] != cshapes[i])
      throw ShapeError("hook '" + h.name + "' pairs layers with different shapes");
    hooks.push_back(std::move(h));
  }
  // decoder output must line up with the teacher activation it mimics
  if (tshapes[static_cast<size_t>(bm.config.l_ed - 1)] != bm.decoder_output_shape)
    throw ShapeError("decoder output does not match teacher activation at l_ed");
  return hooks;
}

// Reconstruction-style distillation (Eq.-style multi-hook squared error):
//   sum_h lambda_h * || teacher_h(x) - student_h(x) ||_2^2,
// averaged over the batch. Returns the loss; per-hook gradients are handled
// by the training loop, which injects 2*lambda*(s-t)/N at each hook.
template <typename T>
T ghnd_loss(const ModelGraph<T>& teacher, const BottleneckedModel<T>& bm, const Tensor<T>& x,
            const std::vector<HookPoint>& hooks, const std::map<std::string, double>& lambdas) {
  bool has_ed = false;
  for (const auto& h : hooks) has_ed |= (h.name == "ed");
  if (!has_ed) throw Error("ghnd hooks must include the distinguished 'ed' pairing");
  for (const auto& kv : lambdas)
    if (kv.second < 0) throw Error("hook weight for '" + kv.first + "' must be >= 0");

  std::vector<int> tcap, scap;
  for (const auto& h : hooks) tcap.push_back(h.teacher_layer);
  for (const auto& h : hooks) scap.push_back(h.student_layer);

  auto [tout, tacts] = forward(teacher, x, tcap);
  auto& m = const_cast<BottleneckedModel<T>&>(bm);
  auto runner = Runner<T>::build_parts({&m.encoder, &m.decoder, &m.classifier});
  ForwardOptions<T> opt;
  std::vector<Activation<T>> sacts;
  opt.capture = &scap;
  opt.captured = &sacts;
  Tensor<T> xb = x;
  if (xb.rank() == 3) xb = xb.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  run_forward(runner, xb, opt);

  const T invN = T(1) / static_cast<T>(xb.dim(0));
  T total = 0;
  for (size_t i = 0; i < hooks.size(); ++i) {
    auto it = lambdas.find(hooks[i].name);
    const T lambda = static_cast<T>(it == lambdas.end() ? 1.0 : it->second);
    if (lambda == T(0)) continue;
    total += lambda * squared_error(tacts[i].tensor, sacts[i].tensor) * invN;
  }
  return total;
}

}  // namespace splitfit
