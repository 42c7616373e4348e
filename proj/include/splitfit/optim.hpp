// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "splitfit/graph.hpp"

namespace splitfit {

enum class OptKind : uint8_t { adam, sgd };

inline const char* opt_kind_name(OptKind k) { return k == OptKind::adam ? "adam" : "sgd"; }
inline OptKind opt_kind_from_name(const std::string& s) {
  if (s == "adam") return OptKind::adam;
  if (s == "sgd") return OptKind::sgd;
  throw IoError("unknown optimizer '" + s + "'");
}

// First-order update over the per-unit gradients produced by run_backward.
// State buffers are keyed by (unit index, tensor role) and sized lazily, so
// one optimizer instance serves exactly one Runner layout for one stage.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptKind kind, size_t unit_count, T momentum = T(0.9), T weight_decay = T(0))
      : kind_(kind), momentum_(momentum), weight_decay_(weight_decay), state_(unit_count) {}

  void step(Runner<T>& runner, const std::vector<UnitGrads<T>>& grads, T lr) {
    ++t_;
    for (size_t i = 0; i < runner.units.size(); ++i) {
      if (!grads[i].present) continue;
      Layer<T>& l = *runner.units[i].layer;
      apply(l.weight, grads[i].weight, state_[i].w, lr);
      apply(l.bias, grads[i].bias, state_[i].b, lr);
      apply(l.gamma, grads[i].gamma, state_[i].g, lr);
      apply(l.beta, grads[i].beta, state_[i].be, lr);
    }
  }

 private:
  struct Moments {
    Tensor<T> m, v;
  };
  struct UnitState {
    Moments w, b, g, be;
  };

  void apply(Tensor<T>& value, const Tensor<T>& grad, Moments& st, T lr) {
    if (grad.empty()) return;
    if (st.m.empty()) {
      st.m = Tensor<T>(grad.shape);
      if (kind_ == OptKind::adam) st.v = Tensor<T>(grad.shape);
    }
    if (kind_ == OptKind::adam) {
      const T b1 = T(0.9), b2 = T(0.999), eps = T(1e-8);
      const T c1 = T(1) - std::pow(b1, static_cast<T>(t_));
      const T c2 = T(1) - std::pow(b2, static_cast<T>(t_));
      for (size_t k = 0; k < grad.data.size(); ++k) {
        const T g = grad.data[k];
        st.m.data[k] = b1 * st.m.data[k] + (T(1) - b1) * g;
        st.v.data[k] = b2 * st.v.data[k] + (T(1) - b2) * g * g;
        const T mhat = st.m.data[k] / c1;
        const T vhat = st.v.data[k] / c2;
        value.data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    } else {
      for (size_t k = 0; k < grad.data.size(); ++k) {
        T g = grad.data[k] + weight_decay_ * value.data[k];
        st.m.data[k] = momentum_ * st.m.data[k] + g;
        value.data[k] -= lr * st.m.data[k];
      }
    }
  }

  OptKind kind_;
  T momentum_, weight_decay_;
  int64_t t_ = 0;
  std::vector<UnitState> state_;
};

}  // namespace splitfit
