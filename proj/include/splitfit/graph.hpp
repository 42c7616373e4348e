// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "splitfit/layers.hpp"

namespace splitfit {

// Ordered layer sequence. Activation shapes are (C,H,W) between spatial
// layers and (F) after fully_connected; the executor adds the batch
// dimension. num_classes == 0 marks a fragment (no classifier contract).
template <typename T>
struct ModelGraph {
  std::string name;
  std::string arch_id;
  Shape input_shape;  // (C,H,W)
  int num_classes = 0;
  std::vector<Layer<T>> layers;

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }

  uint64_t param_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](const Tensor<T>& t) {
      if (!t.empty()) h = fnv1a(t.data.data(), t.data.size() * sizeof(T), h);
    };
    walk([&](const Layer<T>& l) {
      mix(l.weight);
      mix(l.bias);
      mix(l.gamma);
      mix(l.beta);
      mix(l.running_mean);
      mix(l.running_var);
    });
    return h;
  }

  template <typename F>
  void walk(F&& f) const {
    for (const auto& l : layers) walk_layer(l, f);
  }

 private:
  template <typename F>
  static void walk_layer(const Layer<T>& l, F& f) {
    f(l);
    for (const auto& c : l.children) walk_layer(c, f);
  }
};

template <typename T>
struct Activation {
  int layer_id = 0;
  Tensor<T> tensor;
};

// --- shape inference -------------------------------------------------------

namespace detail {

template <typename T>
Shape infer_unit_shape(const Layer<T>& l, const Shape& in, std::vector<Shape>& stack) {
  switch (l.kind) {
    case LayerKind::conv: {
      if (in.size() != 3) throw ShapeError("conv needs a (C,H,W) input, got " + shape_str(in));
      if (l.weight.dim(1) != in[0])
        throw ShapeError("layer " + std::to_string(l.id) + ": conv expects " +
                         std::to_string(l.weight.dim(1)) + " channels, got " + shape_str(in));
      return {l.out_channels, conv_out_dim(in[1], l.kernel, l.stride, l.padding),
              conv_out_dim(in[2], l.kernel, l.stride, l.padding)};
    }
    case LayerKind::deconv: {
      if (in.size() != 3) throw ShapeError("deconv needs a (C,H,W) input");
      if (l.weight.dim(0) != in[0])
        throw ShapeError("layer " + std::to_string(l.id) + ": deconv expects " +
                         std::to_string(l.weight.dim(0)) + " channels, got " + shape_str(in));
      return {l.out_channels, deconv_out_dim(in[1], l.kernel, l.stride, l.padding),
              deconv_out_dim(in[2], l.kernel, l.stride, l.padding)};
    }
    case LayerKind::batch_norm:
      if (in.size() != 3 || l.gamma.dim(0) != in[0])
        throw ShapeError("layer " + std::to_string(l.id) + ": batch_norm channel mismatch at " +
                         shape_str(in));
      return in;
    case LayerKind::relu:
      return in;
    case LayerKind::pool:
    case LayerKind::avg_pool:
      if (in.size() != 3) throw ShapeError("pool needs a (C,H,W) input");
      return {in[0], conv_out_dim(in[1], l.kernel, l.stride, 0),
              conv_out_dim(in[2], l.kernel, l.stride, 0)};
    case LayerKind::fully_connected: {
      int64_t feat = numel(in);
      if (l.weight.dim(1) != feat)
        throw ShapeError("layer " + std::to_string(l.id) + ": fully_connected expects " +
                         std::to_string(l.weight.dim(1)) + " features, got " + shape_str(in));
      return {l.out_channels};
    }
    case LayerKind::skip_save:
      stack.push_back(in);
      return in;
    case LayerKind::skip_add: {
      if (stack.empty()) throw ShapeError("skip_add with empty skip stack");
      Shape saved = stack.back();
      stack.pop_back();
      if (saved != in)
        throw ShapeError("skip_add shape mismatch " + shape_str(saved) + " vs " + shape_str(in));
      return in;
    }
    case LayerKind::skip_concat: {
      if (stack.empty()) throw ShapeError("skip_concat with empty skip stack");
      Shape saved = stack.back();
      stack.pop_back();
      if (in.size() != 3 || saved.size() != 3 || saved[1] != in[1] || saved[2] != in[2])
        throw ShapeError("skip_concat spatial mismatch " + shape_str(saved) + " vs " + shape_str(in));
      return {saved[0] + in[0], in[1], in[2]};
    }
    case LayerKind::block: {
      Shape cur = in;
      std::vector<Shape> local;
      for (const auto& c : l.children) cur = infer_unit_shape(c, cur, local);
      if (!local.empty())
        throw ShapeError("block " + std::to_string(l.id) + " leaves an unbalanced skip stack");
      return cur;
    }
  }
  throw ShapeError("unreachable layer kind");
}

}  // namespace detail

// Output shape of every top-level layer, in order. Throws ShapeError when two
// consecutive layers do not agree.
template <typename T>
std::vector<Shape> infer_shapes(const ModelGraph<T>& m) {
  std::vector<Shape> out;
  out.reserve(m.layers.size());
  Shape cur = m.input_shape;
  std::vector<Shape> stack;
  for (const auto& l : m.layers) {
    cur = detail::infer_unit_shape(l, cur, stack);
    out.push_back(cur);
  }
  if (!stack.empty()) throw ShapeError("model leaves an unbalanced skip stack");
  return out;
}

template <typename T>
void validate(const ModelGraph<T>& m) {
  for (size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].id != static_cast<int>(i) + 1)
      throw ShapeError("layer ids must be consecutive from 1; layer " + std::to_string(i) +
                       " has id " + std::to_string(m.layers[i].id));
  auto shapes = infer_shapes(m);
  if (m.num_classes > 0) {
    const Shape& last = shapes.back();
    if (last.size() != 1 || last[0] != m.num_classes)
      throw ShapeError("final layer emits " + shape_str(last) + ", expected (" +
                       std::to_string(m.num_classes) + ")");
  }
}

// --- execution -------------------------------------------------------------

// Flattened execution plan over one or more graph fragments run back to back.
// Blocks are expanded inline; `global_id` numbers top-level layers across all
// parts consecutively from 1, `part` records which fragment a unit came from.
template <typename T>
struct Runner {
  struct Unit {
    Layer<T>* layer;
    int global_id;  // owning top-level layer, 1-based across parts
    int part;
  };
  std::vector<Unit> units;
  int top_layer_count = 0;

  static Runner build(ModelGraph<T>& g) { return build_parts({&g}); }

  static Runner build_parts(std::vector<ModelGraph<T>*> parts) {
    Runner r;
    int gid = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      for (auto& l : parts[p]->layers) {
        ++gid;
        append(r, l, gid, static_cast<int>(p));
      }
    }
    r.top_layer_count = gid;
    return r;
  }

  // index of the unit whose output is top-level layer `gid`'s output
  int last_unit_of(int gid) const {
    for (int i = static_cast<int>(units.size()) - 1; i >= 0; --i)
      if (units[i].global_id == gid) return i;
    throw InvalidLayerId("no layer with id " + std::to_string(gid));
  }

 private:
  static void append(Runner& r, Layer<T>& l, int gid, int part) {
    if (l.kind == LayerKind::block) {
      for (auto& c : l.children) append(r, c, gid, part);
    } else {
      r.units.push_back({&l, gid, part});
    }
  }
};

template <typename T>
struct Trace {
  std::vector<Tensor<T>> acts;               // acts[i] = input of unit i; back() = output
  std::vector<BnCtx<T>> bn;                  // per unit
  std::vector<std::vector<int32_t>> argmax;  // per unit (max pool)
};

template <typename T>
struct UnitGrads {
  Tensor<T> weight, bias, gamma, beta;
  bool present = false;
};

namespace detail {

template <typename T>
Tensor<T> skip_concat_fwd(const Tensor<T>& saved, const Tensor<T>& cur) {
  const int N = cur.dim(0), Cs = saved.dim(1), Cc = cur.dim(1), H = cur.dim(2), W = cur.dim(3);
  Tensor<T> y({N, Cs + Cc, H, W});
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::copy_n(&saved.at(n, 0, 0, 0), Cs * plane, &y.at(n, 0, 0, 0));
    std::copy_n(&cur.at(n, 0, 0, 0), Cc * plane, &y.at(n, Cs, 0, 0));
  }
  return y;
}

template <typename T>
Tensor<T> unit_forward(Layer<T>& l, const Tensor<T>& x, bool train,
                       std::vector<Tensor<T>>& skips, BnCtx<T>* bnctx,
                       std::vector<int32_t>* argmax) {
  switch (l.kind) {
    case LayerKind::conv:
      return conv2d_forward(x, l.weight, l.bias, l.stride, l.padding);
    case LayerKind::deconv:
      return deconv2d_forward(x, l.weight, l.bias, l.stride, l.padding);
    case LayerKind::batch_norm:
      return batchnorm_forward(x, l, train, bnctx);
    case LayerKind::relu:
      return relu_forward(x);
    case LayerKind::pool:
      return maxpool_forward(x, l.kernel, l.stride, argmax);
    case LayerKind::avg_pool:
      return avgpool_forward(x, l.kernel, l.stride);
    case LayerKind::fully_connected: {
      Tensor<T> y = fc_forward(x, l.weight, l.bias);
      return y;
    }
    case LayerKind::skip_save:
      skips.push_back(x);
      return x;
    case LayerKind::skip_add: {
      Tensor<T> saved = std::move(skips.back());
      skips.pop_back();
      if (saved.shape != x.shape)
        throw ShapeError("skip_add shape mismatch at layer " + std::to_string(l.id));
      Tensor<T> y(x.shape);
      for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = x.data[i] + saved.data[i];
      return y;
    }
    case LayerKind::skip_concat: {
      Tensor<T> saved = std::move(skips.back());
      skips.pop_back();
      return skip_concat_fwd(saved, x);
    }
    case LayerKind::block:
      throw ShapeError("block must be flattened before execution");
  }
  throw ShapeError("unreachable");
}

}  // namespace detail

template <typename T>
struct ForwardOptions {
  bool train = false;
  const std::vector<uint8_t>* unit_train = nullptr;  // per-unit train override
  Trace<T>* trace = nullptr;
  const std::vector<int>* capture = nullptr;         // global top-level ids
  std::vector<Activation<T>>* captured = nullptr;
};

// Run the plan on a batched input (N,...). Eval mode mutates nothing, so a
// const model forwarded through a Runner built on it stays bit-stable and may
// be shared across threads.
template <typename T>
Tensor<T> run_forward(Runner<T>& r, const Tensor<T>& x, const ForwardOptions<T>& opt) {
  if (opt.capture) {
    for (int gid : *opt.capture)
      if (gid < 1 || gid > r.top_layer_count)
        throw InvalidLayerId("capture id " + std::to_string(gid) + " outside [1," +
                             std::to_string(r.top_layer_count) + "]");
  }
  if (opt.trace) {
    opt.trace->acts.clear();
    opt.trace->bn.assign(r.units.size(), {});
    opt.trace->argmax.assign(r.units.size(), {});
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> cur = x;
  std::map<int, Tensor<T>> want_capture;
  if (opt.capture)
    for (int gid : *opt.capture) want_capture[r.last_unit_of(gid)] = Tensor<T>();
  for (size_t i = 0; i < r.units.size(); ++i) {
    auto& u = r.units[i];
    const bool train = opt.unit_train ? ((*opt.unit_train)[i] != 0) : opt.train;
    if (opt.trace) opt.trace->acts.push_back(cur);
    BnCtx<T>* bnctx = opt.trace ? &opt.trace->bn[i] : nullptr;
    std::vector<int32_t>* am = opt.trace ? &opt.trace->argmax[i] : nullptr;
    cur = detail::unit_forward(*u.layer, cur, train, skips, bnctx, am);
    auto it = want_capture.find(static_cast<int>(i));
    if (it != want_capture.end()) it->second = cur;
  }
  if (!skips.empty()) throw ShapeError("execution left an unbalanced skip stack");
  if (opt.trace) opt.trace->acts.push_back(cur);
  if (opt.captured && opt.capture) {
    opt.captured->clear();
    for (int gid : *opt.capture) {
      Activation<T> a;
      a.layer_id = gid;
      a.tensor = want_capture[r.last_unit_of(gid)];
      opt.captured->push_back(std::move(a));
    }
  }
  return cur;
}

template <typename T>
struct BackwardOptions {
  const std::vector<uint8_t>* unit_wants_param_grads = nullptr;  // default: all
  bool want_input_grad = false;
};

// Reverse sweep over a recorded trace. `inject` adds dL/d(output of unit i)
// terms, so a loss may attach to several intermediate outputs at once.
// Returns dL/d(model input) when requested.
template <typename T>
Tensor<T> run_backward(Runner<T>& r, const Trace<T>& trace,
                       const std::map<int, Tensor<T>>& inject,
                       std::vector<UnitGrads<T>>& grads, const BackwardOptions<T>& opt) {
  const size_t n = r.units.size();
  grads.assign(n, {});
  std::vector<Tensor<T>> grad_skips;
  Tensor<T> dy(trace.acts.back().shape);  // zeros
  for (int i = static_cast<int>(n) - 1; i >= 0; --i) {
    auto it = inject.find(i);
    if (it != inject.end()) {
      if (it->second.shape != dy.shape)
        throw ShapeError("gradient injection shape mismatch at unit " + std::to_string(i));
      for (size_t k = 0; k < dy.data.size(); ++k) dy.data[k] += it->second.data[k];
    }
    Layer<T>& l = *r.units[i].layer;
    const Tensor<T>& x = trace.acts[i];
    const bool want_pg = !l.locked && l.has_params() &&
                         (!opt.unit_wants_param_grads || (*opt.unit_wants_param_grads)[i] != 0);
    const bool need_dx = (i > 0) || opt.want_input_grad;
    Tensor<T> dx;
    UnitGrads<T>& g = grads[i];
    switch (l.kind) {
      case LayerKind::conv:
        conv2d_backward(x, l.weight, dy, l.stride, l.padding, need_dx ? &dx : nullptr,
                        want_pg ? &g.weight : nullptr, want_pg ? &g.bias : nullptr);
        g.present = want_pg;
        break;
      case LayerKind::deconv:
        deconv2d_backward(x, l.weight, dy, l.stride, l.padding, need_dx ? &dx : nullptr,
                          want_pg ? &g.weight : nullptr, want_pg ? &g.bias : nullptr);
        g.present = want_pg;
        break;
      case LayerKind::batch_norm:
        batchnorm_backward(x, l, trace.bn[i], dy, need_dx ? &dx : nullptr,
                           want_pg ? &g.gamma : nullptr, want_pg ? &g.beta : nullptr);
        g.present = want_pg;
        break;
      case LayerKind::relu:
        if (need_dx) dx = relu_backward(x, dy);
        break;
      case LayerKind::pool:
        if (need_dx) dx = maxpool_backward(x.shape, trace.argmax[i], dy);
        break;
      case LayerKind::avg_pool:
        if (need_dx) dx = avgpool_backward(x.shape, l.kernel, l.stride, dy);
        break;
      case LayerKind::fully_connected:
        fc_backward(x, l.weight, dy, need_dx ? &dx : nullptr, want_pg ? &g.weight : nullptr,
                    want_pg ? &g.bias : nullptr);
        g.present = want_pg;
        break;
      case LayerKind::skip_save: {
        // gradient from pass-through plus gradient from the saved branch
        dx = dy;
        Tensor<T> extra = std::move(grad_skips.back());
        grad_skips.pop_back();
        for (size_t k = 0; k < dx.data.size(); ++k) dx.data[k] += extra.data[k];
        break;
      }
      case LayerKind::skip_add:
        grad_skips.push_back(dy);
        dx = dy;
        break;
      case LayerKind::skip_concat: {
        const int Cin = x.dim(1);
        const int Csaved = dy.dim(1) - Cin;
        const int N = dy.dim(0), H = dy.dim(2), W = dy.dim(3);
        const int64_t plane = static_cast<int64_t>(H) * W;
        Tensor<T> dsaved({N, Csaved, H, W});
        dx = Tensor<T>({N, Cin, H, W});
        for (int b = 0; b < N; ++b) {
          std::copy_n(&dy.at(b, 0, 0, 0), Csaved * plane, &dsaved.at(b, 0, 0, 0));
          std::copy_n(&dy.at(b, Csaved, 0, 0), Cin * plane, &dx.at(b, 0, 0, 0));
        }
        grad_skips.push_back(std::move(dsaved));
        break;
      }
      case LayerKind::block:
        throw ShapeError("block must be flattened before execution");
    }
    dy = std::move(dx);
  }
  if (!grad_skips.empty()) throw ShapeError("backward left an unbalanced skip stack");
  return opt.want_input_grad ? dy : Tensor<T>();
}

// --- public single-graph entry points --------------------------------------

// Evaluate a model on `x` with optional intermediate capture. `x` may carry a
// leading batch dimension; a bare (C,H,W) input is treated as batch 1.
// Never mutates the model (batch-norm runs on its running statistics), so
// concurrent calls on one graph are safe.
template <typename T>
std::pair<Tensor<T>, std::vector<Activation<T>>> forward(const ModelGraph<T>& m, const Tensor<T>& x,
                                                         const std::vector<int>& capture = {}) {
  Tensor<T> xb = x;
  if (xb.rank() == static_cast<int>(m.input_shape.size()))
    xb = xb.reshaped([&] {
      Shape s = xb.shape;
      s.insert(s.begin(), 1);
      return s;
    }());
  Shape spatial(xb.shape.begin() + 1, xb.shape.end());
  if (spatial != m.input_shape)
    throw ShapeError("input shape " + shape_str(spatial) + " does not match model input " +
                     shape_str(m.input_shape));
  auto& mm = const_cast<ModelGraph<T>&>(m);  // eval path is read-only
  auto runner = Runner<T>::build(mm);
  std::vector<Activation<T>> captured;
  ForwardOptions<T> opt;
  opt.train = false;
  opt.capture = &capture;
  opt.captured = &captured;
  Tensor<T> logits = run_forward(runner, xb, opt);
  return {std::move(logits), std::move(captured)};
}

// Flatten every block in [lo, hi] (1-based, inclusive) into its low-level
// children, preserving function exactly. Ids in the returned list restart at 1.
template <typename T>
std::vector<Layer<T>> decompose_blocks(const ModelGraph<T>& m, int lo, int hi) {
  if (lo < 1 || hi > static_cast<int>(m.layers.size()) || lo > hi)
    throw InvalidLayerId("decompose range [" + std::to_string(lo) + "," + std::to_string(hi) +
                         "] invalid for a " + std::to_string(m.layers.size()) + "-layer model");
  std::vector<Layer<T>> out;
  for (int i = lo - 1; i < hi; ++i) {
    const Layer<T>& l = m.layers[static_cast<size_t>(i)];
    if (l.kind == LayerKind::block) {
      for (const auto& c : l.children) out.push_back(c);
    } else {
      out.push_back(l);
    }
  }
  for (size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i) + 1;
  return out;
}

// Copy layers [lo, hi] into a standalone fragment whose input shape is the
// teacher's activation shape entering layer lo.
template <typename T>
ModelGraph<T> slice(const ModelGraph<T>& m, int lo, int hi, const std::string& name) {
  if (lo < 1 || hi > static_cast<int>(m.layers.size()) || lo > hi)
    throw InvalidLayerId("slice range invalid");
  auto shapes = infer_shapes(m);
  ModelGraph<T> f;
  f.name = name;
  f.arch_id = "fragment";
  f.input_shape = (lo == 1) ? m.input_shape : shapes[static_cast<size_t>(lo - 2)];
  f.num_classes = (hi == static_cast<int>(m.layers.size())) ? m.num_classes : 0;
  for (int i = lo - 1; i < hi; ++i) f.layers.push_back(m.layers[static_cast<size_t>(i)]);
  for (size_t i = 0; i < f.layers.size(); ++i) f.layers[i].id = static_cast<int>(i) + 1;
  return f;
}

}  // namespace splitfit
