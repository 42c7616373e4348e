// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "splitfit/losses.hpp"
#include "splitfit/recipes.hpp"

using namespace splitfit;

namespace {

// identity-weight fully connected layer
template <typename T>
Layer<T> identity_fc(int n) {
  Layer<T> l;
  l.kind = LayerKind::fully_connected;
  l.out_channels = n;
  l.weight = Tensor<T>({n, n});
  for (int i = 0; i < n; ++i) l.weight.data[static_cast<size_t>(i) * n + i] = T(1);
  l.bias = Tensor<T>({n});
  return l;
}

// teacher: two identity fc layers over a 2-feature input
template <typename T>
ModelGraph<T> tiny_teacher() {
  ModelGraph<T> m;
  m.name = "tiny";
  m.input_shape = {2, 1, 1};
  m.num_classes = 2;
  m.layers = {identity_fc<T>(2), identity_fc<T>(2)};
  m.layers[0].id = 1;
  m.layers[1].id = 2;
  validate(m);
  return m;
}

// student with a single-fc encoder (weights w), identity decoder+classifier
template <typename T>
BottleneckedModel<T> tiny_student(T enc_scale) {
  BottleneckedModel<T> bm;
  bm.teacher_ref = "tiny";
  bm.encoder.name = "enc";
  bm.encoder.input_shape = {2, 1, 1};
  auto e = identity_fc<T>(2);
  for (auto& v : e.weight.data) v *= enc_scale;
  e.tag = "bottleneck";
  bm.encoder.layers = {e};
  bm.encoder.layers[0].id = 1;
  bm.decoder.name = "dec";
  bm.decoder.input_shape = {2};
  bm.decoder.layers = {identity_fc<T>(2)};
  bm.decoder.layers[0].id = 1;
  bm.classifier.name = "cls";
  bm.classifier.input_shape = {2};
  bm.classifier.num_classes = 2;
  bm.classifier.layers = {identity_fc<T>(2)};
  bm.classifier.layers[0].id = 1;
  bm.config.l_ed = 1;
  bm.config.k_star = 1;
  bm.bottleneck_shape = {2};
  bm.decoder_output_shape = {2};
  return bm;
}

}  // namespace

TEST_CASE("ce_loss: frozen oracle values") {
  TensorD uniform({10});
  REQUIRE(ce_loss(uniform, 3) == Catch::Approx(std::log(10.0)).epsilon(1e-12));

  TensorD peaked({4});
  peaked.data = {0.0, 0.0, 60.0, 0.0};  // hard one-hot limit
  REQUIRE(ce_loss(peaked, 2) < 1e-12);

  TensorD two({2}, {1.0, 2.0});
  REQUIRE(ce_loss(two, 1) == Catch::Approx(0.313261687518).epsilon(1e-9));

  REQUIRE_THROWS_AS(ce_loss(two, 2), InvalidLabel);
  REQUIRE_THROWS_AS(ce_loss(two, -1), InvalidLabel);
}

TEST_CASE("softened_distribution: temperature behavior") {
  TensorD z({2}, {0.0, std::log(3.0)});
  auto p = softened_distribution(z, 1.0);
  REQUIRE(p[0] == Catch::Approx(0.25).epsilon(1e-12));
  REQUIRE(p[1] == Catch::Approx(0.75).epsilon(1e-12));

  // tau 1 is plain softmax
  TensorD z2({5});
  Rng rng(4);
  rng.fill_uniform(z2, -3.0, 3.0);
  auto soft = softened_distribution(z2, 1.0);
  double lse = 0;
  for (double v : z2.data) lse += std::exp(v);
  for (int c = 0; c < 5; ++c) REQUIRE(soft[c] == Catch::Approx(std::exp(z2.data[c]) / lse));

  // extreme temperature flattens toward uniform
  auto flat = softened_distribution(z2, 1e6);
  for (double v : flat) REQUIRE(std::abs(v - 0.2) < 1e-3);

  double sum = 0;
  for (double v : soft) sum += v;
  REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));

  REQUIRE_THROWS_AS(softened_distribution(z, 0.0), InvalidTemperature);
  REQUIRE_THROWS_AS(softened_distribution(z, -2.0), InvalidTemperature);
}

TEST_CASE("kd_loss: reductions and the hand-worked example") {
  TensorD teacher({2}, {0.0, std::log(3.0)});
  TensorD student({2}, {0.0, 0.0});

  // identical logits: the soft term vanishes exactly
  REQUIRE(kd_loss(teacher, teacher, 1, 0.3, 2.0) ==
          Catch::Approx(0.3 * ce_loss(teacher, 1)).epsilon(1e-15));

  // alpha = 1 reduces to cross entropy bit for bit
  REQUIRE(kd_loss(student, teacher, 1, 1.0, 3.0) == ce_loss(student, 1));

  // 0.5*ln2 + 0.5*KL([0.25,0.75] || [0.5,0.5]) = 0.411980
  double expect = 0.5 * std::log(2.0) +
                  0.5 * (0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5));
  REQUIRE(kd_loss(student, teacher, 1, 0.5, 1.0) == Catch::Approx(expect).epsilon(1e-12));
  REQUIRE(kd_loss(student, teacher, 1, 0.5, 1.0) == Catch::Approx(0.411980).margin(5e-7));
}

TEST_CASE("loss gradients match central finite differences") {
  Rng rng(9);
  TensorD zs({6}), zt({6});
  rng.fill_uniform(zs, -2.0, 2.0);
  rng.fill_uniform(zt, -2.0, 2.0);
  const double h = 1e-6;

  auto fd_check = [&](auto&& f, const Tensor<double>& analytic) {
    for (size_t i = 0; i < zs.data.size(); ++i) {
      TensorD plus = zs, minus = zs;
      plus.data[i] += h;
      minus.data[i] -= h;
      double fd = (f(plus) - f(minus)) / (2 * h);
      REQUIRE(analytic.data[i] == Catch::Approx(fd).margin(1e-7));
    }
  };

  fd_check([&](const TensorD& z) { return ce_loss(z, 2); }, ce_loss_grad(zs, 2));
  fd_check([&](const TensorD& z) { return kd_loss(z, zt, 4, 0.3, 2.5); },
           kd_loss_grad(zs, zt, 4, 0.3, 2.5));
}

TEST_CASE("ghnd_loss: hand-set tensors give 5") {
  auto teacher = tiny_teacher<double>();
  auto student = tiny_student<double>(0.0);  // dec(enc(x)) == [0,0]
  TensorD x({1, 2, 1, 1}, {1.0, 2.0});      // t_ed(x) == [1,2]
  std::vector<HookPoint> hooks = {{"ed", 1, 2}};
  REQUIRE(ghnd_loss(teacher, student, x, hooks, {{"ed", 1.0}}) ==
          Catch::Approx(5.0).epsilon(1e-12));

  // all weights zero: loss is zero no matter the inputs
  REQUIRE(ghnd_loss(teacher, student, x, hooks, {{"ed", 0.0}}) == 0.0);

  // encoder+decoder reproducing the teacher prefix exactly: loss 0
  auto perfect = tiny_student<double>(1.0);
  std::vector<HookPoint> hooks2 = {{"ed", 1, 2}, {"cls", 2, 3}};
  REQUIRE(ghnd_loss(teacher, perfect, x, hooks2, {}) == 0.0);

  // hooks must include the 'ed' pairing
  std::vector<HookPoint> no_ed = {{"cls", 2, 3}};
  REQUIRE_THROWS_AS(ghnd_loss(teacher, student, x, no_ed, {}), Error);

  // mismatched hook shapes surface as ShapeError
  std::vector<HookPoint> bad = {{"ed", 1, 1}};
  auto skewed = tiny_student<double>(1.0);
  skewed.encoder.layers[0].out_channels = 2;  // still 2-wide; pair against 4-wide teacher
  ModelGraph<double> wide = tiny_teacher<double>();
  wide.layers[0] = identity_fc<double>(4);
  wide.layers[0].id = 1;
  wide.input_shape = {4, 1, 1};
  wide.layers[1] = identity_fc<double>(4);
  wide.layers[1].id = 2;
  wide.num_classes = 4;
  TensorD x4({1, 4, 1, 1}, {1.0, 2.0, 3.0, 4.0});
  REQUIRE_THROWS_AS(ghnd_loss(wide, skewed, x4, bad, {}), ShapeError);
}

TEST_CASE("ghnd_loss equals an independent per-hook accumulation") {
  auto teacher = build_teacher<double>("small_resnet", {3, 32, 32}, 10, 31);
  SplitConfig cfg;
  cfg.split_point = SplitPoint::SP1;
  cfg.bottleneck_channels = 6;
  cfg.spatial_factor = 2;
  auto bm = inject(teacher, cfg, 33);
  auto hooks = make_hooks(teacher, bm);
  REQUIRE(hooks.size() == 4);  // ed + three classifier blocks

  TensorD x({2, 3, 32, 32});
  Rng rng(35);
  rng.fill_uniform(x, -1.0, 1.0);
  std::map<std::string, double> lambdas = {{"ed", 1.0}, {"block3", 0.5}, {"block4", 2.0}};

  double got = ghnd_loss(teacher, bm, x, hooks, lambdas);

  // independent accumulation from separately captured activations
  std::vector<int> tcap, scap;
  for (auto& h : hooks) tcap.push_back(h.teacher_layer);
  for (auto& h : hooks) scap.push_back(h.student_layer);
  auto tacts = forward(teacher, x, tcap).second;
  auto& m = const_cast<BottleneckedModel<double>&>(bm);
  auto runner = Runner<double>::build_parts({&m.encoder, &m.decoder, &m.classifier});
  std::vector<Activation<double>> sacts;
  ForwardOptions<double> opt;
  opt.capture = &scap;
  opt.captured = &sacts;
  run_forward(runner, x, opt);
  double expect = 0;
  for (size_t i = 0; i < hooks.size(); ++i) {
    double lambda = lambdas.count(hooks[i].name) ? lambdas[hooks[i].name] : 1.0;
    double se = 0;
    for (size_t k = 0; k < tacts[i].tensor.data.size(); ++k) {
      double d = tacts[i].tensor.data[k] - sacts[i].tensor.data[k];
      se += d * d;
    }
    expect += lambda * se / 2.0;  // batch of 2
  }
  REQUIRE(got == Catch::Approx(expect).epsilon(1e-10));
}
