#include <cmath>

#include "doctest.h"
#include "hanet/core/errors.hpp"
#include "hanet/core/gradcheck.hpp"
#include "hanet/core/layers.hpp"
#include "hanet/core/ops.hpp"
#include "hanet/core/optim.hpp"
#include "test_util.hpp"

using namespace hanet;
using namespace hanet::core;
using hanet::testing::probe_loss;
using hanet::testing::random_tensor;

namespace {

Var seq(std::vector<double> v) {
  const std::size_t n = v.size();
  return constant(Tensor({1, 1, n}, std::move(v)));
}

Var kernel1(std::vector<double> k) {
  const std::size_t n = k.size();
  return constant(Tensor({1, 1, n}, std::move(k)));
}

// Checks a primitive over `trials` random instances. `build` gets the rng and
// returns (loss_fn, leaves).
template <typename Build>
void check_primitive(const char* what, Build build, int trials = 100, double tol = 1e-4) {
  Rng rng(std::hash<std::string>{}(what));
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto [fn, leaves] = build(rng);
    auto report = gradcheck(fn, leaves, {1e-5, tol, 1e-6});
    worst = std::max(worst, report.max_rel_error);
    REQUIRE_MESSAGE(report.finite, what);
  }
  INFO(what << " worst relative error " << worst);
  CHECK(worst < tol);
}

}  // namespace

TEST_CASE("conv1d examples") {
  auto x = seq({1, 2, 3});
  auto zero_bias = constant(Tensor({1}, 0.0));
  CHECK(conv1d(x, kernel1({0, 1, 0}), zero_bias).value().storage() == std::vector<double>{1, 2, 3});
  CHECK(conv1d(x, kernel1({1, 1, 1}), zero_bias).value().storage() == std::vector<double>{3, 6, 5});
  const Tensor y = conv1d(x, kernel1({0, 0, 0}), constant(Tensor({1}, 2.5))).value();
  for (double v : y.values()) CHECK(v == 2.5);
}

TEST_CASE("conv1d rejects channel mismatch") {
  auto x = constant(Tensor({1, 2, 4}));
  auto k = constant(Tensor({3, 1, 3}));
  CHECK_THROWS_AS(conv1d(x, k, constant(Tensor({3}))), ShapeError);
}

TEST_CASE("conv1d is linear in its input") {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    auto k = constant(random_tensor({3, 2, 3}, rng));
    auto b = constant(Tensor({3}, 0.0));
    Tensor x = random_tensor({1, 2, 9}, rng), y = random_tensor({1, 2, 9}, rng);
    const double a = rng.normal(), c = rng.normal();
    Tensor mix = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + c * y[i];
    auto lhs = conv1d(constant(mix), k, b).value();
    auto cx = conv1d(constant(x), k, b).value();
    auto cy = conv1d(constant(y), k, b).value();
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - (a * cx[i] + c * cy[i])) < 1e-10);
  }
}

TEST_CASE("pool_width examples") {
  auto constant_map = constant(Tensor({1, 2, 3, 4}, 1.75));
  for (auto mode : {PoolMode::Avg, PoolMode::Max}) {
    const Tensor pooled = pool_width(constant_map, mode).value();
    for (double v : pooled.values()) CHECK(v == 1.75);
  }
  auto row = constant(Tensor({1, 1, 1, 4}, {1, 2, 3, 4}));
  CHECK(pool_width(row, PoolMode::Avg).value()[0] == 2.5);
  CHECK(pool_width(row, PoolMode::Max).value()[0] == 4.0);
}

TEST_CASE("pool_width avg matches scalar-loop oracle and a uniform matrix product") {
  Rng rng(11);
  Tensor x = random_tensor({1, 2, 3, 5}, rng);
  Tensor got = pool_width(constant(x), PoolMode::Avg).value();
  REQUIRE(got.shape() == Shape{1, 2, 3, 1});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t h = 0; h < 3; ++h) {
      double s = 0.0;
      for (std::size_t w = 0; w < 5; ++w) s += x.at({0, c, h, w});
      CHECK(got.at({0, c, h, 0}) == doctest::Approx(s / 5.0).epsilon(1e-15));
      // (x row) . (1/W ... 1/W)
      double dot = 0.0;
      for (std::size_t w = 0; w < 5; ++w) dot += x.at({0, c, h, w}) * (1.0 / 5.0);
      CHECK(std::abs(got.at({0, c, h, 0}) - dot) < 1e-12);
    }
}

TEST_CASE("resample_height examples") {
  auto down = resample_height(constant(Tensor({1, 4}, {0, 1, 2, 3})), 2).value();
  CHECK(down.storage() == std::vector<double>{0.5, 2.5});

  // Align-to-centers: source positions -0.25, 0.25, 0.75, 1.25 clamped to [0, 1].
  auto up = resample_height(constant(Tensor({1, 2}, {0, 1})), 4).value();
  const std::vector<double> golden{0.0, 0.25, 0.75, 1.0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(up[i] == doctest::Approx(golden[i]).epsilon(1e-15));
  for (std::size_t i = 1; i < 4; ++i) CHECK(up[i] >= up[i - 1]);

  Rng rng(3);
  Tensor x = random_tensor({2, 3, 7}, rng);
  CHECK(resample_height(constant(x), 7).value() == x);
}

TEST_CASE("adaptive average map covers uneven splits") {
  // 5 rows into 3: [0,2), [1,4), [3,5)
  auto map = adaptive_average_map(5, 3);
  REQUIRE(map.taps.size() == 3);
  CHECK(map.taps[0].size() == 2);
  CHECK(map.taps[1].size() == 3);
  CHECK(map.taps[1].front().first == 1);
  CHECK(map.taps[2].front().first == 3);
}

TEST_CASE("resample down then up preserves a constant tensor") {
  for (std::size_t h : {3u, 8u, 13u, 32u}) {
    for (std::size_t target : {1u, 2u, 5u, 16u}) {
      if (target > h) continue;
      Tensor x({2, 4, h}, 0.3);
      auto back = resample_height(resample_height(constant(x), target), h).value();
      for (double v : back.values()) CHECK(v == 0.3);
    }
  }
}

TEST_CASE("activation ranges and dropout eval identity") {
  Rng rng(5);
  Tensor x = random_tensor({4, 50}, rng, 30.0);
  const Tensor s = sigmoid(constant(x)).value();
  const Tensor r = relu(constant(x)).value();
  for (double v : s.values()) CHECK((v > 0.0 && v < 1.0));
  for (double v : r.values()) CHECK(v >= 0.0);
  Rng drop(1);
  CHECK(dropout(constant(x), 0.5, Mode::Eval, drop).value() == x);
}

TEST_CASE("dropout scales kept entries") {
  Rng rng(2);
  Tensor x({1, 1000}, 1.0);
  auto y = dropout(constant(x), 0.25, Mode::Train, rng).value();
  std::size_t kept = 0;
  for (double v : y.values()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    kept += v != 0.0;
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
}

TEST_CASE("gradcheck trivial functions") {
  auto theta = leaf(Tensor({1}, 3.0));
  auto report = gradcheck([&] { return mul(theta, theta); }, {{"theta", theta}});
  CHECK(report.passed);
  CHECK(theta.grad()[0] == 6.0);
  CHECK(report.entries[0].max_abs_error < 1e-8);

  auto p = leaf(Tensor({3}, {1.0, -2.0, 0.5}));
  auto flat = gradcheck([&] { return constant(Tensor({1}, 4.0)); }, {{"p", p}});
  CHECK(flat.passed);
  CHECK(!p.has_grad());
  CHECK(flat.max_rel_error == 0.0);
}

TEST_CASE("gradcheck kink exclusion") {
  Rng rng(8);
  Tensor t({200});
  for (auto& v : t.storage()) v = rng.uniform(0.1, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  t[7] = 3e-6;  // inside the +-1e-5 stencil of relu's kink
  auto theta = leaf(t);
  auto loss = [&] { return sum(relu(theta)); };

  auto strict = gradcheck(loss, {{"theta", theta}});
  CHECK_FALSE(strict.passed);
  CHECK(strict.entries[0].worst_index == 7);

  GradcheckOptions opts;
  opts.kink_ratio = 1.0;
  auto lenient = gradcheck(loss, {{"theta", theta}}, opts);
  CHECK(lenient.passed);
  CHECK(lenient.kinks == 1);
  CHECK(lenient.checked == 200);

  // two kinks out of two entries is over the allowed fraction
  auto pair = leaf(Tensor({2}, {3e-6, -4e-6}));
  auto both = gradcheck([&] { return sum(relu(pair)); }, {{"pair", pair}}, opts);
  CHECK_FALSE(both.passed);
  CHECK(both.kinks == 2);
}

TEST_CASE("gradcheck kink exclusion does not hide a wrong smooth gradient") {
  // y = x^2 with a backward that is off by 0.05%
  auto x = leaf(Tensor({4}, {0.5, -1.0, 2.0, 0.25}));
  auto bad_square = [&] {
    Tensor out = x.value();
    for (auto& v : out.storage()) v *= v;
    return sum(make_result(std::move(out), {x}, [](Node& self) {
      Tensor& g = self.parents[0]->grad_buffer();
      const Tensor& in = self.parents[0]->value;
      for (std::size_t i = 0; i < in.size(); ++i) g[i] += self.grad[i] * 2.001 * in[i];
    }));
  };
  GradcheckOptions opts;
  opts.kink_ratio = 1.0;
  auto report = gradcheck(bad_square, {{"x", x}}, opts);
  CHECK_FALSE(report.passed);
  CHECK(report.kinks == 0);
  CHECK(report.max_rel_error == doctest::Approx(0.0005).epsilon(0.01));
}

TEST_CASE("gradcheck with a large epsilon fails on a smooth cubic") {
  auto x = leaf(Tensor({3}, {0.5, -1.0, 2.0}));
  GradcheckOptions opts;
  opts.epsilon = 1e-1;
  opts.kink_ratio = 1.0;
  auto report = gradcheck([&] { return sum(mul(mul(x, x), x)); }, {{"x", x}}, opts);
  CHECK_FALSE(report.passed);
  CHECK(!report.diagnostic.empty());
}

TEST_CASE("gradcheck reports a non-finite loss") {
  auto p = leaf(Tensor({1}, 1.0));
  auto report = gradcheck([&] { return scale(p, std::nan("")); }, {{"p", p}});
  CHECK_FALSE(report.passed);
  CHECK_FALSE(report.finite);
  CHECK(!report.diagnostic.empty());
}

TEST_CASE("primitive gradients match central differences") {
  using Leaves = std::vector<NamedVar>;
  using Fn = std::function<Var()>;

  check_primitive("relu", [](Rng& rng) {
    auto x = leaf(random_tensor({2, 3, 4}, rng));
    auto w = random_tensor({2, 3, 4}, rng);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(relu(x), w); }, {{"x", x}}};
  });
  check_primitive("sigmoid", [](Rng& rng) {
    auto x = leaf(random_tensor({2, 3, 4}, rng, 3.0));
    auto w = random_tensor({2, 3, 4}, rng);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(sigmoid(x), w); }, {{"x", x}}};
  });
  check_primitive("add_mul", [](Rng& rng) {
    auto a = leaf(random_tensor({3, 5}, rng));
    auto b = leaf(random_tensor({3, 5}, rng));
    auto w = random_tensor({3, 5}, rng);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(mul(add(a, b), b), w); }, {{"a", a}, {"b", b}}};
  });
  check_primitive("gate_rows", [](Rng& rng) {
    auto g = leaf(random_tensor({2, 3, 4}, rng));
    auto x = leaf(random_tensor({2, 3, 4, 5}, rng));
    auto w = random_tensor({2, 3, 4, 5}, rng);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(gate_rows(g, x), w); }, {{"gate", g}, {"x", x}}};
  });
  check_primitive("conv1d", [](Rng& rng) {
    const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform_int(0, 8));
    auto x = leaf(random_tensor({2, 3, len}, rng));
    auto k = leaf(random_tensor({4, 3, 3}, rng));
    auto b = leaf(random_tensor({4}, rng));
    auto w = random_tensor({2, 4, len}, rng);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(conv1d(x, k, b), w); }, {{"x", x}, {"k", k}, {"b", b}}};
  });
  check_primitive("conv2d_strided_dilated", [](Rng& rng) {
    const std::size_t stride = 1 + static_cast<std::size_t>(rng.uniform_int(0, 1));
    const std::size_t dil = 1 + static_cast<std::size_t>(rng.uniform_int(0, 1));
    auto x = leaf(random_tensor({2, 2, 6, 5}, rng));
    auto k = leaf(random_tensor({3, 2, 3, 3}, rng));
    auto b = leaf(random_tensor({3}, rng));
    Conv2dOptions opts{stride, dil};
    const auto shape = conv2d(x, k, b, opts).shape();
    auto w = random_tensor(shape, rng);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(conv2d(x, k, b, opts), w); },
                                 {{"x", x}, {"k", k}, {"b", b}}};
  }, 30);
  check_primitive("pool_width", [](Rng& rng) {
    auto x = leaf(random_tensor({2, 3, 4, 5}, rng));
    auto w = random_tensor({2, 3, 4, 1}, rng);
    const auto mode = rng.bernoulli(0.5) ? PoolMode::Avg : PoolMode::Max;
    return std::pair<Fn, Leaves>{[=] { return probe_loss(pool_width(x, mode), w); }, {{"x", x}}};
  });
  check_primitive("resample_height", [](Rng& rng) {
    const std::size_t h = 1 + static_cast<std::size_t>(rng.uniform_int(0, 9));
    const std::size_t t = 1 + static_cast<std::size_t>(rng.uniform_int(0, 9));
    auto x = leaf(random_tensor({2, 3, h}, rng));
    auto w = random_tensor({2, 3, t}, rng);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(resample_height(x, t), w); }, {{"x", x}}};
  });
  check_primitive("upsample_bilinear", [](Rng& rng) {
    auto x = leaf(random_tensor({1, 2, 3, 4}, rng));
    auto w = random_tensor({1, 2, 6, 8}, rng);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(upsample_bilinear(x, 6, 8), w); }, {{"x", x}}};
  });
  check_primitive("concat_channels", [](Rng& rng) {
    auto a = leaf(random_tensor({2, 1, 3, 3}, rng));
    auto b = leaf(random_tensor({2, 2, 3, 3}, rng));
    auto w = random_tensor({2, 3, 3, 3}, rng);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(concat_channels({a, b}), w); }, {{"a", a}, {"b", b}}};
  });
  check_primitive("batch_norm_train", [](Rng& rng) {
    auto x = leaf(random_tensor({2, 3, 4}, rng));
    auto g = leaf(random_tensor({3}, rng));
    auto b = leaf(random_tensor({3}, rng));
    auto w = random_tensor({2, 3, 4}, rng);
    auto state = std::make_shared<BatchNormState>(3);
    return std::pair<Fn, Leaves>{[=] { return probe_loss(batch_norm(x, g, b, *state, Mode::Train), w); },
                                 {{"x", x}, {"gamma", g}, {"beta", b}}};
  });
  check_primitive("batch_norm_eval", [](Rng& rng) {
    auto x = leaf(random_tensor({2, 3, 4}, rng));
    auto g = leaf(random_tensor({3}, rng));
    auto b = leaf(random_tensor({3}, rng));
    auto w = random_tensor({2, 3, 4}, rng);
    auto state = std::make_shared<BatchNormState>(3);
    state->running_mean = random_tensor({3}, rng);
    for (std::size_t i = 0; i < 3; ++i) state->running_var[i] = 0.5 + rng.uniform();
    return std::pair<Fn, Leaves>{[=] { return probe_loss(batch_norm(x, g, b, *state, Mode::Eval), w); },
                                 {{"x", x}, {"gamma", g}, {"beta", b}}};
  });
  check_primitive("dropout_fixed_mask", [](Rng& rng) {
    auto x = leaf(random_tensor({3, 6}, rng));
    auto w = random_tensor({3, 6}, rng);
    const auto seed = rng.engine()();
    return std::pair<Fn, Leaves>{[=] {
                                   Rng mask(seed);
                                   return probe_loss(dropout(x, 0.3, Mode::Train, mask), w);
                                 },
                                 {{"x", x}}};
  });
  check_primitive("softmax_cross_entropy", [](Rng& rng) {
    auto z = leaf(random_tensor({2, 4, 3, 3}, rng));
    std::vector<std::uint8_t> labels(18);
    for (auto& l : labels) l = rng.bernoulli(0.2) ? kIgnoreLabel : static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    return std::pair<Fn, Leaves>{[=] { return softmax_cross_entropy(z, labels); }, {{"logits", z}}};
  });
  check_primitive("mean_square_error", [](Rng& rng) {
    auto x = leaf(random_tensor({3, 4}, rng));
    auto target = random_tensor({3, 4}, rng);
    return std::pair<Fn, Leaves>{[=] { return mean_square_error(x, target); }, {{"x", x}}};
  });
}

TEST_CASE("softmax cross entropy ignores sentinel pixels") {
  auto z = leaf(Tensor({1, 2, 1, 2}, {0.0, 5.0, 0.0, -5.0}));
  std::vector<std::uint8_t> labels{0, kIgnoreLabel};
  auto loss = softmax_cross_entropy(z, labels);
  CHECK(loss.value()[0] == doctest::Approx(std::log(2.0)));
  backward(loss);
  CHECK(z.grad().at({0, 0, 0, 1}) == 0.0);
  CHECK(z.grad().at({0, 1, 0, 1}) == 0.0);
  std::vector<std::uint8_t> bad{0, 7};
  CHECK_THROWS_AS(softmax_cross_entropy(z, bad), DataError);
}

TEST_CASE("SGD momentum applies per-group weight decay") {
  auto a = leaf(Tensor({1}, 1.0));
  auto b = leaf(Tensor({1}, 1.0));
  SgdMomentum opt({{"main", {a}, 5e-4}, {"hanet", {b}, 1e-4}}, 0.9);
  opt.step(0.1);
  CHECK(a.value()[0] == doctest::Approx(1.0 - 0.1 * 5e-4));
  CHECK(b.value()[0] == doctest::Approx(1.0 - 0.1 * 1e-4));
  CHECK(opt.groups()[0].weight_decay == 5e-4);
  CHECK(opt.groups()[1].weight_decay == 1e-4);

  // second step with a gradient: v = 0.9 v + g + wd*theta
  auto loss = mul(a, constant(Tensor({1}, 2.0)));
  backward(loss);
  const double theta = a.value()[0];
  const double v1 = 5e-4;
  const double v2 = 0.9 * v1 + 2.0 + 5e-4 * theta;
  opt.step(0.1);
  CHECK(a.value()[0] == doctest::Approx(theta - 0.1 * v2));
}

TEST_CASE("poly learning rate") {
  CHECK(poly_lr(1e-2, 0, 100, 0.9) == 1e-2);
  CHECK(poly_lr(1e-2, 100, 100, 0.9) == 0.0);
  CHECK(poly_lr(1e-2, 50, 100, 0.9) == doctest::Approx(1e-2 * std::pow(0.5, 0.9)));
  CHECK(poly_lr(1e-2, 50, 100, 0.9) == doctest::Approx(5.359e-3).epsilon(1e-4));
  CHECK_THROWS_AS(poly_lr(1e-2, 101, 100, 0.9), ConfigError);
}

TEST_CASE("tensor shape validation") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1}), ShapeError);
  CHECK_THROWS_AS(add(constant(Tensor({2})), constant(Tensor({3}))), ShapeError);
}
