#include <algorithm>
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "hanet/attention.hpp"
#include "hanet/core/errors.hpp"
#include "test_util.hpp"

using namespace hanet;
using namespace hanet::core;
using namespace hanet::attention;
using hanet::testing::probe_loss;
using hanet::testing::random_tensor;

namespace {

HANetConfig small_config(std::size_t cl = 8, std::size_t ch = 16, std::size_t h_hat = 4, std::size_t r = 2,
                         PeMode pe = PeMode::Sinusoidal) {
  HANetConfig c;
  c.in_channels = cl;
  c.out_channels = ch;
  c.coarse_height = h_hat;
  c.reduction = r;
  c.pe_mode = pe;
  return c;
}

void zero_all(HANetParams& p) {
  for (auto& [name, v] : p.parameters()) Var(v).mutable_value().fill(0.0);
}

// Gives the batch-norm layers non-trivial affine and running statistics.
void randomize_norms(HANetParams& p, Rng& rng) {
  for (auto* bn : {&p.norm1, &p.norm2}) {
    for (auto& v : bn->gamma.mutable_value().storage()) v = 0.5 + rng.uniform();
    for (auto& v : bn->beta.mutable_value().storage()) v = rng.normal(0.0, 0.3);
    for (auto& v : bn->state.running_mean.storage()) v = rng.normal(0.0, 0.3);
    for (auto& v : bn->state.running_var.storage()) v = 0.5 + rng.uniform();
  }
}

}  // namespace

TEST_CASE("config validation") {
  auto c = small_config(8, 8, 4, 16);
  CHECK_THROWS_AS(c.validate(), ConfigError);  // 8 / 16 == 0
  c = small_config();
  c.pe_layer = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.coarse_height = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(4, 4, 4, 4);  // one reduced channel cannot carry a sinusoid at layer 2
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.pe_mode = PeMode::None;
  CHECK_NOTHROW(c.validate());
  CHECK(HANetConfig{}.coarse_height == 16);
  CHECK(HANetConfig{}.reduction == 32);
  CHECK(HANetConfig{}.pe_layer == 2);
  CHECK(HANetConfig{}.jitter_max == 2);
}

TEST_CASE("width_pool examples") {
  const Tensor c = width_pool(constant(Tensor({1, 3, 4, 5}, -0.75)), PoolMode::Avg).value();
  for (double v : c.values()) CHECK(v == -0.75);

  Tensor rows({1, 2, 4, 3});
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 3; ++w) rows.at({0, ch, h, w}) = static_cast<double>(h);
  const Tensor z = width_pool(constant(rows), PoolMode::Avg).value();
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t h = 0; h < 4; ++h) CHECK(z.at({0, ch, h}) == static_cast<double>(h));

  Rng rng(1);
  Tensor x = random_tensor({2, 3, 6, 7}, rng);
  for (auto mode : {PoolMode::Avg, PoolMode::Max}) {
    const Tensor a = width_pool(constant(x), mode).value();
    const Tensor b = pool_width(constant(x), mode).value();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("coarsen examples") {
  Rng rng(2);
  Tensor z = random_tensor({1, 3, 16}, rng);
  CHECK(coarsen(constant(z), 16).value() == z);

  Tensor ramp({1, 2, 4}, {0, 1, 2, 3, 0, 1, 2, 3});
  CHECK(coarsen(constant(ramp), 2).value().storage() == std::vector<double>{0.5, 2.5, 0.5, 2.5});

  // scalar-loop adaptive pooling oracle
  Tensor big = random_tensor({1, 8, 32}, rng);
  for (std::size_t target : {1u, 5u, 7u, 16u, 32u}) {
    const Tensor got = coarsen(constant(big), target).value();
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t j = 0; j < target; ++j) {
        const std::size_t lo = (j * 32) / target;
        const std::size_t hi = ((j + 1) * 32 + target - 1) / target;
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += big.at({0, c, i});
        CHECK(std::abs(got.at({0, c, j}) - s / static_cast<double>(hi - lo)) < 1e-12);
      }
  }
  CHECK_THROWS_AS(coarsen(constant(big), 33), ConfigError);
}

TEST_CASE("attention from zero parameters is one half") {
  auto config = small_config(8, 6, 4, 2, PeMode::None);
  Rng rng(3);
  auto params = HANetParams::init(config, rng);
  zero_all(params);
  Rng fwd(0);
  const Tensor a = attention_from_context(constant(random_tensor({2, 8, 4}, rng)), params, config, Mode::Eval, fwd).value();
  REQUIRE(a.shape() == Shape{2, 6, 4});
  for (double v : a.values()) CHECK(v == 0.5);
}

// Receptive-field radius of the three K=3 convs.
constexpr std::size_t kRadius = 3;

TEST_CASE("constant context without encoding gives identical interior rows") {
  auto config = small_config(8, 6, 12, 2, PeMode::None);
  Rng rng(4);
  auto params = HANetParams::init(config, rng);
  randomize_norms(params, rng);
  Tensor z({1, 8, 12});
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t p = 0; p < 12; ++p) z.at({0, c, p}) = 0.1 * static_cast<double>(c) - 0.3;
  Rng fwd(0);
  const Tensor a = attention_from_context(constant(z), params, config, Mode::Eval, fwd).value();
  // Rows whose receptive field stays inside the map see a translation-invariant
  // input; the zero padding makes the outer kRadius rows differ.
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t p = kRadius; p + kRadius < 12; ++p) CHECK(a.at({0, c, p}) == a.at({0, c, kRadius}));
  bool border_differs = false;
  for (std::size_t c = 0; c < 6; ++c) border_differs |= a.at({0, c, 0}) != a.at({0, c, kRadius});
  CHECK(border_differs);
}

TEST_CASE("sinusoidal encoding breaks row symmetry") {
  auto config = small_config(8, 6, 12, 2, PeMode::Sinusoidal);
  Rng rng(5);
  auto params = HANetParams::init(config, rng);
  randomize_norms(params, rng);
  Tensor xl({1, 8, 24, 5});
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t h = 0; h < 24; ++h)
      for (std::size_t w = 0; w < 5; ++w) xl.at({0, c, h, w}) = 0.2 * static_cast<double>(c) - 0.1 * static_cast<double>(w);
  Rng fwd(0);
  auto out = forward(constant(xl), constant(Tensor({1, 6, 24, 5}, 1.0)), params, config, Mode::Eval, fwd);
  const Tensor& a = out.attention.value();
  bool differs = false;
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t h = 2 * kRadius + 1; h + 2 * kRadius + 1 < 24; ++h) differs |= a.at({0, c, h}) != a.at({0, c, 2 * kRadius + 1});
  CHECK(differs);

  config.pe_mode = PeMode::None;
  params.pe_table.reset();
  const Tensor flat = forward(constant(xl), constant(Tensor({1, 6, 24, 5}, 1.0)), params, config, Mode::Eval, fwd)
                          .attention.value();
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t h = 2 * kRadius + 1; h + 2 * kRadius + 1 < 24; ++h) CHECK(flat.at({0, c, h}) == flat.at({0, c, 2 * kRadius + 1}));
}

TEST_CASE("attention_from_context equals the composed primitives") {
  for (std::size_t pe_layer : {1u, 2u, 3u}) {
    auto config = small_config(8, 5, 6, 2, PeMode::Sinusoidal);
    config.pe_layer = pe_layer;
    Rng rng(100 + pe_layer);
    auto params = HANetParams::init(config, rng);
    randomize_norms(params, rng);
    Tensor z = random_tensor({2, 8, 6}, rng);

    for (auto mode : {Mode::Eval, Mode::Train}) {
      auto p1 = params;  // batch-norm state is copied, so each route updates its own
      auto p2 = params;
      Rng r1(77), r2(77);
      const Tensor got = attention_from_context(constant(z), p1, config, mode, r1).value();

      Var q = dropout(constant(z), config.dropout_p, mode, r2);
      std::vector<std::vector<std::size_t>> pos;
      if (mode == Mode::Train) {
        pos = {posenc::jitter(6, 2, r2), posenc::jitter(6, 2, r2)};
      } else {
        pos = {posenc::identity_positions(6)};
      }
      auto pe = [&](Var v) { return posenc::inject(v, *p2.pe_table, pos); };
      if (pe_layer == 1) q = pe(q);
      q = relu(batch_norm(conv1d(q, p2.conv1.kernel, p2.conv1.bias), p2.norm1.gamma, p2.norm1.beta, p2.norm1.state, mode));
      if (pe_layer == 2) q = pe(q);
      q = relu(batch_norm(conv1d(q, p2.conv2.kernel, p2.conv2.bias), p2.norm2.gamma, p2.norm2.beta, p2.norm2.state, mode));
      if (pe_layer == 3) q = pe(q);
      const Tensor want = sigmoid(conv1d(q, p2.conv3.kernel, p2.conv3.bias)).value();
      CHECK(got == want);
    }
  }
}

TEST_CASE("attention_from_context frozen golden values") {
  // Eval mode, default pe_layer 2, seed 2020. Values recorded from the
  // composed-primitive route above.
  auto config = small_config(8, 4, 5, 2, PeMode::Sinusoidal);
  Rng rng(2020);
  auto params = HANetParams::init(config, rng);
  randomize_norms(params, rng);
  Tensor z = random_tensor({1, 8, 5}, rng);
  Rng fwd(0);
  const Tensor a = attention_from_context(constant(z), params, config, Mode::Eval, fwd).value();
  const double golden[3] = {0.5047158938145514, 0.53386449586204776, 0.53754612742709673};
  CHECK(a.at({0, 0, 0}) == doctest::Approx(golden[0]).epsilon(1e-12));
  CHECK(a.at({0, 1, 2}) == doctest::Approx(golden[1]).epsilon(1e-12));
  CHECK(a.at({0, 3, 4}) == doctest::Approx(golden[2]).epsilon(1e-12));
}

TEST_CASE("expand_attention examples") {
  Rng rng(8);
  Tensor a = random_tensor({1, 3, 4}, rng);
  CHECK(expand_attention(constant(a), 4).value() == a);

  const Tensor flat = expand_attention(constant(Tensor({1, 2, 3}, 0.3)), 11).value();
  for (double v : flat.values()) CHECK(v == 0.3);

  // 2 -> 5 rows: source positions (j + 0.5) * 2/5 - 0.5 clamped to [0, 1]
  // are 0, 0.1, 0.5, 0.9, 1.
  Tensor two({1, 2, 2}, {0.2, 0.8, 0.9, 0.1});
  const Tensor e = expand_attention(constant(two), 5).value();
  const double frac[5] = {0.0, 0.1, 0.5, 0.9, 1.0};
  for (std::size_t c = 0; c < 2; ++c) {
    const double lo = two.at({0, c, 0}), hi = two.at({0, c, 1});
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(e.at({0, c, j}) == doctest::Approx((1.0 - frac[j]) * lo + frac[j] * hi).epsilon(1e-14));
      CHECK(e.at({0, c, j}) >= std::min(lo, hi));
      CHECK(e.at({0, c, j}) <= std::max(lo, hi));
    }
  }
  CHECK_THROWS_AS(expand_attention(constant(a), 3), ShapeError);
}

TEST_CASE("apply examples") {
  Rng rng(9);
  Tensor x = random_tensor({1, 3, 4, 5}, rng);
  CHECK(attention::apply(constant(Tensor({1, 3, 4}, 1.0)), constant(x)).value() == x);
  const Tensor half = attention::apply(constant(Tensor({1, 3, 4}, 0.5)), constant(x)).value();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(half[i] == x[i] / 2.0);

  Tensor a = random_tensor({1, 3, 4}, rng);
  const Tensor y = attention::apply(constant(a), constant(x)).value();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 5; ++w) CHECK(y.at({0, c, h, w}) == a.at({0, c, h}) * x.at({0, c, h, w}));
  CHECK_THROWS_AS(attention::apply(constant(Tensor({1, 2, 4})), constant(x)), ShapeError);
}

TEST_CASE("forward with zero parameters halves the map") {
  auto config = small_config();
  Rng rng(10);
  auto params = HANetParams::init(config, rng);
  zero_all(params);
  Tensor xh = random_tensor({1, 16, 12, 10}, rng);
  for (auto mode : {Mode::Eval, Mode::Train}) {
    Rng fwd(1);
    auto out = forward(constant(random_tensor({1, 8, 12, 10}, rng)), constant(xh), params, config, mode, fwd);
    for (std::size_t i = 0; i < xh.size(); ++i) CHECK(out.output.value()[i] == 0.5 * xh[i]);
  }
}

TEST_CASE("full pipeline gradients match finite differences") {
  for (auto pe : {PeMode::None, PeMode::Sinusoidal, PeMode::Learnable}) {
    auto config = small_config(8, 16, 4, 2, pe);
    Rng rng(11 + static_cast<int>(pe));
    auto params = HANetParams::init(config, rng);
    randomize_norms(params, rng);
    auto xl = leaf(random_tensor({1, 8, 12, 10}, rng));
    auto xh = leaf(random_tensor({1, 16, 12, 10}, rng));
    Tensor target = random_tensor({1, 16, 12, 10}, rng);
    auto leaves = params.parameters();
    leaves.emplace_back("x_l", xl);
    leaves.emplace_back("x_h", xh);
    for (auto mode : {Mode::Train, Mode::Eval}) {
      auto mean_loss = [&] {
        Rng fwd(5);
        return mean(forward(xl, xh, params, config, mode, fwd).output);
      };
      auto mse_loss = [&] {
        Rng fwd(5);
        return mean_square_error(forward(xl, xh, params, config, mode, fwd).output, target);
      };
      auto r1 = gradcheck(mean_loss, leaves);
      auto r2 = gradcheck(mse_loss, leaves);
      INFO(format_report(r2));
      CHECK(r1.max_rel_error < 1e-4);
      CHECK(r2.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("attention ignores column order within rows") {
  for (auto pe : {PeMode::None, PeMode::Sinusoidal}) {
    auto config = small_config(8, 6, 4, 2, pe);
    Rng rng(12);
    auto params = HANetParams::init(config, rng);
    randomize_norms(params, rng);
    Tensor xl = random_tensor({1, 8, 12, 10}, rng);
    Tensor shuffled = xl;
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t h = 0; h < 12; ++h) {
        double* row = shuffled.data() + (c * 12 + h) * 10;
        std::shuffle(row, row + 10, rng.engine());
      }
    Tensor xh = random_tensor({1, 6, 12, 10}, rng);
    Rng f1(3), f2(3);
    auto a = forward(constant(xl), constant(xh), params, config, Mode::Eval, f1).attention.value();
    auto b = forward(constant(shuffled), constant(xh), params, config, Mode::Eval, f2).attention.value();
    CHECK(a == b);
  }
}

TEST_CASE("coarse attention is row-local") {
  auto config = small_config(8, 6, 16, 2, PeMode::Sinusoidal);
  Rng rng(13);
  auto params = HANetParams::init(config, rng);
  randomize_norms(params, rng);
  Tensor xl = random_tensor({1, 8, 32, 6}, rng);
  Tensor xh = random_tensor({1, 6, 32, 6}, rng);
  Rng f(0);
  const Tensor base = forward(constant(xl), constant(xh), params, config, Mode::Eval, f).coarse_attention.value();
  for (std::size_t j : {0u, 5u, 9u, 15u}) {
    Tensor changed = xl;
    // Coarse row j pools input rows 2j and 2j+1.
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t h = 2 * j; h < 2 * j + 2; ++h)
        for (std::size_t w = 0; w < 6; ++w) changed.at({0, c, h, w}) += rng.normal(0.0, 2.0);
    const Tensor a = forward(constant(changed), constant(xh), params, config, Mode::Eval, f).coarse_attention.value();
    bool inside_changed = false;
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t p = 0; p < 16; ++p) {
        const std::size_t dist = p > j ? p - j : j - p;
        if (dist > kRadius) {
          CHECK(a.at({0, c, p}) == base.at({0, c, p}));
        } else {
          inside_changed |= a.at({0, c, p}) != base.at({0, c, p});
        }
      }
    CHECK(inside_changed);
  }
}

TEST_CASE("eval forward is deterministic and train forward is not") {
  auto config = small_config(8, 6, 8, 2, PeMode::Sinusoidal);
  config.dropout_p = 0.3;
  Rng rng(14);
  auto params = HANetParams::init(config, rng);
  Tensor xl = random_tensor({2, 8, 16, 6}, rng), xh = random_tensor({2, 6, 16, 6}, rng);
  Rng f1(1), f2(999);
  auto a = forward(constant(xl), constant(xh), params, config, Mode::Eval, f1);
  auto b = forward(constant(xl), constant(xh), params, config, Mode::Eval, f2);
  CHECK(a.output.value() == b.output.value());
  CHECK(a.attention.value() == b.attention.value());
  auto t1 = forward(constant(xl), constant(xh), params, config, Mode::Train, f1);
  auto t2 = forward(constant(xl), constant(xh), params, config, Mode::Train, f2);
  CHECK_FALSE(t1.attention.value() == t2.attention.value());
}

TEST_CASE("attention stays strictly inside (0,1)") {
  Rng rng(15);
  for (int t = 0; t < 20; ++t) {
    auto config = small_config(8, 6, 4, 2, PeMode::Sinusoidal);
    config.pool = t % 2 ? PoolMode::Max : PoolMode::Avg;
    auto params = HANetParams::init(config, rng);
    for (auto& [name, v] : params.parameters())
      for (auto& x : Var(v).mutable_value().storage()) x = rng.normal(0.0, 10.0);
    Tensor xl = random_tensor({1, 8, 9, 4}, rng, 50.0);
    Rng f(t);
    const Tensor a = forward(constant(xl), constant(Tensor({1, 6, 9, 4}, 1.0)), params, config,
                             t % 3 ? Mode::Train : Mode::Eval, f)
                         .attention.value();
    for (double v : a.values()) CHECK((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("parameter count follows the channel chain") {
  for (auto pe : {PeMode::None, PeMode::Sinusoidal, PeMode::Learnable}) {
    for (std::size_t layer : {1u, 2u, 3u}) {
      auto config = small_config(16, 12, 8, 4, pe);
      config.pe_layer = layer;
      Rng rng(16);
      auto params = HANetParams::init(config, rng);
      CHECK(params.parameter_count() == expected_parameter_count(config));
      CHECK(params.conv1.out_channels() == 4);
      CHECK(params.conv2.out_channels() == 8);
      CHECK(params.conv3.out_channels() == 12);
      if (pe != PeMode::None) CHECK(params.pe_table->channels() == config.pe_channels());
    }
  }
}

TEST_CASE("forward rejects mismatched maps") {
  auto config = small_config();
  Rng rng(17);
  auto params = HANetParams::init(config, rng);
  Rng f(0);
  CHECK_THROWS_AS(forward(constant(Tensor({1, 8, 12, 10})), constant(Tensor({1, 15, 12, 10})), params, config,
                          Mode::Eval, f),
                  ShapeError);
  CHECK_THROWS_AS(forward(constant(Tensor({1, 7, 12, 10})), constant(Tensor({1, 16, 12, 10})), params, config,
                          Mode::Eval, f),
                  ShapeError);
  config.coarse_height = 13;
  auto p13 = HANetParams::init(config, rng);
  CHECK_THROWS_AS(forward(constant(Tensor({1, 8, 12, 10})), constant(Tensor({1, 16, 12, 10})), p13, config,
                          Mode::Eval, f),
                  ConfigError);
}
