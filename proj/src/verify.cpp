#include "hanet/verify.hpp"

#include <cstdio>
#include <sstream>

#include "hanet/toyseg/model.hpp"

namespace hanet::verify {

using core::Tensor;
using core::Var;

namespace {

Tensor gaussian(core::Shape shape, core::Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

template <typename T>
const T& pick(core::Rng& rng, std::initializer_list<T> options) {
  return options.begin()[rng.uniform_int(0, static_cast<long>(options.size()) - 1)];
}

void add_case(SuiteResult& suite, std::string label, core::GradcheckReport report) {
  suite.max_rel_error = std::max(suite.max_rel_error, report.max_rel_error);
  suite.passed = suite.passed && report.passed;
  suite.cases.push_back({std::move(label), std::move(report)});
}

}  // namespace

SuiteResult hanet_suite(std::uint64_t seed, std::size_t count, const core::GradcheckOptions& opts) {
  SuiteResult suite;
  const core::Rng root(seed);
  for (std::size_t i = 0; i < count; ++i) {
    core::Rng rng = root.child(static_cast<std::uint64_t>(i));
    attention::HANetConfig cfg;
    cfg.in_channels = pick<std::size_t>(rng, {4, 8, 16});
    cfg.reduction = pick<std::size_t>(rng, {2, 4});
    cfg.coarse_height = pick<std::size_t>(rng, {2, 4, 8});
    cfg.pe_mode = pick(rng, {posenc::PeMode::None, posenc::PeMode::Sinusoidal, posenc::PeMode::Learnable});
    cfg.out_channels = pick<std::size_t>(rng, {3, 4, 8});
    cfg.pe_layer = static_cast<std::size_t>(rng.uniform_int(1, 3));
    // a one-channel sinusoidal table is undefined; move it to the wider conv3 input
    if (cfg.pe_mode == posenc::PeMode::Sinusoidal && cfg.pe_channels() < 2) cfg.pe_layer = 3;
    cfg.pool = pick(rng, {core::PoolMode::Avg, core::PoolMode::Max});
    const auto mode = pick(rng, {core::Mode::Train, core::Mode::Eval});
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 2));
    const std::size_t h_l = cfg.coarse_height + static_cast<std::size_t>(rng.uniform_int(0, 6));
    const std::size_t h_h = cfg.coarse_height + static_cast<std::size_t>(rng.uniform_int(0, 6));
    const std::size_t w = static_cast<std::size_t>(rng.uniform_int(1, 5));

    auto params = attention::HANetParams::init(cfg, rng);
    if (mode == core::Mode::Eval) {
      // non-trivial running statistics
      for (auto& [name, t] : params.buffers()) {
        for (auto& v : t->values()) v = name.find("var") != std::string::npos ? rng.uniform(0.5, 2.0) : rng.normal(0.0, 0.3);
      }
    }
    Var x_l = core::leaf(gaussian({n, cfg.in_channels, h_l, w}, rng));
    Var x_h = core::leaf(gaussian({n, cfg.out_channels, h_h, w}, rng));
    const Tensor probe = gaussian({n, cfg.out_channels, h_h, w}, rng);
    const std::uint64_t forward_seed = rng.child("forward").seed();
    auto loss = [&] {
      core::Rng r(forward_seed);
      auto out = attention::forward(x_l, x_h, params, cfg, mode, r);
      return core::sum(core::mul(out.output, core::constant(probe)));
    };
    auto named = params.parameters();
    named.emplace_back("x_l", x_l);
    named.emplace_back("x_h", x_h);

    char label[160];
    std::snprintf(label, sizeof(label), "C_l=%zu C_h=%zu r=%zu H_hat=%zu pe=%s@%zu pool=%s %s input %zux%zux%zu/%zu",
                  cfg.in_channels, cfg.out_channels, cfg.reduction, cfg.coarse_height,
                  posenc::to_string(cfg.pe_mode).c_str(), cfg.pe_layer, attention::to_string(cfg.pool).c_str(),
                  mode == core::Mode::Train ? "train" : "eval", n, h_l, w, h_h);
    add_case(suite, label, core::gradcheck(loss, named, opts));
  }
  return suite;
}

SuiteResult model_suite(std::uint64_t seed, const core::GradcheckOptions& opts) {
  SuiteResult suite;
  toyseg::ToySegConfig cfg;
  cfg.num_classes = 4;
  cfg.width_low = 4;
  cfg.width_high = 8;
  cfg.width_context = 4;
  cfg.width_decoder = 8;
  cfg.hanet.coarse_height = 4;
  cfg.hanet.reduction = 2;
  cfg.seed = seed;
  for (const auto& layers : {std::set<toyseg::Layer>{}, std::set<toyseg::Layer>(toyseg::kAllLayers.begin(), toyseg::kAllLayers.end())}) {
    cfg.hanet_layers = layers;
    auto model = toyseg::ToySegModel::build(cfg);
    core::Rng rng = core::Rng(seed).child("model-input");
    Var x = core::constant(gaussian({2, 3, 16, 16}, rng));
    std::vector<std::uint8_t> labels(2 * 16 * 16);
    for (auto& v : labels) v = rng.bernoulli(0.05) ? 255 : static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    auto loss = [&] {
      core::Rng r(seed);
      return core::softmax_cross_entropy(toyseg::forward(model, x, core::Mode::Train, r).logits, labels);
    };
    add_case(suite, "toy model layers=" + toyseg::format_layers(layers) + " input 2x3x16x16",
             core::gradcheck(loss, model.parameters(), opts));
  }
  return suite;
}

std::string format_suite(const std::string& title, const SuiteResult& suite, double tolerance) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%s: %zu cases, max relative error %.3e (tolerance %.1e) %s\n", title.c_str(),
                suite.cases.size(), suite.max_rel_error, tolerance, suite.passed ? "PASS" : "FAIL");
  out << line;
  for (const auto& c : suite.cases) {
    std::snprintf(line, sizeof(line), "  %-4s %.3e  %s\n", c.report.passed ? "ok" : "FAIL", c.report.max_rel_error,
                  c.label.c_str());
    out << line;
    if (!c.report.passed && !c.report.diagnostic.empty()) out << "       " << c.report.diagnostic << "\n";
  }
  return out.str();
}

}  // namespace hanet::verify
