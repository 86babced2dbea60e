#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hanet/attention.hpp"
#include "hanet/config.hpp"

namespace hanet::toyseg {

using core::Mode;
using core::Var;

enum class Layer { L1 = 1, L2, L3, L4, L5 };

constexpr std::array<Layer, 5> kAllLayers{Layer::L1, Layer::L2, Layer::L3, Layer::L4, Layer::L5};

std::string to_string(Layer layer);
Layer parse_layer(const std::string& text);
// "L1,L2" / "none" / "" -> set of layers.
std::set<Layer> parse_layers(const std::string& text);
std::string format_layers(const std::set<Layer>& layers);

// Template for every attached HANet; channel counts are filled in per layer.
struct ToySegConfig {
  std::size_t in_channels = 3;
  std::size_t num_classes = 6;
  std::size_t width_low = 8;      // stride-2 encoder output
  std::size_t width_high = 16;    // stride-4 encoder output
  std::size_t width_context = 8;  // per dilation branch and after projection
  std::size_t width_decoder = 16;
  std::set<Layer> hanet_layers;
  attention::HANetConfig hanet;
  bool hanet_zero_init = false;  // zero the last attention conv, so every gate starts at 0.5
  std::uint64_t seed = 0;

  static constexpr std::size_t kStride = 4;

  void validate() const;
  // HANet configuration used at `layer` (C_l and C_h resolved).
  attention::HANetConfig hanet_config(Layer layer) const;

  static ToySegConfig from(const RunConfig& run);
  // Writes the model.*, hanet.* and seed keys of `run`.
  void store(RunConfig& run) const;
};

struct ToySegModel {
  ToySegConfig config;
  core::Conv2dParams enc1, enc2;
  std::array<core::Conv2dParams, 3> context;  // dilations 1, 2, 4
  core::Conv2dParams project;                 // 1x1 fuse of the branches
  core::Conv2dParams decoder;
  core::Conv2dParams pre_classifier;
  core::Conv2dParams classifier;  // 1x1
  std::map<Layer, attention::HANetParams> hanets;

  static ToySegModel build(const ToySegConfig& config);

  // Main network first, then each HANet under "hanet.Lk.".
  std::vector<core::NamedVar> parameters() const;
  std::vector<core::NamedVar> main_parameters() const;
  std::vector<core::NamedVar> hanet_parameters() const;
  std::vector<std::pair<std::string, core::Tensor*>> buffers();
  std::size_t parameter_count() const;
};

struct ForwardResult {
  Var logits;  // N x K x H x W
  std::map<Layer, attention::HANetOutput> attention;
};

// images: N x C_in x H x W with H, W divisible by the encoder stride. Train
// mode consumes `rng` for HANet dropout and position jitter, one child stream
// per layer.
ForwardResult forward(ToySegModel& model, const Var& images, Mode mode, core::Rng& rng);

}  // namespace hanet::toyseg
