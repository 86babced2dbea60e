#include "hanet/toyseg/model.hpp"

#include <cmath>
#include <sstream>

#include "hanet/core/errors.hpp"

namespace hanet::toyseg {

using core::Tensor;

std::string to_string(Layer layer) { return "L" + std::to_string(static_cast<int>(layer)); }

Layer parse_layer(const std::string& text) {
  for (Layer l : kAllLayers) {
    if (text == to_string(l)) return l;
  }
  throw ConfigError("unknown attachment layer '" + text + "' (expected L1..L5)");
}

std::set<Layer> parse_layers(const std::string& text) {
  std::set<Layer> out;
  if (text.empty() || text == "none") return out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.insert(parse_layer(item));
  }
  return out;
}

std::string format_layers(const std::set<Layer>& layers) {
  if (layers.empty()) return "none";
  std::string out;
  for (Layer l : layers) out += (out.empty() ? "" : ",") + to_string(l);
  return out;
}

void ToySegConfig::validate() const {
  if (in_channels == 0 || num_classes < 2 || width_low == 0 || width_high == 0 || width_context == 0 ||
      width_decoder == 0) {
    throw ConfigError("toy model widths must be positive and num_classes >= 2");
  }
  for (Layer l : hanet_layers) hanet_config(l).validate();
}

attention::HANetConfig ToySegConfig::hanet_config(Layer layer) const {
  attention::HANetConfig c = hanet;
  switch (layer) {
    case Layer::L1:
      c.in_channels = width_high;
      c.out_channels = width_high;
      break;
    case Layer::L2:
      c.in_channels = width_high;
      c.out_channels = width_context;
      break;
    case Layer::L3:
      c.in_channels = width_low + width_context;
      c.out_channels = width_decoder;
      break;
    case Layer::L4:
      c.in_channels = width_decoder;
      c.out_channels = width_decoder;
      break;
    case Layer::L5:
      c.in_channels = width_decoder;
      c.out_channels = num_classes;
      break;
  }
  return c;
}

ToySegConfig ToySegConfig::from(const RunConfig& run) {
  ToySegConfig c;
  c.in_channels = run.get_size("model.in_channels");
  c.num_classes = run.get_size("model.num_classes");
  c.width_low = run.get_size("model.width_low");
  c.width_high = run.get_size("model.width_high");
  c.width_context = run.get_size("model.width_context");
  c.width_decoder = run.get_size("model.width_decoder");
  c.hanet_layers = parse_layers(run.get("model.layers"));
  c.hanet.coarse_height = run.get_size("hanet.coarse_height");
  c.hanet.reduction = run.get_size("hanet.reduction");
  c.hanet.pool = attention::parse_pool_mode(run.get("hanet.pool"));
  c.hanet.pe_mode = posenc::parse_pe_mode(run.get("hanet.pe"));
  c.hanet.pe_layer = run.get_size("hanet.pe_layer");
  c.hanet.jitter_max = run.get_size("hanet.jitter");
  c.hanet.dropout_p = run.get_double("hanet.dropout");
  c.hanet.kernel_size = run.get_size("hanet.kernel");
  c.hanet_zero_init = run.get_bool("hanet.zero_init");
  c.seed = static_cast<std::uint64_t>(run.get_size("seed"));
  c.validate();
  return c;
}

namespace {

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

void ToySegConfig::store(RunConfig& run) const {
  run.set("model.in_channels", std::to_string(in_channels));
  run.set("model.num_classes", std::to_string(num_classes));
  run.set("model.width_low", std::to_string(width_low));
  run.set("model.width_high", std::to_string(width_high));
  run.set("model.width_context", std::to_string(width_context));
  run.set("model.width_decoder", std::to_string(width_decoder));
  run.set("model.layers", format_layers(hanet_layers));
  run.set("hanet.coarse_height", std::to_string(hanet.coarse_height));
  run.set("hanet.reduction", std::to_string(hanet.reduction));
  run.set("hanet.pool", attention::to_string(hanet.pool));
  run.set("hanet.pe", posenc::to_string(hanet.pe_mode));
  run.set("hanet.pe_layer", std::to_string(hanet.pe_layer));
  run.set("hanet.jitter", std::to_string(hanet.jitter_max));
  run.set("hanet.dropout", format_double(hanet.dropout_p));
  run.set("hanet.kernel", std::to_string(hanet.kernel_size));
  run.set("hanet.zero_init", hanet_zero_init ? "true" : "false");
  run.set("seed", std::to_string(seed));
}

ToySegModel ToySegModel::build(const ToySegConfig& config) {
  config.validate();
  core::Rng root(config.seed);
  core::Rng rng = root.child("toyseg.main");
  const double he = std::sqrt(6.0);
  const auto& c = config;
  ToySegModel m;
  m.config = config;
  m.enc1 = core::make_conv2d(c.in_channels, c.width_low, 3, he, rng);
  m.enc2 = core::make_conv2d(c.width_low, c.width_high, 3, he, rng);
  for (auto& branch : m.context) branch = core::make_conv2d(c.width_high, c.width_context, 3, he, rng);
  m.project = core::make_conv2d(3 * c.width_context, c.width_context, 1, he, rng);
  m.decoder = core::make_conv2d(c.width_low + c.width_context, c.width_decoder, 3, he, rng);
  m.pre_classifier = core::make_conv2d(c.width_decoder, c.width_decoder, 3, he, rng);
  m.classifier = core::make_conv2d(c.width_decoder, c.num_classes, 1, 1.0, rng);
  for (Layer l : c.hanet_layers) {
    core::Rng hr = root.child("toyseg.hanet." + to_string(l));
    auto params = attention::HANetParams::init(c.hanet_config(l), hr);
    if (c.hanet_zero_init) {
      params.conv3.kernel.mutable_value().fill(0.0);
      params.conv3.bias.mutable_value().fill(0.0);
    }
    m.hanets.emplace(l, std::move(params));
  }
  return m;
}

std::vector<core::NamedVar> ToySegModel::main_parameters() const {
  std::vector<core::NamedVar> out;
  auto conv = [&](const std::string& name, const core::Conv2dParams& p) {
    out.emplace_back(name + ".kernel", p.kernel);
    out.emplace_back(name + ".bias", p.bias);
  };
  conv("enc1", enc1);
  conv("enc2", enc2);
  for (std::size_t i = 0; i < context.size(); ++i) conv("context" + std::to_string(i), context[i]);
  conv("project", project);
  conv("decoder", decoder);
  conv("pre_classifier", pre_classifier);
  conv("classifier", classifier);
  return out;
}

std::vector<core::NamedVar> ToySegModel::hanet_parameters() const {
  std::vector<core::NamedVar> out;
  for (const auto& [layer, p] : hanets) {
    auto part = p.parameters("hanet." + to_string(layer) + ".");
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<core::NamedVar> ToySegModel::parameters() const {
  auto out = main_parameters();
  auto h = hanet_parameters();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ToySegModel::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [layer, p] : hanets) {
    auto part = p.buffers("hanet." + to_string(layer) + ".");
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::size_t ToySegModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : parameters()) n += v.value().size();
  return n;
}

ForwardResult forward(ToySegModel& model, const Var& images, Mode mode, core::Rng& rng) {
  const auto& c = model.config;
  core::require_rank(images.value(), 4, "toyseg input");
  const std::size_t h = images.dim(2), w = images.dim(3);
  if (images.dim(1) != c.in_channels) {
    throw ShapeError("toyseg input has " + std::to_string(images.dim(1)) + " channels, model expects " +
                     std::to_string(c.in_channels));
  }
  if (h % ToySegConfig::kStride != 0 || w % ToySegConfig::kStride != 0 || h == 0 || w == 0) {
    throw ShapeError("toyseg input " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by the encoder stride 4");
  }

  ForwardResult result;
  auto gate = [&](Layer layer, const Var& x_l, const Var& x_h) -> Var {
    auto it = model.hanets.find(layer);
    if (it == model.hanets.end()) return x_h;
    core::Rng layer_rng = rng.child(static_cast<std::uint64_t>(layer));
    auto out = attention::forward(x_l, x_h, it->second, c.hanet_config(layer), mode, layer_rng);
    Var gated = out.output;
    result.attention.emplace(layer, std::move(out));
    return gated;
  };
  const core::Conv2dOptions stride2{2, 1};

  Var low = core::relu(core::apply(model.enc1, images, stride2));
  Var high = core::relu(core::apply(model.enc2, low, stride2));
  high = gate(Layer::L1, high, high);

  std::vector<Var> branches;
  for (std::size_t i = 0; i < model.context.size(); ++i) {
    branches.push_back(core::relu(core::apply(model.context[i], high, {1, std::size_t{1} << i})));
  }
  Var ctx = core::relu(core::apply(model.project, core::concat_channels(branches)));
  ctx = gate(Layer::L2, high, ctx);

  Var up = core::upsample_bilinear(ctx, low.dim(2), low.dim(3));
  Var dec_in = core::concat_channels({low, up});
  Var fused = core::relu(core::apply(model.decoder, dec_in));
  fused = gate(Layer::L3, dec_in, fused);

  Var pre = core::relu(core::apply(model.pre_classifier, fused));
  pre = gate(Layer::L4, fused, pre);

  Var logits = core::apply(model.classifier, pre);
  logits = gate(Layer::L5, pre, logits);
  result.logits = core::upsample_bilinear(logits, h, w);
  return result;
}

}  // namespace hanet::toyseg
