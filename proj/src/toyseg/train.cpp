#include "hanet/toyseg/train.hpp"

#include <cmath>
#include <cstring>
#include <type_traits>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "hanet/core/errors.hpp"

namespace hanet::toyseg {

using core::Tensor;

void TrainConfig::validate() const {
  if (!(base_lr > 0) || !(momentum >= 0 && momentum < 1) || weight_decay_main < 0 || weight_decay_hanet < 0) {
    throw ConfigError("train: learning rate must be positive, momentum in [0,1), decays non-negative");
  }
  if (!(power > 0 && power <= 1)) throw ConfigError("train.power must lie in (0, 1]");
  if (batch_size == 0 || crop_height == 0 || crop_width == 0 || log_every == 0) {
    throw ConfigError("train: batch size, crop and log interval must be positive");
  }
  if (crop_height % ToySegConfig::kStride != 0 || crop_width % ToySegConfig::kStride != 0) {
    throw ConfigError("train: crop extents must be divisible by 4");
  }
}

TrainConfig TrainConfig::from(const RunConfig& run) {
  TrainConfig c;
  c.base_lr = run.get_double("train.base_lr");
  c.momentum = run.get_double("train.momentum");
  c.weight_decay_main = run.get_double("train.weight_decay_main");
  c.weight_decay_hanet = run.get_double("train.weight_decay_hanet");
  c.power = run.get_double("train.power");
  c.max_iteration = run.get_size("train.max_iteration");
  c.batch_size = run.get_size("train.batch_size");
  c.crop_height = run.get_size("train.crop_height");
  c.crop_width = run.get_size("train.crop_width");
  c.flip = run.get_bool("train.flip");
  c.log_every = run.get_size("train.log_every");
  c.validate();
  return c;
}

double poly_lr(std::size_t iteration, const TrainConfig& config) {
  return core::poly_lr(config.base_lr, iteration, config.max_iteration, config.power);
}

core::SgdMomentum make_optimizer(const ToySegModel& model, const TrainConfig& config) {
  core::ParamGroup main{"main", {}, config.weight_decay_main};
  core::ParamGroup hanet{"hanet", {}, config.weight_decay_hanet};
  for (const auto& [name, v] : model.main_parameters()) main.params.push_back(v);
  for (const auto& [name, v] : model.hanet_parameters()) hanet.params.push_back(v);
  return core::SgdMomentum({main, hanet}, config.momentum);
}

Batch sample_batch(const Dataset& data, const TrainConfig& config, core::Rng& rng) {
  if (data.empty()) throw DataError("training set is empty");
  const std::size_t ch = config.crop_height, cw = config.crop_width, bs = config.batch_size;
  Batch b{Tensor({bs, 3, ch, cw}), std::vector<std::uint8_t>(bs * ch * cw)};
  for (std::size_t n = 0; n < bs; ++n) {
    const auto& s = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(data.size()) - 1))];
    const std::size_t h = s.image.height, w = s.image.width;
    if (h < ch || w < cw) throw DataError("image " + s.label.source + " is smaller than the training crop");
    const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(h - ch)));
    const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(w - cw)));
    const bool mirror = config.flip && rng.bernoulli(0.5);
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t x = 0; x < cw; ++x) {
        const std::size_t sx = x0 + (mirror ? cw - 1 - x : x);
        const std::size_t src = (y0 + y) * w + sx;
        for (std::size_t c = 0; c < 3; ++c) {
          b.images[((n * 3 + c) * ch + y) * cw + x] = static_cast<double>(s.image.pixels[3 * src + c]) / 127.5 - 1.0;
        }
        b.labels[(n * ch + y) * cw + x] = s.label.ids[src];
      }
  }
  return b;
}

std::vector<TrainLogEntry> train(ToySegModel& model, const Dataset& data, const TrainConfig& config, core::Rng& rng,
                                 const TrainCallback& on_log) {
  config.validate();
  if (data.empty()) throw DataError("training set is empty");
  auto optimizer = make_optimizer(model, config);
  core::Rng data_rng = rng.child("data");
  core::Rng model_rng = rng.child("model");
  std::vector<TrainLogEntry> log;
  for (std::size_t it = 0; it < config.max_iteration; ++it) {
    const double lr = poly_lr(it, config);
    Batch batch = sample_batch(data, config, data_rng);
    core::Rng step_rng = model_rng.child(static_cast<std::uint64_t>(it));
    optimizer.zero_grad();
    auto out = forward(model, core::constant(std::move(batch.images)), core::Mode::Train, step_rng);
    core::Var loss = core::softmax_cross_entropy(out.logits, batch.labels);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
      throw NumericalError("training diverged: non-finite loss at iteration " + std::to_string(it) +
                           " (lr " + std::to_string(lr) + ")");
    }
    core::backward(loss);
    optimizer.step(lr);
    if (it % config.log_every == 0 || it + 1 == config.max_iteration) {
      log.push_back({it, lr, value});
      if (on_log) on_log(log.back());
    }
  }
  return log;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "iteration,lr,loss\n";
  char line[96];
  for (const auto& e : log) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", e.iteration, e.lr, e.loss);
    out << line;
  }
}

EvalAccumulator::EvalAccumulator(std::size_t num_classes) : k_(num_classes), total_(num_classes * num_classes, 0) {
  for (auto& r : regions_) r.assign(k_ * k_, 0);
}

void EvalAccumulator::add(const stats::LabelMap& prediction, const stats::LabelMap& truth) {
  if (prediction.width != truth.width || prediction.height != truth.height) {
    throw ShapeError("prediction and label sizes differ for " + truth.source);
  }
  stats::validate(truth, k_);
  stats::validate(prediction, k_);
  const auto quarters = stats::equal_bands(kRegions);
  for (std::size_t y = 0; y < truth.height; ++y) {
    const std::size_t region = stats::band_of_row(quarters, y, truth.height);
    for (std::size_t x = 0; x < truth.width; ++x) {
      const std::uint8_t t = truth.at(x, y);
      const std::uint8_t p = prediction.at(x, y);
      if (t == stats::kIgnore || p == stats::kIgnore) continue;
      total_[t * k_ + p] += 1;
      regions_[region][t * k_ + p] += 1;
    }
  }
}

namespace {

std::vector<double> class_iou(const std::vector<std::uint64_t>& confusion, std::size_t k) {
  std::vector<double> iou(k, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t gt = 0, pred = 0;
    for (std::size_t j = 0; j < k; ++j) {
      gt += confusion[c * k + j];
      pred += confusion[j * k + c];
    }
    const std::uint64_t inter = confusion[c * k + c];
    const std::uint64_t uni = gt + pred - inter;
    if (uni > 0) iou[c] = static_cast<double>(inter) / static_cast<double>(uni);
  }
  return iou;
}

}  // namespace

double mean_iou(const std::vector<std::uint64_t>& confusion, std::size_t k) {
  const auto iou = class_iou(confusion, k);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t gt = 0;
    for (std::size_t j = 0; j < k; ++j) gt += confusion[c * k + j];
    if (gt == 0) continue;
    sum += iou[c];
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

EvalReport EvalAccumulator::report() const {
  EvalReport r;
  r.num_classes = k_;
  r.confusion = total_;
  r.per_class_iou = class_iou(total_, k_);
  r.miou = mean_iou(total_, k_);
  std::uint64_t correct = 0, all = 0;
  for (std::size_t i = 0; i < k_; ++i)
    for (std::size_t j = 0; j < k_; ++j) {
      all += total_[i * k_ + j];
      if (i == j) correct += total_[i * k_ + j];
    }
  r.pixel_accuracy = all == 0 ? std::numeric_limits<double>::quiet_NaN()
                              : static_cast<double>(correct) / static_cast<double>(all);
  for (std::size_t q = 0; q < kRegions; ++q) {
    r.region_confusion[q] = regions_[q];
    r.per_region_miou[q] = mean_iou(regions_[q], k_);
  }
  return r;
}

stats::LabelMap predict(ToySegModel& model, const io::RgbImage& image) {
  core::Rng unused(0);
  auto out = forward(model, core::constant(to_input({&image})), core::Mode::Eval, unused);
  const Tensor& logits = out.logits.value();
  const std::size_t k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  stats::LabelMap pred{w, h, std::vector<std::uint8_t>(h * w), "prediction"};
  for (std::size_t i = 0; i < h * w; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[c * h * w + i] > logits[best * h * w + i]) best = c;
    }
    pred.ids[i] = static_cast<std::uint8_t>(best);
  }
  return pred;
}

EvalReport evaluate(ToySegModel& model, const Dataset& data) {
  EvalAccumulator acc(model.config.num_classes);
  for (const auto& s : data) acc.add(predict(model, s.image), s.label);
  return acc.report();
}

std::string format_eval_report(const EvalReport& r) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "mIoU %.4f  pixel accuracy %.4f\n", r.miou, r.pixel_accuracy);
  out << line;
  for (std::size_t c = 0; c < r.num_classes; ++c) {
    std::snprintf(line, sizeof(line), "  class %2zu IoU %.4f\n", c, r.per_class_iou[c]);
    out << line;
  }
  for (std::size_t q = 0; q < kRegions; ++q) {
    std::snprintf(line, sizeof(line), "  rows %zu/4-%zu/4 mIoU %.4f\n", q, q + 1, r.per_region_miou[q]);
    out << line;
  }
  return out.str();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'H', 'A', 'N', 'E', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    std::memcpy(&bits, &v, sizeof(T));
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("truncated checkpoint " + path);
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    double v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
  } else {
    return static_cast<T>(bits);
  }
}

std::string model_text(const ToySegConfig& config) {
  RunConfig run;
  config.store(run);
  return run.to_text({"model.", "hanet.", "seed"});
}

std::vector<std::pair<std::string, Tensor*>> blobs(ToySegModel& model) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, v] : model.parameters()) {
    core::Var handle = v;
    out.emplace_back(name, &handle.mutable_value());
  }
  auto b = model.buffers();
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ToySegModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string text = model_text(model.config);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, fnv1a(text));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto entries = blobs(model);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->shape().size()));
    for (std::size_t d : t->shape()) put<std::uint64_t>(out, d);
    for (double v : t->values()) put<double>(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

ToySegModel load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + p);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError(p + " is not a checkpoint (bad magic)");
  }
  const auto version = take<std::uint32_t>(in, p);
  if (version != kVersion) throw DataError(p + ": unsupported checkpoint version " + std::to_string(version));
  const auto digest = take<std::uint64_t>(in, p);
  const auto text_len = take<std::uint32_t>(in, p);
  std::string text(text_len, '\0');
  if (!in.read(text.data(), text_len)) throw DataError("truncated checkpoint " + p);
  if (fnv1a(text) != digest) throw DataError(p + ": config digest mismatch");

  ToySegModel model = ToySegModel::build(ToySegConfig::from(RunConfig::parse(text, p)));
  auto entries = blobs(model);
  const auto count = take<std::uint32_t>(in, p);
  if (count != entries.size()) {
    throw DataError(p + ": expected " + std::to_string(entries.size()) + " blobs, found " + std::to_string(count));
  }
  for (auto& [name, t] : entries) {
    const auto len = take<std::uint32_t>(in, p);
    std::string stored(len, '\0');
    if (!in.read(stored.data(), len)) throw DataError("truncated checkpoint " + p);
    if (stored != name) throw DataError(p + ": expected blob '" + name + "', found '" + stored + "'");
    const auto rank = take<std::uint32_t>(in, p);
    core::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(take<std::uint64_t>(in, p)));
    if (shape != t->shape()) throw DataError(p + ": shape mismatch for " + name);
    for (double& v : t->values()) v = take<double>(in, p);
  }
  return model;
}

}  // namespace hanet::toyseg
