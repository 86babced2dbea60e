#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <vector>

#include "hanet/core/optim.hpp"
#include "hanet/toyseg/data.hpp"
#include "hanet/toyseg/model.hpp"

namespace hanet::toyseg {

struct TrainConfig {
  double base_lr = 1e-2;
  double momentum = 0.9;
  double weight_decay_main = 5e-4;
  double weight_decay_hanet = 1e-4;
  double power = 0.9;
  std::size_t max_iteration = 1500;
  std::size_t batch_size = 4;
  std::size_t crop_height = 128;
  std::size_t crop_width = 32;
  bool flip = true;
  std::size_t log_every = 1;

  void validate() const;
  static TrainConfig from(const RunConfig& run);
};

double poly_lr(std::size_t iteration, const TrainConfig& config);

struct TrainLogEntry {
  std::size_t iteration;
  double lr;
  double loss;
};

// Two groups, "main" and "hanet", with their weight decays.
core::SgdMomentum make_optimizer(const ToySegModel& model, const TrainConfig& config);

// Crops of crop_height x crop_width at a random offset, optionally mirrored.
struct Batch {
  core::Tensor images;
  std::vector<std::uint8_t> labels;
};
Batch sample_batch(const Dataset& data, const TrainConfig& config, core::Rng& rng);

using TrainCallback = std::function<void(const TrainLogEntry&)>;

// SGD with momentum on mean cross-entropy for max_iteration steps. A
// non-finite loss throws NumericalError naming the iteration.
std::vector<TrainLogEntry> train(ToySegModel& model, const Dataset& data, const TrainConfig& config, core::Rng& rng,
                                 const TrainCallback& on_log = {});

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log);

constexpr std::size_t kRegions = 4;

struct EvalReport {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> confusion;  // row = ground truth, column = prediction
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<double> per_class_iou;  // NaN where the class is absent from prediction and ground truth
  std::array<std::vector<std::uint64_t>, kRegions> region_confusion;
  std::array<double, kRegions> per_region_miou{};
};

// Confusion over non-ignore pixels; rows are split into four equal
// horizontal quarters by row centre.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(std::size_t num_classes);
  void add(const stats::LabelMap& prediction, const stats::LabelMap& truth);
  EvalReport report() const;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> total_;
  std::array<std::vector<std::uint64_t>, kRegions> regions_;
};

// Mean IoU over classes that occur in the ground truth; NaN when none do.
double mean_iou(const std::vector<std::uint64_t>& confusion, std::size_t num_classes);

stats::LabelMap predict(ToySegModel& model, const io::RgbImage& image);
EvalReport evaluate(ToySegModel& model, const Dataset& data);

std::string format_eval_report(const EvalReport& report);

// Header "HANETCKP", version, FNV-1a digest of the model config text, the
// text itself, then named little-endian float64 blobs for every parameter
// and batch-norm buffer.
void save_checkpoint(const std::filesystem::path& path, ToySegModel& model);
ToySegModel load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a(const std::string& text);

}  // namespace hanet::toyseg
