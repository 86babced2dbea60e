#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hanet::stats {

inline constexpr std::uint8_t kIgnore = 255;

struct LabelMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> ids;  // row-major; kIgnore marks unlabeled pixels
  std::string source;             // file name or generator tag, for diagnostics

  std::uint8_t at(std::size_t x, std::size_t y) const { return ids[y * width + x]; }
};

// Throws DataError naming the source and pixel of the first id >= num_classes.
void validate(const LabelMap& map, std::size_t num_classes);

LabelMap read_label_map(const std::filesystem::path& path);
void write_label_map(const std::filesystem::path& path, const LabelMap& map);

struct LabelDirectory {
  std::vector<LabelMap> maps;                    // sorted by path
  std::vector<std::string> failures;             // unreadable files with reasons
};

// Collects *.pgm (and *.png when supported) below `dir`, recursively. When
// `suffix` is non-empty only file names ending in it are taken.
LabelDirectory read_label_directory(const std::filesystem::path& dir, const std::string& suffix = "");

// Pixel counts per class over all maps, ignore pixels excluded.
std::vector<std::uint64_t> class_histogram(std::span<const LabelMap> maps, std::size_t num_classes);

// Shannon entropy in nats with 0 ln 0 = 0. Throws std::invalid_argument for an
// empty vector, negative entries, or a sum farther than 1e-9 from one.
double entropy(std::span<const double> p);

std::vector<double> normalize(std::span<const std::uint64_t> counts);

/// Horizontal band as a fraction of image height, [begin, end).
struct Band {
  double begin = 0.0;
  double end = 1.0;
};

std::vector<Band> equal_bands(std::size_t count);
// "3" -> equal thirds; "0,0.25,1" -> explicit boundaries.
std::vector<Band> parse_bands(const std::string& spec);
// Bands must be contiguous, non-overlapping, and cover [0, 1].
void validate_bands(std::span<const Band> bands);
// Band index of row y in an image of the given height, by row centre.
std::size_t band_of_row(std::span<const Band> bands, std::size_t y, std::size_t height);
// Equal-bin index of coordinate i along an axis of length n, by centre.
std::size_t bin_of(std::size_t i, std::size_t n, std::size_t bins);

struct RegionStats {
  Band band;
  std::uint64_t pixels = 0;          // non-ignore pixels
  std::vector<double> probabilities;  // sums to 1 when pixels > 0
  double entropy = 0.0;              // NaN when the band holds no labeled pixels
};

struct DistributionReport {
  std::size_t num_classes = 0;
  std::uint64_t pixels = 0;
  std::vector<double> probabilities;  // whole-image distribution
  double unconditional_entropy = 0.0;
  double average_conditional_entropy = 0.0;  // band entropies weighted by pixel mass
  std::vector<RegionStats> regions;
};

// Throws std::invalid_argument when no labeled pixel exists.
DistributionReport region_report(std::span<const LabelMap> maps, std::size_t num_classes, std::span<const Band> bands);

enum class Axis { Height, Width };

struct AxisDistribution {
  Axis axis = Axis::Height;
  std::size_t bins = 0;
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;  // bins x classes
  std::vector<double> probabilities;  // bins x classes, each non-empty row sums to 1
  std::vector<double> class_curves;   // classes x bins, each non-empty row sums to 1
  std::vector<std::uint64_t> bin_mass;

  double p(std::size_t bin, std::size_t cls) const { return probabilities[bin * num_classes + cls]; }
};

AxisDistribution axis_distribution(std::span<const LabelMap> maps, std::size_t num_classes, Axis axis,
                                   std::size_t bins);

// Jensen-Shannon divergence in nats (bounded by ln 2).
double js_divergence(std::span<const double> p, std::span<const double> q);
// Mean JS divergence over all pairs of non-empty bins; 0 with fewer than two.
double mean_pairwise_js(const AxisDistribution& dist);

struct DistributionSpread {
  double height_spread = 0.0;
  double width_spread = 0.0;
};

DistributionSpread distribution_divergence(const AxisDistribution& height_dist, const AxisDistribution& width_dist);

// Mean 4-connected component size per class in pixels (0 for absent
// classes). Approximate object-size summary; not a calibrated statistic.
std::vector<double> mean_component_size(std::span<const LabelMap> maps, std::size_t num_classes);

// Aligned text table: one row for the whole image and one per band, columns
// for the `top_k` most frequent classes and the entropy.
std::string format_report(const DistributionReport& report, const std::vector<std::string>& class_names,
                          std::size_t top_k = 5);
void write_report_csv(const std::filesystem::path& path, const DistributionReport& report,
                      const std::vector<std::string>& class_names);

std::vector<std::string> default_class_names(std::size_t num_classes);
// The 19 Cityscapes training classes in train-id order.
const std::vector<std::string>& cityscapes_class_names();

}  // namespace hanet::stats
