#include "hanet/stats/scenestats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hanet/core/errors.hpp"
#include "hanet/io/image_io.hpp"

namespace hanet::stats {

namespace fs = std::filesystem;

void validate(const LabelMap& map, std::size_t num_classes) {
  if (map.ids.size() != map.width * map.height) throw DataError(map.source + ": pixel count does not match size");
  for (std::size_t i = 0; i < map.ids.size(); ++i) {
    const auto id = map.ids[i];
    if (id != kIgnore && id >= num_classes) {
      throw DataError(map.source + ": class id " + std::to_string(id) + " at pixel (" +
                      std::to_string(i % map.width) + ", " + std::to_string(i / map.width) + ") is outside 0.." +
                      std::to_string(num_classes - 1));
    }
  }
}

namespace {

std::string lower_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

LabelMap read_label_map(const fs::path& path) {
  const std::string ext = lower_extension(path);
  io::GrayImage img;
  if (ext == ".pgm") {
    img = io::read_pgm(path);
  } else if (ext == ".png") {
    img = io::read_png_gray(path);
  } else {
    throw DataError(path.string() + ": unsupported label raster format");
  }
  return LabelMap{img.width, img.height, std::move(img.pixels), path.string()};
}

void write_label_map(const fs::path& path, const LabelMap& map) {
  io::write_pgm(path, io::GrayImage{map.width, map.height, map.ids});
}

LabelDirectory read_label_directory(const fs::path& dir, const std::string& suffix) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto& p = entry.path();
    const std::string ext = lower_extension(p);
    if (ext != ".pgm" && !(ext == ".png" && io::png_supported())) continue;
    if (!suffix.empty() && !ends_with(p.filename().string(), suffix)) continue;
    files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  LabelDirectory out;
  for (const auto& f : files) {
    try {
      out.maps.push_back(read_label_map(f));
    } catch (const std::exception& e) {
      out.failures.emplace_back(e.what());
    }
  }
  return out;
}

std::vector<std::uint64_t> class_histogram(std::span<const LabelMap> maps, std::size_t num_classes) {
  std::vector<std::uint64_t> counts(num_classes, 0);
  for (const auto& m : maps) {
    validate(m, num_classes);
    for (auto id : m.ids) {
      if (id != kIgnore) ++counts[id];
    }
  }
  return counts;
}

double entropy(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("entropy of an empty distribution");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("entropy: negative or NaN probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("entropy: probabilities sum to " + std::to_string(total) + ", not 1");
  }
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(h, 0.0);
}

std::vector<double> normalize(std::span<const std::uint64_t> counts) {
  const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  std::vector<double> p(counts.size(), 0.0);
  if (total == 0) return p;
  for (std::size_t i = 0; i < counts.size(); ++i) p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return p;
}

std::vector<Band> equal_bands(std::size_t count) {
  if (count == 0) throw ConfigError("need at least one band");
  std::vector<Band> bands(count);
  for (std::size_t i = 0; i < count; ++i) {
    bands[i].begin = static_cast<double>(i) / static_cast<double>(count);
    bands[i].end = i + 1 == count ? 1.0 : static_cast<double>(i + 1) / static_cast<double>(count);
  }
  return bands;
}

std::vector<Band> parse_bands(const std::string& spec) {
  if (spec.find(',') == std::string::npos) {
    try {
      std::size_t used = 0;
      const long n = std::stol(spec, &used);
      if (used != spec.size() || n <= 0) throw std::invalid_argument(spec);
      return equal_bands(static_cast<std::size_t>(n));
    } catch (const std::logic_error&) {
      throw ConfigError("bad band spec '" + spec + "': expected a count or comma-separated boundaries");
    }
  }
  std::vector<double> edges;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      edges.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw ConfigError("bad band boundary '" + item + "'");
    }
  }
  if (edges.size() < 2) throw ConfigError("band spec needs at least two boundaries");
  std::vector<Band> bands;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) bands.push_back({edges[i], edges[i + 1]});
  validate_bands(bands);
  return bands;
}

void validate_bands(std::span<const Band> bands) {
  if (bands.empty()) throw ConfigError("need at least one band");
  if (bands.front().begin != 0.0 || bands.back().end != 1.0) throw ConfigError("bands must cover [0, 1]");
  for (std::size_t i = 0; i < bands.size(); ++i) {
    if (!(bands[i].end > bands[i].begin)) throw ConfigError("band " + std::to_string(i) + " is empty or reversed");
    if (i + 1 < bands.size() && bands[i].end != bands[i + 1].begin) {
      throw ConfigError("bands " + std::to_string(i) + " and " + std::to_string(i + 1) + " overlap or leave a gap");
    }
  }
}

std::size_t band_of_row(std::span<const Band> bands, std::size_t y, std::size_t height) {
  const double centre = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
  for (std::size_t b = 0; b < bands.size(); ++b) {
    if (centre < bands[b].end) return b;
  }
  return bands.size() - 1;
}

std::size_t bin_of(std::size_t i, std::size_t n, std::size_t bins) {
  return std::min(bins - 1, ((2 * i + 1) * bins) / (2 * n));
}

DistributionReport region_report(std::span<const LabelMap> maps, std::size_t num_classes, std::span<const Band> bands) {
  validate_bands(bands);
  std::vector<std::vector<std::uint64_t>> band_counts(bands.size(), std::vector<std::uint64_t>(num_classes, 0));
  for (const auto& m : maps) {
    validate(m, num_classes);
    for (std::size_t y = 0; y < m.height; ++y) {
      auto& counts = band_counts[band_of_row(bands, y, m.height)];
      for (std::size_t x = 0; x < m.width; ++x) {
        const auto id = m.at(x, y);
        if (id != kIgnore) ++counts[id];
      }
    }
  }

  DistributionReport report;
  report.num_classes = num_classes;
  std::vector<std::uint64_t> total(num_classes, 0);
  for (const auto& c : band_counts)
    for (std::size_t k = 0; k < num_classes; ++k) total[k] += c[k];
  report.pixels = std::accumulate(total.begin(), total.end(), std::uint64_t{0});
  if (report.pixels == 0) throw std::invalid_argument("region_report: no labeled pixels");
  report.probabilities = normalize(total);
  report.unconditional_entropy = entropy(report.probabilities);

  double weighted = 0.0;
  for (std::size_t b = 0; b < bands.size(); ++b) {
    RegionStats r;
    r.band = bands[b];
    r.pixels = std::accumulate(band_counts[b].begin(), band_counts[b].end(), std::uint64_t{0});
    r.probabilities = normalize(band_counts[b]);
    if (r.pixels > 0) {
      r.entropy = entropy(r.probabilities);
      weighted += static_cast<double>(r.pixels) * r.entropy;
    } else {
      r.entropy = std::numeric_limits<double>::quiet_NaN();
    }
    report.regions.push_back(std::move(r));
  }
  report.average_conditional_entropy = weighted / static_cast<double>(report.pixels);
  return report;
}

AxisDistribution axis_distribution(std::span<const LabelMap> maps, std::size_t num_classes, Axis axis,
                                   std::size_t bins) {
  if (bins == 0) throw ConfigError("axis_distribution needs at least one bin");
  AxisDistribution d;
  d.axis = axis;
  d.bins = bins;
  d.num_classes = num_classes;
  d.counts.assign(bins * num_classes, 0);
  for (const auto& m : maps) {
    validate(m, num_classes);
    for (std::size_t y = 0; y < m.height; ++y)
      for (std::size_t x = 0; x < m.width; ++x) {
        const auto id = m.at(x, y);
        if (id == kIgnore) continue;
        const std::size_t b = axis == Axis::Height ? bin_of(y, m.height, bins) : bin_of(x, m.width, bins);
        ++d.counts[b * num_classes + id];
      }
  }
  d.probabilities.assign(bins * num_classes, 0.0);
  d.bin_mass.assign(bins, 0);
  for (std::size_t b = 0; b < bins; ++b) {
    std::span<const std::uint64_t> row(d.counts.data() + b * num_classes, num_classes);
    d.bin_mass[b] = std::accumulate(row.begin(), row.end(), std::uint64_t{0});
    const auto p = normalize(row);
    std::copy(p.begin(), p.end(), d.probabilities.begin() + static_cast<std::ptrdiff_t>(b * num_classes));
  }
  d.class_curves.assign(num_classes * bins, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::uint64_t mass = 0;
    for (std::size_t b = 0; b < bins; ++b) mass += d.counts[b * num_classes + k];
    if (mass == 0) continue;
    for (std::size_t b = 0; b < bins; ++b) {
      d.class_curves[k * bins + b] = static_cast<double>(d.counts[b * num_classes + k]) / static_cast<double>(mass);
    }
  }
  return d;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("js_divergence: length mismatch");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(js, 0.0);
}

double mean_pairwise_js(const AxisDistribution& dist) {
  std::vector<std::size_t> live;
  for (std::size_t b = 0; b < dist.bins; ++b) {
    if (dist.bin_mass[b] > 0) live.push_back(b);
  }
  if (live.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  const std::size_t k = dist.num_classes;
  for (std::size_t i = 0; i < live.size(); ++i)
    for (std::size_t j = i + 1; j < live.size(); ++j) {
      total += js_divergence({dist.probabilities.data() + live[i] * k, k}, {dist.probabilities.data() + live[j] * k, k});
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

DistributionSpread distribution_divergence(const AxisDistribution& height_dist, const AxisDistribution& width_dist) {
  return {mean_pairwise_js(height_dist), mean_pairwise_js(width_dist)};
}

std::vector<double> mean_component_size(std::span<const LabelMap> maps, std::size_t num_classes) {
  std::vector<std::uint64_t> pixels(num_classes, 0), components(num_classes, 0);
  std::vector<std::size_t> stack;
  for (const auto& m : maps) {
    validate(m, num_classes);
    std::vector<bool> seen(m.ids.size(), false);
    for (std::size_t start = 0; start < m.ids.size(); ++start) {
      const auto id = m.ids[start];
      if (seen[start] || id == kIgnore) continue;
      ++components[id];
      stack.assign(1, start);
      seen[start] = true;
      while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        ++pixels[id];
        const std::size_t x = i % m.width, y = i / m.width;
        auto visit = [&](std::size_t j) {
          if (!seen[j] && m.ids[j] == id) {
            seen[j] = true;
            stack.push_back(j);
          }
        };
        if (x > 0) visit(i - 1);
        if (x + 1 < m.width) visit(i + 1);
        if (y > 0) visit(i - m.width);
        if (y + 1 < m.height) visit(i + m.width);
      }
    }
  }
  std::vector<double> mean(num_classes, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (components[k]) mean[k] = static_cast<double>(pixels[k]) / static_cast<double>(components[k]);
  }
  return mean;
}

std::vector<std::string> default_class_names(std::size_t num_classes) {
  if (num_classes == cityscapes_class_names().size()) return cityscapes_class_names();
  std::vector<std::string> names;
  for (std::size_t k = 0; k < num_classes; ++k) names.push_back("class" + std::to_string(k));
  return names;
}

const std::vector<std::string>& cityscapes_class_names() {
  static const std::vector<std::string> names{"road",  "sidewalk", "building", "wall",       "fence",
                                              "pole",  "light",    "sign",     "vegetation", "terrain",
                                              "sky",   "person",   "rider",    "car",        "truck",
                                              "bus",   "train",    "motorcycle", "bicycle"};
  return names;
}

namespace {

std::string region_label(const DistributionReport& report, std::size_t b) {
  if (report.regions.size() == 3) {
    static const char* thirds[] = {"Upper", "Middle", "Lower"};
    return thirds[b];
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "[%.3g,%.3g)", report.regions[b].band.begin, report.regions[b].band.end);
  return buf;
}

}  // namespace

std::string format_report(const DistributionReport& report, const std::vector<std::string>& class_names,
                          std::size_t top_k) {
  std::vector<std::size_t> order(report.num_classes);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return report.probabilities[a] > report.probabilities[b]; });
  order.resize(std::min(top_k, order.size()));

  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-16s", "");
  os << buf;
  for (auto k : order) {
    std::snprintf(buf, sizeof buf, "%12s", ("p_" + class_names[k]).c_str());
    os << buf;
  }
  os << "     entropy\n";

  auto row = [&](const std::string& label, const std::vector<double>& p, double h, const std::string& extra) {
    std::snprintf(buf, sizeof buf, "%-16s", label.c_str());
    os << buf;
    for (auto k : order) {
      std::snprintf(buf, sizeof buf, "%12.3f", 100.0 * p[k]);
      os << buf;
    }
    if (std::isnan(h)) {
      std::snprintf(buf, sizeof buf, "%12s", "-");
    } else {
      std::snprintf(buf, sizeof buf, "%12.2f", h);
    }
    os << buf << extra << "\n";
  };
  row("Image", report.probabilities, report.unconditional_entropy, "");
  for (std::size_t b = 0; b < report.regions.size(); ++b) {
    std::string extra;
    if (b == 0) {
      std::snprintf(buf, sizeof buf, "   %.2f (avg)", report.average_conditional_entropy);
      extra = buf;
    }
    row(region_label(report, b), report.regions[b].probabilities, report.regions[b].entropy, extra);
  }
  std::snprintf(buf, sizeof buf, "labeled pixels: %llu\n", static_cast<unsigned long long>(report.pixels));
  os << buf;
  return os.str();
}

void write_report_csv(const fs::path& path, const DistributionReport& report,
                      const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot write");
  out << "region,band_begin,band_end,pixels,entropy";
  for (std::size_t k = 0; k < report.num_classes; ++k) out << ",p_" << class_names[k];
  out << '\n';
  char buf[64];
  auto emit = [&](const std::string& name, double lo, double hi, std::uint64_t pixels, double h,
                  const std::vector<double>& p) {
    out << name << ',' << lo << ',' << hi << ',' << pixels << ',';
    std::snprintf(buf, sizeof buf, "%.10g", h);
    out << buf;
    for (double v : p) {
      std::snprintf(buf, sizeof buf, ",%.10g", v);
      out << buf;
    }
    out << '\n';
  };
  emit("image", 0.0, 1.0, report.pixels, report.unconditional_entropy, report.probabilities);
  for (std::size_t b = 0; b < report.regions.size(); ++b) {
    const auto& r = report.regions[b];
    emit("band" + std::to_string(b), r.band.begin, r.band.end, r.pixels, r.entropy, r.probabilities);
  }
  std::snprintf(buf, sizeof buf, "%.10g", report.average_conditional_entropy);
  out << "average_conditional,0,1," << report.pixels << ',' << buf << '\n';
}

}  // namespace hanet::stats
