#include "hanet/toyseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "hanet/core/errors.hpp"

namespace hanet::toyseg {

namespace fs = std::filesystem;

namespace {

struct Appearance {
  double r, g, b;
  double fx, fy;  // texture frequency, cycles per pixel
};

Appearance appearance_of(std::size_t group) {
  static const Appearance table[] = {
      {0.30, 0.45, 0.30, 0.00, 0.25}, {0.55, 0.35, 0.30, 0.25, 0.00}, {0.35, 0.35, 0.55, 0.125, 0.125},
      {0.50, 0.50, 0.35, 0.00, 0.00}, {0.35, 0.55, 0.50, 0.125, 0.25}, {0.45, 0.30, 0.50, 0.25, 0.125},
  };
  const std::size_t n = sizeof(table) / sizeof(table[0]);
  Appearance a = table[group % n];
  if (group >= n) {
    const double shift = 0.08 * static_cast<double>(group / n);
    a.r = std::fmod(a.r + shift, 0.7) + 0.15;
    a.fx += 0.0625;
  }
  return a;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::size_t synth_appearance(std::size_t cls, std::size_t num_classes) { return cls % ((num_classes + 1) / 2); }

stats::Band synth_band(std::size_t cls, std::size_t num_classes) {
  const double k = static_cast<double>(num_classes);
  return {static_cast<double>(cls) / k, static_cast<double>(cls + 1) / k};
}

Dataset synth_banded(std::uint64_t seed, std::size_t n_images, std::size_t height, std::size_t width,
                     std::size_t num_classes, double noise, double camouflage) {
  if (num_classes < 3) throw ConfigError("synth_banded needs at least 3 classes");
  if (num_classes > 254) throw ConfigError("synth_banded supports at most 254 classes");
  if (height < num_classes || width == 0) throw ConfigError("synth_banded image too small for the band count");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("synth_banded noise must lie in [0, 1]");
  if (!(camouflage >= 0.0 && camouflage <= 1.0)) throw ConfigError("synth_banded camouflage must lie in [0, 1]");

  const core::Rng root(seed);
  Dataset out;
  out.reserve(n_images);
  const double band_h = static_cast<double>(height) / static_cast<double>(num_classes);
  const long max_shift = static_cast<long>(std::floor(noise * band_h / 2.0));

  for (std::size_t n = 0; n < n_images; ++n) {
    core::Rng rng = root.child(static_cast<std::uint64_t>(n));

    // band b covers rows [edge[b], edge[b+1])
    std::vector<long> edge(num_classes + 1);
    for (std::size_t b = 0; b <= num_classes; ++b) edge[b] = std::lround(band_h * static_cast<double>(b));
    for (std::size_t b = 1; b < num_classes; ++b) {
      const long shift = max_shift > 0 ? rng.uniform_int(-max_shift, max_shift) : 0;
      edge[b] = std::clamp(edge[b] + shift, edge[b - 1] + 1, static_cast<long>(height) - static_cast<long>(num_classes - b));
    }

    std::vector<std::uint8_t> ids(height * width);
    std::vector<std::uint8_t> looks(height * width);  // class whose appearance is painted
    for (std::size_t b = 0; b < num_classes; ++b) {
      std::size_t x = 0;
      while (x < width) {
        const auto run = static_cast<std::size_t>(rng.uniform_int(4, 16));
        std::size_t cls = b;
        if (rng.bernoulli(noise)) {
          cls = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(num_classes) - 2));
          if (cls >= b) ++cls;
        }
        std::size_t look = cls;
        if (camouflage > 0.0 && rng.bernoulli(camouflage)) {
          look = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(num_classes) - 2));
          if (look >= cls) ++look;
        }
        const std::size_t end = std::min(width, x + run);
        for (long y = edge[b]; y < edge[b + 1]; ++y)
          for (std::size_t xx = x; xx < end; ++xx) {
            ids[static_cast<std::size_t>(y) * width + xx] = static_cast<std::uint8_t>(cls);
            looks[static_cast<std::size_t>(y) * width + xx] = static_cast<std::uint8_t>(look);
          }
        x = end;
      }
    }

    const double light = rng.uniform(-0.05, 0.05);
    std::vector<double> phase(num_classes);
    for (auto& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);
    Sample s;
    s.image.width = width;
    s.image.height = height;
    s.image.pixels.resize(3 * width * height);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t look = looks[y * width + x];
        const Appearance a = appearance_of(synth_appearance(look, num_classes));
        const double tex =
            0.12 * std::sin(2.0 * M_PI * (a.fx * static_cast<double>(x) + a.fy * static_cast<double>(y)) + phase[look]);
        const double rgb[3] = {a.r, a.g, a.b};
        for (std::size_t ch = 0; ch < 3; ++ch) {
          s.image.pixels[3 * (y * width + x) + ch] = quantize(rgb[ch] + light + tex + rng.normal(0.0, 0.08));
        }
      }
    s.label = stats::LabelMap{width, height, std::move(ids), "synth:" + std::to_string(n)};
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu", i);
    io::write_ppm(dir / "images" / (std::string(name) + ".ppm"), data[i].image);
    stats::write_label_map(dir / "labels" / (std::string(name) + ".pgm"), data[i].label);
  }
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir / "images") || !fs::is_directory(dir / "labels")) {
    throw DataError("dataset directory " + dir.string() + " needs images/ and labels/ subdirectories");
  }
  std::map<std::string, fs::path> images;
  for (const auto& e : fs::directory_iterator(dir / "images")) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") images[e.path().stem().string()] = e.path();
  }
  Dataset out;
  for (const auto& [stem, path] : images) {
    const fs::path label = dir / "labels" / (stem + ".pgm");
    if (!fs::exists(label)) throw DataError("no label map for " + path.string());
    Sample s{io::read_ppm(path), stats::read_label_map(label)};
    if (s.image.width != s.label.width || s.image.height != s.label.height) {
      throw DataError("image and label sizes differ for " + path.string());
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("dataset directory " + dir.string() + " holds no images");
  return out;
}

core::Tensor to_input(const std::vector<const io::RgbImage*>& images) {
  if (images.empty()) throw ShapeError("to_input needs at least one image");
  const std::size_t h = images[0]->height, w = images[0]->width;
  core::Tensor t({images.size(), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = *images[n];
    if (img.height != h || img.width != w) throw ShapeError("to_input images differ in size");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < h * w; ++i) {
        t[((n * 3 + c) * h * w) + i] = static_cast<double>(img.pixels[3 * i + c]) / 127.5 - 1.0;
      }
  }
  return t;
}

}  // namespace hanet::toyseg
