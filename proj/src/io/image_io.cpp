#include "hanet/io/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hanet/core/errors.hpp"

#ifdef HANET_HAVE_PNG
#include <png.h>
#endif

namespace hanet::io {
namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = next_token(in);
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed netpbm header");
  }
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open");
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P2") throw DataError(path.string() + ": not a PGM file");
  GrayImage img;
  img.width = header_number(in, path);
  img.height = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (maxval == 0 || maxval > 255) throw DataError(path.string() + ": only 8-bit PGM is supported");
  img.pixels.resize(img.width * img.height);
  if (magic == "P5") {
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw DataError(path.string() + ": truncated");
  } else {
    for (auto& p : img.pixels) {
      const std::size_t v = header_number(in, path);
      if (v > maxval) throw DataError(path.string() + ": pixel exceeds maxval");
      p = static_cast<std::uint8_t>(v);
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot write");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open");
  if (next_token(in) != "P6") throw DataError(path.string() + ": not a binary PPM file");
  RgbImage img;
  img.width = header_number(in, path);
  img.height = header_number(in, path);
  if (header_number(in, path) != 255) throw DataError(path.string() + ": only 8-bit PPM is supported");
  img.pixels.resize(3 * img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw DataError(path.string() + ": truncated");
  return img;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot write");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

#ifdef HANET_HAVE_PNG
bool png_supported() { return true; }

GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError(path.string() + ": " + image.message);
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0 && (image.format & PNG_FORMAT_FLAG_LINEAR) == 0;
  const bool palette = (image.format & PNG_FORMAT_FLAG_COLORMAP) != 0;
  if (!gray || palette) {
    png_image_free(&image);
    throw DataError(path.string() + ": not an 8-bit grayscale label raster");
  }
  image.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError(path.string() + ": " + image.message);
  }
  return out;
}
#else
bool png_supported() { return false; }

GrayImage read_png_gray(const std::filesystem::path& path) {
  throw DataError(path.string() + ": PNG support not compiled in");
}
#endif

void write_csv(const std::filesystem::path& path, std::size_t rows, std::size_t cols, const std::vector<double>& values,
               const std::vector<std::string>& header, int digits) {
  if (values.size() != rows * cols) throw ShapeError("write_csv: value count does not match rows x cols");
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot write");
  if (!header.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
  }
  char buf[64];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.*g", digits, values[r * cols + c]);
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

void write_heatmap_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                       const std::vector<double>& values, std::size_t cell_size) {
  if (values.size() != rows * cols) throw ShapeError("write_heatmap_pgm: value count does not match rows x cols");
  if (cell_size == 0) cell_size = 1;
  GrayImage img;
  img.width = cols * cell_size;
  img.height = rows * cell_size;
  img.pixels.resize(img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double v = std::clamp(values[(y / cell_size) * cols + x / cell_size], 0.0, 1.0);
      img.pixels[y * img.width + x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  write_pgm(path, img);
}

}  // namespace hanet::io
