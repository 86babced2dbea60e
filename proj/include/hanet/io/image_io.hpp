#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hanet::io {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB
};

// Binary (P5) or ASCII (P2) 8-bit PGM.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Binary (P6) 8-bit PPM.
RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

bool png_supported();
// 8-bit single-channel PNG. Throws DataError for other colour types or when
// PNG support was not compiled in.
GrayImage read_png_gray(const std::filesystem::path& path);

// Matrix as CSV with `digits` significant digits; optional header row.
void write_csv(const std::filesystem::path& path, std::size_t rows, std::size_t cols, const std::vector<double>& values,
               const std::vector<std::string>& header = {}, int digits = 6);

// Values in [0, 1] mapped to round(255 * v); each cell drawn as a
// cell_size x cell_size block.
void write_heatmap_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                       const std::vector<double>& values, std::size_t cell_size = 1);

}  // namespace hanet::io
