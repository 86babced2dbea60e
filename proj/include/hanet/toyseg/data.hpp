#pragma once

#include <filesystem>
#include <vector>

#include "hanet/core/autograd.hpp"
#include "hanet/core/rng.hpp"
#include "hanet/io/image_io.hpp"
#include "hanet/stats/scenestats.hpp"

namespace hanet::toyseg {

struct Sample {
  io::RgbImage image;
  stats::LabelMap label;
};

using Dataset = std::vector<Sample>;

// Images whose classes are tied to vertical position. Class c dominates the
// c-th of num_classes equal horizontal bands. Classes c and c + ceil(K/2)
// share one appearance, so only height tells them apart. With probability
// `noise` a cell (the band's rows times a random run of columns) is relabeled
// to another class and painted with its appearance; band boundaries move by
// up to noise * band_height / 2 rows per image. With probability `camouflage`
// a cell keeps its label but takes the appearance of another class, so a
// class's texture also shows up at heights where the class is absent.
Dataset synth_banded(std::uint64_t seed, std::size_t n_images, std::size_t height, std::size_t width,
                     std::size_t num_classes, double noise, double camouflage = 0.0);

// Generating band of class c as a row fraction [begin, end).
stats::Band synth_band(std::size_t cls, std::size_t num_classes);
// Appearance group of class c.
std::size_t synth_appearance(std::size_t cls, std::size_t num_classes);

// <dir>/images/<name>.ppm and <dir>/labels/<name>.pgm, names zero-padded.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
// Pairs images/*.ppm with labels/*.pgm by stem, sorted by name.
Dataset load_dataset(const std::filesystem::path& dir);

// N x 3 x H x W input tensor, values mapped from [0, 255] to [-1, 1].
core::Tensor to_input(const std::vector<const io::RgbImage*>& images);

}  // namespace hanet::toyseg
