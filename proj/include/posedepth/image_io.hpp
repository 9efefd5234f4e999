#pragma once

#include <filesystem>

#include "posedepth/tensor.hpp"

namespace posedepth {

/// Binary P6, maxval 255, from a 3 x H x W tensor with values in [0, 1].
void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// Binary P5, maxval 255, from an H x W tensor with values in [0, 1].
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Reads P6 into 3 x H x W scaled to [0, 1].
Tensor read_ppm(const std::filesystem::path& path);
/// Reads P5 into H x W scaled to [0, 1].
Tensor read_pgm(const std::filesystem::path& path);

/// Disparity (1 / depth) min-max normalized to [0, 1]; a constant map gives
/// all zeros.
Tensor disparity_visualization(const Tensor& depth);

}  // namespace posedepth
