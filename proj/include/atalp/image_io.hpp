#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "atalp/tensor.hpp"

namespace atalp {

/// 8-bit raster: `channels` interleaved samples per pixel, row-major.
struct Raster {
  Index width = 0;
  Index height = 0;
  Index channels = 0;
  std::vector<std::uint8_t> samples;
};

/// PNG decode (any bit depth / colour type) to 8-bit gray (channels=1) or RGB (channels=3).
/// Throws IoError naming the file on a missing or undecodable file.
Raster read_png(const std::filesystem::path& path, Index channels);
/// Writes a 1- or 3-channel PNG. Throws IoError if the file cannot be written.
void write_png(const std::filesystem::path& path, const Raster& raster);

/// One example of `images` as an RGB/gray raster (values clamped to [0,1], rounded).
Raster to_raster(const Tensor<double>& images, Index example);
/// Raster samples scaled to [0,1] as a 1 x C x H x W tensor.
Tensor<double> to_tensor(const Raster& raster);

/// Bilinear resample with half-pixel centres and edge clamping. Interpolates as
/// a + t*(b - a), so a constant map stays exactly constant.
MatrixX<double> bilinear_resize(const MatrixX<double>& map, Index out_height, Index out_width);

}  // namespace atalp
