#include "atalp/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "atalp/errors.hpp"

namespace atalp {

Raster read_png(const std::filesystem::path& path, Index channels) {
  if (channels != 1 && channels != 3) throw InputError("read_png supports 1 or 3 channels");
  if (!std::filesystem::exists(path)) throw IoError("missing image file: " + path.string());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot decode image " + path.string() + ": " + image.message);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raster raster;
  raster.width = image.width;
  raster.height = image.height;
  raster.channels = channels;
  raster.samples.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.samples.data(), 0, nullptr)) {
    std::string message = image.message;
    png_image_free(&image);
    throw IoError("cannot decode image " + path.string() + ": " + message);
  }
  return raster;
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) throw InputError("write_png supports 1 or 3 channels");
  if (static_cast<Index>(raster.samples.size()) != raster.width * raster.height * raster.channels)
    throw InputError("raster sample count does not match its shape");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raster.width);
  image.height = static_cast<png_uint_32>(raster.height);
  image.format = raster.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, raster.samples.data(), 0, nullptr))
    throw IoError("cannot write image " + path.string() + ": " + image.message);
}

Raster to_raster(const Tensor<double>& images, Index example) {
  Raster r;
  r.width = images.width();
  r.height = images.height();
  r.channels = images.channels();
  r.samples.resize(static_cast<std::size_t>(r.width * r.height * r.channels));
  std::size_t k = 0;
  for (Index h = 0; h < r.height; ++h)
    for (Index w = 0; w < r.width; ++w)
      for (Index c = 0; c < r.channels; ++c) {
        const double v = std::clamp(images(example, c, h, w), 0.0, 1.0);
        r.samples[k++] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return r;
}

Tensor<double> to_tensor(const Raster& raster) {
  Tensor<double> t(1, raster.channels, raster.height, raster.width);
  std::size_t k = 0;
  for (Index h = 0; h < raster.height; ++h)
    for (Index w = 0; w < raster.width; ++w)
      for (Index c = 0; c < raster.channels; ++c) t(0, c, h, w) = raster.samples[k++] / 255.0;
  return t;
}

namespace {

struct Tap {
  Index lo, hi;
  double t;
};

Tap source_tap(Index out, Index out_size, Index in_size) {
  const double pos = (static_cast<double>(out) + 0.5) * static_cast<double>(in_size) / static_cast<double>(out_size) - 0.5;
  const double clamped = std::clamp(pos, 0.0, static_cast<double>(in_size - 1));
  const Index lo = static_cast<Index>(std::floor(clamped));
  const Index hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, clamped - static_cast<double>(lo)};
}

}  // namespace

MatrixX<double> bilinear_resize(const MatrixX<double>& map, Index out_height, Index out_width) {
  if (map.size() == 0 || out_height < 1 || out_width < 1) throw InputError("bilinear_resize: empty input or output");
  if (map.rows() == out_height && map.cols() == out_width) return map;
  MatrixX<double> out(out_height, out_width);
  for (Index y = 0; y < out_height; ++y) {
    const Tap ty = source_tap(y, out_height, map.rows());
    for (Index x = 0; x < out_width; ++x) {
      const Tap tx = source_tap(x, out_width, map.cols());
      const double top = map(ty.lo, tx.lo) + tx.t * (map(ty.lo, tx.hi) - map(ty.lo, tx.lo));
      const double bottom = map(ty.hi, tx.lo) + tx.t * (map(ty.hi, tx.hi) - map(ty.hi, tx.lo));
      out(y, x) = top + ty.t * (bottom - top);
    }
  }
  return out;
}

}  // namespace atalp
