#include "atalp/dataio.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "atalp/image_io.hpp"

namespace atalp {

namespace fs = std::filesystem;

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

RegionMask::RegionMask(Pixels pixels) : pixels_(std::move(pixels)) {
  if (pixels_.size() == 0) throw InputError("region mask is empty");
  if (!pixels_.any()) throw InputError("region mask has no positive pixel");
}

std::vector<std::vector<Index>> Dataset::batch_order(Index batch_size, bool shuffle,
                                                     std::uint64_t shuffle_seed) const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<Index> order(static_cast<std::size_t>(size()));
  std::iota(order.begin(), order.end(), Index{0});
  if (shuffle) {
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<Index>> batches;
  for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(batch_size)) {
    const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(first),
                         order.begin() + static_cast<std::ptrdiff_t>(last));
  }
  return batches;
}

void Dataset::validate() const {
  ImageBatch<double> view{images, labels};
  view.validate(num_classes());
  if (static_cast<Index>(ids.size()) != size()) throw InputError("dataset id count differs from image count");
}

namespace {

void generate_blobs(Split split, const DatasetOptions& options, Dataset* data, std::vector<RegionMask>* masks) {
  const Index s = options.image_size;
  if (s < 16 || s % 16 != 0) throw ConfigError("blobs2 image_size must be a positive multiple of 16");
  const Index n = split == Split::train ? options.train_size : options.test_size;
  if (n < 1) throw ConfigError("blobs2 split size must be >= 1");
  std::mt19937_64 rng(options.seed * 2654435761ULL + (split == Split::train ? 17 : 91));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double size = static_cast<double>(s);

  if (data) {
    data->id = "blobs2";
    data->images = Tensor<double>(n, 3, s, s);
    data->labels.resize(static_cast<std::size_t>(n));
    data->ids.resize(static_cast<std::size_t>(n));
    data->class_names = {"left", "right"};
  }
  if (masks) masks->clear();

  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double sigma = uniform(2.0, 3.0);
    const double cx = label == 0 ? uniform(0.2, 0.4) * size : uniform(0.6, 0.8) * size;
    const double cy = uniform(0.2, 0.8) * size;
    const double amplitude = uniform(0.85, 1.0);
    double tint[3];
    for (double& t : tint) t = uniform(0.9, 1.0);
    for (Index c = 0; c < 3; ++c)
      for (Index h = 0; h < s; ++h)
        for (Index w = 0; w < s; ++w) {
          const double d2 = (w - cx) * (w - cx) + (h - cy) * (h - cy);
          const double v = uniform(0.0, 0.1) + amplitude * tint[c] * std::exp(-d2 / (2.0 * sigma * sigma));
          if (data) data->images(i, c, h, w) = std::min(v, 1.0);
        }
    if (data) {
      data->labels[static_cast<std::size_t>(i)] = label;
      char name[64];
      std::snprintf(name, sizeof name, "blobs2_%s_%05ld", std::string(to_string(split)).c_str(),
                    static_cast<long>(i));
      data->ids[static_cast<std::size_t>(i)] = name;
    }
    if (masks) {
      RegionMask::Pixels box = RegionMask::Pixels::Constant(s, s, false);
      const Index x0 = std::max<Index>(0, static_cast<Index>(std::ceil(cx - 2 * sigma)));
      const Index x1 = std::min<Index>(s - 1, static_cast<Index>(std::floor(cx + 2 * sigma)));
      const Index y0 = std::max<Index>(0, static_cast<Index>(std::ceil(cy - 2 * sigma)));
      const Index y1 = std::min<Index>(s - 1, static_cast<Index>(std::floor(cy + 2 * sigma)));
      box.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1) = true;
      masks->emplace_back(std::move(box));
    }
  }
}

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<fs::path> class_dirs(const fs::path& split_dir) {
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(split_dir))
    if (entry.is_directory() && entry.path().filename() != "masks") dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

fs::path split_directory(const fs::path& root, Split split) {
  const fs::path dir = root / std::string(to_string(split));
  if (!fs::is_directory(dir)) throw IoError("missing dataset directory: " + dir.string());
  return dir;
}

Dataset load_folder(Split split, const fs::path& root, const DatasetOptions& options) {
  const fs::path dir = split_directory(root, split);
  const Index s = options.image_size;
  Dataset data;
  data.id = "folder";
  std::vector<Tensor<double>> images;
  for (const auto& cls : class_dirs(dir)) {
    const int label = static_cast<int>(data.class_names.size());
    data.class_names.push_back(cls.filename().string());
    for (const auto& file : sorted_pngs(cls)) {
      Tensor<double> img = to_tensor(read_png(file, 3));
      if (img.height() != s || img.width() != s) {
        Tensor<double> resized(1, 3, s, s);
        for (Index c = 0; c < 3; ++c) {
          MatrixX<double> plane(img.height(), img.width());
          for (Index h = 0; h < img.height(); ++h)
            for (Index w = 0; w < img.width(); ++w) plane(h, w) = img(0, c, h, w);
          const MatrixX<double> r = bilinear_resize(plane, s, s);
          for (Index h = 0; h < s; ++h)
            for (Index w = 0; w < s; ++w) resized(0, c, h, w) = std::clamp(r(h, w), 0.0, 1.0);
        }
        img = std::move(resized);
      }
      images.push_back(std::move(img));
      data.labels.push_back(label);
      data.ids.push_back(file.stem().string());
    }
  }
  if (data.class_names.size() < 2) throw IoError("dataset " + dir.string() + " needs at least two class directories");
  if (images.empty()) throw IoError("dataset " + dir.string() + " contains no .png images");
  data.images = Tensor<double>(static_cast<Index>(images.size()), 3, s, s);
  for (std::size_t i = 0; i < images.size(); ++i) data.images.example(static_cast<Index>(i)) = images[i].matrix();
  return data;
}

RegionMask::Pixels nearest_resize(const RegionMask::Pixels& m, Index h, Index w) {
  if (m.rows() == h && m.cols() == w) return m;
  RegionMask::Pixels out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) out(y, x) = m(y * m.rows() / h, x * m.cols() / w);
  return out;
}

}  // namespace

Dataset make_blobs2(Split split, const DatasetOptions& options) {
  Dataset data;
  generate_blobs(split, options, &data, nullptr);
  return data;
}

std::vector<RegionMask> make_blobs2_masks(Split split, const DatasetOptions& options) {
  std::vector<RegionMask> masks;
  generate_blobs(split, options, nullptr, &masks);
  return masks;
}

Dataset load_dataset(std::string_view dataset_id, Split split, const fs::path& root, const DatasetOptions& options) {
  Dataset data;
  if (dataset_id == "blobs2")
    data = make_blobs2(split, options);
  else if (dataset_id == "folder")
    data = load_folder(split, root, options);
  else
    throw ConfigError("unknown dataset id '" + std::string(dataset_id) + "'");
  data.validate();
  return data;
}

std::map<std::string, RegionMask> load_masks(std::string_view dataset_id, Split split, const fs::path& root,
                                             const DatasetOptions& options) {
  std::map<std::string, RegionMask> out;
  if (dataset_id == "blobs2") {
    const Dataset data = make_blobs2(split, options);
    auto masks = make_blobs2_masks(split, options);
    for (std::size_t i = 0; i < masks.size(); ++i) out.emplace(data.ids[i], std::move(masks[i]));
    return out;
  }
  if (dataset_id != "folder") throw ConfigError("unknown dataset id '" + std::string(dataset_id) + "'");
  const fs::path dir = split_directory(root, split);
  const fs::path mask_dir = dir / "masks";
  for (const auto& cls : class_dirs(dir)) {
    for (const auto& file : sorted_pngs(cls)) {
      const fs::path mask_file = mask_dir / (file.stem().string() + ".png");
      if (!fs::exists(mask_file)) throw InputError("missing region mask: " + mask_file.string());
      const Raster image = read_png(file, 1);
      const Raster mask = read_png(mask_file, 1);
      if (mask.width != image.width || mask.height != image.height)
        throw InputError("mask " + mask_file.string() + " is " + std::to_string(mask.width) + "x" +
                         std::to_string(mask.height) + " but its image is " + std::to_string(image.width) + "x" +
                         std::to_string(image.height));
      RegionMask::Pixels pixels(mask.height, mask.width);
      for (Index h = 0; h < mask.height; ++h)
        for (Index w = 0; w < mask.width; ++w) pixels(h, w) = mask.samples[static_cast<std::size_t>(h * mask.width + w)] != 0;
      if (!pixels.any()) throw InputError("region mask " + mask_file.string() + " has no positive pixel");
      out.emplace(file.stem().string(), RegionMask(nearest_resize(pixels, options.image_size, options.image_size)));
    }
  }
  return out;
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  static std::atomic<unsigned long> counter{0};
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_real(double value) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, result.ptr);
}

}  // namespace atalp
