#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atalp/backbone.hpp"
#include "atalp/tensor.hpp"

namespace atalp {

enum class Split { train, test };

Split parse_split(std::string_view name);
std::string_view to_string(Split split);

/// Binary key-region mask; true marks a discriminative pixel. At least one pixel is set.
class RegionMask {
 public:
  using Pixels = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;  // H x W

  /// Throws InputError on an empty or all-false mask.
  explicit RegionMask(Pixels pixels);

  const Pixels& pixels() const { return pixels_; }
  Index height() const { return pixels_.rows(); }
  Index width() const { return pixels_.cols(); }
  Index area() const { return pixels_.count(); }
  double area_fraction() const { return static_cast<double>(area()) / static_cast<double>(pixels_.size()); }

 private:
  Pixels pixels_;
};

struct DatasetOptions {
  Index image_size = 32;
  Index train_size = 1000;
  Index test_size = 200;
  std::uint64_t seed = 0;  // generator seed for synthetic sets
};

/// A labelled split held in memory as doubles in [0,1].
struct Dataset {
  std::string id;
  Tensor<double> images;
  std::vector<int> labels;
  std::vector<std::string> ids;  // per-example stem, used to pair masks
  std::vector<std::string> class_names;

  Index size() const { return images.batch(); }
  Index num_classes() const { return static_cast<Index>(class_names.size()); }

  template <typename Scalar>
  ImageBatch<Scalar> batch(std::span<const Index> indices) const {
    ImageBatch<Scalar> out;
    out.pixels = images.gather(indices).template cast<Scalar>();
    out.labels.reserve(indices.size());
    for (Index i : indices) out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
  }

  /// Examples [first, first + count) in storage order.
  template <typename Scalar>
  ImageBatch<Scalar> range(Index first, Index count) const {
    ImageBatch<Scalar> out;
    out.pixels = images.slice(first, count).template cast<Scalar>();
    out.labels.assign(labels.begin() + first, labels.begin() + first + count);
    return out;
  }

  /// Index lists of size <= batch_size covering the split once. Shuffled with
  /// `shuffle_seed` unless it is nullopt-like (shuffle = false).
  std::vector<std::vector<Index>> batch_order(Index batch_size, bool shuffle, std::uint64_t shuffle_seed) const;

  /// Throws InputError unless pixels lie in [0,1] and labels are in range.
  void validate() const;
};

/// Built-in synthetic two-class set: one soft coloured blob per 32x32 image on a
/// faint noise background; class 0 places the blob in the left half, class 1 in
/// the right half. Masks are the blob bounding boxes.
Dataset make_blobs2(Split split, const DatasetOptions& options);
std::vector<RegionMask> make_blobs2_masks(Split split, const DatasetOptions& options);

/// "blobs2" (synthetic) or "folder" (root/split/class_name/*.png, classes sorted by
/// name, images resampled to options.image_size). Throws IoError naming the first
/// missing or undecodable file.
Dataset load_dataset(std::string_view dataset_id, Split split, const std::filesystem::path& root,
                     const DatasetOptions& options = {});

/// Masks keyed by example id. Folder layout: root/split/masks/<id>.png, nonzero = key
/// region. Throws InputError on missing, empty or wrongly sized masks.
std::map<std::string, RegionMask> load_masks(std::string_view dataset_id, Split split,
                                             const std::filesystem::path& root, const DatasetOptions& options = {});

/// Writes `content` to a sibling temporary file and renames it over `path`, so
/// readers see either the old or the new file in full.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip decimal form.
std::string format_real(double value);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Binary checkpoint: magic, format version, architecture id, class count, group
/// names, named float64 parameter arrays with shapes, and the metadata map.
template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const std::filesystem::path& path);

/// Throws IncompatibleError on a format version mismatch and IoError on a
/// malformed or missing file.
template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& path);

}  // namespace atalp
