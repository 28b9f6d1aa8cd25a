#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "atalp/attack.hpp"
#include "atalp/backbone.hpp"
#include "atalp/dataio.hpp"
#include "atalp/image_io.hpp"

namespace atalp {

enum class ThreatMode { gray_box, black_box };

ThreatMode parse_threat_mode(std::string_view name);
std::string_view to_string(ThreatMode mode);

/// Gray-box attacks the defended model itself; black-box crafts examples on an
/// independent surrogate and only classifies them with the defended model.
template <typename Scalar>
struct ThreatModel {
  ThreatMode mode = ThreatMode::gray_box;
  const Model<Scalar>* surrogate = nullptr;

  static ThreatModel gray_box() { return {ThreatMode::gray_box, nullptr}; }
  static ThreatModel black_box(const Model<Scalar>& surrogate) { return {ThreatMode::black_box, &surrogate}; }
};

struct EvalRow {
  ThreatMode mode = ThreatMode::gray_box;
  double epsilon = 0;
  int iterations = 0;
  double top1 = 0;
  long correct = 0;
  long n = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // sorted by (mode, epsilon, iterations)
  std::map<std::string, std::string> metadata;

  /// CSV with header mode,epsilon,iterations,top1,n.
  std::string to_csv() const;
  /// Throws InputError if the cell is absent.
  const EvalRow& cell(ThreatMode mode, double epsilon, int iterations) const;
  void merge(const EvalReport& other);
};

/// Writes the report CSV atomically and its metadata as key=value lines to
/// `<path>.meta` (also atomically).
void save_report(const EvalReport& report, const std::filesystem::path& path);

/// Top-1 accuracy under PGD (no random start) for every (epsilon, iterations)
/// cell. Throws ConfigError if black-box is requested without a surrogate or
/// with a surrogate of the defended model's own architecture.
template <typename Scalar>
EvalReport evaluate_robustness(const Model<Scalar>& defended, const ThreatModel<Scalar>& threat,
                               const Dataset& testset, const std::vector<double>& epsilons,
                               const std::vector<int>& iteration_counts, double step_size,
                               Index batch_size = 100);

/// Clean top-1 accuracy.
template <typename Scalar>
double clean_accuracy(const Model<Scalar>& model, const Dataset& testset, Index batch_size = 100);

/// Mass of `map` inside the mask, after normalizing the map to sum 1, divided by
/// the mask's area fraction. `map` must already be at mask resolution. A map
/// with zero total mass is treated as uniform (score 1).
double key_region_score(const MatrixX<double>& map, const RegionMask& mask);

/// Mean key_region_score over the attacked test set, using the chosen group's
/// attention map (power 2) bilinearly upsampled to image resolution. Throws
/// InputError if any example lacks a mask.
template <typename Scalar>
double key_region_activation(const Model<Scalar>& model, const Dataset& testset,
                             const std::map<std::string, RegionMask>& masks, const AttackConfig& attack,
                             int group_index, std::uint64_t seed = 0, Index batch_size = 100);

/// Upsampled (bilinear) and min-max normalized to 0..255; a constant map renders
/// as uniform mid-gray (128).
Raster heatmap_raster(const MatrixX<double>& map, Index out_height, Index out_width);

/// Writes clean_group{0..3}.png and adv_group{0..3}.png for one image (a batch of
/// one) attacked with `attack` against `label`. Returns the 8 paths.
template <typename Scalar>
std::vector<std::filesystem::path> export_attention_heatmaps(const Model<Scalar>& model,
                                                             const ImageBatch<Scalar>& image,
                                                             const AttackConfig& attack,
                                                             const std::filesystem::path& out_dir,
                                                             std::uint64_t seed = 0);

}  // namespace atalp
