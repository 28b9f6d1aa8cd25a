#include "atalp/evalharness.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <tuple>

#include "atalp/image_io.hpp"
#include "atalp/pairing.hpp"

namespace atalp {

namespace fs = std::filesystem;

ThreatMode parse_threat_mode(std::string_view name) {
  if (name == "gray_box") return ThreatMode::gray_box;
  if (name == "black_box") return ThreatMode::black_box;
  throw ConfigError("unknown threat mode '" + std::string(name) + "'");
}

std::string_view to_string(ThreatMode mode) { return mode == ThreatMode::gray_box ? "gray_box" : "black_box"; }

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "mode,epsilon,iterations,top1,n\n";
  for (const auto& r : rows)
    out << to_string(r.mode) << ',' << format_real(r.epsilon) << ',' << r.iterations << ',' << format_real(r.top1)
        << ',' << r.n << '\n';
  return out.str();
}

const EvalRow& EvalReport::cell(ThreatMode mode, double epsilon, int iterations) const {
  for (const auto& r : rows)
    if (r.mode == mode && r.epsilon == epsilon && r.iterations == iterations) return r;
  throw InputError("no report cell for " + std::string(to_string(mode)) + " epsilon=" + format_real(epsilon) +
                   " iterations=" + std::to_string(iterations));
}

void EvalReport::merge(const EvalReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  std::stable_sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return std::tie(a.mode, a.epsilon, a.iterations) < std::tie(b.mode, b.epsilon, b.iterations);
  });
  for (const auto& [k, v] : other.metadata) metadata.insert_or_assign(k, v);
}

void save_report(const EvalReport& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, report.to_csv());
  std::ostringstream meta;
  for (const auto& [k, v] : report.metadata) meta << k << '=' << v << '\n';
  fs::path meta_path = path;
  meta_path += ".meta";
  write_file_atomic(meta_path, meta.str());
}

namespace {

template <typename Scalar>
long count_correct(const MatrixX<Scalar>& logits, const std::vector<int>& labels) {
  long correct = 0;
  for (Index b = 0; b < logits.rows(); ++b) {
    Index arg;
    logits.row(b).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(b)];
  }
  return correct;
}

}  // namespace

template <typename Scalar>
double clean_accuracy(const Model<Scalar>& model, const Dataset& testset, Index batch_size) {
  long correct = 0;
  for (Index first = 0; first < testset.size(); first += batch_size) {
    const auto batch = testset.range<Scalar>(first, std::min(batch_size, testset.size() - first));
    correct += count_correct(model.logits(batch.pixels), batch.labels);
  }
  return static_cast<double>(correct) / static_cast<double>(testset.size());
}

template <typename Scalar>
EvalReport evaluate_robustness(const Model<Scalar>& defended, const ThreatModel<Scalar>& threat,
                               const Dataset& testset, const std::vector<double>& epsilons,
                               const std::vector<int>& iteration_counts, double step_size, Index batch_size) {
  const Model<Scalar>* attacker = &defended;
  if (threat.mode == ThreatMode::black_box) {
    if (threat.surrogate == nullptr) throw ConfigError("black-box evaluation requires a surrogate model");
    if (threat.surrogate->architecture_id() == defended.architecture_id())
      throw ConfigError("black-box surrogate must use a different architecture than the defended model");
    attacker = threat.surrogate;
  }
  if (!(step_size > 0.0)) throw ConfigError("attack step_size must be > 0");
  if (batch_size < 1) throw ConfigError("eval batch_size must be >= 1");
  for (double e : epsilons)
    if (!(e >= 0.0) || e > 1.0) throw ConfigError("eval epsilons must lie in [0,1]");
  for (int it : iteration_counts)
    if (it < 0) throw ConfigError("eval iteration counts must be >= 0");
  testset.validate();

  std::map<std::pair<double, int>, long> correct;
  for (double e : epsilons)
    for (int it : iteration_counts) correct[{e, it}] = 0;

  for (Index first = 0; first < testset.size(); first += batch_size) {
    const auto batch = testset.range<Scalar>(first, std::min(batch_size, testset.size() - first));
    for (double eps : epsilons) {
      const AttackConfig config{eps, step_size, 0, false, false};
      const auto snaps = pgd_trajectory<Model<Scalar>, std::mt19937_64>(*attacker, batch, config,
                                                                         iteration_counts, nullptr);
      for (std::size_t i = 0; i < snaps.size(); ++i)
        correct[{eps, iteration_counts[i]}] += count_correct(defended.logits(snaps[i].pixels), batch.labels);
    }
  }

  EvalReport report;
  for (const auto& [key, c] : correct) {
    EvalRow row;
    row.mode = threat.mode;
    row.epsilon = key.first;
    row.iterations = key.second;
    row.correct = c;
    row.n = static_cast<long>(testset.size());
    row.top1 = static_cast<double>(c) / static_cast<double>(row.n);
    report.rows.push_back(row);
  }
  report.metadata["model"] = defended.architecture_id();
  if (defended.metadata().count("variant")) report.metadata["variant"] = defended.metadata().at("variant");
  if (threat.mode == ThreatMode::black_box) report.metadata["surrogate"] = threat.surrogate->architecture_id();
  report.metadata["step_size"] = format_real(step_size);
  report.metadata["random_start"] = "false";
  report.metadata["dataset"] = testset.id;
  return report;
}

double key_region_score(const MatrixX<double>& map, const RegionMask& mask) {
  if (map.rows() != mask.height() || map.cols() != mask.width())
    throw InputError("attention map " + std::to_string(map.rows()) + "x" + std::to_string(map.cols()) +
                     " does not match mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  const double total = map.sum();
  if (!(total > 0.0)) return 1.0;
  const double inside = mask.pixels().select(map.array(), 0.0).sum();
  return (inside / total) / mask.area_fraction();
}

template <typename Scalar>
double key_region_activation(const Model<Scalar>& model, const Dataset& testset,
                             const std::map<std::string, RegionMask>& masks, const AttackConfig& attack,
                             int group_index, std::uint64_t seed, Index batch_size) {
  if (group_index < 0 || group_index >= kNumGroups) throw InputError("group index out of range");
  attack.validate();
  for (const auto& id : testset.ids)
    if (!masks.count(id)) throw InputError("no region mask for example " + id);
  std::mt19937_64 rng(seed);
  double sum = 0.0;
  for (Index first = 0; first < testset.size(); first += batch_size) {
    const Index count = std::min(batch_size, testset.size() - first);
    const auto batch = testset.range<Scalar>(first, count);
    const auto adv = pgd_attack(model, batch, attack, rng);
    const auto result = model.forward(adv.pixels);
    const auto map = attention_map(result.group_activations[static_cast<std::size_t>(group_index)], 2);
    for (Index b = 0; b < count; ++b) {
      const RegionMask& mask = masks.at(testset.ids[static_cast<std::size_t>(first + b)]);
      const MatrixX<double> up =
          bilinear_resize(map.image(b).template cast<double>(), mask.height(), mask.width());
      sum += key_region_score(up, mask);
    }
  }
  return sum / static_cast<double>(testset.size());
}

Raster heatmap_raster(const MatrixX<double>& map, Index out_height, Index out_width) {
  const MatrixX<double> up = bilinear_resize(map, out_height, out_width);
  Raster r;
  r.width = out_width;
  r.height = out_height;
  r.channels = 1;
  r.samples.resize(static_cast<std::size_t>(out_width * out_height));
  const double lo = up.minCoeff();
  const double hi = up.maxCoeff();
  for (Index h = 0; h < out_height; ++h)
    for (Index w = 0; w < out_width; ++w) {
      const double v = hi > lo ? (up(h, w) - lo) / (hi - lo) * 255.0 : 128.0;
      r.samples[static_cast<std::size_t>(h * out_width + w)] = static_cast<std::uint8_t>(std::lround(v));
    }
  return r;
}

template <typename Scalar>
std::vector<fs::path> export_attention_heatmaps(const Model<Scalar>& model, const ImageBatch<Scalar>& image,
                                                const AttackConfig& attack, const fs::path& out_dir,
                                                std::uint64_t seed) {
  if (image.size() != 1) throw InputError("heatmap export takes exactly one image");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());
  std::mt19937_64 rng(seed);
  const auto adv = pgd_attack(model, image, attack, rng);
  const auto clean_out = model.forward(image.pixels);
  const auto adv_out = model.forward(adv.pixels);
  const Index h = image.pixels.height(), w = image.pixels.width();
  std::vector<fs::path> paths;
  for (const auto& [prefix, result] : {std::pair{"clean", &clean_out}, std::pair{"adv", &adv_out}}) {
    for (int g = 0; g < kNumGroups; ++g) {
      const auto map = attention_map(result->group_activations[static_cast<std::size_t>(g)], 2);
      const fs::path path = out_dir / (std::string(prefix) + "_group" + std::to_string(g) + ".png");
      write_png(path, heatmap_raster(map.image(0).template cast<double>(), h, w));
      paths.push_back(path);
    }
  }
  return paths;
}

#define ATALP_INSTANTIATE_EVAL(S)                                                                                    \
  template double clean_accuracy<S>(const Model<S>&, const Dataset&, Index);                                        \
  template EvalReport evaluate_robustness<S>(const Model<S>&, const ThreatModel<S>&, const Dataset&,                \
                                             const std::vector<double>&, const std::vector<int>&, double, Index);   \
  template double key_region_activation<S>(const Model<S>&, const Dataset&, const std::map<std::string, RegionMask>&, \
                                           const AttackConfig&, int, std::uint64_t, Index);                         \
  template std::vector<fs::path> export_attention_heatmaps<S>(const Model<S>&, const ImageBatch<S>&,                \
                                                              const AttackConfig&, const fs::path&, std::uint64_t);

ATALP_INSTANTIATE_EVAL(float)
ATALP_INSTANTIATE_EVAL(double)

}  // namespace atalp
