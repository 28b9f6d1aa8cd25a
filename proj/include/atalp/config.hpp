#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "atalp/dataio.hpp"
#include "atalp/evalharness.hpp"
#include "atalp/trainer.hpp"

namespace atalp {

/// Flat key=value table with dotted section names. Only keys present in the
/// defaults are accepted; anything else is a ConfigError.
class ConfigTable {
 public:
  /// The keys of `schema` are the complete set of accepted keys.
  explicit ConfigTable(std::map<std::string, std::string> schema) : values_(std::move(schema)) {}
  static ConfigTable defaults();

  /// Throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool contains(const std::string& key) const { return values_.count(key) != 0; }

  /// Applies "key = value" lines; '#' starts a comment, blank lines are skipped.
  void merge_text(std::string_view text, std::string_view origin = "config");
  /// Applies one "key=value" override.
  void apply_override(std::string_view assignment);

  /// Sorted "key = value" lines.
  std::string to_text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Which threat models an evaluation runs.
enum class ThreatSelection { gray_box, black_box, both };

struct EvalSettings {
  ThreatSelection mode = ThreatSelection::both;
  std::vector<double> epsilons{0.25, 0.5};
  std::vector<int> iterations{10, 50, 100, 200};
  double step_size = 1.0 / 256.0;
  std::uint64_t seed = 0;
  Index batch_size = 100;
  int region_group = 1;

  std::vector<ThreatMode> modes() const;
};

struct RunConfig {
  std::string dataset_id = "blobs2";
  std::filesystem::path dataset_root;
  DatasetOptions dataset;
  std::string model_arch = "smallcnn4";
  std::string surrogate_arch = "smallcnn4_deep";
  std::filesystem::path checkpoint;
  std::filesystem::path surrogate_checkpoint;
  TrainConfig train;
  EvalSettings eval;
  std::filesystem::path output_dir = "out";

  /// Parses and validates every key; referenced input paths must exist.
  static RunConfig from_table(const ConfigTable& table);
  /// Fully-resolved table (derived values such as "auto" step sizes made explicit).
  ConfigTable to_table() const;
};

/// Defaults, then the file (if non-empty), then overrides in order.
ConfigTable load_config_table(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace atalp
