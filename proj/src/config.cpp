#include "atalp/config.hpp"

#include <charconv>
#include <sstream>

namespace atalp {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> items;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += format_real(items[i]);
    else
      out += std::to_string(items[i]);
  }
  return out;
}

ThreatSelection parse_selection(const std::string& text) {
  if (text == "gray_box") return ThreatSelection::gray_box;
  if (text == "black_box") return ThreatSelection::black_box;
  if (text == "both") return ThreatSelection::both;
  throw ConfigError("config key 'eval.mode': expected gray_box, black_box or both, got '" + text + "'");
}

std::string to_string(ThreatSelection s) {
  switch (s) {
    case ThreatSelection::gray_box: return "gray_box";
    case ThreatSelection::black_box: return "black_box";
    case ThreatSelection::both: return "both";
  }
  return "both";
}

void require_existing(const std::string& key, const fs::path& path) {
  if (!path.empty() && !fs::exists(path))
    throw ConfigError("config key '" + key + "' references missing path " + path.string());
}

}  // namespace

ConfigTable ConfigTable::defaults() { return RunConfig{}.to_table(); }

void ConfigTable::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& ConfigTable::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void ConfigTable::merge_text(std::string_view text, std::string_view origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(std::string(origin) + ":" + std::to_string(number) + ": expected key = value");
    set(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
  }
}

void ConfigTable::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string ConfigTable::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::vector<ThreatMode> EvalSettings::modes() const {
  switch (mode) {
    case ThreatSelection::gray_box: return {ThreatMode::gray_box};
    case ThreatSelection::black_box: return {ThreatMode::black_box};
    case ThreatSelection::both: return {ThreatMode::gray_box, ThreatMode::black_box};
  }
  return {};
}

ConfigTable RunConfig::to_table() const {
  std::map<std::string, std::string> v;
  v["dataset.id"] = dataset_id;
  v["dataset.root"] = dataset_root.string();
  v["dataset.image_size"] = std::to_string(dataset.image_size);
  v["dataset.train_size"] = std::to_string(dataset.train_size);
  v["dataset.test_size"] = std::to_string(dataset.test_size);
  v["dataset.seed"] = std::to_string(dataset.seed);
  v["model.arch"] = model_arch;
  v["model.surrogate_arch"] = surrogate_arch;
  v["model.checkpoint"] = checkpoint.string();
  v["model.surrogate_checkpoint"] = surrogate_checkpoint.string();
  v["train.epochs"] = std::to_string(train.epochs);
  v["train.batch_size"] = std::to_string(train.batch_size);
  v["train.learning_rate"] = format_real(train.learning_rate);
  v["train.momentum"] = format_real(train.momentum);
  v["train.lr_schedule"] = std::string(to_string(train.lr_schedule));
  v["train.optimizer"] = std::string(to_string(train.optimizer));
  v["train.seed"] = std::to_string(train.seed);
  v["train.checkpoint_every"] = std::to_string(train.checkpoint_every);
  v["train.attack.epsilon"] = format_real(train.train_attack.epsilon);
  v["train.attack.step_size"] = format_real(train.train_attack.step_size);
  v["train.attack.iterations"] = std::to_string(train.train_attack.num_iterations);
  v["train.attack.random_start"] = train.train_attack.random_start ? "true" : "false";
  v["pairing.alpha"] = format_real(train.pairing.alpha);
  v["pairing.beta"] = format_real(train.pairing.beta);
  v["pairing.attention_layers"] = join(train.pairing.attention_layers);
  v["pairing.attention_power"] = std::to_string(train.pairing.attention_power);
  v["pairing.norm_p"] = std::to_string(train.pairing.norm_p);
  v["pairing.ce_target"] = std::string(to_string(train.pairing.ce_target));
  v["eval.mode"] = to_string(eval.mode);
  v["eval.epsilons"] = join(eval.epsilons);
  v["eval.iterations"] = join(eval.iterations);
  v["eval.step_size"] = format_real(eval.step_size);
  v["eval.seed"] = std::to_string(eval.seed);
  v["eval.batch_size"] = std::to_string(eval.batch_size);
  v["eval.region_group"] = std::to_string(eval.region_group);
  v["output.dir"] = output_dir.string();
  return ConfigTable(std::move(v));
}

RunConfig RunConfig::from_table(const ConfigTable& t) {
  RunConfig rc;
  auto get = [&](const char* key) -> const std::string& { return t.get(key); };
  rc.dataset_id = get("dataset.id");
  if (rc.dataset_id != "blobs2" && rc.dataset_id != "folder")
    throw ConfigError("config key 'dataset.id': unknown dataset '" + rc.dataset_id + "'");
  rc.dataset_root = get("dataset.root");
  rc.dataset.image_size = parse_number<Index>("dataset.image_size", get("dataset.image_size"));
  rc.dataset.train_size = parse_number<Index>("dataset.train_size", get("dataset.train_size"));
  rc.dataset.test_size = parse_number<Index>("dataset.test_size", get("dataset.test_size"));
  rc.dataset.seed = parse_number<std::uint64_t>("dataset.seed", get("dataset.seed"));
  if (rc.dataset.image_size < 16 || rc.dataset.image_size % 16 != 0)
    throw ConfigError("config key 'dataset.image_size' must be a positive multiple of 16");
  if (rc.dataset_id == "folder") {
    if (rc.dataset_root.empty()) throw ConfigError("config key 'dataset.root' is required for folder datasets");
    require_existing("dataset.root", rc.dataset_root);
  }

  rc.model_arch = get("model.arch");
  rc.surrogate_arch = get("model.surrogate_arch");
  find_architecture(rc.model_arch);
  find_architecture(rc.surrogate_arch);
  rc.checkpoint = get("model.checkpoint");
  rc.surrogate_checkpoint = get("model.surrogate_checkpoint");
  require_existing("model.checkpoint", rc.checkpoint);
  require_existing("model.surrogate_checkpoint", rc.surrogate_checkpoint);

  auto& tr = rc.train;
  tr.epochs = parse_number<int>("train.epochs", get("train.epochs"));
  tr.batch_size = parse_number<int>("train.batch_size", get("train.batch_size"));
  tr.learning_rate = parse_number<double>("train.learning_rate", get("train.learning_rate"));
  tr.momentum = parse_number<double>("train.momentum", get("train.momentum"));
  tr.lr_schedule = parse_lr_schedule(get("train.lr_schedule"));
  tr.optimizer = parse_optimizer(get("train.optimizer"));
  tr.seed = parse_number<std::uint64_t>("train.seed", get("train.seed"));
  tr.checkpoint_every = parse_number<int>("train.checkpoint_every", get("train.checkpoint_every"));
  tr.train_attack.epsilon = parse_number<double>("train.attack.epsilon", get("train.attack.epsilon"));
  tr.train_attack.num_iterations = parse_number<int>("train.attack.iterations", get("train.attack.iterations"));
  tr.train_attack.random_start = parse_bool("train.attack.random_start", get("train.attack.random_start"));
  const std::string& step = get("train.attack.step_size");
  if (step == "auto") {
    tr.train_attack.step_size = AttackConfig::training(tr.train_attack.epsilon, std::max(1, tr.train_attack.num_iterations)).step_size;
  } else {
    tr.train_attack.step_size = parse_number<double>("train.attack.step_size", step);
  }

  auto& pc = tr.pairing;
  pc.alpha = parse_number<double>("pairing.alpha", get("pairing.alpha"));
  pc.beta = parse_number<double>("pairing.beta", get("pairing.beta"));
  pc.attention_layers = parse_list<int>("pairing.attention_layers", get("pairing.attention_layers"));
  pc.attention_power = parse_number<int>("pairing.attention_power", get("pairing.attention_power"));
  pc.norm_p = parse_number<int>("pairing.norm_p", get("pairing.norm_p"));
  pc.ce_target = parse_ce_target(get("pairing.ce_target"));
  tr.validate();

  auto& ev = rc.eval;
  ev.mode = parse_selection(get("eval.mode"));
  ev.epsilons = parse_list<double>("eval.epsilons", get("eval.epsilons"));
  ev.iterations = parse_list<int>("eval.iterations", get("eval.iterations"));
  ev.step_size = parse_number<double>("eval.step_size", get("eval.step_size"));
  ev.seed = parse_number<std::uint64_t>("eval.seed", get("eval.seed"));
  ev.batch_size = parse_number<Index>("eval.batch_size", get("eval.batch_size"));
  ev.region_group = parse_number<int>("eval.region_group", get("eval.region_group"));
  if (ev.epsilons.empty()) throw ConfigError("config key 'eval.epsilons' must list at least one value");
  if (ev.iterations.empty()) throw ConfigError("config key 'eval.iterations' must list at least one value");
  for (double e : ev.epsilons)
    if (!(e >= 0.0) || e > 1.0) throw ConfigError("config key 'eval.epsilons': values must lie in [0,1]");
  for (int it : ev.iterations)
    if (it < 0) throw ConfigError("config key 'eval.iterations': values must be >= 0");
  if (!(ev.step_size > 0.0)) throw ConfigError("config key 'eval.step_size' must be > 0");
  if (ev.batch_size < 1) throw ConfigError("config key 'eval.batch_size' must be >= 1");
  if (ev.region_group < 0 || ev.region_group >= kNumGroups)
    throw ConfigError("config key 'eval.region_group' must lie in [0,3]");

  rc.output_dir = get("output.dir");
  if (rc.output_dir.empty()) throw ConfigError("config key 'output.dir' must not be empty");
  return rc;
}

ConfigTable load_config_table(const fs::path& file, const std::vector<std::string>& overrides) {
  ConfigTable table = ConfigTable::defaults();
  table.set("train.attack.step_size", "auto");
  if (!file.empty()) {
    if (!fs::exists(file)) throw ConfigError("config file not found: " + file.string());
    table.merge_text(read_file(file), file.string());
  }
  for (const auto& o : overrides) table.apply_override(o);
  return table;
}

}  // namespace atalp
