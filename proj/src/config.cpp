#include "pansel/config.hpp"

#include <fstream>
#include <sstream>

#include "pansel/common.hpp"

namespace pansel {

namespace {

const std::pair<const char*, const char*> kDefaults[] = {
    {"seed", "0"},
    {"threads", "0"},
    {"out", "run"},
    {"stages", "all"},
    {"n_source", "200"},
    {"n_target", "100"},
    {"n_val", "50"},
    {"image_size", "64"},
    {"hue_rotation", "35"},
    {"noise_sigma", "0.05"},
    {"scale_factor", "0.8"},
    {"texture_toggle", "0"},
    {"depth", "3"},
    {"base_channels", "16"},
    {"embedding_dim", "8"},
    {"dilated_bottleneck", "0"},
    {"momentum", "0.9"},
    {"weight_decay", "5e-4"},
    {"poly_power", "0.9"},
    {"sem_baseline_iters", "600"},
    {"sem_baseline_lr", "0.01"},
    {"sem_batch", "4"},
    {"sem_selftrain_iters", "500"},
    {"sem_selftrain_lr", "0.003"},
    {"source_batch", "2"},
    {"target_batch", "2"},
    {"teacher_momentum", "0.99"},
    {"teacher_period", "20"},
    {"prior_momentum", "0.99"},
    {"focal_lambda", "3"},
    {"fusion_scales", "0.7,1.0"},
    {"fusion_flips", "1"},
    {"fusion_samples", "4"},
    {"thresh_quantile", "0.5"},
    {"thresh_floor", "0.5"},
    {"thresh_cap", "0.9"},
    {"rare_exponent", "0.5"},
    {"semantic_guide", "none"},
    {"inst_baseline_iters", "400"},
    {"inst_baseline_lr", "0.002"},
    {"inst_batch", "4"},
    {"inst_selftrain_iters", "200"},
    {"inst_selftrain_lr", "0.001"},
    {"mix", "25"},
    {"workflow", "all"},
    {"class_set", ""},
    {"delta_v", "0.5"},
    {"delta_d", "1.5"},
    {"epsilon_schedule", "1"},
    {"alpha", "1"},
    {"beta", "1"},
    {"gamma", "1"},
    {"lambda_obj", "1"},
    {"delta_cons", "0.1"},
    {"min_size", "9"},
    {"max_seeds", "64"},
    {"stability_iou", "0.9"},
    {"bandwidth", "0"},
    {"morphology", "1"},
    {"open_radius", "1"},
    {"close_radius", "1"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
std::vector<T> split_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, int>)
        out.push_back(std::stoi(item, &used));
      else
        out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad list element '" + item + "'");
    }
  }
  return out;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& [k, v] : kDefaults) {
    order_.push_back(k);
    values_[k] = v;
  }
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  note_read(path);
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig cfg;
  cfg.merge_text(ss.str(), path.string());
  return cfg;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

long RunConfig::integer(const std::string& key) const {
  const std::string& v = str(key);
  try {
    std::size_t used = 0;
    const long r = std::stol(v, &used);
    if (used == v.size()) return r;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = str(key);
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used == v.size()) return r;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<double> RunConfig::reals(const std::string& key) const { return split_list<double>(key, str(key)); }
std::vector<int> RunConfig::integers(const std::string& key) const { return split_list<int>(key, str(key)); }

void RunConfig::write(std::ostream& os) const {
  for (const auto& k : order_) os << k << " = " << values_.at(k) << '\n';
}

std::string RunConfig::text() const {
  std::stringstream ss;
  write(ss);
  return ss.str();
}

}  // namespace pansel
