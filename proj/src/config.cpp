#include "hanet/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hanet/core/errors.hpp"

namespace hanet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> table{
      {"seed", "0"},
      {"model.in_channels", "3"},
      {"model.num_classes", "6"},
      {"model.width_low", "8"},
      {"model.width_high", "16"},
      {"model.width_context", "8"},
      {"model.width_decoder", "16"},
      {"model.layers", "L1,L2,L3,L4"},
      {"hanet.coarse_height", "16"},
      {"hanet.reduction", "4"},
      {"hanet.pool", "avg"},
      {"hanet.pe", "sinusoidal"},
      {"hanet.pe_layer", "2"},
      {"hanet.jitter", "2"},
      {"hanet.dropout", "0.1"},
      {"hanet.kernel", "3"},
      {"hanet.zero_init", "false"},
      {"train.base_lr", "0.01"},
      {"train.momentum", "0.9"},
      {"train.weight_decay_main", "5e-4"},
      {"train.weight_decay_hanet", "1e-4"},
      {"train.power", "0.9"},
      {"train.max_iteration", "1500"},
      {"train.batch_size", "4"},
      {"train.crop_height", "128"},
      {"train.crop_width", "32"},
      {"train.flip", "true"},
      {"train.log_every", "1"},
      {"data.train_images", "200"},
      {"data.val_images", "50"},
      {"data.height", "128"},
      {"data.width", "64"},
      {"data.noise", "0.3"},
      {"data.camouflage", "0.2"},
      {"gradcheck.epsilon", "1e-5"},
      {"gradcheck.module_tolerance", "1e-4"},
      {"gradcheck.model_tolerance", "1e-3"},
      {"gradcheck.configs", "50"},
  };
  return table;
}

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  cfg.merge_text(text, origin);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (defaults().count(key) == 0) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || errno != 0) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

long RunConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  char* end = nullptr;
  errno = 0;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || errno != 0) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  const long v = get_int(key);
  if (v < 0) throw ConfigError(key + ": must be non-negative");
  return static_cast<std::size_t>(v);
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + s + "'");
}

std::string RunConfig::to_text(const std::vector<std::string>& prefixes) const {
  std::string out;
  for (const auto& [k, v] : values_) {
    bool keep = prefixes.empty();
    for (const auto& p : prefixes) keep = keep || k.rfind(p, 0) == 0;
    if (keep) out += k + " = " + v + "\n";
  }
  return out;
}

}  // namespace hanet
