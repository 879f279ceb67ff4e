#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pram {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every recognised key with its default. Anything else is rejected.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"train.lr", "0.001", "SGD learning rate"},
      {"train.weight_decay", "0.0005", "L2 weight decay"},
      {"train.batch_size", "16", "triplets per step"},
      {"train.steps", "500", "optimizer steps"},
      {"train.seed", "7", "seed for initialisation, sampling and cropping"},
      {"train.freeze_below", "0", "trunk stages below this index are frozen"},
      {"train.embed_dim", "512", "final embedding width"},
      {"train.head_dim", "128", "part feature width"},
      {"train.part_size", "64", "side of the square part crops"},
      {"train.trunk", "8:5:2:1,16:3:1:1,16:3:1:1,16:3:1:0", "trunk stages out:kernel:stride:pool"},
      {"train.pram_on", "true", "use relation attention (false: mean of part features)"},
      {"train.cat_on", "CAT", "triplet term: off | plain_C | CAT"},
      {"train.negative_domain", "anchor", "negative shares the domain of: anchor | positive"},
      {"train.batch_hard", "false", "replace sampled negatives by the hardest in-batch negative"},
      {"loss.margin", "0.55", "conditional margin m"},
      {"loss.softmax_scale", "24", "softmax scale s"},
      {"loss.scale_mode", "loss_scale", "where s applies: loss_scale | feature_scale"},
      {"data.image_size", "144", "side of the stored images"},
      {"data.crop_size", "128", "side of the network face crop"},
      {"eval.far", "0.01,0.001", "false accept rates for VR@FAR"},
      {"eval.max_rank", "10", "CMC curve length"},
  };
  return keys;
}

/// Flat `key = value` configuration seeded with defaults.
class Config {
 public:
  Config() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  static bool known(const std::string& key) {
    const auto& keys = config_keys();
    return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key) const {
    try {
      std::size_t pos = 0;
      double v = std::stod(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("");
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError("config key '" + key + "' is not a number: '" + get(key) + "'");
    }
  }

  std::uint64_t get_uint(const std::string& key) const {
    const std::string& s = get(key);
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
      throw ConfigError("config key '" + key + "' is not a non-negative integer: '" + s + "'");
    return std::stoull(s);
  }

  bool get_bool(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + s + "'");
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::logic_error&) {
        throw ConfigError("config key '" + key + "' has a non-numeric entry '" + item + "'");
      }
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
    return out;
  }

  /// Applies `key = value` lines. Blank lines and '#' comments are ignored.
  void merge_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str());
  }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& k : config_keys()) os << k.name << " = " << values_.at(k.name) << '\n';
    return os.str();
  }

  bool operator==(const Config&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace pram
