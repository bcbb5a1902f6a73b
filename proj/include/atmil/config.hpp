#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "atmil/dataset.hpp"
#include "atmil/errors.hpp"
#include "atmil/ladder.hpp"
#include "atmil/train.hpp"
#include "atmil/weighting.hpp"

namespace atmil {

// Run configuration file: one "key = value" per line, '#' comments, every
// key listed in the README schema, anything else is an error. CLI flags
// override file values.

struct RunConfig {
  TrainConfig train;
  BagSpec bag_spec;
  uint64_t data_seed = 1;
  int train_bags = 100;
  int val_bags = 20;
  int test_bags = 200;
  std::vector<Strategy> ladder_strategies = {Strategy::none, Strategy::atmil};
  std::vector<int> ladder_sizes = {100, 150, 200, 300, 500};
  std::vector<uint64_t> ladder_seeds = {0, 1, 2};
  int jobs = 1;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> items;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) items.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) items.push_back(cur);
  return items;
}

inline int to_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  }
}

inline uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + v + "' is not an unsigned integer");
  }
}

inline double to_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  }
}

inline bool to_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace detail

inline void apply_config_key(RunConfig& rc, const std::string& key, const std::string& value) {
  using detail::to_bool;
  using detail::to_double;
  using detail::to_int;
  using detail::to_u64;
  if (key == "seed") rc.train.seed = to_u64(value, key);
  else if (key == "epochs") rc.train.epochs = to_int(value, key);
  else if (key == "lr") rc.train.lr = to_double(value, key);
  else if (key == "lr_decay_after") rc.train.lr_decay_after = to_int(value, key);
  else if (key == "lr_decay_factor") rc.train.lr_decay_factor = to_double(value, key);
  else if (key == "checkpoint_every") rc.train.checkpoint_every = to_int(value, key);
  else if (key == "strategy") rc.train.strategy.strategy = parse_strategy(value);
  else if (key == "beta") rc.train.strategy.beta = to_double(value, key);
  else if (key == "gamma") rc.train.strategy.gamma = to_double(value, key);
  else if (key == "w_init") rc.train.strategy.w_init = to_double(value, key);
  else if (key == "w_max") rc.train.strategy.w_max = to_double(value, key);
  else if (key == "ema_decay") rc.train.strategy.ema_decay = to_double(value, key);
  else if (key == "encoder_preset") {
    if (value == "default") rc.train.encoder = EncoderConfig{};
    else if (value == "desk") rc.train.encoder = EncoderConfig::desk_preset();
    else throw ConfigError("encoder_preset must be 'default' or 'desk', got '" + value + "'");
  } else if (key == "conv1_channels") rc.train.encoder.conv1_channels = to_int(value, key);
  else if (key == "conv1_kernel") rc.train.encoder.conv1_kernel = to_int(value, key);
  else if (key == "conv2_channels") rc.train.encoder.conv2_channels = to_int(value, key);
  else if (key == "conv2_kernel") rc.train.encoder.conv2_kernel = to_int(value, key);
  else if (key == "embedding_dim") rc.train.encoder.embedding_dim = to_int(value, key);
  else if (key == "attention_hidden") rc.train.encoder.attention_hidden = to_int(value, key);
  else if (key == "scheme") {
    rc.bag_spec.scheme = parse_scheme(value);
    rc.train.encoder.main_classes = rc.bag_spec.main_classes();
  } else if (key == "bag_size") rc.bag_spec.bag_size = to_int(value, key);
  else if (key == "positive_min") rc.bag_spec.positive_min = to_int(value, key);
  else if (key == "positive_max") rc.bag_spec.positive_max = to_int(value, key);
  else if (key == "diffuse_fraction") rc.bag_spec.diffuse_fraction = to_double(value, key);
  else if (key == "inactive_fraction") rc.bag_spec.inactive_fraction = to_double(value, key);
  else if (key == "intensity_jitter") rc.bag_spec.intensity_jitter = to_bool(value, key);
  else if (key == "data_seed") rc.data_seed = to_u64(value, key);
  else if (key == "train_bags") rc.train_bags = to_int(value, key);
  else if (key == "val_bags") rc.val_bags = to_int(value, key);
  else if (key == "test_bags") rc.test_bags = to_int(value, key);
  else if (key == "jobs") rc.jobs = to_int(value, key);
  else if (key == "ladder_strategies") {
    rc.ladder_strategies.clear();
    for (const std::string& s : detail::split_list(value))
      rc.ladder_strategies.push_back(parse_strategy(s));
  } else if (key == "ladder_sizes") {
    rc.ladder_sizes.clear();
    for (const std::string& s : detail::split_list(value))
      rc.ladder_sizes.push_back(to_int(s, key));
  } else if (key == "ladder_seeds") {
    rc.ladder_seeds.clear();
    for (const std::string& s : detail::split_list(value))
      rc.ladder_seeds.push_back(to_u64(s, key));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

inline RunConfig parse_config(std::istream& in, const std::string& origin) {
  RunConfig rc;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t comment = line.find('#');
    if (comment != std::string::npos) line.resize(comment);
    auto trim = [](std::string& s) {
      size_t b = s.find_first_not_of(" \t\r");
      size_t e = s.find_last_not_of(" \t\r");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    trim(key);
    trim(value);
    if (key.empty() || value.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key or value");
    try {
      apply_config_key(rc, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  return parse_config(in, path);
}

}  // namespace atmil
