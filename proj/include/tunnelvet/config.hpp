#pragma once

// Service configuration: a flat key = value file, every key overridable
// from the command line. Relative paths resolve against the config file's
// directory.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "tunnelvet/classifier.hpp"
#include "tunnelvet/features.hpp"
#include "tunnelvet/net.hpp"

namespace tunnelvet::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { Validator, Splitter };

enum class BlockPolicy { NxDomain, ServFail, Drop };

inline std::string_view to_string(BlockPolicy p) {
  switch (p) {
    case BlockPolicy::NxDomain: return "nxdomain";
    case BlockPolicy::ServFail: return "servfail";
    case BlockPolicy::Drop: return "drop";
  }
  return "?";
}

inline BlockPolicy policy_from_string(std::string_view s) {
  if (s == "nxdomain") return BlockPolicy::NxDomain;
  if (s == "servfail") return BlockPolicy::ServFail;
  if (s == "drop") return BlockPolicy::Drop;
  throw ConfigError("unknown policy: " + std::string(s));
}

struct CacheClamps {
  std::uint32_t min_ttl = 1;
  std::uint32_t max_ttl = 86400;
  std::uint32_t negative_ttl = 60;
};

struct ServiceConfig {
  net::Endpoint listen = net::Endpoint::parse("127.0.0.1:5353");
  Mode mode = Mode::Validator;
  std::optional<net::Endpoint> upstream;            // validator mode
  std::optional<net::Endpoint> upstream_normal;     // splitter mode
  std::optional<net::Endpoint> upstream_validator;  // splitter mode
  BlockPolicy policy = BlockPolicy::NxDomain;
  CacheClamps clamps;
  std::chrono::milliseconds timeout{2000};
  int retries = 1;
  int workers = 4;
  std::filesystem::path registry_file;
  std::filesystem::path blacklist_file;
  std::filesystem::path dictionary_file;
  std::filesystem::path log_file;
  std::size_t log_buffer = 10000;
  classifier::ClassifierConfig classifier;

  void validate() const {
    if (timeout.count() <= 0) throw ConfigError("timeout_ms must be > 0");
    if (retries < 0) throw ConfigError("retries must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (clamps.min_ttl > clamps.max_ttl)
      throw ConfigError("cache_min_ttl must be <= cache_max_ttl");
    if (mode == Mode::Validator && !upstream)
      throw ConfigError("validator mode needs an upstream");
    if (mode == Mode::Splitter && (!upstream_normal || !upstream_validator))
      throw ConfigError("splitter mode needs upstream_normal and upstream_validator");
    try {
      classifier.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

inline std::optional<features::Feature> feature_by_name(std::string_view name) {
  for (std::size_t i = 0; i < features::kFeatureCount; ++i)
    if (features::kFeatureNames[i] == name)
      return static_cast<features::Feature>(i);
  return std::nullopt;
}

}  // namespace detail

// Applies one key. `base_dir`, when set, anchors relative path values.
inline void apply_setting(ServiceConfig& cfg, const std::string& key,
                          const std::string& raw_value,
                          const std::filesystem::path& base_dir = {}) {
  using detail::parse_double;
  using detail::parse_int;
  const std::string value = detail::trim(raw_value);
  auto as_path = [&](const std::string& v) -> std::filesystem::path {
    std::filesystem::path p(v);
    if (!base_dir.empty() && p.is_relative()) return base_dir / p;
    return p;
  };
  auto as_endpoint = [&](const std::string& v) {
    try {
      return net::Endpoint::parse(v);
    } catch (const net::NetError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  };

  if (key == "listen") {
    cfg.listen = as_endpoint(value);
  } else if (key == "mode") {
    if (value == "validator")
      cfg.mode = Mode::Validator;
    else if (value == "splitter")
      cfg.mode = Mode::Splitter;
    else
      throw ConfigError("mode must be validator or splitter, got '" + value +
                        "'");
  } else if (key == "upstream") {
    cfg.upstream = as_endpoint(value);
  } else if (key == "upstream_normal") {
    cfg.upstream_normal = as_endpoint(value);
  } else if (key == "upstream_validator") {
    cfg.upstream_validator = as_endpoint(value);
  } else if (key == "policy") {
    cfg.policy = policy_from_string(value);
  } else if (key == "cache_min_ttl") {
    cfg.clamps.min_ttl = static_cast<std::uint32_t>(parse_int(key, value));
  } else if (key == "cache_max_ttl") {
    cfg.clamps.max_ttl = static_cast<std::uint32_t>(parse_int(key, value));
  } else if (key == "negative_ttl") {
    cfg.clamps.negative_ttl = static_cast<std::uint32_t>(parse_int(key, value));
  } else if (key == "timeout_ms") {
    cfg.timeout = std::chrono::milliseconds(parse_int(key, value));
  } else if (key == "retries") {
    cfg.retries = static_cast<int>(parse_int(key, value));
  } else if (key == "workers") {
    cfg.workers = static_cast<int>(parse_int(key, value));
  } else if (key == "registry_file") {
    cfg.registry_file = as_path(value);
  } else if (key == "blacklist_file") {
    cfg.blacklist_file = as_path(value);
  } else if (key == "dictionary_file") {
    cfg.dictionary_file = as_path(value);
    cfg.classifier.dictionary_path = cfg.dictionary_file;
  } else if (key == "log_file") {
    cfg.log_file = as_path(value);
  } else if (key == "log_buffer") {
    cfg.log_buffer = static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "zone_depth") {
    cfg.classifier.zone_depth = static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "uniformity_min_samples") {
    cfg.classifier.uniformity_min_samples =
        static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "uniformity_threshold") {
    cfg.classifier.uniformity_threshold = parse_double(key, value);
  } else if (key == "score_threshold") {
    cfg.classifier.weights.score_threshold = parse_double(key, value);
  } else if (key == "cache_hit_bonus") {
    cfg.classifier.weights.cache_hit_bonus = parse_double(key, value);
  } else if (key.rfind("feature.", 0) == 0) {
    auto feature = detail::feature_by_name(key.substr(8));
    if (!feature) throw ConfigError("unknown feature key: " + key);
    std::istringstream parts(value);
    double weight, midpoint, scale;
    if (!(parts >> weight >> midpoint >> scale) || !(parts >> std::ws).eof())
      throw ConfigError(key + ": expected '<weight> <midpoint> <scale>', got '" +
                        value + "'");
    cfg.classifier.weights.unit(*feature) = {weight, midpoint, scale};
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

inline ServiceConfig parse_config(std::istream& in,
                                  const std::filesystem::path& base_dir = {},
                                  ServiceConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string text = detail::trim(line);
    if (text.empty()) continue;
    auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = detail::trim(text.substr(0, eq));
    std::string value = detail::trim(text.substr(eq + 1));
    try {
      apply_setting(cfg, key, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline ServiceConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  return parse_config(in, std::filesystem::absolute(path).parent_path());
}

// The shipped operating point. Midpoints and scales were fitted against the
// synthetic benign/tunnel corpus in this repository, not taken from any
// external measurement; data/default.conf carries the same numbers.
inline ServiceConfig default_config() {
  using features::Feature;
  ServiceConfig cfg;
  auto& w = cfg.classifier.weights;
  w.unit(Feature::TotalLength) = {1.0, 52.0, 12.0};
  w.unit(Feature::LabelCount) = {0.0, 4.0, 1.0};
  w.unit(Feature::MaxLabelLength) = {1.0, 34.0, 8.0};
  w.unit(Feature::EntropyMax) = {1.25, 3.9, 0.35};
  w.unit(Feature::EntropyMin) = {0.0, 1.0, 0.5};
  w.unit(Feature::EntropyMean) = {0.75, 3.0, 0.4};
  w.unit(Feature::EntropyMedian) = {0.0, 3.0, 0.4};
  w.unit(Feature::EntropyVariance) = {0.25, 1.5, 0.5};
  w.unit(Feature::DigitFraction) = {0.75, 0.13, 0.05};
  w.unit(Feature::UniqueCharCount) = {1.0, 19.0, 3.0};
  w.unit(Feature::LmsFraction) = {0.75, -0.55, 0.15};
  w.score_threshold = 0.5;
  w.cache_hit_bonus = 0.15;
  return cfg;
}

}  // namespace tunnelvet::config
