#pragma once

// Flat `key = value` configuration files (TOML-style subset): one assignment
// per line, `#` starts a comment, string values may be double-quoted, lists
// are comma-separated.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ot3d/binary_io.hpp"
#include "ot3d/category_memory.hpp"
#include "ot3d/error.hpp"
#include "ot3d/features.hpp"

namespace ot3d {

class ConfigMap {
 public:
  static ConfigMap parse(std::string_view text) {
    ConfigMap map;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string line(text.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      if (const auto hash = find_comment(line); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty() || line.front() == '[') continue;  // tables are flattened away
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        fail(ErrorCode::format_error, "config line " + std::to_string(line_no) + ": expected key = value");
      }
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
        value = value.substr(1, value.size() - 2);
      }
      if (key.empty()) fail(ErrorCode::format_error, "config line " + std::to_string(line_no) + ": empty key");
      map.values_[key] = value;
      if (end == text.size()) break;
    }
    return map;
  }

  static ConfigMap load(const std::string& path) { return parse(binary::read_file(path)); }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "inf" || it->second == "infinity") return std::numeric_limits<double>::infinity();
    double v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      fail(ErrorCode::format_error, "config key '" + key + "': expected a number, got '" + s + "'");
    }
    return v;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::uint64_t v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      fail(ErrorCode::format_error, "config key '" + key + "': expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    fail(ErrorCode::format_error, "config key '" + key + "': expected true/false");
  }

  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string s = it->second;
    if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.size() >= 2 && item.front() == '"' && item.back() == '"') item = item.substr(1, item.size() - 2);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  /// Keys present in the file that no getter asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  void reject_unused() const {
    const auto extra = unused_keys();
    if (!extra.empty()) fail(ErrorCode::format_error, "unknown config key '" + extra.front() + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  }

  static std::size_t find_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) return i;
    }
    return std::string::npos;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

/// Learner parameters. Defaults are the best configuration on the restaurant
/// object benchmark.
struct Params {
  FeatureParams features;
  std::size_t generic_words = 90;   // V
  std::size_t topics = 70;          // K
  std::size_t specific_words = 70;  // V^c
  double alpha = 1.0;
  double beta = 0.1;
  std::size_t gibbs_sweeps = 50;    // G
  double pool_fraction = 0.75;
  std::uint64_t seed = 1;
  double unknown_threshold = 0.35;
  double specific_weight = 1.0;
  RepresentationMode mode = RepresentationMode::full;
  std::size_t bootstrap_views = 10;
  bool absorb_on_learn = true;

  DistanceOptions distance() const { return {mode, specific_weight}; }

  void validate() const {
    features.validate();
    require(generic_words >= 1 && topics >= 1 && specific_words >= 1, ErrorCode::invalid_argument,
            "dictionary and topic sizes must be >= 1");
    require(alpha > 0.0 && beta > 0.0, ErrorCode::invalid_argument, "Dirichlet priors must be positive");
    require(gibbs_sweeps >= 1, ErrorCode::invalid_argument, "Gibbs sweeps must be >= 1");
    require(pool_fraction > 0.0 && pool_fraction <= 1.0, ErrorCode::invalid_argument,
            "pool fraction must be in (0, 1]");
    require(unknown_threshold > 0.0, ErrorCode::invalid_argument, "unknown threshold must be positive");
    require(specific_weight >= 0.0 && std::isfinite(specific_weight), ErrorCode::invalid_argument,
            "specific weight must be finite and non-negative");
  }

  static Params from_config(ConfigMap& cfg) {
    Params p;
    p.features.voxel_size = cfg.get_double("voxel_size", p.features.voxel_size);
    p.features.image_width = static_cast<int>(cfg.get_uint("image_width", p.features.image_width));
    p.features.support_length = cfg.get_double("support_length", p.features.support_length);
    p.features.normal_radius = cfg.get_double("normal_radius", p.features.normal_radius);
    p.generic_words = cfg.get_uint("generic_words", p.generic_words);
    p.topics = cfg.get_uint("topics", p.topics);
    p.specific_words = cfg.get_uint("specific_words", p.specific_words);
    p.alpha = cfg.get_double("alpha", p.alpha);
    p.beta = cfg.get_double("beta", p.beta);
    p.gibbs_sweeps = cfg.get_uint("gibbs_sweeps", p.gibbs_sweeps);
    p.pool_fraction = cfg.get_double("pool_fraction", p.pool_fraction);
    p.seed = cfg.get_uint("seed", p.seed);
    p.unknown_threshold = cfg.get_double("unknown_threshold", p.unknown_threshold);
    p.specific_weight = cfg.get_double("specific_weight", p.specific_weight);
    const std::string mode = cfg.get_string("representation", to_string(p.mode));
    if (mode == "full") {
      p.mode = RepresentationMode::full;
    } else if (mode == "generic_only") {
      p.mode = RepresentationMode::generic_only;
    } else {
      fail(ErrorCode::format_error, "representation must be full or generic_only");
    }
    p.bootstrap_views = cfg.get_uint("bootstrap_views", p.bootstrap_views);
    p.absorb_on_learn = cfg.get_bool("absorb_on_learn", p.absorb_on_learn);
    p.validate();
    return p;
  }

  /// Canonical `key = value` text; also the input of config_hash().
  std::string to_config() const {
    std::ostringstream os;
    os.precision(17);
    os << "voxel_size = " << features.voxel_size << '\n'
       << "image_width = " << features.image_width << '\n'
       << "support_length = " << features.support_length << '\n'
       << "normal_radius = " << features.normal_radius << '\n'
       << "generic_words = " << generic_words << '\n'
       << "topics = " << topics << '\n'
       << "specific_words = " << specific_words << '\n'
       << "alpha = " << alpha << '\n'
       << "beta = " << beta << '\n'
       << "gibbs_sweeps = " << gibbs_sweeps << '\n'
       << "pool_fraction = " << pool_fraction << '\n'
       << "seed = " << seed << '\n'
       << "unknown_threshold = " << unknown_threshold << '\n'
       << "specific_weight = " << specific_weight << '\n'
       << "representation = " << to_string(mode) << '\n'
       << "bootstrap_views = " << bootstrap_views << '\n'
       << "absorb_on_learn = " << (absorb_on_learn ? "true" : "false") << '\n';
    return os.str();
  }

  std::string config_hash() const {
    const std::uint64_t h = name_hash(to_config());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  static Params parse(std::string_view text) {
    ConfigMap cfg = ConfigMap::parse(text);
    Params p = from_config(cfg);
    cfg.reject_unused();
    return p;
  }
};

}  // namespace ot3d
