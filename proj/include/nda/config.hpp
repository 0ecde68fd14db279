#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "nda/errors.hpp"
#include "nda/textio.hpp"

namespace nda {

/// Flat `key = value` configuration with `#` comments. Keys outside the
/// registered schema are rejected at parse time.
class Config {
 public:
  /// Every key any subcommand understands. Parsing validates against this
  /// set so a typo never passes silently.
  static const std::set<std::string>& schema() {
    static const std::set<std::string> keys = {
        "seed",
        "data.source", "data.features", "data.classes", "data.dim", "data.per_class",
        "data.spread", "data.sigma", "data.train_fraction", "data.val_fraction",
        "data.test_fraction",
        "model.hidden", "model.latent",
        "train.epochs", "train.batch", "train.lr", "train.momentum",
        "train.lr_decay_every", "train.lr_decay_factor",
        "loss.alpha", "loss.beta", "loss.gamma", "loss.mean_variant", "loss.siamese_variant",
        "loss.margin", "loss.pair_fraction", "loss.mean_enabled", "loss.siamese_enabled",
        "loss.alternate",
        "ssl.labeled_fraction", "ssl.ensemble", "ssl.threshold", "ssl.phase1_epochs",
        "ssl.phase2_epochs", "ssl.noise", "ssl.mask_fraction", "ssl.nda_phase2",
        "ood.shift_sigmas", "ood.bins",
    };
    return keys;
  }

  static Config parse_text(const std::string& text, const std::string& origin) {
    Config c;
    auto lines = split(text, '\n');
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string_view line = lines[i];
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ParseError(origin + ": line " + std::to_string(i + 1) + ": expected key = value");
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (!schema().count(key))
        throw ParseError(origin + ": line " + std::to_string(i + 1) + ": unknown key '" + key + "'");
      if (value.empty())
        throw ParseError(origin + ": line " + std::to_string(i + 1) + ": empty value for '" + key + "'");
      c.values_[key] = value;
    }
    return c;
  }

  static Config parse_file(const std::filesystem::path& path) {
    return parse_text(read_file(path), path.string());
  }

  void set(const std::string& key, const std::string& value) {
    if (!schema().count(key)) throw ParseError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// Applies a `key=value` override (CLI --set).
  void set_pair(std::string_view pair) {
    const auto eq = pair.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("override must look like key=value, got '" + std::string(pair) + "'");
    set(std::string(trim(pair.substr(0, eq))), std::string(trim(pair.substr(eq + 1))));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(it->second, "config key " + key);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(it->second, "config key " + key);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "on") return true;
    if (it->second == "false" || it->second == "0" || it->second == "off") return false;
    throw ParseError("config key " + key + ": expected boolean, got '" + it->second + "'");
  }

  /// Comma-separated list of sizes ("16,16"); empty string means none.
  std::vector<std::size_t> get_size_list(const std::string& key,
                                         std::vector<std::size_t> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::size_t> out;
    if (trim(it->second) == "none") return out;
    for (auto part : split(it->second, ',')) {
      part = trim(part);
      if (part.empty()) continue;
      out.push_back(static_cast<std::size_t>(parse_int(part, "config key " + key)));
    }
    return out;
  }

  /// Snapshot of the stored keys, sorted, one `key = value` per line.
  std::string snapshot() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace nda
