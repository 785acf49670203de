#pragma once

// Flat key=value configuration: one entry per line, '#' starts a comment,
// '-' and '_' are interchangeable in keys. Later set() calls override.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>

#include "punr/model.hpp"
#include "punr/synth.hpp"
#include "punr/training.hpp"

namespace punr {

class ConfigMap {
 public:
  static ConfigMap parse(std::istream& in);
  static ConfigMap load(const std::filesystem::path& path);

  static std::string normalize_key(std::string key);

  void set(const std::string& key, std::string value);
  void merge(const ConfigMap& overrides);
  bool has(const std::string& key) const;

  std::string get(const std::string& key, const std::string& fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Throws ConfigError naming the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  void write(std::ostream& out) const;

 private:
  std::map<std::string, std::string> entries_;
};

// Every key understood by the model, masking, training and synthesis configs.
const std::set<std::string>& model_config_keys();
const std::set<std::string>& train_config_keys();
const std::set<std::string>& synth_config_keys();

ModelConfig model_config_from(const ConfigMap& cfg, std::size_t vocab_size);
TrainConfig train_config_from(const ConfigMap& cfg, Stage stage);
SynthConfig synth_config_from(const ConfigMap& cfg);
SequenceLimits sequence_limits_from(const ConfigMap& cfg);

}  // namespace punr
