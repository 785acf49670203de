#include "punr/config.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "punr/error.hpp"

namespace punr {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T, typename Parse>
T parse_value(const std::string& key, const std::string& text, Parse parse) {
  try {
    std::size_t used = 0;
    T v = parse(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
}

}  // namespace

std::string ConfigMap::normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

ConfigMap ConfigMap::parse(std::istream& in) {
  ConfigMap cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(line_no, "empty key");
    cfg.set(key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse(in);
}

void ConfigMap::set(const std::string& key, std::string value) {
  entries_[normalize_key(key)] = std::move(value);
}

void ConfigMap::merge(const ConfigMap& overrides) {
  for (const auto& [k, v] : overrides.entries_) entries_[k] = v;
}

bool ConfigMap::has(const std::string& key) const { return entries_.count(normalize_key(key)); }

std::string ConfigMap::get(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(normalize_key(key));
  return it == entries_.end() ? fallback : it->second;
}

std::size_t ConfigMap::get_size(const std::string& key, std::size_t fallback) const {
  if (!has(key)) return fallback;
  const std::string text = get(key, "");
  if (!text.empty() && text[0] == '-') throw ConfigError("config key '" + key + "' must be >= 0");
  return parse_value<std::size_t>(key, text, [](const std::string& s, std::size_t* used) {
    return static_cast<std::size_t>(std::stoull(s, used));
  });
}

std::uint64_t ConfigMap::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  return parse_value<std::uint64_t>(key, get(key, ""), [](const std::string& s, std::size_t* used) {
    return static_cast<std::uint64_t>(std::stoull(s, used));
  });
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  return parse_value<double>(key, get(key, ""),
                             [](const std::string& s, std::size_t* used) { return std::stod(s, used); });
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

void ConfigMap::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : entries_) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
}

void ConfigMap::write(std::ostream& out) const {
  for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
}

const std::set<std::string>& model_config_keys() {
  static const std::set<std::string> keys{
      "hidden_dim", "n_layers",      "n_heads", "ffn_dim",  "max_seq_len",
      "max_behaviors", "max_title_len", "dropout", "pooling", "init_std"};
  return keys;
}

const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> keys{
      "batch_size", "learning_rate", "total_steps", "epochs",           "warmup_ratio",
      "weight_decay", "negatives",   "seed",        "siamese",          "tasks",
      "separate_clean_pass", "alpha", "beta",       "mask_seed",        "bert_replacement",
      "checkpoint_every"};
  return keys;
}

const std::set<std::string>& synth_config_keys() {
  static const std::set<std::string> keys{
      "n_topics",        "n_news",          "n_users",       "vocab_size",
      "titles_per_user", "candidates_per_impression", "topic_purity", "seed",
      "n_eval_users",    "title_len_min",   "title_len_max", "topic_word_share"};
  return keys;
}

SequenceLimits sequence_limits_from(const ConfigMap& cfg) {
  SequenceLimits l;
  l.max_behaviors = cfg.get_size("max_behaviors", 50);
  l.max_title_len = cfg.get_size("max_title_len", 30);
  l.max_seq_len = cfg.get_size("max_seq_len", 128);
  return l;
}

ModelConfig model_config_from(const ConfigMap& cfg, std::size_t vocab_size) {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.hidden_dim = cfg.get_size("hidden_dim", m.hidden_dim);
  m.n_layers = cfg.get_size("n_layers", m.n_layers);
  m.n_heads = cfg.get_size("n_heads", m.n_heads);
  m.ffn_dim = cfg.get_size("ffn_dim", m.ffn_dim);
  const SequenceLimits limits = sequence_limits_from(cfg);
  m.max_seq_len = std::max(limits.max_seq_len, 1 + limits.max_title_len);
  m.max_segments = limits.max_behaviors + 1;
  m.dropout = cfg.get_double("dropout", m.dropout);
  m.pooling = parse_pooling(cfg.get("pooling", "cls"));
  m.init_std = cfg.get_double("init_std", m.init_std);
  m.validate();
  return m;
}

TrainConfig train_config_from(const ConfigMap& cfg, Stage stage) {
  TrainConfig t;
  t.stage = stage;
  t.batch_size = cfg.get_size("batch_size", t.batch_size);
  t.learning_rate = cfg.get_double("learning_rate", t.learning_rate);
  t.total_steps = cfg.get_size("total_steps", t.total_steps);
  t.epochs = cfg.get_size("epochs", t.epochs);
  t.warmup_ratio = cfg.get_double("warmup_ratio", t.warmup_ratio);
  t.weight_decay = cfg.get_double("weight_decay", t.weight_decay);
  t.negatives = cfg.get_size("negatives", t.negatives);
  t.seed = cfg.get_u64("seed", t.seed);
  t.siamese = cfg.get_bool("siamese", t.siamese);
  t.tasks = PretrainTasks::parse(cfg.get("tasks", "both"));
  t.separate_clean_pass = cfg.get_bool("separate_clean_pass", t.separate_clean_pass);
  t.masking.alpha = cfg.get_double("alpha", t.masking.alpha);
  t.masking.beta = cfg.get_double("beta", t.masking.beta);
  t.masking.seed = cfg.get_u64("mask_seed", t.masking.seed);
  t.masking.bert_replacement = cfg.get_bool("bert_replacement", t.masking.bert_replacement);
  t.checkpoint_every = cfg.get_size("checkpoint_every", t.checkpoint_every);
  t.limits = sequence_limits_from(cfg);
  t.validate();
  return t;
}

SynthConfig synth_config_from(const ConfigMap& cfg) {
  SynthConfig s;
  s.n_topics = cfg.get_size("n_topics", s.n_topics);
  s.n_news = cfg.get_size("n_news", s.n_news);
  s.n_users = cfg.get_size("n_users", s.n_users);
  s.vocab_size = cfg.get_size("vocab_size", s.vocab_size);
  s.titles_per_user = cfg.get_size("titles_per_user", s.titles_per_user);
  s.candidates_per_impression = cfg.get_size("candidates_per_impression", s.candidates_per_impression);
  s.topic_purity = cfg.get_double("topic_purity", s.topic_purity);
  s.seed = cfg.get_u64("seed", s.seed);
  s.n_eval_users = cfg.get_size("n_eval_users", s.n_eval_users);
  s.title_len_min = cfg.get_size("title_len_min", s.title_len_min);
  s.title_len_max = cfg.get_size("title_len_max", s.title_len_max);
  s.topic_word_share = cfg.get_double("topic_word_share", s.topic_word_share);
  s.validate();
  return s;
}

}  // namespace punr
