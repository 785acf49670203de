#include "cli.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "punr/checkpoint.hpp"
#include "punr/config.hpp"
#include "punr/error.hpp"
#include "punr/evaluate.hpp"
#include "punr/jsonl.hpp"
#include "punr/masking.hpp"
#include "punr/metrics.hpp"
#include "punr/model.hpp"
#include "punr/news.hpp"
#include "punr/synth.hpp"
#include "punr/text.hpp"
#include "punr/training.hpp"

namespace punr::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::array<const char*, 4> kSweepGrid{"0.15", "0.30", "0.45", "0.60"};
constexpr std::array<const char*, 3> kStagePrefixes{"decoder_init.", "pretrain.", "finetune."};

const std::set<std::string>& cli_keys() {
  static const std::set<std::string> keys{
      "min_freq",       "threads",       "decoder_init",       "from_scratch",
      "first_positive_mrr", "per_impression", "general_lines", "general_titles_per_line",
      "dump_masks"};
  return keys;
}

std::set<std::string> known_keys() {
  std::set<std::string> known = cli_keys();
  for (const auto* set : {&model_config_keys(), &train_config_keys(), &synth_config_keys()}) {
    known.insert(set->begin(), set->end());
  }
  for (const char* prefix : kStagePrefixes) {
    for (const auto& k : train_config_keys()) known.insert(prefix + k);
    for (const auto& k : {"dropout", "pooling"}) known.insert(std::string(prefix) + k);
  }
  return known;
}

// --key=value, --key value, or a bare --flag (meaning true).
ConfigMap parse_overrides(const std::vector<std::string>& extras, std::vector<std::string>* positional) {
  ConfigMap overrides;
  std::map<std::string, std::string> seen;
  auto record = [&](std::string key, std::string value) {
    key = ConfigMap::normalize_key(key);
    auto [it, inserted] = seen.emplace(key, value);
    if (!inserted && it->second != value) {
      throw ConfigError("conflicting values for --" + key + ": '" + it->second + "' and '" + value + "'");
    }
    overrides.set(key, value);
  };
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0) {
      if (!positional) throw ConfigError("unexpected argument '" + a + "'");
      positional->push_back(a);
      continue;
    }
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      record(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0 && !positional) {
      record(body, extras[++i]);
    } else {
      record(body, "true");
    }
  }
  return overrides;
}

// Entries "<stage>.key" replace "key" for that stage.
ConfigMap stage_view(const ConfigMap& cfg, Stage stage) {
  ConfigMap view = cfg;
  const std::string prefix = std::string(stage_name(stage)) + ".";
  for (const auto& [k, v] : cfg.entries()) {
    if (k.rfind(prefix, 0) == 0) view.set(k.substr(prefix.size()), v);
  }
  return view;
}

std::uint64_t fnv1a_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 14695981039346656037ull;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw IoError("missing " + what + ": " + p.string());
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

struct Dataset {
  NewsCatalog catalog;
  std::vector<Impression> impressions;
};

Dataset load_dataset(const fs::path& dir) {
  const fs::path news = dir / "news.tsv", behaviors = dir / "behaviors.tsv";
  require_file(news, "news file");
  require_file(behaviors, "behaviors file");
  Dataset d;
  std::ifstream nin(news);
  CatalogParse parsed = parse_news_catalog(nin);
  if (parsed.duplicate_warnings) {
    std::cerr << "{\"warning\":\"duplicate news ids skipped\",\"count\":" << parsed.duplicate_warnings
              << "}\n";
  }
  d.catalog = std::move(parsed.catalog);
  std::ifstream bin(behaviors);
  d.impressions = parse_behaviors(bin);
  return d;
}

Vocab load_vocab(const fs::path& p) {
  require_file(p, "vocab file");
  std::ifstream in(p);
  return Vocab::read(in);
}

std::string vocab_text(const Vocab& v) {
  std::ostringstream s;
  v.write(s);
  return s.str();
}

// A run: resolved config, an output directory and the manifest describing it.
struct Run {
  std::string command;
  std::vector<std::string> args;
  ConfigMap cfg;
  fs::path out;
  std::map<std::string, fs::path> paths;  // --data, --checkpoint, ...
  ordered_json inputs = ordered_json::object();
  std::vector<std::string> outputs;

  bool has_path(const std::string& name) const {
    auto it = paths.find(name);
    return it != paths.end() && !it->second.empty();
  }
  const fs::path& path(const std::string& name) const {
    if (!has_path(name)) throw ConfigError(command + " requires --" + name);
    return paths.at(name);
  }
  void note_input(const fs::path& p) {
    if (fs::is_regular_file(p)) inputs[p.string()] = hex64(fnv1a_file(p));
  }
  fs::path output(const std::string& name) {
    outputs.push_back(name);
    return out / name;
  }

  void write_manifest() const {
    if (out.empty()) return;
    fs::create_directories(out);
    ordered_json m;
    m["command"] = command;
    m["args"] = args;
    ordered_json c = ordered_json::object();
    for (const auto& [k, v] : cfg.entries()) c[k] = v;
    m["config"] = c;
    m["seed"] = cfg.get("seed", "42");
    ordered_json p = ordered_json::object();
    for (const auto& [k, v] : paths) {
      if (!v.empty()) p[k] = v.string();
    }
    m["paths"] = p;
    m["inputs"] = inputs;
    m["version"] = std::string("punr-") + PUNR_VERSION;
    m["outputs"] = outputs;
    m["started_at"] = utc_now();
    std::ofstream f = open_out(out / "manifest.json");
    f << m.dump(2) << '\n';
  }
};

void write_log(const fs::path& p, const TrainLog& log) {
  std::ofstream f = open_out(p);
  log.write_csv(f);
}

// Checkpoint plus what evaluation needs to rebuild inputs identically.
Checkpoint bundle(const PunrModel& model, const Vocab& vocab, const SequenceLimits& limits,
                  const std::string& stage) {
  Checkpoint c = model.to_checkpoint();
  c.metadata["punr.stage"] = stage;
  c.metadata["vocab"] = vocab_text(vocab);
  c.metadata["limits.max_behaviors"] = std::to_string(limits.max_behaviors);
  c.metadata["limits.max_title_len"] = std::to_string(limits.max_title_len);
  c.metadata["limits.max_seq_len"] = std::to_string(limits.max_seq_len);
  return c;
}

struct Loaded {
  PunrModel model;
  Vocab vocab;
  SequenceLimits limits;
};

std::size_t meta_size(const Checkpoint& c, const std::string& key) {
  auto it = c.metadata.find(key);
  if (it == c.metadata.end()) throw IoError("checkpoint lacks metadata '" + key + "'");
  return static_cast<std::size_t>(std::stoull(it->second));
}

void check_consistent(const ConfigMap& cfg, const std::string& key, std::size_t actual) {
  if (cfg.has(key) && cfg.get_size(key, 0) != actual) {
    throw ConfigError("--" + key + "=" + cfg.get(key, "") + " conflicts with checkpoint value " +
                      std::to_string(actual));
  }
}

Loaded load_bundle(const fs::path& path, const ConfigMap& cfg) {
  require_file(path, "checkpoint");
  Checkpoint c = load_checkpoint(path);
  auto it = c.metadata.find("vocab");
  if (it == c.metadata.end()) throw IoError("checkpoint lacks a vocabulary: " + path.string());
  std::istringstream vin(it->second);
  Loaded l{PunrModel::from_checkpoint(c), Vocab::read(vin), {}};
  l.limits.max_behaviors = meta_size(c, "limits.max_behaviors");
  l.limits.max_title_len = meta_size(c, "limits.max_title_len");
  l.limits.max_seq_len = meta_size(c, "limits.max_seq_len");
  const ModelConfig& m = l.model.config();
  check_consistent(cfg, "hidden_dim", m.hidden_dim);
  check_consistent(cfg, "n_layers", m.n_layers);
  check_consistent(cfg, "n_heads", m.n_heads);
  check_consistent(cfg, "ffn_dim", m.ffn_dim);
  check_consistent(cfg, "max_behaviors", l.limits.max_behaviors);
  check_consistent(cfg, "max_title_len", l.limits.max_title_len);
  check_consistent(cfg, "max_seq_len", l.limits.max_seq_len);
  return l;
}

void apply_runtime_model_settings(PunrModel& model, const ConfigMap& stage_cfg) {
  if (stage_cfg.has("pooling")) model.set_pooling(parse_pooling(stage_cfg.get("pooling", "cls")));
  model.set_dropout(stage_cfg.get_double("dropout", 0.1));
}

Vocab vocab_for(Run& run, const Dataset* data) {
  if (run.has_path("vocab")) {
    run.note_input(run.path("vocab"));
    return load_vocab(run.path("vocab"));
  }
  if (!data) throw ConfigError(run.command + " requires --vocab or --data");
  return build_vocab(data->catalog, run.cfg.get_size("min_freq", 1));
}

void note_dataset(Run& run, const fs::path& dir) {
  run.note_input(dir / "news.tsv");
  run.note_input(dir / "behaviors.tsv");
}

TrainConfig stage_config(const Run& run, Stage stage, const std::string& log_prefix) {
  TrainConfig t = train_config_from(stage_view(run.cfg, stage), stage);
  if (t.checkpoint_every && !run.out.empty()) t.checkpoint_prefix = run.out / log_prefix;
  return t;
}

// ---- pretraining pieces shared by `pretrain` and `sweep` ----

Loaded initial_pretrain_model(Run& run, const Dataset& data) {
  const std::string mode = run.cfg.get("decoder_init", "pretrained");
  if (mode != "pretrained" && mode != "random") {
    throw ConfigError("--decoder-init must be pretrained or random, got '" + mode + "'");
  }
  if (mode == "pretrained") {
    if (!run.has_path("init")) {
      throw ConfigError("--decoder-init=pretrained requires --init <decoder checkpoint>");
    }
    if (run.has_path("vocab")) throw ConfigError("--vocab conflicts with --init (the vocabulary comes from the checkpoint)");
    run.note_input(run.path("init"));
    return load_bundle(run.path("init"), run.cfg);
  }
  if (run.has_path("init")) throw ConfigError("--decoder-init=random conflicts with --init");
  Vocab vocab = vocab_for(run, &data);
  const ModelConfig mc = model_config_from(run.cfg, vocab.size());
  return Loaded{PunrModel::create(mc, run.cfg.get_u64("seed", 42)), std::move(vocab),
                sequence_limits_from(run.cfg)};
}

TrainResult do_pretrain(Run& run, Loaded& l, Dataset& data, const fs::path& dir) {
  data.catalog.tokenize(l.vocab, l.limits.max_title_len);
  TrainConfig t = stage_config(run, Stage::pretrain, "pretrain");
  t.limits = l.limits;
  apply_runtime_model_settings(l.model, stage_view(run.cfg, Stage::pretrain));
  TrainResult r = run_pretrain(data.impressions, data.catalog, l.vocab, l.model, t);
  fs::create_directories(dir);
  write_log(dir / "pretrain_log.csv", r.log);
  save_checkpoint(dir / "pretrain.ckpt", bundle(l.model, l.vocab, l.limits, "pretrain"));

  const std::size_t dump = run.cfg.get_size("dump_masks", 0);
  if (dump && t.tasks.mlm) {
    std::ofstream f = open_out(dir / "mask_plans.jsonl");
    std::size_t written = 0;
    for (const auto& imp : data.impressions) {
      if (written == dump) break;
      TokenizedSequence seq = build_user_sequence(imp.history, data.catalog, l.vocab, l.limits);
      if (seq.real_length() <= 1) continue;
      MaskingConfig mc = t.masking;
      mc.seed = mix_seed(t.masking.seed, written);
      write_mask_plan_jsonl(f, plan_masks(seq, mc), written);
      ++written;
    }
  }
  return r;
}

TrainResult do_finetune(Run& run, Loaded& l, Dataset& data, const fs::path& dir) {
  data.catalog.tokenize(l.vocab, l.limits.max_title_len);
  TrainConfig t = stage_config(run, Stage::finetune, "finetune");
  t.limits = l.limits;
  apply_runtime_model_settings(l.model, stage_view(run.cfg, Stage::finetune));
  TrainResult r = run_finetune(data.impressions, data.catalog, l.vocab, l.model, t);
  fs::create_directories(dir);
  write_log(dir / "finetune_log.csv", r.log);
  save_checkpoint(dir / "finetune.ckpt", bundle(l.model, l.vocab, l.limits, "finetune"));
  return r;
}

EvalResult do_evaluate(const Run& run, const Loaded& l, Dataset& data) {
  data.catalog.tokenize(l.vocab, l.limits.max_title_len);
  EvalOptions opts;
  opts.limits = l.limits;
  opts.threads = run.cfg.get_size("threads", 1);
  opts.metrics.first_positive_mrr = run.cfg.get_bool("first_positive_mrr", false);
  return evaluate(l.model, data.impressions, data.catalog, l.vocab, opts);
}

// ---- subcommands ----

int cmd_synth_data(Run& run, std::ostream& out) {
  if (run.out.empty()) throw ConfigError("synth-data requires --out");
  const SynthConfig sc = synth_config_from(run.cfg);
  run.outputs = {"train/news.tsv", "train/behaviors.tsv", "dev/news.tsv", "dev/behaviors.tsv",
                 "general.txt", "topics.tsv"};
  run.write_manifest();
  SynthCorpus corpus = synth_corpus(sc);
  for (const char* split : {"train", "dev"}) {
    fs::create_directories(run.out / split);
    std::ofstream n = open_out(run.out / split / "news.tsv");
    write_news_tsv(n, corpus.catalog);
    std::ofstream b = open_out(run.out / split / "behaviors.tsv");
    write_behaviors_tsv(b, std::string(split) == "train" ? corpus.train : corpus.eval);
  }
  std::ofstream g = open_out(run.out / "general.txt");
  for (const auto& line :
       synth_general_corpus(corpus.catalog, run.cfg.get_size("general_lines", 2000),
                            run.cfg.get_size("general_titles_per_line", 3), sc.seed)) {
    g << line << '\n';
  }
  std::ofstream topics = open_out(run.out / "topics.tsv");
  for (const auto& item : corpus.catalog.items()) {
    topics << item.news_id << '\t' << corpus.news_topic.at(item.news_id) << '\n';
  }
  out << ordered_json{{"news", corpus.catalog.size()},
                      {"train_impressions", corpus.train.size()},
                      {"dev_impressions", corpus.eval.size()}}
             .dump()
      << '\n';
  return 0;
}

int cmd_build_vocab(Run& run, std::ostream& out) {
  if (run.out.empty()) throw ConfigError("build-vocab requires --out");
  const fs::path data_dir = run.path("data");
  note_dataset(run, data_dir);
  run.outputs = {"vocab.txt", "vocab.jsonl", "catalog.jsonl", "impressions.jsonl"};
  run.write_manifest();
  Dataset data = load_dataset(data_dir);
  Vocab vocab = build_vocab(data.catalog, run.cfg.get_size("min_freq", 1));
  data.catalog.tokenize(vocab, sequence_limits_from(run.cfg).max_title_len);
  std::ofstream v = open_out(run.out / "vocab.txt");
  vocab.write(v);
  std::ofstream vj = open_out(run.out / "vocab.jsonl");
  write_vocab_jsonl(vj, vocab);
  std::ofstream cj = open_out(run.out / "catalog.jsonl");
  write_catalog_jsonl(cj, data.catalog);
  std::ofstream ij = open_out(run.out / "impressions.jsonl");
  write_impressions_jsonl(ij, data.impressions);
  out << ordered_json{{"vocab_size", vocab.size()}}.dump() << '\n';
  return 0;
}

int cmd_pretrain_decoder(Run& run, std::ostream& out) {
  if (run.out.empty()) throw ConfigError("pretrain-decoder requires --out");
  std::optional<Dataset> data;
  if (run.has_path("corpus")) {
    require_file(run.path("corpus"), "corpus file");
    run.note_input(run.path("corpus"));
  } else if (run.has_path("data")) {
    note_dataset(run, run.path("data"));
  } else {
    throw ConfigError("pretrain-decoder requires --corpus or --data");
  }
  if (!run.has_path("vocab") && !run.has_path("data")) {
    throw ConfigError("pretrain-decoder requires --vocab or --data");
  }
  run.outputs = {"decoder_init.ckpt", "decoder_init_log.csv"};
  run.write_manifest();

  if (run.has_path("data")) data = load_dataset(run.path("data"));
  Vocab vocab = vocab_for(run, data ? &*data : nullptr);
  const SequenceLimits limits = sequence_limits_from(run.cfg);
  std::vector<std::string> lines;
  if (run.has_path("corpus")) {
    std::ifstream in(run.path("corpus"));
    for (std::string line; std::getline(in, line);) lines.push_back(line);
  } else {
    lines = data->catalog.titles();
  }
  std::vector<TokenizedSequence> seqs;
  seqs.reserve(lines.size());
  const std::size_t text_len = std::min(limits.max_seq_len, 1 + 3 * limits.max_title_len);
  for (const auto& line : lines) seqs.push_back(build_text_sequence(vocab.encode(line), text_len));

  const ModelConfig mc = model_config_from(run.cfg, vocab.size());
  PunrModel model = PunrModel::create(mc, run.cfg.get_u64("seed", 42));
  apply_runtime_model_settings(model, stage_view(run.cfg, Stage::decoder_init));
  TrainResult r = run_decoder_init(seqs, model, stage_config(run, Stage::decoder_init, "decoder_init"));
  write_log(run.out / "decoder_init_log.csv", r.log);
  save_checkpoint(run.out / "decoder_init.ckpt", bundle(model, vocab, limits, "decoder_init"));
  out << ordered_json{{"steps", r.steps}, {"skipped", r.skipped_examples}}.dump() << '\n';
  return 0;
}

int cmd_pretrain(Run& run, std::ostream& out) {
  if (run.out.empty()) throw ConfigError("pretrain requires --out");
  const fs::path data_dir = run.path("data");
  note_dataset(run, data_dir);
  if (run.has_path("init")) require_file(run.path("init"), "init checkpoint");
  run.outputs = {"pretrain.ckpt", "pretrain_log.csv"};
  // Flag conflicts surface before the manifest and any training.
  PretrainTasks::parse(stage_view(run.cfg, Stage::pretrain).get("tasks", "both"));
  const std::string mode = run.cfg.get("decoder_init", "pretrained");
  if (mode == "random" && run.has_path("init")) {
    throw ConfigError("--decoder-init=random conflicts with --init");
  }
  if (mode == "pretrained" && !run.has_path("init")) {
    throw ConfigError("--decoder-init=pretrained requires --init <decoder checkpoint>");
  }
  run.write_manifest();
  Dataset data = load_dataset(data_dir);
  Loaded l = initial_pretrain_model(run, data);
  TrainResult r = do_pretrain(run, l, data, run.out);
  out << ordered_json{{"steps", r.steps}, {"skipped", r.skipped_examples}}.dump() << '\n';
  return 0;
}

Loaded initial_finetune_model(Run& run, const Dataset& data) {
  const bool scratch = run.cfg.get_bool("from_scratch", false);
  if (scratch) {
    if (run.has_path("checkpoint")) throw ConfigError("--from-scratch conflicts with --checkpoint");
    Vocab vocab = vocab_for(run, &data);
    const ModelConfig mc = model_config_from(run.cfg, vocab.size());
    return Loaded{PunrModel::create(mc, run.cfg.get_u64("seed", 42)), std::move(vocab),
                  sequence_limits_from(run.cfg)};
  }
  if (!run.has_path("checkpoint")) {
    throw ConfigError("finetune requires --checkpoint (or --from-scratch)");
  }
  if (run.has_path("vocab")) {
    throw ConfigError("--vocab conflicts with --checkpoint (the vocabulary comes from the checkpoint)");
  }
  run.note_input(run.path("checkpoint"));
  return load_bundle(run.path("checkpoint"), run.cfg);
}

int cmd_finetune(Run& run, std::ostream& out) {
  if (run.out.empty()) throw ConfigError("finetune requires --out");
  const fs::path data_dir = run.path("data");
  note_dataset(run, data_dir);
  const bool scratch = run.cfg.get_bool("from_scratch", false);
  if (scratch && run.has_path("checkpoint")) {
    throw ConfigError("--from-scratch conflicts with --checkpoint");
  }
  if (!scratch) {
    require_file(run.path("checkpoint"), "checkpoint");
  }
  run.outputs = {"finetune.ckpt", "finetune_log.csv"};
  run.write_manifest();
  Dataset data = load_dataset(data_dir);
  Loaded l = initial_finetune_model(run, data);
  TrainResult r = do_finetune(run, l, data, run.out);
  out << ordered_json{{"steps", r.steps}, {"skipped", r.skipped_examples}}.dump() << '\n';
  return 0;
}

int cmd_evaluate(Run& run, std::ostream& out) {
  const fs::path ckpt = run.path("checkpoint");
  const fs::path data_dir = run.path("data");
  require_file(ckpt, "checkpoint");
  run.note_input(ckpt);
  note_dataset(run, data_dir);
  const bool per_impression = run.cfg.get_bool("per_impression", false);
  if (per_impression && run.out.empty()) throw ConfigError("--per-impression requires --out");
  if (!run.out.empty()) {
    run.outputs = {"metrics.json"};
    if (per_impression) run.outputs.push_back("per_impression.csv");
    run.write_manifest();
  }
  Dataset data = load_dataset(data_dir);
  Loaded l = load_bundle(ckpt, run.cfg);
  if (run.cfg.has("pooling")) l.model.set_pooling(parse_pooling(run.cfg.get("pooling", "cls")));
  EvalResult r = do_evaluate(run, l, data);
  const std::string json = metrics_json(r.report);
  if (!run.out.empty()) {
    std::ofstream f = open_out(run.out / "metrics.json");
    f << json << '\n';
    if (per_impression) {
      std::ofstream p = open_out(run.out / "per_impression.csv");
      write_per_impression_csv(p, r.per_impression);
    }
  }
  out << json << '\n';
  return 0;
}

const char* kSweepHeader = "axis,ratio,auc,mrr,ndcg5,ndcg10,n_impressions";

int cmd_sweep(Run& run, std::ostream& out) {
  if (run.out.empty()) throw ConfigError("sweep requires --out");
  const std::string axis = run.cfg.get("sweep_axis", "");
  if (axis != "alpha" && axis != "beta") throw ConfigError("sweep requires --axis=alpha or --axis=beta");
  for (const char* stage : {"", "pretrain."}) {
    if (run.cfg.has(std::string(stage) + axis)) {
      throw ConfigError("--" + std::string(stage) + axis + " conflicts with --axis=" + axis);
    }
  }
  const fs::path train_dir = run.path("data");
  const fs::path eval_dir = run.path("eval-data");
  note_dataset(run, train_dir);
  note_dataset(run, eval_dir);
  const std::string mode = run.cfg.get("decoder_init", "pretrained");
  if (mode == "pretrained") require_file(run.path("init"), "init checkpoint");
  if (mode == "random" && run.has_path("init")) {
    throw ConfigError("--decoder-init=random conflicts with --init");
  }
  run.outputs = {"sweep.csv"};
  for (const char* v : kSweepGrid) run.outputs.push_back(axis + "_" + v + "/metrics.json");
  run.write_manifest();

  Dataset train = load_dataset(train_dir);
  Dataset dev = load_dataset(eval_dir);
  std::ostringstream rows;
  rows << kSweepHeader << '\n';
  for (const char* value : kSweepGrid) {
    Run point = run;
    point.cfg.set(axis, value);
    const fs::path dir = run.out / (axis + "_" + value);
    Loaded l = initial_pretrain_model(point, train);
    do_pretrain(point, l, train, dir);
    do_finetune(point, l, train, dir);
    EvalResult r = do_evaluate(point, l, dev);
    std::ofstream m = open_out(dir / "metrics.json");
    m << metrics_json(r.report) << '\n';
    rows << axis << ',' << value << ',' << format_double(r.report.auc) << ','
         << format_double(r.report.mrr) << ',' << format_double(r.report.ndcg5) << ','
         << format_double(r.report.ndcg10) << ',' << r.report.n_impressions << '\n';
  }
  std::ofstream f = open_out(run.out / "sweep.csv");
  f << rows.str();
  out << rows.str();
  return 0;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream s(line);
  for (std::string cell; std::getline(s, cell, ',');) cells.push_back(cell);
  return cells;
}

int cmd_report(Run& run, const std::vector<std::string>& sources, std::ostream& out) {
  if (run.out.empty()) throw ConfigError("report requires --out");
  if (sources.empty()) throw ConfigError("report requires at least one sweep directory");
  std::vector<fs::path> files;
  for (const auto& s : sources) {
    fs::path p = fs::is_directory(s) ? fs::path(s) / "sweep.csv" : fs::path(s);
    require_file(p, "sweep results");
    run.note_input(p);
    files.push_back(p);
  }
  run.outputs = {"merged.csv", "table.tsv"};
  run.write_manifest();

  struct Acc {
    double auc = 0, mrr = 0, ndcg5 = 0, ndcg10 = 0;
    std::size_t runs = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> table;
  std::ostringstream merged;
  merged << "source," << kSweepHeader << '\n';
  for (const auto& p : files) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    if (line != kSweepHeader) throw ParseError(1, p.string() + ": unexpected header '" + line + "'");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto c = split_csv(line);
      if (c.size() != 7) throw ParseError(line_no, p.string() + ": expected 7 columns");
      merged << p.parent_path().string() << ',' << line << '\n';
      Acc& a = table[{c[0], c[1]}];
      a.auc += std::stod(c[2]);
      a.mrr += std::stod(c[3]);
      a.ndcg5 += std::stod(c[4]);
      a.ndcg10 += std::stod(c[5]);
      ++a.runs;
    }
  }
  std::ostringstream tsv;
  tsv << "axis\tratio\tauc\tmrr\tndcg5\tndcg10\truns\n";
  for (const auto& [key, a] : table) {
    const double n = static_cast<double>(a.runs);
    tsv << key.first << '\t' << key.second << '\t' << format_double(a.auc / n) << '\t'
        << format_double(a.mrr / n) << '\t' << format_double(a.ndcg5 / n) << '\t'
        << format_double(a.ndcg10 / n) << '\t' << a.runs << '\n';
  }
  std::ofstream m = open_out(run.out / "merged.csv");
  m << merged.str();
  std::ofstream t = open_out(run.out / "table.tsv");
  t << tsv.str();
  out << tsv.str();
  return 0;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return "parse_error";
  if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const IoError*>(&e)) return "io_error";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape_error";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric_error";
  if (dynamic_cast<const ContractError*>(&e)) return "contract_error";
  return "error";
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << ordered_json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"punr: news recommendation with a pre-trained user encoder"};
  app.require_subcommand(1);

  struct Common {
    std::string config, out, data, eval_data, vocab, checkpoint, init, corpus, axis;
    std::vector<std::string> sources;
  } c;

  auto add = [&](const char* name, const char* desc, std::initializer_list<const char*> opts) {
    CLI::App* s = app.add_subcommand(name, desc);
    s->add_option("--config", c.config, "key=value config file");
    s->add_option("--out", c.out, "output directory");
    for (const char* o : opts) {
      const std::string flag = o;
      if (flag == "data") s->add_option("--data", c.data, "directory with news.tsv and behaviors.tsv");
      if (flag == "eval-data") s->add_option("--eval-data", c.eval_data, "evaluation data directory");
      if (flag == "vocab") s->add_option("--vocab", c.vocab, "vocabulary file");
      if (flag == "checkpoint") s->add_option("--checkpoint", c.checkpoint, "model checkpoint");
      if (flag == "init") s->add_option("--init", c.init, "decoder-initialized checkpoint");
      if (flag == "corpus") s->add_option("--corpus", c.corpus, "plain text, one passage per line");
      if (flag == "axis") s->add_option("--axis", c.axis, "alpha or beta");
    }
    s->allow_extras();
    return s;
  };
  add("synth-data", "write a planted-topic corpus", {});
  add("build-vocab", "build the vocabulary and JSON-lines dumps", {"data"});
  add("pretrain-decoder", "train the decoder on plain text with the encoder frozen",
      {"data", "vocab", "corpus"});
  add("pretrain", "masked-behavior and generation pre-training", {"data", "vocab", "init"});
  add("finetune", "ranking fine-tuning", {"data", "vocab", "checkpoint"});
  add("evaluate", "AUC, MRR, nDCG@5/10 of a checkpoint", {"data", "checkpoint"});
  add("sweep", "alpha or beta grid: pretrain, finetune, evaluate",
      {"data", "eval-data", "vocab", "init", "axis"});
  add("report", "merge sweep results", {});

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage_error", e.what());
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    Run run;
    run.command = sub->get_name();
    run.args = args;
    std::vector<std::string> positional;
    ConfigMap overrides =
        parse_overrides(sub->remaining(), run.command == "report" ? &positional : nullptr);
    if (!c.config.empty()) {
      require_file(c.config, "config file");
      run.cfg = ConfigMap::load(c.config);
      run.note_input(c.config);
    }
    run.cfg.merge(overrides);
    if (const char* seed = std::getenv("PUNR_SEED")) run.cfg.set("seed", seed);
    run.cfg.require_known(known_keys());
    if (!c.axis.empty()) run.cfg.set("sweep_axis", c.axis);
    run.out = c.out;
    run.paths = {{"data", c.data},     {"eval-data", c.eval_data}, {"vocab", c.vocab},
                 {"checkpoint", c.checkpoint}, {"init", c.init}, {"corpus", c.corpus}};

    const std::string& cmd = run.command;
    if (cmd == "synth-data") return cmd_synth_data(run, out);
    if (cmd == "build-vocab") return cmd_build_vocab(run, out);
    if (cmd == "pretrain-decoder") return cmd_pretrain_decoder(run, out);
    if (cmd == "pretrain") return cmd_pretrain(run, out);
    if (cmd == "finetune") return cmd_finetune(run, out);
    if (cmd == "evaluate") return cmd_evaluate(run, out);
    if (cmd == "sweep") return cmd_sweep(run, out);
    if (cmd == "report") return cmd_report(run, positional, out);
    report_error(err, "usage_error", "unknown command " + cmd);
    return 2;
  } catch (const std::exception& e) {
    report_error(err, error_kind(e), e.what());
    return 1;
  }
}

}  // namespace punr::cli
