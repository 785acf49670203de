#include "punr/training.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <optional>
#include <ostream>
#include <unordered_map>

#include "punr/error.hpp"
#include "punr/ops.hpp"
#include "punr/rng.hpp"

namespace punr {

namespace {

// Stream offsets keeping the per-example RNG families apart.
constexpr std::uint64_t kOrderStream = 0x6f72646572ULL;
constexpr std::uint64_t kDropoutStream = 0x64726f70ULL;
constexpr std::uint64_t kSampleStream = 0x73616d70ULL;

struct ExampleLoss {
  Tensor loss;
  std::vector<std::optional<double>> parts;
};

using ExampleFn = std::function<ExampleLoss(std::size_t index, std::uint64_t stream)>;

// Frozen tensors stop recording gradients for the guard's lifetime.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<NamedTensor> params) : params_(std::move(params)) {
    for (auto& [name, t] : params_) {
      saved_.push_back(t.requires_grad());
      t.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].second.set_requires_grad(saved_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<NamedTensor> params_;
  std::vector<bool> saved_;
};

TrainResult train_loop(std::size_t n_examples, PunrModel& model, std::vector<NamedTensor> params,
                       const TrainConfig& cfg, const std::vector<std::string>& part_names,
                       const ExampleFn& example) {
  if (params.empty()) throw ConfigError(std::string(stage_name(cfg.stage)) + ": no trainable parameters");
  if (n_examples == 0) throw ConfigError(std::string(stage_name(cfg.stage)) + ": no usable examples");

  TrainResult result;
  result.log.columns = {"step", "lr", "loss"};
  const bool single_part = part_names.size() == 1 && part_names[0] == "loss";
  if (!single_part) {
    for (const auto& p : part_names) result.log.columns.push_back(p);
  }

  AdamWConfig opt_cfg;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW optimizer(std::move(params), opt_cfg);
  optimizer.zero_grad();

  const std::size_t total = cfg.resolved_steps(n_examples);
  std::vector<std::size_t> order(n_examples);
  std::size_t order_epoch = static_cast<std::size_t>(-1);

  for (std::size_t step = 0; step < total; ++step) {
    std::vector<double> sums(part_names.size(), 0.0);
    std::vector<std::size_t> counts(part_names.size(), 0);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::uint64_t stream = step * cfg.batch_size + b;
      const std::size_t epoch = stream / n_examples;
      if (epoch != order_epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(cfg.seed + kOrderStream, epoch));
        std::shuffle(order.begin(), order.end(), rng.engine());
        order_epoch = epoch;
      }
      ExampleLoss ex = example(order[stream % n_examples], stream);
      for (std::size_t p = 0; p < part_names.size(); ++p) {
        if (ex.parts[p]) {
          sums[p] += *ex.parts[p];
          ++counts[p];
        }
      }
      backward(ex.loss);
    }
    optimizer.scale_grads(1.0 / static_cast<double>(cfg.batch_size));
    const double lr = lr_at(step, total, cfg.learning_rate, cfg.warmup_ratio);
    optimizer.step(lr);

    std::vector<double> row{static_cast<double>(step), lr, 0.0};
    double loss = 0.0;
    for (std::size_t p = 0; p < part_names.size(); ++p) {
      const double mean = counts[p] ? sums[p] / static_cast<double>(counts[p]) : 0.0;
      loss += mean;
      if (!single_part) row.push_back(mean);
    }
    row[2] = loss;
    result.log.rows.push_back(std::move(row));
    ++result.steps;

    if (cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0 &&
        !cfg.checkpoint_prefix.empty()) {
      auto path = cfg.checkpoint_prefix;
      path += "-step" + std::to_string(step + 1) + ".ckpt";
      save_checkpoint(path, model.to_checkpoint());
    }
  }
  return result;
}

void require_stage(const TrainConfig& cfg, Stage expected) {
  if (cfg.stage != expected) {
    throw ConfigError(std::string("stage mismatch: config says '") + stage_name(cfg.stage) +
                      "' but '" + stage_name(expected) + "' was requested");
  }
  cfg.validate();
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::decoder_init: return "decoder_init";
    case Stage::pretrain: return "pretrain";
    case Stage::finetune: return "finetune";
  }
  return "?";
}

PretrainTasks PretrainTasks::parse(std::string_view name) {
  if (name == "both") return {true, true};
  if (name == "mlm") return {true, false};
  if (name == "dec") return {false, true};
  if (name == "none") return {false, false};
  throw ConfigError("unknown tasks '" + std::string(name) + "' (mlm|dec|both|none)");
}

std::string PretrainTasks::name() const {
  if (mlm && dec) return "both";
  if (mlm) return "mlm";
  if (dec) return "dec";
  return "none";
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be > 0");
  if (total_steps == 0 && epochs == 0) throw ConfigError("need total_steps or epochs > 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("warmup_ratio must lie in [0, 1)");
  }
  if (negatives < 1) throw ConfigError("negatives must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  masking.validate();
}

std::size_t TrainConfig::resolved_steps(std::size_t n_examples) const {
  if (total_steps) return total_steps;
  return epochs * ((n_examples + batch_size - 1) / batch_size);
}

void TrainLog::write_csv(std::ostream& out) const {
  for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << (c ? "," : "");
      if (c == 0) {
        out << static_cast<std::size_t>(row[c]);
      } else {
        out << format_double(row[c]);
      }
    }
    out << '\n';
  }
}

std::vector<double> TrainLog::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ContractError("log has no column '" + name + "'");
  const auto c = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  for (const auto& row : rows) out.push_back(row[c]);
  return out;
}

bool TrainLog::has_column(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

PretrainLosses pretrain_losses(const TokenizedSequence& clean, const MaskPlan& plan,
                               const PunrModel& model, PretrainTasks tasks,
                               bool separate_clean_pass, ForwardMode mode) {
  const ModelConfig& cfg = model.config();
  const EncoderWeights& enc = model.user_tower();
  const TokenizedSequence input = plan.empty() ? clean : apply_masks(clean, plan);

  PretrainLosses out;
  EncoderOutput encoded = encode(embed_inputs(input, enc), input.attention_keep, enc, cfg, mode);
  Tensor total;
  if (tasks.mlm) {
    LossTerm mlm = mlm_loss(encoded, plan, enc);
    out.mlm = mlm.value;
    out.mlm_skipped = mlm.skipped;
    if (!mlm.skipped) total = mlm.value;
  }
  if (tasks.dec) {
    Tensor user = separate_clean_pass ? encode_vector(clean, enc, cfg, mode)
                                      : pool(encoded, input.attention_keep, cfg.pooling, enc);
    LossTerm dec = decode_clm(user, clean, enc, model.decoder(), cfg, mode);
    out.dec = dec.value;
    out.dec_skipped = dec.skipped;
    if (!dec.skipped) total = total ? ops::add(total, dec.value) : dec.value;
  }
  out.total = total ? total : Tensor::scalar(0.0);
  return out;
}

Tensor sampled_softmax_loss(const Tensor& scores) {
  if (scores.rank() != 2 || scores.dim(0) != 1 || scores.dim(1) < 2) {
    throw ShapeError("sampled_softmax_loss: expected [1 x k>=2] scores, got " +
                     shape_str(scores.shape()));
  }
  const int target = 0;
  return ops::cross_entropy(scores, std::span<const int>(&target, 1));
}

Tensor finetune_loss(const TokenizedSequence& user, std::span<const TokenizedSequence> candidates,
                     const PunrModel& model, ForwardMode mode) {
  const ModelConfig& cfg = model.config();
  Tensor u = encode_vector(user, model.user_tower(), cfg, mode);
  std::vector<Tensor> rows;
  rows.reserve(candidates.size());
  for (const auto& c : candidates) rows.push_back(encode_vector(c, model.news_tower(), cfg, mode));
  Tensor scores = ops::matmul_nt(u, ops::concat(rows, 0));
  return sampled_softmax_loss(scores);
}

TrainResult run_decoder_init(std::span<const TokenizedSequence> corpus, PunrModel& model,
                             const TrainConfig& cfg) {
  require_stage(cfg, Stage::decoder_init);
  std::vector<const TokenizedSequence*> usable;
  for (const auto& seq : corpus)
    if (seq.real_length() > 1) usable.push_back(&seq);

  FreezeGuard frozen(model.encoder_parameters());
  const ModelConfig& mcfg = model.config();
  ExampleFn fn = [&](std::size_t i, std::uint64_t stream) {
    Rng rng(mix_seed(cfg.seed + kDropoutStream, stream));
    ForwardMode mode{true, &rng};
    const TokenizedSequence& seq = *usable[i];
    Tensor user;
    {
      NoGradGuard no_grad;
      user = encode_vector(seq, model.user_tower(), mcfg, mode);
    }
    LossTerm dec = decode_clm(user, seq, model.user_tower(), model.decoder(), mcfg, mode);
    return ExampleLoss{dec.value, {dec.value.item()}};
  };
  TrainResult r = train_loop(usable.size(), model, model.decoder_parameters(), cfg, {"dec"}, fn);
  r.skipped_examples = corpus.size() - usable.size();
  return r;
}

TrainResult run_pretrain(std::span<const Impression> impressions, const NewsCatalog& catalog,
                         const Vocab& vocab, PunrModel& model, const TrainConfig& cfg) {
  require_stage(cfg, Stage::pretrain);
  if (impressions.empty()) throw ConfigError("pretrain: empty impression set");
  if (!cfg.tasks.mlm && !cfg.tasks.dec) return {};

  std::vector<TokenizedSequence> seqs;
  std::size_t skipped = 0;
  for (const auto& imp : impressions) {
    TokenizedSequence seq = build_user_sequence(imp.history, catalog, vocab, cfg.limits);
    if (seq.real_length() > 1) {
      seqs.push_back(std::move(seq));
    } else {
      ++skipped;
    }
  }

  std::vector<std::string> parts;
  if (cfg.tasks.mlm) parts.push_back("mlm");
  if (cfg.tasks.dec) parts.push_back("dec");

  const std::uint64_t mask_seed = mix_seed(cfg.seed, cfg.masking.seed);
  ExampleFn fn = [&](std::size_t i, std::uint64_t stream) {
    Rng rng(mix_seed(cfg.seed + kDropoutStream, stream));
    ForwardMode mode{true, &rng};
    MaskPlan plan;
    if (cfg.tasks.mlm) {
      MaskingConfig mc = cfg.masking;
      mc.seed = mix_seed(mask_seed, stream);
      plan = plan_masks(seqs[i], mc);
    }
    PretrainLosses l =
        pretrain_losses(seqs[i], plan, model, cfg.tasks, cfg.separate_clean_pass, mode);
    ExampleLoss ex{l.total, {}};
    if (cfg.tasks.mlm) ex.parts.push_back(l.mlm_skipped ? std::nullopt : std::optional(l.mlm.item()));
    if (cfg.tasks.dec) ex.parts.push_back(l.dec_skipped ? std::nullopt : std::optional(l.dec.item()));
    return ex;
  };

  auto params = cfg.tasks.dec ? model.parameters() : model.encoder_parameters();
  TrainResult r = train_loop(seqs.size(), model, std::move(params), cfg, parts, fn);
  r.skipped_examples = skipped;
  return r;
}

TrainResult run_finetune(std::span<const Impression> impressions, const NewsCatalog& catalog,
                         const Vocab& vocab, PunrModel& model, const TrainConfig& cfg) {
  require_stage(cfg, Stage::finetune);
  if (impressions.empty()) throw ConfigError("finetune: empty impression set");
  if (cfg.siamese && !model.siamese()) {
    throw ConfigError("finetune: siamese=true but the model has separate towers");
  }
  if (!cfg.siamese) model.split_towers();

  struct Example {
    TokenizedSequence user;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
  };
  std::unordered_map<std::string, std::size_t> news_slot;
  std::vector<TokenizedSequence> news_seqs;
  auto slot_of = [&](const std::string& id) {
    auto [it, inserted] = news_slot.emplace(id, news_seqs.size());
    if (inserted) news_seqs.push_back(build_news_sequence(catalog.at(id), vocab, cfg.limits));
    return it->second;
  };

  std::vector<Example> examples;
  std::size_t skipped = 0;
  for (const auto& imp : impressions) {
    Example ex;
    for (const auto& c : imp.candidates) {
      (c.label ? ex.positives : ex.negatives).push_back(slot_of(c.news_id));
    }
    if (ex.positives.empty() || ex.negatives.empty()) {
      ++skipped;
      continue;
    }
    ex.user = build_user_sequence(imp.history, catalog, vocab, cfg.limits);
    examples.push_back(std::move(ex));
  }

  ExampleFn fn = [&](std::size_t i, std::uint64_t stream) {
    const Example& ex = examples[i];
    Rng sampler(mix_seed(cfg.seed + kSampleStream, stream));
    std::vector<TokenizedSequence> cands;
    cands.push_back(news_seqs[ex.positives[sampler.below(ex.positives.size())]]);
    if (ex.negatives.size() >= cfg.negatives) {
      std::vector<std::size_t> pool = ex.negatives;
      for (std::size_t k = 0; k < cfg.negatives; ++k) {
        std::swap(pool[k], pool[k + sampler.below(pool.size() - k)]);
        cands.push_back(news_seqs[pool[k]]);
      }
    } else {
      for (std::size_t k = 0; k < cfg.negatives; ++k)
        cands.push_back(news_seqs[ex.negatives[sampler.below(ex.negatives.size())]]);
    }
    Rng rng(mix_seed(cfg.seed + kDropoutStream, stream));
    Tensor loss = finetune_loss(ex.user, cands, model, ForwardMode{true, &rng});
    return ExampleLoss{loss, {loss.item()}};
  };

  TrainResult r = train_loop(examples.size(), model, model.encoder_parameters(), cfg, {"loss"}, fn);
  r.skipped_examples = skipped;
  return r;
}

}  // namespace punr
