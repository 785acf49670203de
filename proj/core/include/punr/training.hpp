#pragma once

// Three training stages sharing one loop:
//   decoder_init  - encoder frozen, decoder learns next-token generation on plain text
//   pretrain      - masked-token recovery plus user-vector-conditioned generation
//   finetune      - sampled-softmax ranking of 1 positive against k negatives

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "punr/masking.hpp"
#include "punr/model.hpp"
#include "punr/news.hpp"
#include "punr/optimizer.hpp"

namespace punr {

enum class Stage { decoder_init, pretrain, finetune };
const char* stage_name(Stage s);

struct PretrainTasks {
  bool mlm = true;
  bool dec = true;

  static PretrainTasks parse(std::string_view name);  // mlm | dec | both | none
  std::string name() const;
};

struct TrainConfig {
  Stage stage = Stage::finetune;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::size_t total_steps = 0;  // 0 -> epochs * ceil(examples / batch_size)
  std::size_t epochs = 1;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  std::size_t negatives = 4;
  std::uint64_t seed = 42;
  bool siamese = true;
  PretrainTasks tasks;
  // Condition the decoder on a clean encoder pass instead of the masked one.
  bool separate_clean_pass = false;
  MaskingConfig masking;
  SequenceLimits limits;

  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_prefix;  // "<prefix>-step<N>.ckpt"

  void validate() const;
  std::size_t resolved_steps(std::size_t n_examples) const;
};

// CSV-able loss curve. Cells are written with shortest round-trip formatting.
struct TrainLog {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void write_csv(std::ostream& out) const;
  std::vector<double> column(const std::string& name) const;
  bool has_column(const std::string& name) const;
};

struct TrainResult {
  TrainLog log;
  std::size_t steps = 0;
  std::size_t skipped_examples = 0;  // per epoch-pass count of unusable examples
};

struct PretrainLosses {
  Tensor total;
  Tensor mlm;
  Tensor dec;
  bool mlm_skipped = true;
  bool dec_skipped = true;
};

// Pre-training loss of one clean user sequence under a given mask plan.
// An empty plan leaves the input unmasked.
PretrainLosses pretrain_losses(const TokenizedSequence& clean, const MaskPlan& plan,
                               const PunrModel& model, PretrainTasks tasks,
                               bool separate_clean_pass, ForwardMode mode = {});

// -log softmax(scores)[0] for a [1 x k] score row whose first column is the positive.
Tensor sampled_softmax_loss(const Tensor& scores);

// Ranking loss of one user against candidate sequences (positive first).
Tensor finetune_loss(const TokenizedSequence& user, std::span<const TokenizedSequence> candidates,
                     const PunrModel& model, ForwardMode mode = {});

TrainResult run_decoder_init(std::span<const TokenizedSequence> corpus, PunrModel& model,
                             const TrainConfig& cfg);

TrainResult run_pretrain(std::span<const Impression> impressions, const NewsCatalog& catalog,
                         const Vocab& vocab, PunrModel& model, const TrainConfig& cfg);

// Switches the model to separate towers first when cfg.siamese is false.
TrainResult run_finetune(std::span<const Impression> impressions, const NewsCatalog& catalog,
                         const Vocab& vocab, PunrModel& model, const TrainConfig& cfg);

std::string format_double(double v);

}  // namespace punr
