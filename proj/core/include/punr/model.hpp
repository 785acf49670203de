#pragma once

// Transformer user encoder with a tied MLM head, a one-layer causal decoder
// that is conditioned on the pooled user vector, and dot-product scoring.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "punr/checkpoint.hpp"
#include "punr/masking.hpp"
#include "punr/news.hpp"
#include "punr/rng.hpp"
#include "punr/tensor.hpp"

namespace punr {

enum class Pooling { cls, average, attention };

Pooling parse_pooling(std::string_view name);
const char* pooling_name(Pooling p);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t max_seq_len = 512;
  std::size_t max_segments = 51;  // max_behaviors + 1
  double dropout = 0.1;
  Pooling pooling = Pooling::cls;
  double init_std = 0.02;
  double layer_norm_eps = 1e-12;

  void validate() const;
  std::size_t head_dim() const { return hidden_dim / n_heads; }
};

using NamedTensor = std::pair<std::string, Tensor>;

// Keys carry no bias: it would shift every score of a query equally and
// cancel in the softmax.
struct LayerWeights {
  Tensor q_weight, q_bias, k_weight, v_weight, v_bias, out_weight, out_bias;
  Tensor ln1_gain, ln1_bias;
  Tensor ffn_in_weight, ffn_in_bias, ffn_out_weight, ffn_out_bias;
  Tensor ln2_gain, ln2_bias;

  void visit(const std::string& prefix, const std::function<void(const std::string&, Tensor&)>& fn);
};

struct EncoderWeights {
  Tensor token_embedding;     // [vocab x d]; also the MLM/CLM output projection
  Tensor position_embedding;  // [max_seq_len x d]
  Tensor segment_embedding;   // [max_segments x d]
  Tensor embed_ln_gain, embed_ln_bias;
  std::vector<LayerWeights> layers;
  Tensor mlm_bias;      // [vocab]
  Tensor pool_proj;     // [d x d], attention pooling
  Tensor pool_score;    // [d x 1]

  void visit(const std::string& prefix, const std::function<void(const std::string&, Tensor&)>& fn);
};

struct DecoderWeights {
  LayerWeights layer;
  Tensor output_bias;  // [vocab]

  void visit(const std::string& prefix, const std::function<void(const std::string&, Tensor&)>& fn);
};

class PunrModel {
 public:
  static PunrModel create(const ModelConfig& cfg, std::uint64_t seed);
  static PunrModel from_checkpoint(const Checkpoint& ckpt);

  const ModelConfig& config() const { return config_; }
  void set_pooling(Pooling p) { config_.pooling = p; }
  void set_dropout(double rate) { config_.dropout = rate; }

  EncoderWeights& user_tower() { return *user_; }
  const EncoderWeights& user_tower() const { return *user_; }
  EncoderWeights& news_tower() { return *news_; }
  const EncoderWeights& news_tower() const { return *news_; }
  DecoderWeights& decoder() { return *decoder_; }
  const DecoderWeights& decoder() const { return *decoder_; }

  bool siamese() const { return user_ == news_; }
  // Gives the news tower its own deep copy of the current encoder weights.
  void split_towers();

  // Deep copy; the copy's towers are shared iff this model's are.
  PunrModel clone() const;

  std::vector<NamedTensor> encoder_parameters() const;  // both towers when split
  std::vector<NamedTensor> decoder_parameters() const;
  std::vector<NamedTensor> parameters() const;

  Checkpoint to_checkpoint() const;

 private:
  ModelConfig config_;
  std::shared_ptr<EncoderWeights> user_;
  std::shared_ptr<EncoderWeights> news_;
  std::shared_ptr<DecoderWeights> decoder_;
};

// Dropout is active only when training is set and rate > 0.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;
};

struct EncoderOutput {
  // hidden[0] is the normalized embedding layer, hidden[l] the output of layer l.
  std::vector<Tensor> hidden;
  // attention[l][h]: [n x n] attention probabilities of layer l+1, head h.
  std::vector<std::vector<Tensor>> attention;

  const Tensor& last() const { return hidden.back(); }
};

// token_embedding[t_i] + position_embedding[i] + segment_embedding[seg_i] per row.
Tensor embed_inputs(const TokenizedSequence& seq, const EncoderWeights& w);

// Multi-head self-attention block output (before residual/norm). Keys with
// keep == false, and future keys when causal, are filled with -1e9.
Tensor self_attention(const Tensor& x, const std::vector<bool>& keep, const LayerWeights& layer,
                      const ModelConfig& cfg, bool causal,
                      std::vector<Tensor>* attention_out = nullptr);

EncoderOutput encode(const Tensor& embedded, const std::vector<bool>& keep,
                     const EncoderWeights& w, const ModelConfig& cfg, ForwardMode mode = {});

// Returns a [1 x d] vector. Throws ContractError for an all-PAD input.
Tensor pool(const EncoderOutput& out, const std::vector<bool>& keep, Pooling method,
            const EncoderWeights& w);

// Convenience: embed + encode + pool under the configured pooling method.
Tensor encode_vector(const TokenizedSequence& seq, const EncoderWeights& w,
                     const ModelConfig& cfg, ForwardMode mode = {});

struct LossTerm {
  Tensor value;          // scalar; 0 when skipped
  bool skipped = false;  // no target contributed
};

// Mean NLL of the original tokens at the planned positions, using logits
// from the tied token embedding plus mlm_bias.
LossTerm mlm_loss(const EncoderOutput& out, const MaskPlan& plan, const EncoderWeights& w);

// Teacher-forced next-token loss of the clean sequence. Decoder row 0 is the
// user vector; rows 1..n-1 are the shared (normalized) embeddings of tokens
// 1..n-1. Row i predicts token i+1; PAD targets are ignored.
LossTerm decode_clm(const Tensor& user_vector, const TokenizedSequence& clean,
                    const EncoderWeights& shared, const DecoderWeights& dec,
                    const ModelConfig& cfg, ForwardMode mode = {});

// Logits [n x vocab] for every decoder row; exposed for causality checks.
Tensor decoder_logits(const Tensor& user_vector, const TokenizedSequence& clean,
                      const EncoderWeights& shared, const DecoderWeights& dec,
                      const ModelConfig& cfg, ForwardMode mode = {});

double score(std::span<const double> user, std::span<const double> news);

}  // namespace punr
