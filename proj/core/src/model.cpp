#include "punr/model.hpp"

#include <cmath>

#include "punr/error.hpp"
#include "punr/ops.hpp"

namespace punr {

namespace {

constexpr double kMaskedScore = -1e9;

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.mutable_values()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor zero_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor one_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

LayerWeights make_layer(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.hidden_dim, f = cfg.ffn_dim;
  const double s = cfg.init_std;
  LayerWeights l;
  l.q_weight = normal_param({d, d}, s, rng);
  l.q_bias = zero_param({d});
  l.k_weight = normal_param({d, d}, s, rng);
  l.v_weight = normal_param({d, d}, s, rng);
  l.v_bias = zero_param({d});
  l.out_weight = normal_param({d, d}, s, rng);
  l.out_bias = zero_param({d});
  l.ln1_gain = one_param({d});
  l.ln1_bias = zero_param({d});
  l.ffn_in_weight = normal_param({d, f}, s, rng);
  l.ffn_in_bias = zero_param({f});
  l.ffn_out_weight = normal_param({f, d}, s, rng);
  l.ffn_out_bias = zero_param({d});
  l.ln2_gain = one_param({d});
  l.ln2_bias = zero_param({d});
  return l;
}

void name_all(const std::function<void(const std::function<void(const std::string&, Tensor&)>&)>&
                  visit) {
  visit([](const std::string& name, Tensor& t) { t.set_name(name); });
}

std::string config_value(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.metadata.find(key);
  if (it == ckpt.metadata.end()) throw IoError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

std::size_t config_size(const Checkpoint& ckpt, const std::string& key) {
  return static_cast<std::size_t>(std::stoull(config_value(ckpt, key)));
}

Tensor apply_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  return ops::add(ops::mul(ops::layer_norm(x, 1, eps), gain), bias);
}

Tensor maybe_dropout(const Tensor& x, const ModelConfig& cfg, ForwardMode mode) {
  if (!mode.training || cfg.dropout <= 0.0) return x;
  if (!mode.rng) throw ContractError("training forward pass with dropout needs an Rng");
  return ops::dropout(x, cfg.dropout, *mode.rng);
}

Tensor transformer_layer(const Tensor& x, const std::vector<bool>& keep, const LayerWeights& l,
                         const ModelConfig& cfg, bool causal, ForwardMode mode,
                         std::vector<Tensor>* attention_out) {
  Tensor attn = self_attention(x, keep, l, cfg, causal, attention_out);
  Tensor h = apply_layer_norm(ops::add(x, maybe_dropout(attn, cfg, mode)), l.ln1_gain,
                              l.ln1_bias, cfg.layer_norm_eps);
  Tensor ff = ops::gelu(ops::add(ops::matmul(h, l.ffn_in_weight), l.ffn_in_bias));
  ff = ops::add(ops::matmul(ff, l.ffn_out_weight), l.ffn_out_bias);
  return apply_layer_norm(ops::add(h, maybe_dropout(ff, cfg, mode)), l.ln2_gain, l.ln2_bias,
                          cfg.layer_norm_eps);
}

Tensor decoder_hidden(const Tensor& user_vector, const TokenizedSequence& clean,
                      const EncoderWeights& shared, const DecoderWeights& dec,
                      const ModelConfig& cfg, ForwardMode mode) {
  if (user_vector.rank() != 2 || user_vector.dim(0) != 1 ||
      user_vector.dim(1) != cfg.hidden_dim) {
    throw ShapeError("decode_clm: user vector must be [1x" + std::to_string(cfg.hidden_dim) +
                     "], got " + shape_str(user_vector.shape()));
  }
  const std::size_t n = clean.length();
  Tensor rows = user_vector;
  if (n > 1) {
    Tensor emb = ops::slice(embed_inputs(clean, shared), 0, 1, n);
    emb = apply_layer_norm(emb, shared.embed_ln_gain, shared.embed_ln_bias, cfg.layer_norm_eps);
    rows = ops::concat({user_vector, maybe_dropout(emb, cfg, mode)}, 0);
  }
  std::vector<bool> keep = clean.attention_keep;
  keep[0] = true;
  return transformer_layer(rows, keep, dec.layer, cfg, /*causal=*/true, mode, nullptr);
}

}  // namespace

Pooling parse_pooling(std::string_view name) {
  if (name == "cls") return Pooling::cls;
  if (name == "average") return Pooling::average;
  if (name == "attention") return Pooling::attention;
  throw ConfigError("unknown pooling '" + std::string(name) + "' (cls|average|attention)");
}

const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::cls: return "cls";
    case Pooling::average: return "average";
    case Pooling::attention: return "attention";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (vocab_size < static_cast<std::size_t>(kNumSpecials)) {
    throw ConfigError("model: vocab_size must cover the special tokens");
  }
  if (hidden_dim == 0 || n_heads == 0 || hidden_dim % n_heads != 0) {
    throw ConfigError("model: hidden_dim must be a positive multiple of n_heads");
  }
  if (n_layers == 0 || ffn_dim == 0) throw ConfigError("model: n_layers and ffn_dim must be > 0");
  if (max_seq_len == 0) throw ConfigError("model: max_seq_len must be > 0");
  if (max_segments < 2) throw ConfigError("model: max_segments must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("model: layer_norm_eps must be > 0");
}

void LayerWeights::visit(const std::string& p,
                         const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(p + "attn_q.weight", q_weight);
  fn(p + "attn_q.bias", q_bias);
  fn(p + "attn_k.weight", k_weight);
  fn(p + "attn_v.weight", v_weight);
  fn(p + "attn_v.bias", v_bias);
  fn(p + "attn_out.weight", out_weight);
  fn(p + "attn_out.bias", out_bias);
  fn(p + "ln1.gain", ln1_gain);
  fn(p + "ln1.bias", ln1_bias);
  fn(p + "ffn_in.weight", ffn_in_weight);
  fn(p + "ffn_in.bias", ffn_in_bias);
  fn(p + "ffn_out.weight", ffn_out_weight);
  fn(p + "ffn_out.bias", ffn_out_bias);
  fn(p + "ln2.gain", ln2_gain);
  fn(p + "ln2.bias", ln2_bias);
}

void EncoderWeights::visit(const std::string& p,
                           const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(p + "token_embedding", token_embedding);
  fn(p + "position_embedding", position_embedding);
  fn(p + "segment_embedding", segment_embedding);
  fn(p + "embed_ln.gain", embed_ln_gain);
  fn(p + "embed_ln.bias", embed_ln_bias);
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit(p + "layer" + std::to_string(i) + ".", fn);
  fn(p + "mlm.bias", mlm_bias);
  fn(p + "pool.proj.weight", pool_proj);
  fn(p + "pool.score.weight", pool_score);
}

void DecoderWeights::visit(const std::string& p,
                           const std::function<void(const std::string&, Tensor&)>& fn) {
  layer.visit(p + "layer.", fn);
  fn(p + "output.bias", output_bias);
}

PunrModel PunrModel::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.hidden_dim;
  auto enc = std::make_shared<EncoderWeights>();
  enc->token_embedding = normal_param({cfg.vocab_size, d}, cfg.init_std, rng);
  enc->position_embedding = normal_param({cfg.max_seq_len, d}, cfg.init_std, rng);
  enc->segment_embedding = normal_param({cfg.max_segments, d}, cfg.init_std, rng);
  enc->embed_ln_gain = one_param({d});
  enc->embed_ln_bias = zero_param({d});
  for (std::size_t i = 0; i < cfg.n_layers; ++i) enc->layers.push_back(make_layer(cfg, rng));
  enc->mlm_bias = zero_param({cfg.vocab_size});
  enc->pool_proj = normal_param({d, d}, cfg.init_std, rng);
  enc->pool_score = normal_param({d, 1}, cfg.init_std, rng);

  auto dec = std::make_shared<DecoderWeights>();
  dec->layer = make_layer(cfg, rng);
  dec->output_bias = zero_param({cfg.vocab_size});

  PunrModel m;
  m.config_ = cfg;
  m.user_ = enc;
  m.news_ = enc;
  m.decoder_ = dec;
  name_all([&](auto fn) { m.user_->visit("encoder.", fn); });
  name_all([&](auto fn) { m.decoder_->visit("decoder.", fn); });
  return m;
}

void PunrModel::split_towers() {
  if (!siamese()) return;
  auto copy = std::make_shared<EncoderWeights>(*user_);
  copy->visit("news_encoder.", [](const std::string& name, Tensor& t) {
    t = t.clone();
    t.set_name(name);
  });
  news_ = std::move(copy);
}

PunrModel PunrModel::clone() const {
  PunrModel m;
  m.config_ = config_;
  m.user_ = std::make_shared<EncoderWeights>(*user_);
  m.user_->visit("", [](const std::string&, Tensor& t) { t = t.clone(); });
  if (siamese()) {
    m.news_ = m.user_;
  } else {
    m.news_ = std::make_shared<EncoderWeights>(*news_);
    m.news_->visit("", [](const std::string&, Tensor& t) { t = t.clone(); });
  }
  m.decoder_ = std::make_shared<DecoderWeights>(*decoder_);
  m.decoder_->visit("", [](const std::string&, Tensor& t) { t = t.clone(); });
  return m;
}

std::vector<NamedTensor> PunrModel::encoder_parameters() const {
  std::vector<NamedTensor> out;
  user_->visit("encoder.", [&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
  if (!siamese()) {
    news_->visit("news_encoder.", [&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
  }
  return out;
}

std::vector<NamedTensor> PunrModel::decoder_parameters() const {
  std::vector<NamedTensor> out;
  decoder_->visit("decoder.", [&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
  return out;
}

std::vector<NamedTensor> PunrModel::parameters() const {
  auto out = encoder_parameters();
  for (auto& p : decoder_parameters()) out.push_back(std::move(p));
  return out;
}

Checkpoint PunrModel::to_checkpoint() const {
  Checkpoint ckpt;
  auto& m = ckpt.metadata;
  m["model.vocab_size"] = std::to_string(config_.vocab_size);
  m["model.hidden_dim"] = std::to_string(config_.hidden_dim);
  m["model.n_layers"] = std::to_string(config_.n_layers);
  m["model.n_heads"] = std::to_string(config_.n_heads);
  m["model.ffn_dim"] = std::to_string(config_.ffn_dim);
  m["model.max_seq_len"] = std::to_string(config_.max_seq_len);
  m["model.max_segments"] = std::to_string(config_.max_segments);
  m["model.pooling"] = pooling_name(config_.pooling);
  m["model.siamese"] = siamese() ? "true" : "false";
  for (auto& [name, t] : parameters()) ckpt.tensors.emplace_back(name, t.detach());
  return ckpt;
}

PunrModel PunrModel::from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg;
  cfg.vocab_size = config_size(ckpt, "model.vocab_size");
  cfg.hidden_dim = config_size(ckpt, "model.hidden_dim");
  cfg.n_layers = config_size(ckpt, "model.n_layers");
  cfg.n_heads = config_size(ckpt, "model.n_heads");
  cfg.ffn_dim = config_size(ckpt, "model.ffn_dim");
  cfg.max_seq_len = config_size(ckpt, "model.max_seq_len");
  cfg.max_segments = config_size(ckpt, "model.max_segments");
  cfg.pooling = parse_pooling(config_value(ckpt, "model.pooling"));
  PunrModel m = create(cfg, 0);
  if (config_value(ckpt, "model.siamese") == "false") m.split_towers();
  for (auto& [name, t] : m.parameters()) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw IoError("checkpoint lacks tensor '" + name + "'");
    if (src->shape() != t.shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape()) +
                    ", model expects " + shape_str(t.shape()));
    }
    std::copy(src->values().begin(), src->values().end(), t.mutable_values().begin());
  }
  return m;
}

Tensor embed_inputs(const TokenizedSequence& seq, const EncoderWeights& w) {
  Tensor tok = ops::embedding_gather(w.token_embedding, seq.tokens, "token_embedding");
  Tensor pos = ops::embedding_gather(w.position_embedding, seq.position_ids, "position_embedding");
  Tensor seg = ops::embedding_gather(w.segment_embedding, seq.segment_ids, "segment_embedding");
  return ops::add(ops::add(tok, pos), seg);
}

Tensor self_attention(const Tensor& x, const std::vector<bool>& keep, const LayerWeights& l,
                      const ModelConfig& cfg, bool causal, std::vector<Tensor>* attention_out) {
  const std::size_t n = x.dim(0);
  if (keep.size() != n) {
    throw ShapeError("self_attention: keep mask of " + std::to_string(keep.size()) +
                     " entries for " + std::to_string(n) + " rows");
  }
  const std::size_t dh = cfg.head_dim();
  Tensor q = ops::add(ops::matmul(x, l.q_weight), l.q_bias);
  Tensor k = ops::matmul(x, l.k_weight);
  Tensor v = ops::add(ops::matmul(x, l.v_weight), l.v_bias);

  std::vector<bool> blocked(n * n, false);
  bool any_blocked = false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      blocked[i * n + j] = !keep[j] || (causal && j > i);
      any_blocked = any_blocked || blocked[i * n + j];
    }
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    Tensor qh = ops::slice(q, 1, h * dh, (h + 1) * dh);
    Tensor kh = ops::slice(k, 1, h * dh, (h + 1) * dh);
    Tensor vh = ops::slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt);
    if (any_blocked) scores = ops::masked_fill(scores, blocked, kMaskedScore);
    Tensor probs = ops::softmax(scores, 1);
    if (attention_out) attention_out->push_back(probs);
    heads.push_back(ops::matmul(probs, vh));
  }
  Tensor merged = cfg.n_heads == 1 ? heads[0] : ops::concat(heads, 1);
  return ops::add(ops::matmul(merged, l.out_weight), l.out_bias);
}

EncoderOutput encode(const Tensor& embedded, const std::vector<bool>& keep,
                     const EncoderWeights& w, const ModelConfig& cfg, ForwardMode mode) {
  if (embedded.rank() != 2 || embedded.dim(1) != cfg.hidden_dim) {
    throw ShapeError("encode: expected [n x " + std::to_string(cfg.hidden_dim) + "], got " +
                     shape_str(embedded.shape()));
  }
  EncoderOutput out;
  Tensor h = apply_layer_norm(embedded, w.embed_ln_gain, w.embed_ln_bias, cfg.layer_norm_eps);
  h = maybe_dropout(h, cfg, mode);
  out.hidden.push_back(h);
  for (const auto& layer : w.layers) {
    out.attention.emplace_back();
    h = transformer_layer(h, keep, layer, cfg, /*causal=*/false, mode, &out.attention.back());
    out.hidden.push_back(h);
  }
  return out;
}

Tensor pool(const EncoderOutput& out, const std::vector<bool>& keep, Pooling method,
            const EncoderWeights& w) {
  const Tensor& h = out.last();
  const std::size_t n = h.dim(0);
  std::size_t kept = 0;
  for (bool k : keep) kept += k ? 1 : 0;
  if (kept == 0) throw ContractError("pool: sequence is entirely PAD");

  switch (method) {
    case Pooling::cls:
      return ops::slice(h, 0, 0, 1);
    case Pooling::average: {
      std::vector<double> weights(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) weights[i] = 1.0 / static_cast<double>(kept);
      return ops::matmul(Tensor::from({1, n}, std::move(weights)), h);
    }
    case Pooling::attention: {
      Tensor scores = ops::matmul(ops::tanh(ops::matmul(h, w.pool_proj)), w.pool_score);
      std::vector<bool> pad(n);
      for (std::size_t i = 0; i < n; ++i) pad[i] = !keep[i];
      scores = ops::masked_fill(scores, pad, kMaskedScore);
      Tensor weights = ops::softmax(scores, 0);
      return ops::matmul(ops::transpose(weights), h);
    }
  }
  throw ContractError("pool: unknown method");
}

Tensor encode_vector(const TokenizedSequence& seq, const EncoderWeights& w,
                     const ModelConfig& cfg, ForwardMode mode) {
  EncoderOutput out = encode(embed_inputs(seq, w), seq.attention_keep, w, cfg, mode);
  return pool(out, seq.attention_keep, cfg.pooling, w);
}

LossTerm mlm_loss(const EncoderOutput& out, const MaskPlan& plan, const EncoderWeights& w) {
  if (plan.empty()) return {Tensor::scalar(0.0), true};
  std::vector<int> rows(plan.positions.begin(), plan.positions.end());
  Tensor picked = ops::embedding_gather(out.last(), rows, "encoder_output");
  Tensor logits = ops::add(ops::matmul_nt(picked, w.token_embedding), w.mlm_bias);
  return {ops::cross_entropy(logits, plan.original_tokens), false};
}

Tensor decoder_logits(const Tensor& user_vector, const TokenizedSequence& clean,
                      const EncoderWeights& shared, const DecoderWeights& dec,
                      const ModelConfig& cfg, ForwardMode mode) {
  Tensor h = decoder_hidden(user_vector, clean, shared, dec, cfg, mode);
  return ops::add(ops::matmul_nt(h, shared.token_embedding), dec.output_bias);
}

LossTerm decode_clm(const Tensor& user_vector, const TokenizedSequence& clean,
                    const EncoderWeights& shared, const DecoderWeights& dec,
                    const ModelConfig& cfg, ForwardMode mode) {
  const std::size_t n = clean.length();
  std::vector<int> rows, targets;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (clean.attention_keep[i + 1]) {
      rows.push_back(static_cast<int>(i));
      targets.push_back(clean.tokens[i + 1]);
    }
  }
  if (rows.empty()) return {Tensor::scalar(0.0), true};
  Tensor h = decoder_hidden(user_vector, clean, shared, dec, cfg, mode);
  Tensor picked = ops::embedding_gather(h, rows, "decoder_output");
  Tensor logits = ops::add(ops::matmul_nt(picked, shared.token_embedding), dec.output_bias);
  return {ops::cross_entropy(logits, targets), false};
}

double score(std::span<const double> user, std::span<const double> news) {
  if (user.size() != news.size()) {
    throw ShapeError("score: dimension mismatch " + std::to_string(user.size()) + " vs " +
                     std::to_string(news.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < user.size(); ++i) acc += user[i] * news[i];
  return acc;
}

}  // namespace punr
