#include "punr/masking.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "punr/error.hpp"
#include "punr/rng.hpp"

namespace punr {

namespace {

std::size_t round_half_up(double x) {
  // The epsilon absorbs representation error such as 0.3 * 5 = 1.4999999999999998.
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

}  // namespace

void MaskingConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("masking: alpha must lie in [0, 1)");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("masking: beta must lie in [0, 1]");
  if (bert_replacement && vocab_size <= static_cast<std::size_t>(kNumSpecials)) {
    throw ConfigError("masking: bert_replacement needs vocab_size");
  }
}

MaskingConfig MaskingConfig::for_stream(std::uint64_t stream) const {
  MaskingConfig c = *this;
  c.seed = mix_seed(seed, stream);
  return c;
}

std::size_t MaskPlan::span_count() const {
  return static_cast<std::size_t>(
      std::count(provenance.begin(), provenance.end(), MaskSource::behavior_span));
}

std::vector<std::size_t> maskable_positions(const TokenizedSequence& seq) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < seq.length(); ++i) {
    if (seq.attention_keep[i] && seq.tokens[i] != kPad) out.push_back(i);
  }
  return out;
}

MaskPlan plan_masks(const TokenizedSequence& seq, const MaskingConfig& cfg) {
  cfg.validate();
  const auto maskable = maskable_positions(seq);
  if (maskable.empty()) throw ContractError("plan_masks: sequence has no maskable token");

  MaskPlan plan;
  plan.n_maskable = maskable.size();
  plan.target_total = round_half_up(cfg.alpha * static_cast<double>(maskable.size()));
  plan.behavior_budget = round_half_up(cfg.beta * static_cast<double>(plan.target_total));
  if (plan.target_total == 0) return plan;

  std::map<int, std::vector<std::size_t>> by_segment;
  for (std::size_t pos : maskable) by_segment[seq.segment_ids[pos]].push_back(pos);
  std::vector<const std::vector<std::size_t>*> behaviors;
  for (const auto& [seg, positions] : by_segment) behaviors.push_back(&positions);

  Rng rng(cfg.seed);
  std::vector<bool> taken(seq.length(), false);
  std::vector<std::pair<std::size_t, MaskSource>> chosen;

  std::size_t span_tokens = 0;
  if (plan.behavior_budget > 0 && behaviors.size() == 1) {
    plan.span_fallback = true;
  } else if (plan.behavior_budget > 0) {
    std::vector<std::size_t> order(behaviors.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t b : order) {
      if (span_tokens >= plan.behavior_budget) break;
      for (std::size_t pos : *behaviors[b]) {
        taken[pos] = true;
        chosen.emplace_back(pos, MaskSource::behavior_span);
      }
      span_tokens += behaviors[b]->size();
    }
  }

  const std::size_t remaining =
      plan.target_total > span_tokens ? plan.target_total - span_tokens : 0;
  std::vector<std::size_t> free;
  for (std::size_t pos : maskable)
    if (!taken[pos]) free.push_back(pos);
  const std::size_t n_random = std::min(remaining, free.size());
  for (std::size_t i = 0; i < n_random; ++i) {
    const std::size_t j = i + rng.below(free.size() - i);
    std::swap(free[i], free[j]);
    chosen.emplace_back(free[i], MaskSource::random);
  }

  std::sort(chosen.begin(), chosen.end());
  for (const auto& [pos, src] : chosen) {
    plan.positions.push_back(pos);
    plan.original_tokens.push_back(seq.tokens[pos]);
    plan.provenance.push_back(src);
    int replacement = kMask;
    if (cfg.bert_replacement) {
      const double u = rng.uniform();
      if (u >= 0.9) {
        replacement = seq.tokens[pos];
      } else if (u >= 0.8) {
        replacement = kNumSpecials + static_cast<int>(rng.below(cfg.vocab_size - kNumSpecials));
      }
    }
    plan.replacement_tokens.push_back(replacement);
  }
  return plan;
}

namespace {

void check_plan(const TokenizedSequence& seq, const MaskPlan& plan) {
  if (plan.original_tokens.size() != plan.positions.size() ||
      plan.replacement_tokens.size() != plan.positions.size() ||
      plan.provenance.size() != plan.positions.size()) {
    throw ContractError("mask plan vectors have inconsistent lengths");
  }
  for (std::size_t pos : plan.positions) {
    if (pos == 0) throw ContractError("mask plan references the CLS position");
    if (pos >= seq.length() || !seq.attention_keep[pos]) {
      throw ContractError("mask plan references PAD position " + std::to_string(pos));
    }
  }
}

}  // namespace

TokenizedSequence apply_masks(const TokenizedSequence& seq, const MaskPlan& plan) {
  check_plan(seq, plan);
  TokenizedSequence out = seq;
  for (std::size_t k = 0; k < plan.positions.size(); ++k) {
    if (seq.tokens[plan.positions[k]] != plan.original_tokens[k]) {
      throw ContractError("mask plan does not match the sequence at position " +
                          std::to_string(plan.positions[k]));
    }
    out.tokens[plan.positions[k]] = plan.replacement_tokens[k];
  }
  return out;
}

TokenizedSequence restore_masks(const TokenizedSequence& masked, const MaskPlan& plan) {
  check_plan(masked, plan);
  TokenizedSequence out = masked;
  for (std::size_t k = 0; k < plan.positions.size(); ++k)
    out.tokens[plan.positions[k]] = plan.original_tokens[k];
  return out;
}

MaskStats mask_stats(std::span<const MaskPlan> plans) {
  std::size_t masked = 0, maskable = 0, spans = 0;
  for (const auto& p : plans) {
    masked += p.size();
    maskable += p.n_maskable;
    spans += p.span_count();
  }
  MaskStats s;
  s.alpha_hat = maskable ? static_cast<double>(masked) / static_cast<double>(maskable) : 0.0;
  s.beta_defined = masked > 0;
  s.beta_hat = masked ? static_cast<double>(spans) / static_cast<double>(masked) : 0.0;
  return s;
}

}  // namespace punr
