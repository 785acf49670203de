#pragma once

// User-behavior masking: whole clicked-title spans plus scattered single
// tokens, under a total ratio alpha of which a share beta comes from spans.

#include <cstdint>
#include <span>
#include <vector>

#include "punr/news.hpp"

namespace punr {

struct MaskingConfig {
  double alpha = 0.3;
  double beta = 0.3;
  std::uint64_t seed = 0;
  // 80% MASK / 10% random token / 10% unchanged instead of always MASK.
  bool bert_replacement = false;
  std::size_t vocab_size = 0;  // needed only for bert_replacement

  void validate() const;
  // Copy whose seed is derived from (seed, stream); use one stream per sequence and epoch.
  MaskingConfig for_stream(std::uint64_t stream) const;
};

enum class MaskSource : std::uint8_t { behavior_span, random };

struct MaskPlan {
  std::vector<std::size_t> positions;  // sorted ascending
  std::vector<int> original_tokens;
  std::vector<int> replacement_tokens;
  std::vector<MaskSource> provenance;

  std::size_t n_maskable = 0;
  std::size_t target_total = 0;
  std::size_t behavior_budget = 0;
  // Set when the only behavior would have been the whole input.
  bool span_fallback = false;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  std::size_t span_count() const;
};

// Positions that may be masked: everything except CLS (index 0) and PAD.
std::vector<std::size_t> maskable_positions(const TokenizedSequence& seq);

MaskPlan plan_masks(const TokenizedSequence& seq, const MaskingConfig& cfg);

// Throws ContractError if the plan touches CLS/PAD or disagrees with seq.
TokenizedSequence apply_masks(const TokenizedSequence& seq, const MaskPlan& plan);
TokenizedSequence restore_masks(const TokenizedSequence& masked, const MaskPlan& plan);

struct MaskStats {
  double alpha_hat = 0.0;
  double beta_hat = 0.0;
  bool beta_defined = false;  // false when no position was masked at all
};

MaskStats mask_stats(std::span<const MaskPlan> plans);

}  // namespace punr
