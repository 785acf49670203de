#pragma once

// Line-delimited JSON dumps for inspecting pipeline intermediates.

#include <iosfwd>
#include <span>

#include "punr/masking.hpp"
#include "punr/news.hpp"
#include "punr/text.hpp"

namespace punr {

void write_catalog_jsonl(std::ostream& out, const NewsCatalog& catalog);
void write_impressions_jsonl(std::ostream& out, std::span<const Impression> impressions);
void write_vocab_jsonl(std::ostream& out, const Vocab& vocab);
// One line per masked position: {"sequence", "position", "original", "source"}.
void write_mask_plan_jsonl(std::ostream& out, const MaskPlan& plan, std::size_t sequence);

const char* mask_source_name(MaskSource s);

}  // namespace punr
