#include "punr/jsonl.hpp"

#include <ostream>

#include "json.hpp"

namespace punr {

using nlohmann::ordered_json;

const char* mask_source_name(MaskSource s) {
  return s == MaskSource::behavior_span ? "behavior_span" : "random";
}

void write_catalog_jsonl(std::ostream& out, const NewsCatalog& catalog) {
  for (const auto& item : catalog.items()) {
    ordered_json j;
    j["news_id"] = item.news_id;
    j["title"] = item.title;
    if (catalog.tokenized()) j["title_tokens"] = item.title_tokens;
    out << j.dump() << '\n';
  }
}

void write_impressions_jsonl(std::ostream& out, std::span<const Impression> impressions) {
  for (const auto& imp : impressions) {
    ordered_json j;
    j["impression_id"] = imp.impression_id;
    j["user_id"] = imp.user_id;
    j["time"] = imp.time;
    j["history"] = imp.history;
    ordered_json cands = ordered_json::array();
    for (const auto& c : imp.candidates) {
      ordered_json cj;
      cj["news_id"] = c.news_id;
      cj["label"] = c.label;
      cands.push_back(std::move(cj));
    }
    j["candidates"] = std::move(cands);
    out << j.dump() << '\n';
  }
}

void write_vocab_jsonl(std::ostream& out, const Vocab& vocab) {
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    ordered_json j;
    j["token"] = vocab.token(static_cast<int>(i));
    j["index"] = i;
    out << j.dump() << '\n';
  }
}

void write_mask_plan_jsonl(std::ostream& out, const MaskPlan& plan, std::size_t sequence) {
  for (std::size_t i = 0; i < plan.positions.size(); ++i) {
    ordered_json j;
    j["sequence"] = sequence;
    j["position"] = plan.positions[i];
    j["original"] = plan.original_tokens[i];
    j["source"] = mask_source_name(plan.provenance[i]);
    out << j.dump() << '\n';
  }
}

}  // namespace punr
