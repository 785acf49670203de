#pragma once

#include <span>
#include <vector>

#include "punr/metrics.hpp"
#include "punr/model.hpp"
#include "punr/news.hpp"

namespace punr {

struct EvalOptions {
  SequenceLimits limits;
  std::size_t threads = 1;
  MetricsOptions metrics;
};

struct EvalResult {
  MetricsReport report;
  std::vector<ImpressionMetrics> per_impression;
  std::vector<ImpressionScores> scores;
};

// Dot-product scores for every candidate of every impression (inference mode).
std::vector<ImpressionScores> score_impressions(const PunrModel& model,
                                                std::span<const Impression> impressions,
                                                const NewsCatalog& catalog, const Vocab& vocab,
                                                const EvalOptions& opts);

// Throws ConfigError when no impression has both a positive and a negative.
EvalResult evaluate(const PunrModel& model, std::span<const Impression> impressions,
                    const NewsCatalog& catalog, const Vocab& vocab, const EvalOptions& opts);

}  // namespace punr
